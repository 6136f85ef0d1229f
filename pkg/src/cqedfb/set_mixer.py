"""Strong-tunnelling SET as a nonlinear mixer.

The source-drain current is sinusoidal in the total gate voltage,
``I = I0 + dI0 cos(c_g V_g)``. Biased at an extremum (point A) and driven by
two small tones, the current contains a component at the difference
frequency proportional to products of the tone quadratures; that first-order
sideband model is ``sideband_current``. ``demodulate`` extracts quadratures
from sampled waveforms and is used to check the approximation against the
exact response.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "OperatingPoint",
    "SetDevice",
    "VoltageTone",
    "exact_current",
    "sideband_current",
    "sideband_coefficients",
    "mixer_gain",
    "dual_gate_delta_current",
    "demodulate",
    "sample_times",
    "error_scaling",
]

SMALL_SIGNAL_WARN = 0.1

# Leading difference-frequency term of dI0*cos(z1 cos a + z2 cos b) is
# -2 dI0 J1(z1) J1(z2) cos(a - b), and J1(z) ~ z/2.
MIXER_GAIN = 0.5


class OperatingPoint(enum.Enum):
    A = "A"  # extremum: cos(c_g V_dc) = 1
    B = "B"  # maximum slope: cos(c_g V_dc) = 0


@dataclass(frozen=True)
class SetDevice:
    """SET bias and response. ``c_g`` is ``2 pi C_g / e`` in 1/volt.

    ``v_dc`` is snapped to the nearest bias realizing ``operating_point``.
    """

    i0: float
    delta_i0: float
    c_g: float
    v_dc: float = 0.0
    operating_point: OperatingPoint = OperatingPoint.A

    def __post_init__(self):
        if not self.delta_i0 > 0:
            raise ValueError(f"delta_i0 must be > 0, got {self.delta_i0}")
        if not self.c_g > 0:
            raise ValueError(f"c_g must be > 0, got {self.c_g}")
        op = OperatingPoint(self.operating_point)
        object.__setattr__(self, "operating_point", op)
        phase = self.c_g * self.v_dc
        if op is OperatingPoint.A:
            target = 2 * math.pi * round(phase / (2 * math.pi))
        else:
            target = math.pi / 2 + math.pi * round((phase - math.pi / 2) / math.pi)
        object.__setattr__(self, "v_dc", target / self.c_g)

    @property
    def i_tilde(self) -> float:
        """DC level ``I0 + dI0`` at point A."""
        return self.i0 + self.delta_i0


@dataclass(frozen=True)
class VoltageTone:
    """``x cos(omega t + phi) + y sin(omega t + phi)``."""

    x: float
    y: float
    omega: float
    phi: float = 0.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")

    def voltage(self, t):
        arg = self.omega * np.asarray(t, dtype=float) + self.phi
        return self.x * np.cos(arg) + self.y * np.sin(arg)


def exact_current(dev: SetDevice, tones: Sequence[VoltageTone], t):
    """Full sinusoidal response, valid at either operating point."""
    t = np.asarray(t, dtype=float)
    v = dev.v_dc + sum((tone.voltage(t) for tone in tones), np.zeros_like(t))
    out = dev.i0 + dev.delta_i0 * np.cos(dev.c_g * v)
    return float(out) if out.ndim == 0 else out


def _require_point_a(dev: SetDevice, what: str):
    if dev.operating_point is not OperatingPoint.A:
        raise ValueError(f"{what} is only derived at operating point A")


def _warn_if_large(dev: SetDevice, *tones: VoltageTone):
    z = dev.c_g * max(max(abs(tn.x), abs(tn.y)) for tn in tones)
    if z > SMALL_SIGNAL_WARN:
        warnings.warn(
            f"c_g * amplitude = {z:.3g} exceeds {SMALL_SIGNAL_WARN}; first-order Bessel truncation is inaccurate",
            RuntimeWarning,
            stacklevel=3,
        )


def mixer_gain(dev: SetDevice) -> float:
    """``dI0 c_g^2 / 2`` (equivalently ``2 pi^2 dI0 C_g^2 / e^2``)."""
    return MIXER_GAIN * dev.delta_i0 * dev.c_g**2


def sideband_coefficients(dev: SetDevice, signal: VoltageTone, lo: VoltageTone) -> tuple[float, float]:
    """Amplitudes ``(C, S)`` so the sideband reads ``C cos(w_if t - phi) + S sin(w_if t - phi)``.

    ``w_if = signal.omega - lo.omega`` and ``phi`` is the LO phase offset.
    """
    k = mixer_gain(dev)
    c = -k * (signal.x * lo.x + signal.y * lo.y)
    s = -k * (signal.y * lo.x - signal.x * lo.y)
    return c, s


def sideband_current(dev: SetDevice, signal: VoltageTone, lo: VoltageTone, t):
    """Low-frequency current to first order in each tone (sum-frequency terms dropped).

    ``signal`` carries no phase offset; ``lo.phi`` is the relative phase.
    """
    _require_point_a(dev, "sideband_current")
    _warn_if_large(dev, signal, lo)
    t = np.asarray(t, dtype=float)
    arg = (signal.omega - lo.omega) * t - lo.phi
    c, s = sideband_coefficients(dev, signal, lo)
    out = dev.i_tilde + c * np.cos(arg) + s * np.sin(arg)
    return float(out) if out.ndim == 0 else out


def dual_gate_delta_current(dev: SetDevice, signal_quads, lo_quads, phi: float = 0.0) -> float:
    """Change from the DC level for degenerate mixing (LO at the signal frequency).

    This is the sideband expression at zero intermediate frequency:
    ``phi = 0`` reads ``-k (X_s X_LO + Y_s Y_LO)`` and ``phi = pi/2`` reads
    ``+k (Y_s X_LO - X_s Y_LO)``, with ``k = mixer_gain(dev)``.
    """
    _require_point_a(dev, "dual_gate_delta_current")
    xs, ys = signal_quads
    xl, yl = lo_quads
    k = mixer_gain(dev)
    c = -k * (xs * xl + ys * yl)
    s = -k * (ys * xl - xs * yl)
    # difference-frequency phase is -phi when the two tones share a frequency
    return float(c * math.cos(phi) - s * math.sin(phi))


def sample_times(omega_if: float, periods: int, samples_per_period: int = 256) -> np.ndarray:
    """Uniform grid spanning exactly ``periods`` cycles at ``omega_if``, endpoint included."""
    if periods < 1 or samples_per_period < 2:
        raise ValueError("need periods >= 1 and samples_per_period >= 2")
    t_window = 2 * math.pi * periods / omega_if
    return np.linspace(0.0, t_window, periods * samples_per_period + 1)


def demodulate(samples, t, omega_if: float, phi: float = 0.0, periods: int | None = None, max_freq: float | None = None):
    """Quadratures at ``omega_if`` by trapezoidal projection.

    Returns ``((2/T) int I cos(w t - phi) dt, (2/T) int I sin(w t - phi) dt)``
    over the sampled window, which must span a whole number of periods.
    ``max_freq`` (highest angular frequency present in ``samples``) enables a
    Nyquist check.
    """
    samples = np.asarray(samples, dtype=float)
    t = np.asarray(t, dtype=float)
    if samples.shape != t.shape or t.ndim != 1 or t.size < 3:
        raise ValueError("samples and t must be equal-length 1-D arrays")
    if not omega_if > 0:
        raise ValueError("omega_if must be > 0")
    T = t[-1] - t[0]
    n_periods = T * omega_if / (2 * math.pi)
    if abs(n_periods - round(n_periods)) > 1e-9 * max(1.0, n_periods) or round(n_periods) < 1:
        raise ValueError(f"window spans {n_periods:.6f} periods; need an integer")
    if periods is not None and round(n_periods) != periods:
        raise ValueError(f"window spans {round(n_periods)} periods, expected {periods}")
    dt = np.diff(t)
    if max_freq is not None and np.max(dt) * max_freq >= math.pi:
        raise ValueError("sampling violates Nyquist for the stated max_freq")
    arg = omega_if * t - phi
    x = 2.0 / T * np.trapezoid(samples * np.cos(arg), t)
    y = 2.0 / T * np.trapezoid(samples * np.sin(arg), t)
    return float(x), float(y)


def error_scaling(dev: SetDevice, amplitudes, omega1: float = 11.0, omega2: float = 10.0,
                  periods: int = 1, samples_per_period: int = 4096):
    """Relative error of the sideband model vs the demodulated exact current.

    For each amplitude ``v`` the signal is ``(v, v/2)`` and the LO
    ``(0.7 v, -0.3 v)`` (LO phase 0), so all four quadrature products
    contribute; the error is the worse relative mismatch of the two
    demodulated quadratures.
    Returns rows ``(amplitude, relative_error)``.
    """
    rows = []
    w_if = omega1 - omega2
    for v in amplitudes:
        sig = VoltageTone(v, 0.5 * v, omega1)
        lo = VoltageTone(0.7 * v, -0.3 * v, omega2)
        t = sample_times(w_if, periods, samples_per_period)
        x, y = demodulate(exact_current(dev, [sig, lo], t), t, w_if)
        c, s = sideband_coefficients(dev, sig, lo)
        err = max(abs(x - c) / abs(c), abs(y - s) / abs(s))
        rows.append((float(v), float(err)))
    return np.array(rows)
