"""Command-line entry point: ``cqedfb <scenario> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCENARIOS, ConfigError, ExperimentConfig, parse_config, preset
from .io import (
    SET_ERROR_COLUMNS,
    SET_SERIES_COLUMNS,
    TRANSMISSION_COLUMNS,
    atomic_write,
    csv_text,
    json_text,
    line_plot_svg,
    summary_csv,
    trajectory_csv,
)

log = logging.getLogger("cqedfb")

LINDBLAD_COLUMNS = ("t", "jz", "x_quad", "n_photon", "concurrence", "fidelity")


def _system(cfg: ExperimentConfig):
    from .models import SystemParams

    s = cfg.system
    return SystemParams(
        kappa=s.kappa, chi=s.chi, epsilon=s.epsilon, g=s.g, Delta=s.Delta, omega_r=s.omega_r, omega_a=s.omega_a
    )


def _feedback(cfg: ExperimentConfig):
    from .feedback import FeedbackParams

    f = cfg.feedback
    return FeedbackParams(lam=f.lam, power=f.power, t_window=f.t_window, gamma=f.gamma, norm=f.norm, clamp=f.clamp)


def _sde(cfg: ExperimentConfig, seed: int = 0):
    from .stochastic import SdeConfig

    s = cfg.sde
    return SdeConfig(dt=s.dt, t_final=s.t_final, seed=seed, fock_dim=s.fock_dim, sample_every=s.sample_every)


def _manifest(cfg: ExperimentConfig, **extra) -> dict:
    return {"version": __version__, "config": cfg.to_dict(), **extra}


# ---------------------------------------------------------------------------
# scenarios; each returns (files, manifest extras, console lines)


def _run_phase_shift(cfg):
    from .cavity_io import CavityResponse, steady_state_field, transmission_curve

    params = _system(cfg)
    resp = CavityResponse(params.kappa, params.omega_r, params.chi)
    theta = {s: float(np.arctan(-s * params.chi / params.kappa)) for s in (1, -1)}
    ps = cfg.phase_shift
    omegas = params.omega_r + np.linspace(-ps.span, ps.span, ps.points) * params.kappa
    files = {
        "transmission_plus.csv": csv_text(TRANSMISSION_COLUMNS, transmission_curve(resp, 1, omegas)),
        "transmission_minus.csv": csv_text(TRANSMISSION_COLUMNS, transmission_curve(resp, -1, omegas)),
    }
    lines = [
        f"theta(sigma_z=+1) = {theta[1]:.12g} rad",
        f"theta(sigma_z=-1) = {theta[-1]:.12g} rad",
    ]
    extra = {"theta_plus": theta[1], "theta_minus": theta[-1]}
    if ps.steady_state:
        fields = {s: steady_state_field(params, s) for s in (1, -1)}
        diff = float(np.angle(fields[1] / fields[-1]))
        lines.append(f"steady-state arg difference (+1 vs -1) = {diff:.12g} rad")
        extra["steady_state_arg_difference"] = diff
    return files, extra, lines


def _run_set_mixer(cfg):
    from .set_mixer import SetDevice, VoltageTone, error_scaling, exact_current, sample_times, sideband_current

    d, m = cfg.set_device, cfg.set_mixer
    dev = SetDevice(d.i0, d.delta_i0, d.c_g, d.v_dc, d.operating_point)
    sig = VoltageTone(m.signal[0], m.signal[1], m.omega_signal)
    lo = VoltageTone(m.lo[0], m.lo[1], m.omega_lo, m.lo_phase)
    t = sample_times(abs(m.omega_signal - m.omega_lo), m.periods, m.samples_per_period)
    exact = exact_current(dev, [sig, lo], t)
    approx = sideband_current(dev, sig, lo, t) if dev.operating_point.value == "A" else np.full_like(t, np.nan)
    files = {"set_series.csv": csv_text(SET_SERIES_COLUMNS, np.column_stack([t, exact, approx]))}
    if dev.operating_point.value == "A":
        table = error_scaling(dev, m.amplitudes, m.omega_signal, m.omega_lo)
        files["set_error.csv"] = csv_text(SET_ERROR_COLUMNS, table)
    lines = [f"wrote {len(t)} samples" + (f" and {len(m.amplitudes)} error rows" if len(files) > 1 else "")]
    return files, {}, lines


def _run_lindblad(cfg):
    from .feedback import INITIAL_STATES
    from .metrics import concurrence, fidelity_phi_plus
    from .models import build_feedback_model
    from .stochastic import lindblad_evolve

    params = _system(cfg)
    sde = _sde(cfg)
    model = build_feedback_model(params, sde.fock_dim)
    psi0 = INITIAL_STATES[cfg.ensemble.initial](model.layout, cfg.ensemble.alpha)
    times = sde.sample_times()
    snaps = lindblad_evolve(model.H, model.L, psi0.to_density(), sde.t_final, sde.dt, checkpoints=times)
    ops = [model.Jz.toarray(), model.x_quad.toarray(), model.n_photon.toarray()]
    n = model.layout.fock_dim
    rows = []
    for t, rho in zip(times, snaps):
        r = rho.entries
        vals = [float(np.real(np.trace(o @ r))) for o in ops]
        rq = np.einsum("imjm->ij", r.reshape(4, n, 4, n))
        rq = 0.5 * (rq + rq.conj().T)
        rows.append([t, *vals, concurrence(rq), fidelity_phi_plus(rq)])
    files = {"lindblad.csv": csv_text(LINDBLAD_COLUMNS, rows)}
    return files, {}, [f"final fidelity with phi+ = {rows[-1][-1]:.6f}"]


def _run_trajectory(cfg):
    from .feedback import INITIAL_STATES, make_controller
    from .models import build_feedback_model
    from .stochastic import run_trajectory

    params = _system(cfg)
    seed = cfg.ensemble.master_seed
    sde = _sde(cfg, seed)
    model = build_feedback_model(params, sde.fock_dim)
    psi0 = INITIAL_STATES[cfg.ensemble.initial](model.layout, cfg.ensemble.alpha)
    ctrl = make_controller(params, _feedback(cfg), sde.dt, sde.fock_dim)
    rec = run_trajectory(model, sde, psi0, controller=ctrl, seed=(seed, 0), record_increments=False)
    files = {"trajectory_0.csv": trajectory_csv(rec)}
    extra = {"seeds": [[seed, 0]], "final_fidelity": float(rec.fidelity[-1]), "filter_norm": ctrl.norm_const}
    return files, extra, [f"final fidelity {rec.fidelity[-1]:.6f}, concurrence {rec.concurrence[-1]:.6f}"]


def _run_feedback_ensemble(cfg):
    from .feedback import INITIAL_STATES, make_controller, run_ensemble
    from .models import build_feedback_model
    from .stochastic import run_trajectory

    params = _system(cfg)
    fb = _feedback(cfg)
    sde = _sde(cfg)
    e = cfg.ensemble
    model = build_feedback_model(params, sde.fock_dim)
    start = time.perf_counter()
    summary = run_ensemble(model, sde, fb, e.n_traj, e.master_seed, initial=e.initial, alpha=e.alpha,
                           threshold=e.threshold)
    elapsed = time.perf_counter() - start
    files = {"summary.csv": summary_csv(summary)}
    if cfg.output.trajectories:
        ctrl = make_controller(params, fb, sde.dt, sde.fock_dim)
        psi0 = INITIAL_STATES[e.initial](model.layout, e.alpha)
        for k in range(min(cfg.output.trajectories, e.n_traj)):
            rec = run_trajectory(model, sde, psi0, controller=ctrl, seed=(e.master_seed, k), record_increments=False)
            files[f"trajectory_{k}.csv"] = trajectory_csv(rec)
    if cfg.output.svg:
        files["fig5.svg"] = line_plot_svg(
            summary.times, {"mean concurrence": summary.mean_concurrence},
            f"Concurrence averaged over {summary.n_traj} trajectories", "t", "concurrence",
        )
        files["fig6.svg"] = line_plot_svg(
            summary.times, {"mean fidelity with phi+": summary.mean_fidelity},
            f"Fidelity with phi+ averaged over {summary.n_traj} trajectories", "t", "fidelity",
        )
    extra = {
        "seeds": summary.seeds,
        "convergence_fraction": summary.convergence_fraction,
        "threshold": summary.threshold,
        "n_completed": summary.n_traj,
        "aborted": [list(a) for a in summary.aborted],
        "final_mean_concurrence": float(summary.mean_concurrence[-1]),
        "final_mean_fidelity": float(summary.mean_fidelity[-1]),
    }
    lines = [
        f"{summary.n_traj} trajectories in {elapsed:.1f} s",
        f"mean concurrence at t={summary.times[-1]:g}: {summary.mean_concurrence[-1]:.4f}",
        f"mean fidelity at t={summary.times[-1]:g}: {summary.mean_fidelity[-1]:.4f}",
        f"convergence fraction (F > {summary.threshold}): {summary.convergence_fraction:.3f}",
    ]
    return files, extra, lines


_RUNNERS = {
    "phase-shift": _run_phase_shift,
    "set-mixer": _run_set_mixer,
    "lindblad": _run_lindblad,
    "trajectory": _run_trajectory,
    "feedback-ensemble": _run_feedback_ensemble,
}


def run(cfg: ExperimentConfig, out=None, echo=print) -> int:
    """Dispatch ``cfg.scenario`` and write its artifacts; returns an exit status."""
    out_dir = Path(out if out is not None else cfg.output.out_dir)
    try:
        files, extra, lines = _RUNNERS[cfg.scenario](cfg)
    except Exception as exc:  # surfaced as a diagnostic and nonzero status
        log.error("%s failed: %s", cfg.scenario, exc)
        echo(f"error: {cfg.scenario} failed: {exc}")
        return 1
    files["manifest.json"] = json_text(_manifest(cfg, files=sorted(files), **extra))
    try:
        for name in sorted(files):
            atomic_write(out_dir / name, files[name])
    except OSError as exc:
        echo(f"error: could not write outputs to {out_dir}: {exc}")
        return 2
    for line in lines:
        echo(line)
    echo(f"outputs in {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cqedfb", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON configuration (or a previous manifest.json)")
        sp.add_argument("--preset", help="built-in configuration: desk-scale, paper-fig5, paper-fig6")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--traj", type=int, help="number of trajectories (overrides config)")
        sp.add_argument("--out", type=Path, help="output directory (overrides config)")
        sp.add_argument("--svg", action="store_true", help="also write fig5.svg / fig6.svg")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.preset:
        cfg = preset(args.preset)
        if cfg.scenario != args.scenario:
            raise ConfigError(f"preset {args.preset!r} is a {cfg.scenario} preset")
    elif args.config:
        cfg = parse_config(args.config.read_text(), scenario=args.scenario)
    else:
        cfg = parse_config("{}", scenario=args.scenario)
    ens, outp = {}, {}
    if args.seed is not None:
        ens["master_seed"] = args.seed
    if args.traj is not None:
        ens["n_traj"] = args.traj
    if args.out is not None:
        outp["out_dir"] = str(args.out)
    if args.svg:
        outp["svg"] = True
    return cfg.with_overrides(ensemble=ens, output=outp)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (ConfigError, OSError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
