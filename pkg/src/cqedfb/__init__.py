"""Circuit-QED dispersive readout, SET mixer model and entanglement feedback."""

__version__ = "0.1.0"
