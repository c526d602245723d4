"""Distribution inference attacks, leakage oracles and causal defenses."""

__version__ = "0.1.0"
