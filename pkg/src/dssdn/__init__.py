"""Deep space separable distillation networks for acoustic scene classification."""

__version__ = "0.1.0"
