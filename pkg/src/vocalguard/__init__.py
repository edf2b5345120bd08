"""Gender-protection toolkit: acoustic features, linear and CNN classifiers, PGD perturbations."""

__version__ = "0.1.0"
