"""Hybrid quantum-classical transfer learning with FGSM robustness tooling."""

__version__ = "0.1.0"
