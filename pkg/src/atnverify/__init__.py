"""Exact robustness verification for sparsemax attention networks and ReLU MLPs."""

__version__ = "0.1.0"

from .network import NetworkSpec, forward, load_model, predict, random_network, save_model, sparsemax
from .verifier import CONTROL, Heuristics, VerificationQuery, VerificationResult, verify

__all__ = [
    "CONTROL",
    "Heuristics",
    "NetworkSpec",
    "VerificationQuery",
    "VerificationResult",
    "__version__",
    "forward",
    "load_model",
    "predict",
    "random_network",
    "save_model",
    "sparsemax",
    "verify",
]
