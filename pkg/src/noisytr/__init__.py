"""Trust-region methods with noisy function and derivative evaluations."""
from .core import DerivativeBundle, LipschitzEstimate, TaylorModel
from .oracle import ExactOracle, NoisyOracle
from .trqne import AlgoConfig, run

__version__ = "0.1.0"

__all__ = ["AlgoConfig", "DerivativeBundle", "ExactOracle", "LipschitzEstimate", "NoisyOracle", "TaylorModel", "run", "__version__"]
