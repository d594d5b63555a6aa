"""Location-aided mmWave beam tracking with path skeletons and a distance-triggered refresh."""

from .errors import ConfigError, DomainError, InfeasibleError, SkeltrackError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DomainError", "InfeasibleError", "SkeltrackError", "__version__"]
