"""Python bindings for the ctta continual test-time adaptation toolkit."""

from ._ctta import *  # noqa: F401,F403
from ._ctta import CttaError, ConfigError, DataError, IoError, NumericError, ConfidenceState

__version__ = "0.1.0"
