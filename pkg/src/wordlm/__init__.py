"""Word-level masked-language-model pretraining toolkit."""

from .errors import ConfigError, ContractError, IntegrityError, ShapeError, WordlmError
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "WordlmError",
    "ShapeError",
    "ContractError",
    "IntegrityError",
    "ConfigError",
    "__version__",
]
