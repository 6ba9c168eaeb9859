"""Fast CIFAR-10 training on the CPU with a small numpy network engine."""
from .config import Config, preset
from .data import AugmentPolicy, Dataset, load_dataset, synthetic_dataset
from .exceptions import (ConfigError, FormatError, NumericalError, ShapeError, StateError,
                         UnattainableError)
from .model import NetConfig, Network, build
from .optim import HyperParams
from .trainer import RunLog, RunStats, run_many, train, warmup

__version__ = "0.1.0"
