from .engine import (ADJOINT_REGISTRY, GradientNaNError, GradStore, Tape,
                     Tensor, as_tensor, backward, leaf)
from .check import FiniteDiffResult, NonFrozenStochasticityError, finite_diff_check
from .optim import AdamState, adam_step
from . import ops

__all__ = [
    "ADJOINT_REGISTRY", "GradientNaNError", "GradStore", "Tape", "Tensor",
    "as_tensor", "backward", "leaf", "FiniteDiffResult",
    "NonFrozenStochasticityError", "finite_diff_check", "AdamState",
    "adam_step", "ops",
]
