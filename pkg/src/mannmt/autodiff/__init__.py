"""Reverse-mode differentiation over numpy arrays."""

from . import ops
from .gradcheck import GradCheckReport, check_gradients, relative_error
from .lstm import lstm_cell_step, lstm_parameters, lstm_stack_step, zero_states
from .ops import primitive_forward
from .value import Tape, Value, as_value, backward

__all__ = [
    "GradCheckReport",
    "Tape",
    "Value",
    "as_value",
    "backward",
    "check_gradients",
    "lstm_cell_step",
    "lstm_parameters",
    "lstm_stack_step",
    "ops",
    "primitive_forward",
    "relative_error",
    "zero_states",
]
