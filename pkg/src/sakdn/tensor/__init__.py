from .core import ComputationRecord, Tensor, active_record, as_tensor, backward, eval_graph
from .gradcheck import GradCheckReport, finite_diff_check, rel_err
from . import ops
from .serialize import load, save

__all__ = [
    "ComputationRecord",
    "GradCheckReport",
    "Tensor",
    "active_record",
    "as_tensor",
    "backward",
    "eval_graph",
    "finite_diff_check",
    "load",
    "ops",
    "rel_err",
    "save",
]
