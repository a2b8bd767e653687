from tensor_core.graph import Graph, GradientMap, Tensor, backward, double_precision, working_dtype
from tensor_core import ops

__all__ = ["Graph", "GradientMap", "Tensor", "backward", "double_precision", "working_dtype", "ops"]
