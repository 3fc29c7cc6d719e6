from cpnkit.tensorcore.grid import Grid, ParamStore, CHECKPOINT_MAGIC
from cpnkit.tensorcore import ops
from cpnkit.tensorcore import kernels

__all__ = ["Grid", "ParamStore", "CHECKPOINT_MAGIC", "ops", "kernels"]
