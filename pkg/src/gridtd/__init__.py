"""Tensor-decomposed multi-resolution grid encoding for compressive imaging."""
import os as _os

# GRIDTD_THREADS caps BLAS / numba worker threads; it only takes effect when
# set before numpy is first imported in the process.
if _os.environ.get("GRIDTD_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["GRIDTD_THREADS"])

from .encoding import EncoderConfig, param_count  # noqa: E402
from .model import GridTDModel, ModelConfig  # noqa: E402
from .admm import SolverConfig, admm_run  # noqa: E402

__all__ = ["EncoderConfig", "ModelConfig", "GridTDModel", "SolverConfig", "admm_run", "param_count"]
__version__ = "0.1.0"
