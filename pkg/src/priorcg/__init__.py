"""Prior-preconditioned conjugate gradient sampling for sparse Bayesian logistic regression.

The package is organized around a matrix-free pipeline: CSR design matrices
(:mod:`priorcg.sparse`), preconditioners (:mod:`priorcg.precond`), the PCG
engine (:mod:`priorcg.cg`), the Gaussian conditional sampler
(:mod:`priorcg.sampler`), exact Polya-Gamma draws (:mod:`priorcg.polya_gamma`),
the bridge-prior Gibbs sampler (:mod:`priorcg.gibbs`), spectrum and error
diagnostics (:mod:`priorcg.diagnostics`), and a synthetic-data generator
(:mod:`priorcg.synthdata`).  The command-line entry point lives in
:mod:`priorcg.cli`.
"""

__version__ = "0.1.0"

from priorcg.sparse import SparseDesignMatrix, DenseSymmetric
from priorcg.cg import CGConfig, CGReport, pcg_solve
from priorcg.sampler import (GaussianTarget, PrecisionOperator, cg_sample,
                             direct_sample, generate_rhs)
from priorcg.gibbs import BridgeConfig, ChainOutput, ShrinkageState, gibbs_run
from priorcg.synthdata import SimSpec, simulate_design, simulate_outcomes

__all__ = [
    "BridgeConfig",
    "CGConfig",
    "CGReport",
    "ChainOutput",
    "DenseSymmetric",
    "GaussianTarget",
    "PrecisionOperator",
    "ShrinkageState",
    "SimSpec",
    "SparseDesignMatrix",
    "__version__",
    "cg_sample",
    "direct_sample",
    "generate_rhs",
    "gibbs_run",
    "pcg_solve",
    "simulate_design",
    "simulate_outcomes",
]
