"""Truncated SVD and PCA of genotype matrices by Golub-Kahan-Lanczos bidiagonalization."""

from importlib.metadata import PackageNotFoundError, version

from .estimators import (
    GenotypeStandardizer,
    LanczosSVD,
    MarchenkoPasturFit,
    PCAdjustedRegression,
    SubspaceIterationSVD,
)
from .gkl import GklOptions, SvdResult, svdl
from .ingest import FormatError, GenotypeMatrix, read_bed, read_dense, read_matrix, write_bed, write_dense
from .linops import CenteredScaledOperator, LinearOperator, MatrixOperator, aslinearoperator
from .regress import RankDeficientError, ols_fit, pc_adjusted_fit
from .rmt import MpParams, fit_bulk, mp_pdf_eig, mp_pdf_sv, spectrum_report
from .subspace import subspace_iterate
from .synth import ModelParams, model, model_matrix

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

__all__ = [
    "GenotypeStandardizer",
    "LanczosSVD",
    "MarchenkoPasturFit",
    "PCAdjustedRegression",
    "SubspaceIterationSVD",
    "GklOptions",
    "SvdResult",
    "svdl",
    "FormatError",
    "GenotypeMatrix",
    "read_bed",
    "read_dense",
    "read_matrix",
    "write_bed",
    "write_dense",
    "CenteredScaledOperator",
    "LinearOperator",
    "MatrixOperator",
    "aslinearoperator",
    "RankDeficientError",
    "ols_fit",
    "pc_adjusted_fit",
    "MpParams",
    "fit_bulk",
    "mp_pdf_eig",
    "mp_pdf_sv",
    "spectrum_report",
    "subspace_iterate",
    "ModelParams",
    "model",
    "model_matrix",
]
