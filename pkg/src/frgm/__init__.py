"""Graph matching on function spaces: general graphs, Euclidean point sets and
deformable registration, solved with Frank-Wolfe or entropic Frank-Wolfe."""

from .core import (
    DegenerateGeometryError,
    GraphAttributes,
    NumericalError,
    ParameterError,
    Permutation,
    PointSet,
)
from .deform import fit_affine, fit_nonrigid, fit_similarity, match_deformable
from .euclid import EuclideanProblem, match_euclidean
from .general import GeneralProblem, match_general
from .lap import hungarian, lap_sinkhorn, sinkhorn
from .optimizer import afw_solve, fw_solve
from .outlier import iterative_removal, ratio_prune

__version__ = "0.1.0"

__all__ = [
    "DegenerateGeometryError",
    "EuclideanProblem",
    "GeneralProblem",
    "GraphAttributes",
    "NumericalError",
    "ParameterError",
    "Permutation",
    "PointSet",
    "afw_solve",
    "fit_affine",
    "fit_nonrigid",
    "fit_similarity",
    "fw_solve",
    "hungarian",
    "iterative_removal",
    "lap_sinkhorn",
    "match_deformable",
    "match_euclidean",
    "match_general",
    "ratio_prune",
    "sinkhorn",
]
