"""Gromov-Wasserstein discrepancies (exact, entropic, sliced) and SGW-regularised adversarial training."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    Coupling,
    DistanceMatrix,
    EmbeddingSet,
    SeededRng,
    load_embeddings,
    pairwise_distances,
    save_embeddings,
    split_by_label,
)
from .gw_exact import GwResult, gw_bruteforce, gw_entropic, gw_objective  # noqa: F401
from .gw_sliced import ProjectionBasis, SgwResult, gw_1d, project, sample_basis, sgw, sgw_fast, sgw_fast_slice  # noqa: F401

__all__ = [
    "Coupling",
    "DistanceMatrix",
    "EmbeddingSet",
    "GwResult",
    "ProjectionBasis",
    "SeededRng",
    "SgwResult",
    "gw_1d",
    "gw_bruteforce",
    "gw_entropic",
    "gw_objective",
    "load_embeddings",
    "pairwise_distances",
    "project",
    "sample_basis",
    "save_embeddings",
    "sgw",
    "sgw_fast",
    "sgw_fast_slice",
    "split_by_label",
]
