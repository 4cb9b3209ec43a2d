"""
Report models shared by all orbitframe modules.

Reports hold plain floats, lists and encoded complex arrays so they dump straight
to JSON with `model_dump(mode="json")`.
"""

from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, computed_field

from .serialization import decode_complex


class BoundLevel(BaseModel):
    """Frame bounds at one truncation level (truncated iteration only)."""

    K: int
    J: int
    lower_bound: float
    upper_bound: float


class FrameReport(BaseModel):
    lower_bound: float = Field(..., ge=0.0)
    upper_bound: float = Field(..., ge=0.0)
    is_frame: bool
    is_parseval: bool
    is_riesz: bool
    rank: int
    n_columns: int
    dim_H: int
    singular_spectrum: List[float]
    tolerances: Dict[str, float]
    convergence: Optional[List[BoundLevel]] = None
    upper_monotone: Optional[bool] = None
    divergence_suspected: Optional[bool] = None
    projection_identity_residual: Optional[float] = None
    similarity_sandwich: Optional[Dict[str, Any]] = None

    @property
    def kernel_dim(self) -> int:
        return self.n_columns - self.rank


class TupleDiagnostics(BaseModel):
    commutator_norm: float
    commutator_threshold: float
    sigma_min_T: float
    sigma_min_L: float
    cyclicity_defect_T: Optional[float] = None
    cyclicity_defect_L: Optional[float] = None
    violations: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


class BasicTupleInvariants(BaseModel):
    """Residual block recorded with every basic tuple."""

    rank: int
    kernel_dim: int
    orthonormality_defect: float
    reducing_defects: Dict[str, float]
    commutation_defect: float
    sigma_min_restricted: float
    spectral_gap: Optional[float] = None
    passed: bool


class IntertwiningReport(BaseModel):
    residuals: Dict[str, float]
    synthesis_norm: float
    threshold: float
    flagged: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.flagged


class KernelStructureReport(BaseModel):
    kernel_dim: int
    invariance_defects: Dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.invariance_defects.values())


class CompressionReport(BaseModel):
    """Residuals of the map C2|N2^-1 C1|N1 between two single-generator models."""

    compression_residual: float
    unitary_part_residual: float
    generator_residual: float
    subspace_distance: float
    sigma_min: float


class SimilarityStatus(str, Enum):
    SIMILAR = "similar"
    SIMILAR_KERNEL_ONLY = "similar_kernel_only"
    NOT_SIMILAR = "not_similar"


class SimilarityVerdict(BaseModel):
    status: SimilarityStatus
    kernel_distance: float
    sim_tol: float
    connecting_map: Optional[list] = None
    certification_residuals: Dict[str, float] = Field(default_factory=dict)
    unitarity_defect: Optional[float] = None

    @computed_field  # type: ignore[misc]
    @property
    def similar(self) -> bool:
        return self.status is SimilarityStatus.SIMILAR

    def connecting_matrix(self) -> Optional[np.ndarray]:
        if self.connecting_map is None:
            return None
        return decode_complex(self.connecting_map, ndim=2)


class MembershipVerdict(BaseModel):
    in_V: bool
    frame_report: FrameReport
    similarity: SimilarityVerdict
    consistent: bool


class ReducingDefect(BaseModel):
    defects: Dict[str, float]
    gram_defect: float
    tolerance: float
    reducing: bool
    s_star_invariant: Optional[bool] = None


class RestrictionReport(BaseModel):
    sigma_min: List[Optional[float]]
    dims_from: List[int]
    dims_to: List[int]
    isomorphism: bool


class GeneratorClassReport(BaseModel):
    candidates: List[str]
    stems: List[str]
    lower_bounds: List[float]
    distance_matrix: List[List[float]]
    similar_matrix: List[List[bool]]
    verdicts: Dict[str, SimilarityVerdict]
    class_labels: List[int]
    class_count_lower_bound: int
    seed: Optional[int] = None
    tolerances: Dict[str, float]
