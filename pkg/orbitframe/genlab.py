"""
Generator experiments over a fixed operator pair (T, L).

For one generator the frame-tuples (H, T, L, v) form a single similarity class,
parametrized by the invertible elements of the joint commutant of T and L. With two
or more generators that fails; the experiments here exhibit distinct classes.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import structlog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from .errors import (
    ConfigurationError,
    NotAFrameError,
    PreconditionError,
    SamplingExhaustedError,
    StructuralError,
)
from .lattice import Universe
from .model import build_basic_tuple, compare_basic_tuples, kernel_complement, symmetric_distance
from .monitoring import operation_timer
from .reports import GeneratorClassReport, MembershipVerdict, SimilarityStatus, SimilarityVerdict
from .serialization import encode_complex
from .settings import Tolerances, default_tolerances
from .tuples import OrbitTuple, frame_bounds, frame_report_from_matrix, synthesis, tuple_digest

logger = structlog.get_logger(__name__)

CONDITION_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class CommutantBasis:
    """Frobenius-orthonormal basis of {B : BT = TB, BL = LB}."""

    dim_H: int
    basis: np.ndarray = field(repr=False)
    identity_residual: float = 0.0

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    def combine(self, coefficients: np.ndarray) -> np.ndarray:
        return np.einsum("k,kab->ab", coefficients, self.basis)

    def to_dict(self) -> Dict[str, Any]:
        return {"dim_H": self.dim_H, "dimension": self.dimension,
                "identity_residual": self.identity_residual, "basis": encode_complex(self.basis)}


def commutant_basis(T: np.ndarray, L: np.ndarray, tol: Optional[Tolerances] = None) -> CommutantBasis:
    """
    Null space of B -> (BT - TB, BL - LB) acting on row-major vec(B).

    Uses vec(B X) = (I kron X^T) vec(B) and vec(X B) = (X kron I) vec(B).
    """
    tol = tol or default_tolerances()
    T = np.asarray(T, dtype=np.complex128)
    L = np.asarray(L, dtype=np.complex128)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or L.shape != T.shape:
        raise ConfigurationError("T and L must be square matrices of one size", "T,L",
                                 [list(T.shape), list(L.shape)])
    d = T.shape[0]
    eye = np.eye(d)
    system = np.vstack([np.kron(eye, T.T) - np.kron(T, eye), np.kron(eye, L.T) - np.kron(L, eye)])
    with operation_timer.time("commutant_basis", dim_H=d):
        null = la.null_space(system, rcond=tol.rank_rel_tol)
    basis = null.T.reshape(-1, d, d)
    overlaps = np.einsum("kab,ab->k", basis.conj(), eye)
    residual = float(la.norm(eye - np.einsum("k,kab->ab", overlaps, basis), "fro"))
    logger.info("commutant_computed", dim_H=d, dimension=basis.shape[0], identity_residual=residual)
    return CommutantBasis(dim_H=d, basis=basis, identity_residual=residual)


class IllConditionedDraw(Exception):
    pass


def sample_invertible_commutant(cb: CommutantBasis, seed: Optional[int] = None, max_tries: int = 100,
                                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Random element sum c_k B_k of the commutant with standard complex Gaussian
    coefficients, redrawn until sigma_min > 1e-6 sigma_max.

    Raises:
        SamplingExhaustedError: If no draw is accepted within max_tries
    """
    if cb.dimension == 0:
        raise PreconditionError("Commutant basis is empty", "nonempty_commutant")
    rng = rng or np.random.default_rng(seed)

    def draw() -> np.ndarray:
        coeffs = (rng.standard_normal(cb.dimension) + 1j * rng.standard_normal(cb.dimension)) / np.sqrt(2)
        B = cb.combine(coeffs)
        s = la.svdvals(B)
        if s[0] == 0 or s[-1] <= CONDITION_FLOOR * s[0]:
            raise IllConditionedDraw(float(s[-1]), float(s[0]))
        return B

    retryer = Retrying(
        stop=stop_after_attempt(max_tries),
        retry=retry_if_exception_type(IllConditionedDraw),
        before_sleep=lambda state: logger.debug("commutant_draw_rejected", attempt=state.attempt_number),
    )
    try:
        return retryer(draw)
    except RetryError as e:
        raise SamplingExhaustedError("No well-conditioned commutant element found", max_tries, seed) from e


def membership_V(base: OrbitTuple, v: np.ndarray, u: Optional[Universe] = None,
                 tol: Optional[Tolerances] = None) -> MembershipVerdict:
    """
    Is (H, T, L, v) a frame-tuple, and is it similar to the single-generator base?

    The two answers come from different computations and must agree; a
    disagreement is logged and reported through `consistent`.

    Raises:
        PreconditionError: If the base has more than one generator
        NotAFrameError: If the base is not a frame-tuple
    """
    tol = tol or default_tolerances()
    if base.n_gen != 1:
        raise PreconditionError("Membership needs a single-generator base", "single_generator",
                                n_gen=base.n_gen)
    b_base = build_basic_tuple(base, u, tol)
    candidate = base.with_generators(np.asarray(v, dtype=np.complex128).reshape(base.dim_H, 1))
    syn = synthesis(candidate, b_base.universe)
    report = frame_report_from_matrix(syn.matrix, base.dim_H, tol)
    if report.is_frame:
        verdict = compare_basic_tuples(base, b_base, candidate, build_basic_tuple(candidate, u, tol), tol)
    else:
        N_c, _, _ = kernel_complement(syn.coordinate_matrix, tol, strict=False)
        distance = symmetric_distance(b_base.N_basis, N_c)
        status = SimilarityStatus.NOT_SIMILAR if distance > tol.sim_tol else SimilarityStatus.SIMILAR_KERNEL_ONLY
        verdict = SimilarityVerdict(status=status, kernel_distance=distance, sim_tol=tol.sim_tol)

    consistent = report.is_frame == (verdict.kernel_distance <= tol.sim_tol)
    if not consistent:
        logger.warning("membership_verdict_disagreement", is_frame=report.is_frame,
                       kernel_distance=verdict.kernel_distance, lower_bound=report.lower_bound)
    return MembershipVerdict(in_V=report.is_frame, frame_report=report, similarity=verdict, consistent=consistent)


def sample_membership(base: OrbitTuple, n_samples: int, seed: Optional[int] = None,
                      commuting: bool = True, tol: Optional[Tolerances] = None
                      ) -> List[Tuple[np.ndarray, MembershipVerdict]]:
    """
    Membership verdicts for v = B w over sampled invertible maps B.

    With `commuting` the maps come from the joint commutant; otherwise they are
    unstructured complex Gaussian matrices.
    """
    tol = tol or default_tolerances()
    rng = np.random.default_rng(seed)
    cb = commutant_basis(base.T, base.L, tol) if commuting else None
    d = base.dim_H
    results = []
    for _ in range(n_samples):
        if cb is not None:
            B = sample_invertible_commutant(cb, seed, rng=rng)
        else:
            B = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
        results.append((B, membership_V(base, B @ base.generators[:, 0], tol=tol)))
    logger.info("membership_sampled", samples=n_samples, commuting=commuting,
                consistent=sum(v.consistent for _, v in results))
    return results


def extended_pair(base: OrbitTuple) -> Tuple[OrbitTuple, OrbitTuple]:
    """{v_i} with v0 + v1 appended, and {v_i} with v0 - v1 appended."""
    v0, v1 = base.generators[:, 0], base.generators[:, 1]
    plus = base.with_generators(np.column_stack([base.generators, v0 + v1]))
    minus = base.with_generators(np.column_stack([base.generators, v0 - v1]))
    return plus, minus


def scaled_pair_family(base: OrbitTuple, factors: Sequence[complex]) -> List[OrbitTuple]:
    """Two-generator tuples {v, a v} over the given factors a."""
    v = base.generators[:, 0]
    return [base.with_generators(np.column_stack([v, a * v])) for a in factors]


def factor_label(a: complex) -> str:
    """`a=2`, `a=1j`, `a=(1+2j)`: the Python literal of a scale factor."""
    a = complex(a)
    if a.imag == 0:
        return f"a={a.real:g}"
    return f"a={a!r}"


def class_census(tuples: Sequence[OrbitTuple], tol: Optional[Tolerances] = None,
                 seed: Optional[int] = None, stems: Optional[Sequence[str]] = None) -> GeneratorClassReport:
    """
    Pairwise similarity of frame-tuples over one (H, T, L) and the resulting classes.

    `stems` name the candidates in the report (file stems, factor labels); they
    default to the candidate positions.

    Raises:
        PreconditionError: If the tuples do not share T, L, variant, iteration and generator count
        NotAFrameError: If any tuple is not a frame-tuple
    """
    tol = tol or default_tolerances()
    if not tuples:
        raise ConfigurationError("Census needs at least one tuple", "tuples", 0)
    stems = [str(q) for q in range(len(tuples))] if stems is None else list(stems)
    if len(stems) != len(tuples):
        raise ConfigurationError("One stem per census candidate is required", "stems", len(stems))
    ref = tuples[0]
    for t in tuples[1:]:
        same = (t.dim_H == ref.dim_H and np.array_equal(t.T, ref.T) and np.array_equal(t.L, ref.L)
                and t.n_gen == ref.n_gen and t.variant == ref.variant and t.iteration == ref.iteration)
        if not same:
            raise PreconditionError("Census tuples must share (H, T, L) and generator count", "shared_operators")

    basics = [build_basic_tuple(t, tol=tol) for t in tuples]
    n = len(tuples)
    distance = np.zeros((n, n))
    similar = np.eye(n, dtype=bool)
    verdicts: Dict[str, SimilarityVerdict] = {}
    for i in range(n):
        for j in range(i + 1, n):
            verdict = compare_basic_tuples(tuples[i], basics[i], tuples[j], basics[j], tol)
            verdicts[f"{i}-{j}"] = verdict
            distance[i, j] = distance[j, i] = verdict.kernel_distance
            similar[i, j] = similar[j, i] = verdict.kernel_distance <= tol.sim_tol
    n_classes, labels = connected_components(csr_matrix(similar), directed=False)
    logger.info("class_census", candidates=n, classes=int(n_classes))
    return GeneratorClassReport(
        candidates=[tuple_digest(t) for t in tuples],
        stems=stems,
        lower_bounds=[b.frame_report.lower_bound for b in basics],
        distance_matrix=distance.tolist(),
        similar_matrix=similar.tolist(),
        verdicts=verdicts,
        class_labels=[int(x) for x in labels],
        class_count_lower_bound=int(n_classes),
        seed=seed,
        tolerances=tol.model_dump(),
    )


def counterexample_multigen(base: OrbitTuple, tol: Optional[Tolerances] = None,
                            seed: Optional[int] = None) -> GeneratorClassReport:
    """
    Extend a frame-tuple {v_i} by v0 + v1 and by v0 - v1 and certify that the two
    extended frame-tuples are not similar.

    Raises:
        PreconditionError: If fewer than two generators or v0, v1 are dependent
        NotAFrameError: If the base is not a frame-tuple
        StructuralError: If the extended tuples come out similar
    """
    tol = tol or default_tolerances()
    if base.n_gen < 2:
        raise PreconditionError("Need at least two generators", "two_generators", n_gen=base.n_gen)
    s = la.svdvals(base.generators[:, :2])
    if s[0] == 0 or s[-1] <= tol.frame_rel_threshold * s[0]:
        raise PreconditionError("v0 and v1 are linearly dependent", "independent_generators",
                                singular_values=[float(x) for x in s])
    base_report = frame_bounds(base, tol=tol)
    if not base_report.is_frame:
        raise NotAFrameError("Base tuple is not a frame-tuple", base_report.lower_bound, base_report.upper_bound)

    report = class_census(list(extended_pair(base)), tol, seed, stems=["v0+v1", "v0-v1"])
    if report.class_count_lower_bound != 2:
        raise StructuralError("Extended generator sets were found similar", "extended_sets_not_similar",
                              kernel_distance=report.distance_matrix[0][1])
    return report
