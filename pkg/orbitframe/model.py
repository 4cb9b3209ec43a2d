"""
Basic-tuple model of a frame-tuple and the similarity decision.

The model subspace is N = ker(C)^perp of the synthesis operator. On N the shifts
compress to U|N and A = P_N S|N (U1|N and U2|N for bilateral tuples), and C|N is an
isomorphism onto H. Two frame-tuples are similar exactly when their model subspaces
coincide.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import structlog

from .errors import (
    ConfigurationError,
    NotAFrameError,
    PreconditionError,
    ProvenanceError,
    RankDecisionError,
    UniverseMismatchError,
)
from .fibers import (
    invariance_defects,
    projector_distance,
    range_function_from_mask,
    reducing_defect,
    subspace_basis,
)
from .lattice import Mode, Universe, operator_matrix
from .monitoring import operation_timer
from .reports import (
    BasicTupleInvariants,
    CompressionReport,
    FrameReport,
    IntertwiningReport,
    KernelStructureReport,
    SimilarityStatus,
    SimilarityVerdict,
)
from .serialization import array_digest, decode_complex, encode_complex
from .settings import Tolerances, default_tolerances
from .tuples import (
    Iteration,
    OrbitTuple,
    SynthesisOp,
    Variant,
    frame_bounds,
    frame_report_from_matrix,
    synthesis,
    tuple_digest,
)

logger = structlog.get_logger(__name__)


class RieszClass(str, Enum):
    RIESZ = "riesz"
    FRAME_PROPER = "frame_proper"
    NOT_FRAME = "not_frame"


@dataclass(frozen=True, eq=False)
class BasicTuple:
    """
    The model of a frame-tuple in N_basis coordinates.

    For unilateral tuples `U_N` is U|N and `A` is P_N S|N; for bilateral tuples
    `U_N` is U1|N and `A` is U2|N.
    """

    universe: Universe
    variant: Variant
    N_basis: np.ndarray = field(repr=False)
    U_N: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    phis: np.ndarray = field(repr=False)
    C_restricted: np.ndarray = field(repr=False)
    singular_values: np.ndarray = field(repr=False)
    frame_report: FrameReport = field(repr=False)
    invariants: BasicTupleInvariants = field(repr=False)
    source_digest: str = ""
    operator_digest: str = ""

    def __post_init__(self):
        for name in ("N_basis", "U_N", "A", "phis", "C_restricted", "singular_values"):
            arr = np.array(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def rank(self) -> int:
        return self.N_basis.shape[1]

    @property
    def kernel_dim(self) -> int:
        return self.universe.dim - self.rank

    def projector(self) -> np.ndarray:
        return self.N_basis @ self.N_basis.conj().T

    def to_dict(self) -> Dict[str, Any]:
        return {
            "universe": self.universe.to_dict(),
            "variant": self.variant.value,
            "N_basis": encode_complex(self.N_basis),
            "U_N": encode_complex(self.U_N),
            "A": encode_complex(self.A),
            "phis": encode_complex(self.phis),
            "C_restricted": encode_complex(self.C_restricted),
            "singular_values": [float(s) for s in self.singular_values],
            "frame_report": self.frame_report.model_dump(mode="json"),
            "invariants": self.invariants.model_dump(mode="json"),
            "source_digest": self.source_digest,
            "operator_digest": self.operator_digest,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "BasicTuple":
        try:
            return cls(
                universe=Universe.from_dict(payload["universe"]),
                variant=Variant(payload["variant"]),
                N_basis=decode_complex(payload["N_basis"], ndim=2),
                U_N=decode_complex(payload["U_N"], ndim=2),
                A=decode_complex(payload["A"], ndim=2),
                phis=decode_complex(payload["phis"], ndim=2),
                C_restricted=decode_complex(payload["C_restricted"], ndim=2),
                singular_values=np.array(payload["singular_values"], dtype=float),
                frame_report=FrameReport.model_validate(payload["frame_report"]),
                invariants=BasicTupleInvariants.model_validate(payload["invariants"]),
                source_digest=payload["source_digest"],
                operator_digest=payload["operator_digest"],
            )
        except KeyError as e:
            raise ConfigurationError(f"Basic tuple file is missing {e.args[0]!r}", str(e.args[0]), None)


def _shift_names(u: Universe) -> Tuple[str, str]:
    return ("U", "S") if u.mode is Mode.UNILATERAL else ("U1", "U2")


def kernel_complement(C: np.ndarray, tol: Tolerances, strict: bool = True
                      ) -> Tuple[np.ndarray, np.ndarray, Optional[float]]:
    """
    Orthonormal basis of ker(C)^perp from the SVD of C.

    Returns:
        (basis, singular values, smallest kept / largest dropped singular value)

    Raises:
        RankDecisionError: When strict and a singular value sits within gap_ratio of the cutoff
    """
    _, s, Vh = la.svd(C, full_matrices=False)
    s_max = float(s[0]) if s.size else 0.0
    cutoff = tol.rank_rel_tol * s_max
    if strict and s_max > 0:
        ambiguous = s[(s > cutoff / tol.gap_ratio) & (s <= cutoff * tol.gap_ratio)]
        if ambiguous.size:
            raise RankDecisionError("Singular values too close to the rank cutoff", cutoff,
                                    [float(v) for v in ambiguous])
    r = int(np.sum(s > cutoff)) if s_max > 0 else 0
    gap = float(s[r - 1] / s[r]) if 0 < r < s.size and s[r] > 0 else None
    return Vh[:r].conj().T, s, gap


def build_basic_tuple(t: OrbitTuple, u: Optional[Universe] = None,
                      tol: Optional[Tolerances] = None) -> BasicTuple:
    """
    Construct the basic tuple of a frame-tuple.

    Raises:
        NotAFrameError: If the orbit system is not a frame
        RankDecisionError: If the kernel dimension cannot be decided
    """
    tol = tol or default_tolerances()
    syn = synthesis(t, u)
    u = syn.universe
    with operation_timer.time("build_basic_tuple", dim=u.dim, dim_H=t.dim_H):
        report = frame_report_from_matrix(syn.matrix, t.dim_H, tol)
        if not report.is_frame:
            raise NotAFrameError("Orbit system is not a frame; the basic tuple is undefined",
                                 report.lower_bound, report.upper_bound)
        C = syn.coordinate_matrix
        N, s, gap = kernel_complement(C, tol)
        r = N.shape[1]

        first, second = _shift_names(u)
        U_N = N.conj().T @ (operator_matrix(u, first) @ N)
        A = N.conj().T @ (operator_matrix(u, second) @ N)
        slots = [u.flat_index(0, 0, i) for i in range(u.n_gen)]
        phis = N[slots, :].conj().T
        C_restricted = C @ N

        defects = reducing_defect(N, u, tol).defects
        commutation = float(la.norm(U_N @ A - A @ U_N, 2))
        sigma_min = float(la.svdvals(C_restricted)[-1])
        orth = float(la.norm(N.conj().T @ N - np.eye(r), 2))
        passed = (orth <= tol.gram_tol and commutation <= tol.red_tol and sigma_min > 0
                  and all(v <= tol.red_tol for v in defects.values()))
        invariants = BasicTupleInvariants(
            rank=r,
            kernel_dim=u.dim - r,
            orthonormality_defect=orth,
            reducing_defects=defects,
            commutation_defect=commutation,
            sigma_min_restricted=sigma_min,
            spectral_gap=gap,
            passed=passed,
        )
    if not passed:
        logger.warning("basic_tuple_invariants_violated", **invariants.model_dump())
    logger.info("basic_tuple_built", rank=r, kernel_dim=u.dim - r, spectral_gap=gap)
    return BasicTuple(
        universe=u,
        variant=t.variant,
        N_basis=N,
        U_N=U_N,
        A=A,
        phis=phis,
        C_restricted=C_restricted,
        singular_values=s,
        frame_report=report,
        invariants=invariants,
        source_digest=tuple_digest(t),
        operator_digest=array_digest(t.T, t.L),
    )


def verify_intertwining(t: OrbitTuple, b: BasicTuple, syn: Optional[SynthesisOp] = None,
                        tol: Optional[Tolerances] = None) -> IntertwiningReport:
    """
    Residuals of TC = CU, T^-1 C = C U*, LC = C S on N (bilateral: U1, U1*, U2, U2*).

    `syn` replaces the synthesis operator of `t`, e.g. to test a corrupted one.

    Raises:
        ProvenanceError: If `b` was not built from `t`
    """
    tol = tol or default_tolerances()
    if tuple_digest(t) != b.source_digest:
        raise ProvenanceError("Basic tuple was built from a different tuple", b.source_digest, tuple_digest(t))
    u = b.universe
    syn = syn or synthesis(t, u)
    C = syn.coordinate_matrix
    N = b.N_basis
    norm_C = float(la.norm(C, 2))
    T_inv = la.inv(t.T)
    if u.mode is Mode.UNILATERAL:
        checks = [("TC-CU", t.T, "U"), ("TinvC-CUstar", T_inv, "U*"), ("LC-CS", t.L, "S")]
    else:
        L_inv = la.inv(t.L)
        checks = [("TC-CU1", t.T, "U1"), ("TinvC-CU1star", T_inv, "U1*"),
                  ("LC-CU2", t.L, "U2"), ("LinvC-CU2star", L_inv, "U2*")]
    CN = C @ N
    residuals = {
        name: float(la.norm(X @ CN - C @ (operator_matrix(u, op) @ N), 2))
        for name, X, op in checks
    }
    threshold = tol.intertwining_rel_tol * norm_C
    flagged = [name for name, value in residuals.items() if value > threshold]
    if flagged:
        logger.warning("intertwining_violated", flagged=flagged, threshold=threshold)
    return IntertwiningReport(residuals=residuals, synthesis_norm=norm_C, threshold=threshold, flagged=flagged)


def _powers(X: np.ndarray, count: int) -> np.ndarray:
    out = np.empty((count,) + X.shape, dtype=np.complex128)
    cur = np.eye(X.shape[0], dtype=np.complex128)
    for e in range(count):
        out[e] = cur
        cur = X @ cur
    return out


def verify_parseval_basic(b: BasicTuple, tol: Optional[Tolerances] = None) -> FrameReport:
    """
    Frame bounds of {U_N^k A^j phi_i} over the cyclic index set, together with the
    largest column deviation from P_N U^k S^j e_i.
    """
    tol = tol or default_tolerances()
    u = b.universe
    cols = np.einsum("kab,jbc,cn->kjan", _powers(b.U_N, u.N_lambda), _powers(b.A, u.second), b.phis)
    G = np.transpose(cols, (2, 0, 1, 3)).reshape(b.rank, u.dim)
    expected = b.N_basis.conj().T
    residual = float(np.max(la.norm(G - expected, axis=0))) if G.size else 0.0
    report = frame_report_from_matrix(G, b.rank, tol)
    return report.model_copy(update={"projection_identity_residual": residual})


def _check_comparable(t1: OrbitTuple, t2: OrbitTuple):
    if (t1.variant, t1.dim_H, t1.n_gen, t1.iteration) != (t2.variant, t2.dim_H, t2.n_gen, t2.iteration):
        raise UniverseMismatchError(
            "Tuples must share variant, dimension, generator count and iteration",
            {"variant": t1.variant.value, "dim_H": t1.dim_H, "n_gen": t1.n_gen},
            {"variant": t2.variant.value, "dim_H": t2.dim_H, "n_gen": t2.n_gen})


def symmetric_distance(Q1: np.ndarray, Q2: np.ndarray) -> float:
    return max(projector_distance(Q1, Q2), projector_distance(Q2, Q1))


def compare_basic_tuples(t1: OrbitTuple, b1: BasicTuple, t2: OrbitTuple, b2: BasicTuple,
                         tol: Optional[Tolerances] = None) -> SimilarityVerdict:
    """Similarity verdict from two already-built basic tuples."""
    tol = tol or default_tolerances()
    distance = symmetric_distance(b1.N_basis, b2.N_basis)
    if distance > tol.sim_tol:
        logger.info("similarity_decided", status=SimilarityStatus.NOT_SIMILAR.value, kernel_distance=distance)
        return SimilarityVerdict(status=SimilarityStatus.NOT_SIMILAR, kernel_distance=distance,
                                 sim_tol=tol.sim_tol)

    # B (C1 N1) = C2 N1
    X = synthesis(t2, b2.universe).coordinate_matrix @ b1.N_basis
    B = la.solve(b1.C_restricted.T, X.T).T
    norm_B = la.norm(B, 2)
    tiny = np.finfo(float).tiny
    residuals = {
        "BT1-T2B": float(la.norm(B @ t1.T - t2.T @ B, 2) / max(norm_B * la.norm(t1.T, 2), tiny)),
        "BL1-L2B": float(la.norm(B @ t1.L - t2.L @ B, 2) / max(norm_B * la.norm(t1.L, 2), tiny)),
        "BW1-W2": float(la.norm(B @ t1.generators - t2.generators, 2)
                        / max(la.norm(t2.generators, 2), tiny)),
    }
    certified = all(v <= tol.certify_tol for v in residuals.values())
    status = SimilarityStatus.SIMILAR if certified else SimilarityStatus.SIMILAR_KERNEL_ONLY
    unitarity = None
    if certified and b1.frame_report.is_parseval and b2.frame_report.is_parseval:
        unitarity = float(la.norm(B.conj().T @ B - np.eye(B.shape[0]), 2))
    logger.info("similarity_decided", status=status.value, kernel_distance=distance, **residuals)
    return SimilarityVerdict(status=status, kernel_distance=distance, sim_tol=tol.sim_tol,
                             connecting_map=encode_complex(B), certification_residuals=residuals,
                             unitarity_defect=unitarity)


def similarity(t1: OrbitTuple, t2: OrbitTuple, u: Optional[Universe] = None,
               tol: Optional[Tolerances] = None) -> SimilarityVerdict:
    """
    Decide similarity of two frame-tuples by comparing their model subspaces and,
    when they agree, certifying the connecting map B = C2|N (C1|N)^-1.
    """
    tol = tol or default_tolerances()
    _check_comparable(t1, t2)
    b1 = build_basic_tuple(t1, u, tol)
    b2 = build_basic_tuple(t2, u, tol)
    return compare_basic_tuples(t1, b1, t2, b2, tol)


def riesz_classify(t: OrbitTuple, u: Optional[Universe] = None,
                   tol: Optional[Tolerances] = None) -> RieszClass:
    report = frame_bounds(t, u, tol)
    if not report.is_frame:
        return RieszClass.NOT_FRAME
    return RieszClass.RIESZ if report.is_riesz else RieszClass.FRAME_PROPER


def parseval_unitary_check(verdict: SimilarityVerdict) -> float:
    """||B*B - I|| of the certified connecting map."""
    B = verdict.connecting_matrix()
    if B is None:
        raise PreconditionError("Verdict carries no connecting map", "connecting_map",
                                status=verdict.status.value)
    return float(la.norm(B.conj().T @ B - np.eye(B.shape[0]), 2))


def kernel_structure(t: OrbitTuple, u: Optional[Universe] = None,
                     tol: Optional[Tolerances] = None) -> KernelStructureReport:
    """Invariance of ker(C) under U, U*, S (U1, U1*, U2, U2* for bilateral tuples)."""
    tol = tol or default_tolerances()
    syn = synthesis(t, u)
    u = syn.universe
    K = la.null_space(syn.coordinate_matrix, rcond=tol.rank_rel_tol)
    names = ("U", "U*", "S") if u.mode is Mode.UNILATERAL else ("U1", "U1*", "U2", "U2*")
    defects = invariance_defects(K, u, names)
    return KernelStructureReport(kernel_dim=K.shape[1], invariance_defects=defects, tolerance=tol.red_tol)


def compression_intertwining(b1: BasicTuple, b2: BasicTuple) -> CompressionReport:
    """
    Psi = (C2|N2)^-1 C1|N1 for single-generator models over the same (T, L), with
    the residuals of Psi A1 = A2 Psi, Psi U|N1 = U|N2 Psi and Psi phi1 = phi2.
    """
    if b1.operator_digest != b2.operator_digest:
        raise PreconditionError("Models come from different operator pairs", "shared_operators")
    if b1.phis.shape[1] != 1 or b2.phis.shape[1] != 1:
        raise PreconditionError("Compression comparison needs single-generator models", "single_generator",
                                n_gen=[b1.phis.shape[1], b2.phis.shape[1]])
    psi = la.solve(b2.C_restricted, b1.C_restricted)
    return CompressionReport(
        compression_residual=float(la.norm(psi @ b1.A - b2.A @ psi, 2)),
        unitary_part_residual=float(la.norm(psi @ b1.U_N - b2.U_N @ psi, 2)),
        generator_residual=float(la.norm(psi @ b1.phis - b2.phis)),
        subspace_distance=symmetric_distance(b1.N_basis, b2.N_basis),
        sigma_min=float(la.svdvals(psi)[-1]),
    )


def monomial_mask(u: Universe, profile: Sequence[int], slots: Optional[Sequence[int]] = None) -> np.ndarray:
    """Fiber mask selecting z-degrees 0..m(t)-1 in the chosen generator slots."""
    if len(profile) != u.N_lambda:
        raise ConfigurationError(f"Profile needs {u.N_lambda} entries", "profile", list(profile))
    if any(m < 0 or m > u.M_z for m in profile):
        raise ConfigurationError(f"Profile entries must lie in [0, {u.M_z}]", "profile", list(profile))
    slots = list(range(u.n_gen)) if slots is None else list(slots)
    if any(i < 0 or i >= u.n_gen for i in slots):
        raise ConfigurationError(f"Generator slots must lie in [0, {u.n_gen})", "slots", slots)
    mask = np.zeros(u.shape, dtype=bool)
    for t, m in enumerate(profile):
        mask[t, :m, slots] = True
    return mask.reshape(u.n_fibers, u.fiber_dim)


def grid_mask(u: Universe, mask: np.ndarray) -> np.ndarray:
    """Bilateral fiber mask from an (N1, N2) or (N1, N2, n) boolean array."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape == (u.N_lambda, u.N2):
        mask = np.repeat(mask[:, :, None], u.n_gen, axis=2)
    if mask.shape != u.shape:
        raise ConfigurationError(f"Mask must have shape {(u.N_lambda, u.N2)} or {u.shape}",
                                 "mask", list(mask.shape))
    return mask.reshape(u.n_fibers, u.fiber_dim)


def synthetic_basic_tuple(u: Universe, profile: Any, slots: Optional[Sequence[int]] = None
                          ) -> Tuple[OrbitTuple, np.ndarray]:
    """
    A basic tuple with known model subspace N0, as a tuple on H = C^r.

    Unilateral: `profile` gives m(t) and N0 has fibers span{z^j e_i : j < m(t), i in slots}.
    Bilateral: `profile` is a grid mask E and N0 has fibers span{e_i} on E.
    The tuple is (C^r, U|N0, A, {phi_i}) (bilateral: (C^r, U1|N0, U2|N0, {phi_i})).

    Returns:
        (tuple, orthonormal coordinate basis of N0)
    """
    mask = monomial_mask(u, profile, slots) if u.mode is Mode.UNILATERAL else grid_mask(u, profile)
    Q = subspace_basis(range_function_from_mask(u, mask))
    if Q.shape[1] == 0:
        raise ConfigurationError("Profile selects an empty subspace", "profile", None)
    first, second = _shift_names(u)
    T = Q.conj().T @ (operator_matrix(u, first) @ Q)
    L = Q.conj().T @ (operator_matrix(u, second) @ Q)
    W = Q[[u.flat_index(0, 0, i) for i in range(u.n_gen)], :].conj().T
    variant = Variant.UNILATERAL if u.mode is Mode.UNILATERAL else Variant.BILATERAL
    t = OrbitTuple(T=T, L=L, generators=W, variant=variant, iteration=Iteration.cyclic(u.N_lambda, u.second))
    logger.debug("synthetic_basic_tuple", rank=Q.shape[1], **u.to_dict())
    return t, Q
