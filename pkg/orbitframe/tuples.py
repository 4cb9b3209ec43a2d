"""
Operator tuples (H, T, L, {w_i}), their orbit systems and synthesis operators, and
frame / Parseval / Riesz analysis through singular values.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as la
import structlog
from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    ConfigurationError,
    PreconditionError,
    TupleInvariantError,
    UniverseMismatchError,
)
from .lattice import DEFAULT_MAX_DIM, BasisIndex, CoefField, Universe, field_to_coords, make_universe
from .monitoring import operation_timer
from .reports import BoundLevel, FrameReport, TupleDiagnostics
from .serialization import decode_complex, digest, encode_complex, read_json, write_json
from .settings import Tolerances, default_tolerances

logger = structlog.get_logger(__name__)


class Variant(str, Enum):
    UNILATERAL = "unilateral"
    BILATERAL = "bilateral"


class IterationMode(str, Enum):
    CYCLIC = "cyclic"
    TRUNCATED = "truncated"


class Iteration(BaseModel):
    """
    Index-range policy for the orbit system.

    cyclic(N, M): k in Z_N, j in [0, M) (j in Z_M for bilateral tuples).
    truncated(K, J): k in [-K, K], j in [0, J) (j in [-J, J] for bilateral tuples).
    """

    model_config = ConfigDict(frozen=True)

    mode: IterationMode
    N_or_K: int = Field(..., ge=0)
    M_or_J: int = Field(..., ge=0)

    @classmethod
    def cyclic(cls, N: int, M: int) -> "Iteration":
        if N < 1 or M < 1:
            raise ConfigurationError("Cyclic iteration needs N >= 1 and M >= 1", "iteration", [N, M])
        return cls(mode=IterationMode.CYCLIC, N_or_K=N, M_or_J=M)

    @classmethod
    def truncated(cls, K: int, J: int) -> "Iteration":
        if K < 0 or J < 0:
            raise ConfigurationError("Truncated iteration needs K, J >= 0", "iteration", [K, J])
        return cls(mode=IterationMode.TRUNCATED, N_or_K=K, M_or_J=J)


@dataclass(frozen=True, eq=False)
class OrbitTuple:
    """A candidate (H, T, L, {w_i}); generators are the columns of a dim_H x n_gen array."""

    T: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    generators: np.ndarray = field(repr=False)
    variant: Variant = Variant.UNILATERAL
    iteration: Iteration = field(default_factory=lambda: Iteration.cyclic(1, 1))

    def __post_init__(self):
        T = np.array(self.T, dtype=np.complex128)
        L = np.array(self.L, dtype=np.complex128)
        W = np.array(self.generators, dtype=np.complex128)
        if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] < 1:
            raise ConfigurationError("T must be a non-empty square matrix", "T", list(T.shape))
        if L.shape != T.shape:
            raise ConfigurationError("L must have the same shape as T", "L", list(L.shape))
        if W.ndim == 1:
            W = W[:, None]
        if W.ndim != 2 or W.shape[0] != T.shape[0] or W.shape[1] < 1:
            raise ConfigurationError("Generators must be dim_H vectors, at least one",
                                     "generators", list(W.shape))
        variant = Variant(self.variant)
        if (variant is Variant.UNILATERAL and self.iteration.mode is IterationMode.TRUNCATED
                and self.iteration.M_or_J < 1):
            raise ConfigurationError("Unilateral truncated iteration needs J >= 1", "J", self.iteration.M_or_J)
        for a in (T, L, W):
            a.flags.writeable = False
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "generators", W)
        object.__setattr__(self, "variant", variant)

    @property
    def dim_H(self) -> int:
        return self.T.shape[0]

    @property
    def n_gen(self) -> int:
        return self.generators.shape[1]

    def with_generators(self, generators: np.ndarray) -> "OrbitTuple":
        return replace(self, generators=generators)

    def with_iteration(self, iteration: Iteration) -> "OrbitTuple":
        return replace(self, iteration=iteration)


def k_range(t: OrbitTuple) -> np.ndarray:
    it = t.iteration
    if it.mode is IterationMode.CYCLIC:
        return np.arange(it.N_or_K)
    return np.arange(-it.N_or_K, it.N_or_K + 1)


def j_range(t: OrbitTuple) -> np.ndarray:
    it = t.iteration
    if t.variant is Variant.BILATERAL and it.mode is IterationMode.TRUNCATED:
        return np.arange(-it.M_or_J, it.M_or_J + 1)
    return np.arange(it.M_or_J)


def universe_for(t: OrbitTuple, max_dim: int = DEFAULT_MAX_DIM) -> Universe:
    """The universe whose canonical basis indexes the orbit system of `t`."""
    n_k, n_j = len(k_range(t)), len(j_range(t))
    return make_universe(t.variant.value, n_k, n_j, t.n_gen, max_dim=max_dim)


def _resolve_universe(t: OrbitTuple, u: Optional[Universe]) -> Universe:
    if u is None:
        return universe_for(t)
    expected = (len(k_range(t)), len(j_range(t)), t.n_gen)
    if u.mode.value != t.variant.value or u.shape != expected:
        raise UniverseMismatchError("Universe does not match the tuple's iteration policy",
                                    u.to_dict(), {"mode": t.variant.value, "shape": list(expected)})
    return u


def _power_stack(A: np.ndarray, exponents: np.ndarray, name: str) -> np.ndarray:
    """A^e for every e in `exponents`; negative powers reuse one inverse."""
    d = A.shape[0]
    out = np.empty((len(exponents), d, d), dtype=np.complex128)
    position = {int(e): p for p, e in enumerate(exponents)}
    cur = np.eye(d, dtype=np.complex128)
    top = int(max(exponents))
    for e in range(0, top + 1):
        if e in position:
            out[position[e]] = cur
        if e < top:
            cur = A @ cur
    bottom = int(min(exponents))
    if bottom < 0:
        try:
            inv = la.inv(A)
        except la.LinAlgError as e:
            raise TupleInvariantError(f"{name} is singular; negative powers are undefined",
                                      f"invertible_{name}") from e
        cur = inv
        for e in range(-1, bottom - 1, -1):
            out[position[e]] = cur
            cur = inv @ cur
    return out


def _orbit_matrix(t: OrbitTuple, ks: np.ndarray, js: np.ndarray) -> np.ndarray:
    """Columns T^k L^j w_i in lexicographic (k, j, i) order."""
    T_pow = _power_stack(t.T, ks, "T")
    L_pow = _power_stack(t.L, js, "L")
    LW = np.einsum("jab,bn->jan", L_pow, t.generators)
    cols = np.einsum("kab,jbn->kjan", T_pow, LW)
    return np.transpose(cols, (2, 0, 1, 3)).reshape(t.dim_H, -1)


@dataclass(frozen=True, eq=False)
class SynthesisOp:
    """
    Synthesis operator C f = sum f_kj^i T^k L^j w_i.

    `matrix` holds the columns in orbit order; `column_order[c]` is the flat
    coordinate index of column c, so `coordinate_matrix` acts on field coordinates.
    """

    matrix: np.ndarray = field(repr=False)
    indices: Tuple[BasisIndex, ...] = field(repr=False)
    column_order: np.ndarray = field(repr=False)
    universe: Universe
    coordinate_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.complex128)
        if matrix.shape[1] != self.universe.dim:
            raise ConfigurationError("Synthesis matrix width must equal the universe dimension",
                                     "matrix", list(matrix.shape))
        coordinate = np.zeros_like(matrix)
        coordinate[:, self.column_order] = matrix
        matrix.flags.writeable = False
        coordinate.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "coordinate_matrix", coordinate)

    @property
    def dim_H(self) -> int:
        return self.matrix.shape[0]

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return self.coordinate_matrix @ coords

    def apply_field(self, f: CoefField) -> np.ndarray:
        if f.universe != self.universe:
            raise UniverseMismatchError("Field and synthesis operator use different universes",
                                        f.universe.to_dict(), self.universe.to_dict())
        return self.apply(field_to_coords(f))

    def column(self, idx: BasisIndex) -> np.ndarray:
        return self.matrix[:, self.indices.index(idx)]

    def with_matrix(self, matrix: np.ndarray) -> "SynthesisOp":
        return replace(self, matrix=matrix)


def orbit_system(t: OrbitTuple, u: Optional[Universe] = None) -> List[Tuple[BasisIndex, np.ndarray]]:
    """The orbit vectors T^k L^j w_i paired with their indices, in column order."""
    syn = synthesis(t, u)
    return [(idx, syn.matrix[:, c]) for c, idx in enumerate(syn.indices)]


def synthesis(t: OrbitTuple, u: Optional[Universe] = None) -> SynthesisOp:
    u = _resolve_universe(t, u)
    ks, js = k_range(t), j_range(t)
    matrix = _orbit_matrix(t, ks, js)
    indices = tuple(BasisIndex(int(k), int(j), i) for k in ks for j in js for i in range(t.n_gen))
    kk, jj, ii = np.meshgrid(ks % u.N_lambda, js % u.second, np.arange(t.n_gen), indexing="ij")
    column_order = np.ravel_multi_index((kk.ravel(), jj.ravel(), ii.ravel()), u.shape)
    logger.debug("synthesis_assembled", dim_H=t.dim_H, columns=matrix.shape[1])
    return SynthesisOp(matrix=matrix, indices=indices, column_order=column_order, universe=u)


def frame_report_from_matrix(matrix: np.ndarray, dim_H: int,
                             tol: Optional[Tolerances] = None) -> FrameReport:
    """Frame, Parseval and Riesz verdicts for the columns of `matrix`."""
    tol = tol or default_tolerances()
    n_columns = matrix.shape[1]
    s = la.svdvals(matrix) if matrix.size else np.zeros(0)
    s_max = float(s[0]) if s.size else 0.0
    lower = float(s[-1]) ** 2 if n_columns >= dim_H and s.size == dim_H else 0.0
    upper = s_max ** 2
    rank = int(np.sum(s > tol.rank_rel_tol * s_max)) if s_max > 0 else 0
    is_frame = upper > 0 and lower > tol.frame_rel_threshold * upper
    is_parseval = is_frame and abs(lower - 1) <= tol.parseval_tol and abs(upper - 1) <= tol.parseval_tol
    return FrameReport(
        lower_bound=lower,
        upper_bound=upper,
        is_frame=is_frame,
        is_parseval=is_parseval,
        is_riesz=is_frame and rank == n_columns,
        rank=rank,
        n_columns=n_columns,
        dim_H=dim_H,
        singular_spectrum=[float(v) for v in s],
        tolerances=tol.model_dump(),
    )


def _truncation_levels(t: OrbitTuple) -> List[Tuple[int, int]]:
    K, J = t.iteration.N_or_K, t.iteration.M_or_J
    j_min = 1 if t.variant is Variant.UNILATERAL else 0
    steps = min(5, max(K, J, 1))
    levels = {(K * s // steps, max(J * s // steps, j_min)) for s in range(1, steps + 1)}
    return sorted(levels)


def _bound_history(t: OrbitTuple, tol: Tolerances) -> List[BoundLevel]:
    history = []
    for K, J in _truncation_levels(t):
        level = t.with_iteration(Iteration.truncated(K, J))
        rep = frame_report_from_matrix(_orbit_matrix(level, k_range(level), j_range(level)), t.dim_H, tol)
        history.append(BoundLevel(K=K, J=J, lower_bound=rep.lower_bound, upper_bound=rep.upper_bound))
    return history


def frame_bounds(t: OrbitTuple, u: Optional[Universe] = None,
                 tol: Optional[Tolerances] = None) -> FrameReport:
    """
    Frame bounds A = sigma_min(C)^2, B = sigma_max(C)^2 of the orbit system.

    In truncated mode the report also carries the bound history over growing
    windows, whether B grew monotonically, and a divergence flag raised when the
    last increment of B is not smaller than the one before.
    """
    tol = tol or default_tolerances()
    syn = synthesis(t, u)
    report = frame_report_from_matrix(syn.matrix, t.dim_H, tol)
    if t.iteration.mode is IterationMode.TRUNCATED:
        history = _bound_history(t, tol)
        uppers = np.array([h.upper_bound for h in history])
        increments = np.diff(uppers)
        monotone = bool(np.all(increments >= -1e-12 * max(uppers.max(), 1.0)))
        divergent = bool(len(increments) >= 2 and increments[-1] > 1e-8 * uppers[-1]
                         and increments[-1] >= increments[-2])
        if divergent:
            logger.warning("frame_bound_divergence_suspected", upper_history=uppers.tolist())
        report = report.model_copy(update={"convergence": history, "upper_monotone": monotone,
                                           "divergence_suspected": divergent})
    logger.info("frame_bounds_computed", lower_bound=report.lower_bound, upper_bound=report.upper_bound,
                rank=report.rank, n_columns=report.n_columns, dim_H=report.dim_H,
                is_frame=report.is_frame)
    return report


def frame_operator(t: OrbitTuple, u: Optional[Universe] = None) -> np.ndarray:
    C = synthesis(t, u).matrix
    return C @ C.conj().T


def pushforward(t: OrbitTuple, B_map: np.ndarray, tol: Optional[Tolerances] = None) -> OrbitTuple:
    """The similar tuple (H, B T B^-1, B L B^-1, {B w_i})."""
    tol = tol or default_tolerances()
    B = np.asarray(B_map, dtype=np.complex128)
    if B.shape != (t.dim_H, t.dim_H):
        raise ConfigurationError("Connecting map must be dim_H x dim_H", "B_map", list(B.shape))
    s = la.svdvals(B)
    if s[-1] <= tol.inv_rel_tol * s[0]:
        raise PreconditionError("Connecting map is not invertible", "invertible_map",
                                sigma_min=float(s[-1]), sigma_max=float(s[0]))
    B_inv = la.inv(B)
    return replace(t, T=B @ t.T @ B_inv, L=B @ t.L @ B_inv, generators=B @ t.generators)


def frame_bounds_of_similar(t: OrbitTuple, B_map: np.ndarray, u: Optional[Universe] = None,
                            tol: Optional[Tolerances] = None) -> FrameReport:
    """
    Frame report of the pushforward of `t` by `B_map`, with the bound sandwich
    A / ||B^-1||^2 <= A_new and B_new <= B ||B||^2 checked against the original.
    """
    tol = tol or default_tolerances()
    before = frame_bounds(t, u, tol)
    after = frame_bounds(pushforward(t, B_map, tol), u, tol)
    s = la.svdvals(np.asarray(B_map, dtype=np.complex128))
    inv_norm_sq = 1.0 / float(s[-1]) ** 2
    norm_sq = float(s[0]) ** 2
    slack = 1e-9
    sandwich = {
        "inverse_norm_sq": inv_norm_sq,
        "norm_sq": norm_sq,
        "lower_ok": after.lower_bound >= before.lower_bound / inv_norm_sq * (1 - slack) - slack,
        "upper_ok": after.upper_bound <= before.upper_bound * norm_sq * (1 + slack) + slack,
        "frame_preserved": after.is_frame == before.is_frame,
    }
    if not (sandwich["lower_ok"] and sandwich["upper_ok"]):
        logger.warning("similarity_sandwich_violated", **sandwich)
    return after.model_copy(update={"similarity_sandwich": sandwich})


def validate_tuple(t: OrbitTuple, tol: Optional[Tolerances] = None, strict: bool = False) -> TupleDiagnostics:
    """
    Check invertibility, commutation and (cyclic mode) periodicity of a tuple.

    Args:
        t: The tuple to check
        tol: Tolerances (defaults from the environment)
        strict: Raise on the first violated invariant instead of reporting it

    Raises:
        TupleInvariantError: When strict and an invariant fails
    """
    tol = tol or default_tolerances()
    norm_T, norm_L = la.norm(t.T, 2), la.norm(t.L, 2)
    comm = float(la.norm(t.T @ t.L - t.L @ t.T, "fro"))
    comm_thr = tol.comm_tol * norm_T * norm_L
    s_T = float(la.svdvals(t.T)[-1])
    s_L = float(la.svdvals(t.L)[-1])

    checks: List[Tuple[str, float, float, bool]] = [
        ("commutation", comm, comm_thr, comm <= comm_thr),
        ("invertible_T", s_T, tol.inv_rel_tol * norm_T, s_T > tol.inv_rel_tol * norm_T),
    ]
    if t.variant is Variant.BILATERAL:
        checks.append(("invertible_L", s_L, tol.inv_rel_tol * norm_L, s_L > tol.inv_rel_tol * norm_L))

    cyc_T = cyc_L = None
    if t.iteration.mode is IterationMode.CYCLIC:
        eye = np.eye(t.dim_H)
        cyc_T = float(la.norm(np.linalg.matrix_power(t.T, t.iteration.N_or_K) - eye, 2))
        checks.append(("cyclic_T", cyc_T, tol.cyclic_tol, cyc_T <= tol.cyclic_tol))
        if t.variant is Variant.BILATERAL:
            cyc_L = float(la.norm(np.linalg.matrix_power(t.L, t.iteration.M_or_J) - eye, 2))
            checks.append(("cyclic_L", cyc_L, tol.cyclic_tol, cyc_L <= tol.cyclic_tol))

    violations = [name for name, _, _, ok in checks if not ok]
    if violations:
        logger.warning("tuple_invariants_violated", violations=violations)
        if strict:
            name, value, threshold, _ = next(c for c in checks if not c[3])
            raise TupleInvariantError(f"Tuple violates invariant {name}", name, value, threshold)

    return TupleDiagnostics(
        commutator_norm=comm,
        commutator_threshold=comm_thr,
        sigma_min_T=s_T,
        sigma_min_L=s_L,
        cyclicity_defect_T=cyc_T,
        cyclicity_defect_L=cyc_L,
        violations=violations,
    )


def tuple_to_dict(t: OrbitTuple) -> Dict[str, Any]:
    return {
        "dim": t.dim_H,
        "variant": t.variant.value,
        "iteration": {"mode": t.iteration.mode.value, "N_or_K": t.iteration.N_or_K,
                      "M_or_J": t.iteration.M_or_J},
        "T": encode_complex(t.T),
        "L": encode_complex(t.L),
        "generators": encode_complex(t.generators.T),
    }


def tuple_from_dict(payload: Dict[str, Any]) -> OrbitTuple:
    try:
        it = Iteration.model_validate(payload["iteration"])
        iteration = (Iteration.cyclic(it.N_or_K, it.M_or_J) if it.mode is IterationMode.CYCLIC
                     else Iteration.truncated(it.N_or_K, it.M_or_J))
        t = OrbitTuple(
            T=decode_complex(payload["T"], ndim=2),
            L=decode_complex(payload["L"], ndim=2),
            generators=decode_complex(payload["generators"], ndim=2).T,
            variant=Variant(payload["variant"]),
            iteration=iteration,
        )
    except KeyError as e:
        raise ConfigurationError(f"Tuple file is missing {e.args[0]!r}", str(e.args[0]), None)
    except (ValueError, TypeError) as e:
        raise ConfigurationError(f"Malformed tuple file: {e}", "tuple", None)
    if t.dim_H != payload.get("dim", t.dim_H):
        raise ConfigurationError("Declared dim disagrees with the matrices", "dim", payload.get("dim"))
    return t


def tuple_digest(t: OrbitTuple) -> str:
    return digest(tuple_to_dict(t))


def save_tuple(path: Path, t: OrbitTuple) -> Path:
    return write_json(path, tuple_to_dict(t))


def load_tuple(path: Path) -> OrbitTuple:
    with operation_timer.time("load_tuple", path=str(path)):
        return tuple_from_dict(read_json(path))
