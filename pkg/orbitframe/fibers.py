"""
Range-function analysis of U-reducing subspaces.

A reducing subspace M of the truncated space is described fiber by fiber: J(t) is
the subspace of the fiber space spanned by the values f(lambda_t), f in M. On the
cyclic grid this description is exact, so global and pointwise projections agree.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import structlog

from .errors import (
    ConfigurationError,
    PreconditionError,
    StructuralError,
    UniverseMismatchError,
)
from .lattice import (
    CoefField,
    Mode,
    Universe,
    apply_U,
    apply_U1,
    apply_U2,
    as_columns,
    coords_to_data,
    data_to_coords,
    fiber_view,
    field_to_coords,
    from_fiber_view,
    operator_matrix,
)
from .reports import ReducingDefect, RestrictionReport
from .serialization import encode_complex
from .settings import Tolerances, default_tolerances

logger = structlog.get_logger(__name__)

FIBER_GRAM_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class RangeFunction:
    """Orthonormal fiber bases J(t), one (fiber_dim x dim J(t)) block per grid point."""

    universe: Universe
    bases: Tuple[np.ndarray, ...] = field(repr=False)
    cutoff: float = 0.0
    smallest_kept: Optional[float] = None
    largest_dropped: Optional[float] = None

    def __post_init__(self):
        u = self.universe
        if len(self.bases) != u.n_fibers:
            raise ConfigurationError(f"Range function needs {u.n_fibers} fibers", "bases", len(self.bases))
        bases = []
        for p, V in enumerate(self.bases):
            V = as_columns(V, u.fiber_dim)
            defect = float(la.norm(V.conj().T @ V - np.eye(V.shape[1]), 2)) if V.shape[1] else 0.0
            if defect > FIBER_GRAM_TOL:
                raise PreconditionError(f"Fiber {p} basis is not orthonormal", "orthonormal_fibers",
                                        fiber=p, gram_defect=defect)
            V.flags.writeable = False
            bases.append(V)
        object.__setattr__(self, "bases", tuple(bases))

    @property
    def dims(self) -> np.ndarray:
        return np.array([V.shape[1] for V in self.bases], dtype=int)

    @property
    def sigma_support(self) -> List[int]:
        return [int(p) for p in np.flatnonzero(self.dims > 0)]

    @property
    def total_dim(self) -> int:
        return int(self.dims.sum())

    def gap_report(self) -> Dict[str, Optional[float]]:
        ratio = None
        if self.smallest_kept is not None and self.largest_dropped:
            ratio = self.smallest_kept / self.largest_dropped
        return {"cutoff": self.cutoff, "smallest_kept": self.smallest_kept,
                "largest_dropped": self.largest_dropped, "gap_ratio": ratio}

    def dims_rows(self) -> List[List[Any]]:
        return [[p, int(d), int(d > 0)] for p, d in enumerate(self.dims)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "universe": self.universe.to_dict(),
            "dims": self.dims.tolist(),
            "sigma_support": self.sigma_support,
            "fibers": [encode_complex(V) for V in self.bases],
            "gap": self.gap_report(),
        }


def _range_from_stack(u: Universe, stack: np.ndarray, tol: Tolerances) -> RangeFunction:
    """Orthonormalize each fiber of a (n_fibers, fiber_dim, m) stack with one global cutoff."""
    if stack.shape[2] == 0:
        empty = tuple(np.zeros((u.fiber_dim, 0)) for _ in range(u.n_fibers))
        return RangeFunction(u, empty)
    singular = np.linalg.svd(stack, compute_uv=False)
    global_max = float(singular.max()) if singular.size else 0.0
    cutoff = tol.fiber_rel_tol * global_max
    kept_min, dropped_max = None, None
    bases = []
    for p in range(u.n_fibers):
        U_p, s_p, _ = la.svd(stack[p], full_matrices=False)
        keep = s_p > cutoff if global_max > 0 else np.zeros(s_p.shape, dtype=bool)
        bases.append(U_p[:, keep])
        if keep.any():
            kept_min = min(kept_min, float(s_p[keep].min())) if kept_min is not None else float(s_p[keep].min())
        if (~keep).any() and s_p[~keep].max() > 0:
            drop = float(s_p[~keep].max())
            dropped_max = max(dropped_max, drop) if dropped_max is not None else drop
    rf = RangeFunction(u, tuple(bases), cutoff=cutoff, smallest_kept=kept_min, largest_dropped=dropped_max)
    logger.debug("range_function_computed", total_dim=rf.total_dim, support=len(rf.sigma_support),
                 **rf.gap_report())
    return rf


def compute_range_function(generators: Sequence[CoefField], u: Optional[Universe] = None,
                           tol: Optional[Tolerances] = None) -> RangeFunction:
    """J(t) = span{f(lambda_t) : f in generators}."""
    tol = tol or default_tolerances()
    first = _check_generators(generators)
    u = u or first
    if any(g.universe != u for g in generators):
        raise UniverseMismatchError("Generator fields and universe differ", generators[0].universe.to_dict(),
                                    u.to_dict())
    stack = np.stack([g.fibers() for g in generators], axis=-1)
    return _range_from_stack(u, stack, tol)


def range_function_of_subspace(basis: np.ndarray, u: Universe,
                               tol: Optional[Tolerances] = None) -> RangeFunction:
    """Fibers of the U-reducing subspace spanned by coordinate columns `basis`."""
    tol = tol or default_tolerances()
    basis = as_columns(basis, u.dim)
    data = coords_to_data(u, basis)
    return _range_from_stack(u, fiber_view(u, data), tol)


def range_function_from_mask(u: Universe, mask: np.ndarray) -> RangeFunction:
    """Coordinate-aligned fibers: J(t) = span of the fiber-space unit vectors selected by mask[t]."""
    mask = np.asarray(mask, dtype=bool).reshape(u.n_fibers, u.fiber_dim)
    eye = np.eye(u.fiber_dim)
    return RangeFunction(u, tuple(eye[:, row] for row in mask))


def subspace_basis(rf: RangeFunction) -> np.ndarray:
    """Orthonormal coordinate basis of the direct sum of the fibers, ordered fiber by fiber."""
    u = rf.universe
    rows = np.zeros((u.n_fibers, u.fiber_dim, rf.total_dim), dtype=np.complex128)
    col = 0
    scale = np.sqrt(u.n_fibers)
    for p, V in enumerate(rf.bases):
        d = V.shape[1]
        rows[p, :, col:col + d] = scale * V
        col += d
    return data_to_coords(u, from_fiber_view(u, rows))


def complement(rf: RangeFunction) -> RangeFunction:
    """Fiberwise orthogonal complement."""
    eye = np.eye(rf.universe.fiber_dim)
    bases = tuple(la.null_space(V.conj().T) if V.shape[1] else eye for V in rf.bases)
    return RangeFunction(rf.universe, bases)


def projector_distance(Q1: np.ndarray, Q2: np.ndarray) -> float:
    """
    ||P1 - P2|| for orthonormal column bases: the sine of the largest principal
    angle when dimensions agree, 1 when they differ.
    """
    if Q1.shape[1] != Q2.shape[1]:
        return 1.0
    if Q1.shape[1] == 0:
        return 0.0
    return float(min(la.norm(Q2 - Q1 @ (Q1.conj().T @ Q2), 2), 1.0))


def project(rf: RangeFunction, f: CoefField) -> CoefField:
    """Pointwise projection f(lambda_t) -> P_J(t) f(lambda_t)."""
    if f.universe != rf.universe:
        raise UniverseMismatchError("Field and range function use different universes",
                                    f.universe.to_dict(), rf.universe.to_dict())
    rows = f.fibers()
    out = np.stack([V @ (V.conj().T @ rows[p]) for p, V in enumerate(rf.bases)])
    return CoefField(f.universe, from_fiber_view(f.universe, out))


def _check_generators(generators: Sequence[CoefField]) -> Universe:
    if not generators:
        raise ConfigurationError("At least one generator field is required", "generators", 0)
    u = generators[0].universe
    for g in generators:
        if g.universe != u:
            raise UniverseMismatchError("Generator fields use different universes",
                                        g.universe.to_dict(), u.to_dict())
    return u


def orbit_subspace(generators: Sequence[CoefField], tol: Optional[Tolerances] = None) -> np.ndarray:
    """
    Orthonormal coordinate basis of the span of the U-orbits (U1, U2-orbits when
    bilateral) of the generators, computed in coordinates without passing through fibers.
    """
    tol = tol or default_tolerances()
    u = _check_generators(generators)
    columns = []
    for g in generators:
        if u.mode is Mode.UNILATERAL:
            for _ in range(u.N_lambda):
                columns.append(field_to_coords(g))
                g = apply_U(g)
        else:
            for _ in range(u.N_lambda):
                h = g
                for _ in range(u.N2):
                    columns.append(field_to_coords(h))
                    h = apply_U2(h)
                g = apply_U1(g)
    A = np.column_stack(columns)
    if not np.any(A):
        return np.zeros((u.dim, 0), dtype=np.complex128)
    return la.orth(A, rcond=tol.rank_rel_tol)


def helson_projection_check(generators: Sequence[CoefField], f: CoefField,
                            rf: Optional[RangeFunction] = None, tol: Optional[Tolerances] = None) -> float:
    """
    ||P_M f - (P_J(t) f(lambda_t))_t|| for M the reducing subspace generated by `generators`.

    P_M comes from the orthonormalized orbit coordinates; J defaults to the range
    function of the generators, or is the supplied `rf`.
    """
    tol = tol or default_tolerances()
    u = _check_generators(generators)
    rf = rf if rf is not None else compute_range_function(generators, u, tol)
    Q = orbit_subspace(generators, tol)
    c = field_to_coords(f)
    global_proj = CoefField(u, coords_to_data(u, Q @ (Q.conj().T @ c)))
    residual = (global_proj - project(rf, f)).norm()
    logger.debug("helson_check", residual=residual, global_dim=int(Q.shape[1]), fiber_dim=rf.total_dim)
    return residual


def invariance_defects(Q: np.ndarray, u: Universe, names: Sequence[str]) -> Dict[str, float]:
    """||(I - P) X P|| for each named shift operator X, with P the projector onto span(Q)."""
    defects = {}
    for name in names:
        if Q.shape[1] == 0:
            defects[name] = 0.0
            continue
        XQ = operator_matrix(u, name) @ Q
        defects[name] = float(la.norm(XQ - Q @ (Q.conj().T @ XQ), 2))
    return defects


def reducing_defect(basis: np.ndarray, u: Universe, tol: Optional[Tolerances] = None) -> ReducingDefect:
    """
    Invariance defects ||(I - P) X P|| of span(basis) for the shift operators.

    Unilateral universes report U, U* and S*; bilateral ones U1, U1*, U2 and U2*.

    Raises:
        PreconditionError: If the basis is not orthonormal within gram_tol
    """
    tol = tol or default_tolerances()
    Q = as_columns(basis, u.dim)
    r = Q.shape[1]
    gram = float(la.norm(Q.conj().T @ Q - np.eye(r), 2)) if r else 0.0
    if gram > tol.gram_tol:
        raise PreconditionError("Subspace basis is not orthonormal", "orthonormal_basis", gram_defect=gram)

    names = ("U", "U*", "S*") if u.mode is Mode.UNILATERAL else ("U1", "U1*", "U2", "U2*")
    defects = invariance_defects(Q, u, names)
    reducing = all(v <= tol.red_tol for k, v in defects.items() if k != "S*")
    s_star = defects["S*"] <= tol.red_tol if "S*" in defects else None
    return ReducingDefect(defects=defects, gram_defect=gram, tolerance=tol.red_tol,
                          reducing=reducing, s_star_invariant=s_star)


class Coverage(str, Enum):
    EXACT = "exact"
    TRUNCATED = "truncated"


@dataclass(frozen=True, eq=False)
class InnerFactor:
    """Per-fiber generators phi(lambda_t) of an S-invariant range function (unilateral, one slot)."""

    universe: Universe
    phis: np.ndarray = field(repr=False)
    support: Tuple[int, ...]
    degrees: Tuple[int, ...]
    coverage: Tuple[Coverage, ...]

    def generator(self, p: int) -> Optional[np.ndarray]:
        return self.phis[p] if p in self.support else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "universe": self.universe.to_dict(),
            "sigma_support": list(self.support),
            "fibers": [
                {"t": p, "degree": d, "coverage": c.value, "phi": encode_complex(self.phis[p])}
                for p, d, c in zip(self.support, self.degrees, self.coverage)
            ],
        }


def _null_columns(A: np.ndarray, atol: float) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(A.shape[1], dtype=np.complex128)
    _, s, Vh = la.svd(A, full_matrices=True)
    rank = int(np.sum(s > atol))
    return Vh[rank:].conj().T


def _shift_copies(phi: np.ndarray, degree: int) -> np.ndarray:
    """Columns z^j phi for every j that keeps the copy inside the truncation."""
    M = phi.shape[0]
    W = np.zeros((M, M - degree), dtype=np.complex128)
    for j in range(M - degree):
        W[j:, j] = phi[:M - j]
    return W


def _phase_normalize(phi: np.ndarray, atol: float) -> np.ndarray:
    lead = int(np.flatnonzero(np.abs(phi) > atol)[0])
    return phi * (np.conj(phi[lead]) / abs(phi[lead]))


def extract_inner_factor(n_perp: RangeFunction, u: Optional[Universe] = None,
                         tol: Optional[Tolerances] = None) -> InnerFactor:
    """
    Beurling generator of each fiber of an S-invariant range function.

    The generator is the unit vector spanning the lowest-degree slice
    J(t) n span{z^0..z^D}. A fiber is exact when its copies reproduce J(t) and phi
    is an inner polynomial (autocorrelation is the unit impulse), truncated otherwise.

    Raises:
        PreconditionError: Outside unilateral single-generator universes
        StructuralError: When a fiber is not phi * H^2 at this truncation
    """
    tol = tol or default_tolerances()
    u = u or n_perp.universe
    if u.mode is not Mode.UNILATERAL or u.n_gen != 1:
        raise PreconditionError("Inner factors need a unilateral universe with one generator slot",
                                "single_generator_unilateral", mode=u.mode.value, n_gen=u.n_gen)
    M = u.M_z
    phis = np.zeros((u.n_fibers, M), dtype=np.complex128)
    support, degrees, coverage = [], [], []
    for p, V in enumerate(n_perp.bases):
        d = V.shape[1]
        if d == 0:
            continue
        for D in range(M):
            slice_basis = _null_columns(V[D + 1:, :], tol.fiber_rel_tol)
            if slice_basis.shape[1] > 0:
                break
        if slice_basis.shape[1] != 1:
            raise StructuralError(f"Fiber {p} has a {slice_basis.shape[1]}-dimensional lowest slice",
                                  "beurling_generator", fiber=p, slice_dim=int(slice_basis.shape[1]))
        phi = V @ slice_basis[:, 0]
        phi[D + 1:] = 0
        phi = _phase_normalize(phi / la.norm(phi), tol.fiber_rel_tol)

        copies = _shift_copies(phi, D)
        outside = float(la.norm(copies - V @ (V.conj().T @ copies), 2))
        if copies.shape[1] != d or outside > tol.red_tol:
            raise StructuralError(f"Shifted copies of the generator do not span fiber {p}",
                                  "shift_copies_span", fiber=p, copies=int(copies.shape[1]),
                                  fiber_dim=d, residual=outside)
        autocorr = [abs(np.vdot(phi[:-s], phi[s:])) for s in range(1, D + 1)]
        inner = max(autocorr, default=0.0) <= tol.red_tol
        phis[p] = phi
        support.append(p)
        degrees.append(D)
        coverage.append(Coverage.EXACT if inner else Coverage.TRUNCATED)

    logger.info("inner_factor_extracted", support=len(support),
                exact=sum(c is Coverage.EXACT for c in coverage))
    phis.flags.writeable = False
    return InnerFactor(u, phis, tuple(support), tuple(degrees), tuple(coverage))


def resynthesize(inner: InnerFactor) -> RangeFunction:
    """Fibers spanned by the non-overflowing shifted copies of phi(lambda_t)."""
    u = inner.universe
    bases = [np.zeros((u.fiber_dim, 0)) for _ in range(u.n_fibers)]
    for p, D in zip(inner.support, inner.degrees):
        bases[p], _ = la.qr(_shift_copies(inner.phis[p], D), mode="economic")
    return RangeFunction(u, tuple(bases))


@dataclass(frozen=True, eq=False)
class ChiEMask:
    universe: Universe
    mask: np.ndarray = field(repr=False)
    inclusion_residual: float
    reverse_inclusion_residual: float
    threshold: float

    @property
    def exact(self) -> bool:
        return max(self.inclusion_residual, self.reverse_inclusion_residual) <= self.threshold

    def to_dict(self) -> Dict[str, Any]:
        return {
            "universe": self.universe.to_dict(),
            "mask": self.mask.astype(int).tolist(),
            "inclusion_residual": self.inclusion_residual,
            "reverse_inclusion_residual": self.reverse_inclusion_residual,
            "exact": self.exact,
        }


def chi_E_detect(basis: np.ndarray, u: Universe, tol: Optional[Tolerances] = None) -> ChiEMask:
    """
    Recover the grid set E of a U1, U2-reducing subspace with one generator slot,
    and check M = chi_E L^2 by double inclusion.
    """
    tol = tol or default_tolerances()
    if u.mode is not Mode.BILATERAL or u.n_gen != 1:
        raise PreconditionError("chi_E detection needs a bilateral universe with one generator slot",
                                "single_generator_bilateral", mode=u.mode.value, n_gen=u.n_gen)
    Q = as_columns(basis, u.dim)
    defects = reducing_defect(Q, u, tol)
    if not defects.reducing:
        raise PreconditionError("Subspace is not reducing for U1 and U2", "u1_u2_reducing",
                                **defects.defects)
    rf = range_function_of_subspace(Q, u, tol)
    if np.any(rf.dims > 1):
        raise StructuralError("A fiber has dimension above one", "chi_e_fiber_dim",
                              max_dim=int(rf.dims.max()))
    mask = (rf.dims == 1).reshape(u.N_lambda, u.N2)

    off = coords_to_data(u, Q)[~mask]
    inclusion = float(la.norm(np.sqrt(u.measure) * off.reshape(-1, Q.shape[1]), 2)) if off.size else 0.0
    Q_E = subspace_basis(range_function_from_mask(u, mask))
    reverse = float(la.norm(Q_E - Q @ (Q.conj().T @ Q_E), 2)) if Q_E.shape[1] else 0.0

    result = ChiEMask(u, mask, inclusion, reverse, threshold=tol.gram_tol)
    if not result.exact:
        logger.warning("chi_e_reconstruction_inexact", inclusion=inclusion, reverse=reverse)
    return result


@dataclass(frozen=True, eq=False)
class OperatorField:
    """A matrix F(t) on the fiber space at every grid point."""

    universe: Universe
    ops: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = self.universe
        ops = np.array(self.ops, dtype=np.complex128)
        if ops.shape != (u.n_fibers, u.fiber_dim, u.fiber_dim):
            raise ConfigurationError("Operator field must hold one fiber_dim square matrix per grid point",
                                     "ops", list(ops.shape))
        ops.flags.writeable = False
        object.__setattr__(self, "ops", ops)

    @classmethod
    def identity(cls, u: Universe) -> "OperatorField":
        return cls(u, np.broadcast_to(np.eye(u.fiber_dim), (u.n_fibers, u.fiber_dim, u.fiber_dim)))

    @property
    def norm_inf(self) -> float:
        return float(np.max(np.linalg.norm(self.ops, 2, axis=(1, 2))))

    def adjoint(self) -> "OperatorField":
        return OperatorField(self.universe, np.conj(np.swapaxes(self.ops, 1, 2)))

    def compose(self, other: "OperatorField") -> "OperatorField":
        """Pointwise product F(t) G(t)."""
        if other.universe != self.universe:
            raise UniverseMismatchError("Operator fields use different universes",
                                        self.universe.to_dict(), other.universe.to_dict())
        return OperatorField(self.universe, np.einsum("pab,pbc->pac", self.ops, other.ops))

    def apply(self, f: CoefField) -> CoefField:
        if f.universe != self.universe:
            raise UniverseMismatchError("Field and operator field use different universes",
                                        f.universe.to_dict(), self.universe.to_dict())
        rows = np.einsum("pab,pb->pa", self.ops, f.fibers())
        return CoefField(f.universe, from_fiber_view(f.universe, rows))

    def as_coordinate_matrix(self) -> np.ndarray:
        """Matrix of the multiplication operator in field coordinates."""
        u = self.universe
        rows = fiber_view(u, coords_to_data(u, np.eye(u.dim, dtype=np.complex128)))
        mapped = np.einsum("pab,pbc->pac", self.ops, rows)
        return data_to_coords(u, from_fiber_view(u, mapped))


def apply_operator_field(F: OperatorField, f: CoefField) -> CoefField:
    return F.apply(f)


def fiber_shift(u: Universe) -> np.ndarray:
    """S acting on one unilateral fiber C^M (x) C^n."""
    return np.kron(np.eye(u.M_z, k=-1), np.eye(u.n_gen))


def fiberwise_compression(rf: RangeFunction) -> OperatorField:
    """G(t) = P_J(t) S P_J(t); its multiplication operator is P S P on the subspace."""
    u = rf.universe
    if u.mode is not Mode.UNILATERAL:
        raise UniverseMismatchError("Fiberwise compression of S needs a unilateral universe",
                                    u.mode.value, Mode.UNILATERAL.value)
    S = fiber_shift(u)
    ops = np.stack([(V @ V.conj().T) @ S @ (V @ V.conj().T) for V in rf.bases])
    return OperatorField(u, ops)


def restriction_isomorphism(F: OperatorField, rf_from: RangeFunction, rf_to: RangeFunction,
                            tol: Optional[Tolerances] = None) -> RestrictionReport:
    """Smallest singular value of P_J_to(t) F(t) restricted to J_from(t), per fiber."""
    tol = tol or default_tolerances()
    sigmas: List[Optional[float]] = []
    for p, (Vf, Vt) in enumerate(zip(rf_from.bases, rf_to.bases)):
        df, dt = Vf.shape[1], Vt.shape[1]
        if df == 0 and dt == 0:
            sigmas.append(None)
        elif df == 0 or dt < df:
            sigmas.append(0.0)
        else:
            sigmas.append(float(la.svdvals(Vt.conj().T @ F.ops[p] @ Vf)[-1]))
    floor = tol.fiber_rel_tol * max(F.norm_inf, 1.0)
    dims_from, dims_to = rf_from.dims.tolist(), rf_to.dims.tolist()
    iso = dims_from == dims_to and all(s is None or s > floor for s in sigmas)
    return RestrictionReport(sigma_min=sigmas, dims_from=dims_from, dims_to=dims_to, isomorphism=iso)
