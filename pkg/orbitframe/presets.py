"""
Preset tuples with known answers.

Each builder returns tuples that pass validate_tuple; `build_preset` validates the
parameters of a named preset and dispatches to its builder.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict

from .errors import ConfigurationError, TupleInvariantError
from .genlab import extended_pair
from .lattice import Mode, Universe, make_universe, operator_matrix
from .model import synthetic_basic_tuple
from .settings import Tolerances, default_tolerances
from .tuples import Iteration, OrbitTuple, Variant, validate_tuple

logger = structlog.get_logger(__name__)


class PresetName(str, Enum):
    FULL_RIESZ = "full_riesz"
    MONOMIAL_FIBERS = "monomial_fibers"
    BILATERAL_MASK = "bilateral_mask"
    GEOMETRIC_DIAG = "geometric_diag"
    SUM_DIFFERENCE_PAIR = "sum_difference_pair"


class Preset(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: PresetName
    params: Dict[str, Any] = {}


@dataclass(frozen=True, eq=False)
class PresetOutput:
    """Tuples of a preset keyed by file stem, plus the model subspace when known."""

    preset: Preset
    tuples: Dict[str, OrbitTuple]
    subspace: Optional[np.ndarray] = field(default=None, repr=False)
    universe: Optional[Universe] = None


def full_riesz(N: int = 4, M: int = 3, n: int = 1) -> OrbitTuple:
    """(C^dim, U, S, {e_00i}) on the whole universe: a Riesz basis with kernel 0."""
    u = make_universe(Mode.UNILATERAL, N, M, n)
    T = operator_matrix(u, "U").toarray()
    L = operator_matrix(u, "S").toarray()
    W = np.zeros((u.dim, n), dtype=np.complex128)
    for i in range(n):
        W[u.flat_index(0, 0, i), i] = 1.0
    return OrbitTuple(T=T, L=L, generators=W, variant=Variant.UNILATERAL, iteration=Iteration.cyclic(N, M))


def monomial_fibers(N: int, M: int, n: int, profile: Sequence[int],
                    slots: Optional[Sequence[int]] = None) -> Tuple[OrbitTuple, np.ndarray]:
    """Basic tuple whose fiber at lambda_t is span{z^j e_i : j < profile[t], i in slots}."""
    u = make_universe(Mode.UNILATERAL, N, M, n)
    return synthetic_basic_tuple(u, list(profile), slots)


def bilateral_mask(N1: int, N2: int, mask: Any, n: int = 1) -> Tuple[OrbitTuple, np.ndarray]:
    """
    Bilateral basic tuple on chi_E L^2(T^2).

    `mask` is either a boolean (N1, N2) array or a list of [t1, t2] grid points.
    """
    u = make_universe(Mode.BILATERAL, N1, N2, n)
    grid = np.asarray(mask)
    if grid.dtype != bool:
        points = np.asarray(mask, dtype=int).reshape(-1, 2)
        if points.size and (points.min() < 0 or (points >= [N1, N2]).any()):
            raise ConfigurationError("Mask point outside the grid", "mask", points.tolist())
        grid = np.zeros((N1, N2), dtype=bool)
        grid[points[:, 0], points[:, 1]] = True
    return synthetic_basic_tuple(u, grid)


def geometric_diag(J: int = 50) -> OrbitTuple:
    """T = I, L = diag(1/2, 1/3), w = (1, 1) with z-degrees 0..J-1."""
    return OrbitTuple(
        T=np.eye(2),
        L=np.diag([0.5, 1.0 / 3.0]),
        generators=np.ones((2, 1)),
        variant=Variant.UNILATERAL,
        iteration=Iteration.cyclic(1, J),
    )


def geometric_diag_oracle(J: int = 50) -> np.ndarray:
    """Frame operator of geometric_diag summed entrywise as geometric series."""
    a, b = 0.5, 1.0 / 3.0

    def series(x: float) -> float:
        return (1 - x ** J) / (1 - x)

    return np.array([[series(a * a), series(a * b)], [series(a * b), series(b * b)]])


def sum_difference_pair(N: int = 2, M: int = 2, n: int = 2,
                        profile: Sequence[int] = (1, 2)) -> Tuple[OrbitTuple, OrbitTuple]:
    """A two-generator monomial basic tuple extended by v0 + v1 and by v0 - v1."""
    if n < 2:
        raise ConfigurationError("sum_difference_pair needs n >= 2", "n", n)
    base, _ = monomial_fibers(N, M, n, profile)
    return extended_pair(base)


def _required(params: Dict[str, Any], name: str, default: Any = None) -> Any:
    value = params.get(name, default)
    if value is None:
        raise ConfigurationError(f"Missing preset parameter {name!r}", name, None)
    return value


def _full_riesz(params: Dict[str, Any]) -> PresetOutput:
    t = full_riesz(int(params.get("N", 4)), int(params.get("M", 3)), int(params.get("n", 1)))
    return PresetOutput(Preset(name=PresetName.FULL_RIESZ, params=params), {"full_riesz": t})


def _monomial_fibers(params: Dict[str, Any]) -> PresetOutput:
    profile = [int(m) for m in _required(params, "profile", [1, 2, 1, 3])]
    N = int(params.get("N", len(profile)))
    M = int(params.get("M", max(profile) if profile else 1))
    n = int(params.get("n", 1))
    t, Q = monomial_fibers(N, M, n, profile, params.get("slots"))
    u = make_universe(Mode.UNILATERAL, N, M, n)
    return PresetOutput(Preset(name=PresetName.MONOMIAL_FIBERS, params=params), {"monomial_fibers": t}, Q, u)


def _bilateral_mask(params: Dict[str, Any]) -> PresetOutput:
    N1, N2 = int(_required(params, "N1")), int(_required(params, "N2"))
    n = int(params.get("n", 1))
    mask = _required(params, "mask")
    t, Q = bilateral_mask(N1, N2, mask, n)
    u = make_universe(Mode.BILATERAL, N1, N2, n)
    return PresetOutput(Preset(name=PresetName.BILATERAL_MASK, params=params), {"bilateral_mask": t}, Q, u)


def _geometric_diag(params: Dict[str, Any]) -> PresetOutput:
    t = geometric_diag(int(params.get("J", 50)))
    return PresetOutput(Preset(name=PresetName.GEOMETRIC_DIAG, params=params), {"geometric_diag": t})


def _sum_difference_pair(params: Dict[str, Any]) -> PresetOutput:
    plus, minus = sum_difference_pair(int(params.get("N", 2)), int(params.get("M", 2)),
                                      int(params.get("n", 2)), [int(m) for m in params.get("profile", [1, 2])])
    return PresetOutput(Preset(name=PresetName.SUM_DIFFERENCE_PAIR, params=params),
                        {"sum_difference_plus": plus, "sum_difference_minus": minus})


PRESET_BUILDERS: Dict[PresetName, Callable[[Dict[str, Any]], PresetOutput]] = {
    PresetName.FULL_RIESZ: _full_riesz,
    PresetName.MONOMIAL_FIBERS: _monomial_fibers,
    PresetName.BILATERAL_MASK: _bilateral_mask,
    PresetName.GEOMETRIC_DIAG: _geometric_diag,
    PresetName.SUM_DIFFERENCE_PAIR: _sum_difference_pair,
}

PRESET_PARAMS: Dict[PresetName, List[str]] = {
    PresetName.FULL_RIESZ: ["N", "M", "n"],
    PresetName.MONOMIAL_FIBERS: ["N", "M", "n", "profile", "slots"],
    PresetName.BILATERAL_MASK: ["N1", "N2", "n", "mask"],
    PresetName.GEOMETRIC_DIAG: ["J"],
    PresetName.SUM_DIFFERENCE_PAIR: ["N", "M", "n", "profile"],
}

PRESET_ALIASES: Dict[str, PresetName] = {
    "remark49_pair": PresetName.SUM_DIFFERENCE_PAIR,
}


def resolve_preset(name: Any) -> PresetName:
    """A preset name or one of its aliases."""
    if isinstance(name, str) and name in PRESET_ALIASES:
        return PRESET_ALIASES[name]
    try:
        return PresetName(name)
    except ValueError:
        raise ConfigurationError(f"Unknown preset {name!r}", "preset", name)


def build_preset(name: Any, params: Optional[Dict[str, Any]] = None,
                 tol: Optional[Tolerances] = None) -> PresetOutput:
    """
    Build a named preset and check every emitted tuple with validate_tuple.

    Raises:
        ConfigurationError: On unknown names, unknown parameters or invalid values
        TupleInvariantError: If an emitted tuple fails validation
    """
    tol = tol or default_tolerances()
    name = resolve_preset(name)
    params = dict(params or {})
    unknown = sorted(set(params) - set(PRESET_PARAMS[name]))
    if unknown:
        raise ConfigurationError(f"Unknown parameters for {name.value}: {unknown}", "params", unknown)
    try:
        output = PRESET_BUILDERS[name](params)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid parameters for {name.value}: {e}", "params", params)

    for stem, t in output.tuples.items():
        diagnostics = validate_tuple(t, tol)
        if not diagnostics.passed:
            raise TupleInvariantError(f"Preset tuple {stem} failed validation", diagnostics.violations[0])
    logger.info("preset_built", preset=name.value, tuples=sorted(output.tuples))
    return output
