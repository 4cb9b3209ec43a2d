"""
Finite discretization of the ambient function spaces and their shift operators.

Unilateral universe: L^2(T, H^2_{l^2(I)}) with T replaced by the N-th roots of unity
and H^2 truncated to z-degrees 0..M-1. Data is stored on the lambda-grid (axis 0),
z-coefficients (axis 1) and generator slots (axis 2).

Bilateral universe: L^2(T^2, l^2(I)) on an N x N2 grid of roots of unity, stored as
grid values on both axes.

Coordinates are the Fourier coefficients against the orthonormal basis
U^k S^j e_i (resp. U1^k U2^j e_i), flattened in (k, j, i) order.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from .errors import ConfigurationError, IndexOutOfRangeError, UniverseMismatchError
from .serialization import decode_complex, encode_complex

logger = structlog.get_logger(__name__)

DEFAULT_MAX_DIM = 2 ** 16


class Mode(str, Enum):
    UNILATERAL = "unilateral"
    BILATERAL = "bilateral"


class Universe(BaseModel):
    """A validated truncation of the ambient space."""

    model_config = ConfigDict(frozen=True)

    mode: Mode
    N_lambda: int = Field(..., ge=1, description="Size of the cyclic lambda-grid")
    M_z: Optional[int] = Field(None, ge=1, description="z-degrees 0..M_z-1 (unilateral)")
    N2: Optional[int] = Field(None, ge=1, description="Second grid size (bilateral)")
    n_gen: int = Field(..., ge=1, description="Number of generator slots")

    @property
    def second(self) -> int:
        return self.M_z if self.mode is Mode.UNILATERAL else self.N2

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.N_lambda, self.second, self.n_gen)

    @property
    def dim(self) -> int:
        return self.N_lambda * self.second * self.n_gen

    @property
    def n_fibers(self) -> int:
        return self.N_lambda if self.mode is Mode.UNILATERAL else self.N_lambda * self.N2

    @property
    def fiber_dim(self) -> int:
        return self.M_z * self.n_gen if self.mode is Mode.UNILATERAL else self.n_gen

    @property
    def measure(self) -> float:
        """Weight of one grid point under the normalized counting measure."""
        return 1.0 / self.n_fibers

    def grid(self) -> np.ndarray:
        """lambda_t = exp(2 pi i t / N_lambda)."""
        return roots_of_unity(self.N_lambda)

    def grid2(self) -> np.ndarray:
        if self.mode is not Mode.BILATERAL:
            raise UniverseMismatchError("Second grid exists only in bilateral mode", self.mode.value)
        return roots_of_unity(self.N2)

    def flat_index(self, k: int, j: int, i: int) -> int:
        return int(np.ravel_multi_index((k, j, i), self.shape))

    def to_dict(self) -> Dict[str, Any]:
        out = {"mode": self.mode.value, "N_lambda": self.N_lambda, "n_gen": self.n_gen}
        if self.mode is Mode.UNILATERAL:
            out["M_z"] = self.M_z
        else:
            out["N2"] = self.N2
        out["dim"] = self.dim
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Universe":
        mode = Mode(data["mode"])
        second = data["M_z"] if mode is Mode.UNILATERAL else data["N2"]
        return make_universe(mode, data["N_lambda"], second, data["n_gen"])


def roots_of_unity(n: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(n) / n)


def make_universe(mode, N_lambda: int, M_z_or_N2: int, n_gen: int,
                  max_dim: int = DEFAULT_MAX_DIM) -> Universe:
    """
    Build and validate a Universe.

    Args:
        mode: "unilateral" or "bilateral"
        N_lambda: Size of the lambda-grid
        M_z_or_N2: z-degree cutoff (unilateral) or second grid size (bilateral)
        n_gen: Number of generator slots
        max_dim: Ceiling on the total dimension

    Raises:
        ConfigurationError: On empty grids, unknown modes or dimensions above max_dim
    """
    try:
        mode = Mode(mode)
    except ValueError:
        raise ConfigurationError(f"Unknown universe mode {mode!r}", "mode", mode)
    for name, value in (("N_lambda", N_lambda), ("M_z_or_N2", M_z_or_N2), ("n_gen", n_gen)):
        if not isinstance(value, (int, np.integer)) or value < 1:
            raise ConfigurationError(f"{name} must be a positive integer", name, value)
    dim = int(N_lambda) * int(M_z_or_N2) * int(n_gen)
    if dim > max_dim:
        raise ConfigurationError(f"Universe dimension {dim} exceeds the limit {max_dim}", "dim", dim)

    second_key = "M_z" if mode is Mode.UNILATERAL else "N2"
    try:
        u = Universe(mode=mode, N_lambda=int(N_lambda), n_gen=int(n_gen), **{second_key: int(M_z_or_N2)})
    except PydanticValidationError as e:
        raise ConfigurationError(f"Invalid universe: {e}", "universe", None)
    logger.debug("universe_created", **u.to_dict())
    return u


@dataclass(frozen=True)
class BasisIndex:
    k: int
    j: int
    i: int


@dataclass(frozen=True, eq=False)
class CoefField:
    """One element of the truncated function space."""

    universe: Universe
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128)
        if data.shape != self.universe.shape:
            raise ConfigurationError(
                f"Field data has shape {data.shape}, universe expects {self.universe.shape}",
                "data", list(data.shape))
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def norm(self) -> float:
        return float(np.sqrt(self.universe.measure * np.sum(np.abs(self.data) ** 2)))

    def __add__(self, other: "CoefField") -> "CoefField":
        _check_same(self.universe, other.universe)
        return CoefField(self.universe, self.data + other.data)

    def __sub__(self, other: "CoefField") -> "CoefField":
        _check_same(self.universe, other.universe)
        return CoefField(self.universe, self.data - other.data)

    def scale(self, c: complex) -> "CoefField":
        return CoefField(self.universe, c * self.data)

    def fibers(self) -> np.ndarray:
        """f(lambda_t) as one row per grid point."""
        return fiber_view(self.universe, self.data)

    def to_dict(self) -> Dict[str, Any]:
        return {"universe": self.universe.to_dict(), "data": encode_complex(self.data)}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "CoefField":
        u = Universe.from_dict(payload["universe"])
        return cls(u, decode_complex(payload["data"], ndim=3))


def random_field(u: Universe, rng: np.random.Generator) -> CoefField:
    data = rng.standard_normal(u.shape) + 1j * rng.standard_normal(u.shape)
    return CoefField(u, data / np.sqrt(2))


def _check_same(a: Universe, b: Universe):
    if a != b:
        raise UniverseMismatchError("Operands belong to different universes", a.to_dict(), b.to_dict())


def _require_mode(u: Universe, mode: Mode, operation: str):
    if u.mode is not mode:
        raise UniverseMismatchError(f"{operation} requires a {mode.value} universe", u.mode.value, mode.value)


def fiber_view(u: Universe, data: np.ndarray) -> np.ndarray:
    """Reshape (N, second, n[, r]) data into (n_fibers, fiber_dim[, r])."""
    extra = data.shape[3:]
    return np.reshape(data, (u.n_fibers, u.fiber_dim) + extra)


def from_fiber_view(u: Universe, rows: np.ndarray) -> np.ndarray:
    extra = rows.shape[2:]
    return np.reshape(rows, u.shape + extra)


def basis_element(u: Universe, idx: BasisIndex) -> CoefField:
    """
    The discretized U^k S^j e_i (unilateral) or U1^k U2^j e_i (bilateral).

    Raises:
        IndexOutOfRangeError: When j or i fall outside the universe
    """
    if not 0 <= idx.i < u.n_gen:
        raise IndexOutOfRangeError(f"Generator index {idx.i} outside [0, {u.n_gen})", "i", idx.i)
    k = idx.k % u.N_lambda
    data = np.zeros(u.shape, dtype=np.complex128)
    if u.mode is Mode.UNILATERAL:
        if not 0 <= idx.j < u.M_z:
            raise IndexOutOfRangeError(f"z-degree {idx.j} outside [0, {u.M_z})", "j", idx.j)
        data[:, idx.j, idx.i] = u.grid() ** k
    else:
        j = idx.j % u.N2
        data[:, :, idx.i] = np.outer(u.grid() ** k, u.grid2() ** j)
    return CoefField(u, data)


def inner(f: CoefField, g: CoefField) -> complex:
    """<f, g>, linear in f and conjugate-linear in g."""
    _check_same(f.universe, g.universe)
    return complex(f.universe.measure * np.vdot(g.data, f.data))


def apply_U(f: CoefField) -> CoefField:
    _require_mode(f.universe, Mode.UNILATERAL, "U")
    return CoefField(f.universe, f.data * f.universe.grid()[:, None, None])


def apply_U_star(f: CoefField) -> CoefField:
    _require_mode(f.universe, Mode.UNILATERAL, "U*")
    return CoefField(f.universe, f.data * np.conj(f.universe.grid())[:, None, None])


def apply_Shat(f: CoefField) -> Tuple[CoefField, float]:
    """
    Pointwise unilateral shift z^j -> z^(j+1).

    Returns:
        (shifted field, norm of the dropped top-degree coefficients)
    """
    _require_mode(f.universe, Mode.UNILATERAL, "S-hat")
    out = np.zeros_like(f.data)
    out[:, 1:, :] = f.data[:, :-1, :]
    overflow = np.sqrt(f.universe.measure * np.sum(np.abs(f.data[:, -1, :]) ** 2))
    if overflow > 0:
        logger.debug("shat_overflow", overflow_norm=float(overflow))
    return CoefField(f.universe, out), float(overflow)


def apply_Shat_star(f: CoefField) -> CoefField:
    _require_mode(f.universe, Mode.UNILATERAL, "S-hat*")
    out = np.zeros_like(f.data)
    out[:, :-1, :] = f.data[:, 1:, :]
    return CoefField(f.universe, out)


def apply_U1(f: CoefField) -> CoefField:
    _require_mode(f.universe, Mode.BILATERAL, "U1")
    return CoefField(f.universe, f.data * f.universe.grid()[:, None, None])


def apply_U2(f: CoefField) -> CoefField:
    _require_mode(f.universe, Mode.BILATERAL, "U2")
    return CoefField(f.universe, f.data * f.universe.grid2()[None, :, None])


def as_columns(basis: np.ndarray, rows: int) -> np.ndarray:
    """A vector or matrix as a complex (rows x r) column array; r may be 0."""
    a = np.array(basis, dtype=np.complex128)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != rows:
        raise ConfigurationError(f"Expected {rows} rows of column vectors", "basis", list(a.shape))
    return a


def data_to_coords(u: Universe, data: np.ndarray) -> np.ndarray:
    """Fourier coefficients of grid data; trailing axes beyond the first three are batch axes."""
    if data.size == 0:
        return np.zeros((u.dim,) + data.shape[3:], dtype=np.complex128)
    if u.mode is Mode.UNILATERAL:
        c = np.fft.fft(data, axis=0) / u.N_lambda
    else:
        c = np.fft.fft2(data, axes=(0, 1)) / (u.N_lambda * u.N2)
    return np.reshape(c, (u.dim,) + data.shape[3:])


def coords_to_data(u: Universe, coords: np.ndarray) -> np.ndarray:
    c = np.reshape(coords, u.shape + coords.shape[1:])
    if c.size == 0:
        return np.zeros(c.shape, dtype=np.complex128)
    if u.mode is Mode.UNILATERAL:
        return np.fft.ifft(c, axis=0) * u.N_lambda
    return np.fft.ifft2(c, axes=(0, 1)) * (u.N_lambda * u.N2)


def field_to_coords(f: CoefField) -> np.ndarray:
    return data_to_coords(f.universe, f.data)


def coords_to_field(u: Universe, coords: np.ndarray) -> CoefField:
    coords = np.asarray(coords, dtype=np.complex128)
    if coords.shape != (u.dim,):
        raise ConfigurationError(f"Coordinate vector must have length {u.dim}", "coords", list(coords.shape))
    return CoefField(u, coords_to_data(u, coords))


OPERATOR_NAMES = {
    Mode.UNILATERAL: ("U", "U*", "S", "S*"),
    Mode.BILATERAL: ("U1", "U1*", "U2", "U2*"),
}


def operator_matrix(u: Universe, name: str) -> sp.csr_matrix:
    """
    Sparse coordinate matrix of a shift operator.

    U / U1 send e_(k,j,i) to e_(k+1,j,i) cyclically; U2 does the same on j;
    S sends e_(k,j,i) to e_(k,j+1,i) and annihilates the top degree.
    Starred names are the adjoints.
    """
    if name not in OPERATOR_NAMES[u.mode]:
        raise ConfigurationError(f"Operator {name!r} is not defined on a {u.mode.value} universe",
                                 "operator", name)
    idx = np.arange(u.dim).reshape(u.shape)
    base = name.rstrip("*")
    if base in ("U", "U1"):
        rows, cols = np.roll(idx, -1, axis=0).ravel(), idx.ravel()
    elif base == "U2":
        rows, cols = np.roll(idx, -1, axis=1).ravel(), idx.ravel()
    else:
        rows, cols = idx[:, 1:, :].ravel(), idx[:, :-1, :].ravel()
    m = sp.csr_matrix((np.ones(rows.size, dtype=np.complex128), (rows, cols)), shape=(u.dim, u.dim))
    if name.endswith("*"):
        m = m.conj().T.tocsr()
    return m
