"""
JSON and CSV codecs for complex arrays and reports.

Complex numbers are stored as [re, im] pairs at the innermost level so files stay
diffable; Python's float repr guarantees an exact round-trip.
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import numpy as np

from .errors import ConfigurationError, ReportIOError


def encode_complex(array: Any) -> list:
    """Convert a complex ndarray of any rank into nested lists of [re, im] pairs."""
    a = np.asarray(array, dtype=np.complex128)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_complex(nested: Any, ndim: int = None) -> np.ndarray:
    """
    Convert nested [re, im] lists back into a complex ndarray.

    Args:
        nested: Output of `encode_complex`
        ndim: Expected rank of the decoded array (checked when given)

    Raises:
        ConfigurationError: If the innermost level is not a pair
    """
    raw = np.asarray(nested, dtype=np.float64)
    if raw.ndim == 0 or raw.shape[-1] != 2:
        raise ConfigurationError("Complex arrays must be encoded as [re, im] pairs",
                                 "complex_array", list(raw.shape))
    out = raw[..., 0] + 1j * raw[..., 1]
    if ndim is not None and out.ndim != ndim:
        raise ConfigurationError(f"Expected a rank-{ndim} complex array, got rank {out.ndim}",
                                 "complex_array", list(out.shape))
    return out


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def digest(obj: Any) -> str:
    """SHA-256 of the canonical JSON text of `obj`."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def array_digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.complex128)
        h.update(str(a.shape).encode("utf-8"))
        h.update(a.tobytes())
    return h.hexdigest()


def write_json(path: Path, obj: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(obj) + "\n", encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Cannot write {path}: {e}", str(path))
    return path


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ReportIOError(f"Cannot read {path}: {e}", str(path))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Malformed JSON in {path}: {e}", "path", str(path))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    except OSError as e:
        raise ReportIOError(f"Cannot write {path}: {e}", str(path))
    return path


def spectrum_rows(values: Sequence[float]) -> List[List[Any]]:
    return [[idx, float(v)] for idx, v in enumerate(values)]


def matrix_rows(matrix: np.ndarray) -> List[List[Any]]:
    return [[i] + [float(x) for x in row] for i, row in enumerate(np.asarray(matrix, dtype=float))]
