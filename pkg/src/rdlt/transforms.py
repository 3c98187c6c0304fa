"""Orthonormal block transforms and their serialization.

A transform maps a flattened n*n pixel block (row-major, treated as a row
vector) to coefficients via ``y = x @ M``.  Two kinds are supported: a dense
n^2 x n^2 matrix, and a separable pair of n x n factor matrices applied as
``Y = V @ X @ H.T`` on the unflattened block.  Both kinds agree through
``to_dense``, which builds the Kronecker equivalent of a separable pair.

The sinusoidal families used as anchors and MTS candidates are generated in
closed form: DCT-II, DST-VII and DCT-VIII, all with rows as basis functions
and unit row norm.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"RDLT"
FORMAT_VERSION = 1

# Orthonormality is asserted at this tolerance wherever a transform must be
# invertible by transpose.
ORTHONORMAL_TOL = 1e-9

_KIND_CODES = {"dense": 0, "separable": 1}
_KIND_NAMES = {code: kind for kind, code in _KIND_CODES.items()}


@dataclass
class TransformMatrix:
    """A block transform plus the metadata needed to apply and store it.

    coeffs holds (n^2, n^2) for kind "dense" and (2, n, n) for kind
    "separable", ordered horizontal factor then vertical factor.  The
    orthonormal flag is measured, not asserted: constructors set it from the
    actual defect so a perturbed matrix loses the flag automatically.
    """

    kind: str
    n: int
    coeffs: np.ndarray
    label: str = ""
    orthonormal: bool = field(default=False)

    @property
    def horizontal(self) -> np.ndarray:
        if self.kind != "separable":
            raise ValueError("horizontal factor only exists for separable transforms")
        return self.coeffs[0]

    @property
    def vertical(self) -> np.ndarray:
        if self.kind != "separable":
            raise ValueError("vertical factor only exists for separable transforms")
        return self.coeffs[1]


def dct2_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row k, column m is sqrt(2/n)*c_k*cos(pi*(2m+1)*k/(2n))."""
    _check_size(n)
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = math.sqrt(2.0 / n) * np.cos(np.pi * (2 * m + 1) * k / (2 * n))
    mat[0, :] *= 1.0 / math.sqrt(2.0)
    return mat


def dst7_matrix(n: int) -> np.ndarray:
    """Orthonormal DST-VII matrix, rows as basis functions.

    Row k, column m is 2/sqrt(2n+1) * sin(pi*(2k+1)*(m+1)/(2n+1)).  The first
    row is therefore monotonically increasing in magnitude, which is the
    property that matches intra residual energy growing away from the
    predicted edge.
    """
    _check_size(n)
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    return 2.0 / math.sqrt(2 * n + 1) * np.sin(np.pi * (2 * k + 1) * (m + 1) / (2 * n + 1))


def dct8_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-VIII matrix; row k, column m is 2/sqrt(2n+1)*cos(pi*(2k+1)*(2m+1)/(4n+2))."""
    _check_size(n)
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    return 2.0 / math.sqrt(2 * n + 1) * np.cos(np.pi * (2 * k + 1) * (2 * m + 1) / (4 * n + 2))


def _check_size(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ValueError(f"block size must be an integer >= 2, got {n!r}")


def orthonormality_defect(m: np.ndarray) -> float:
    """Frobenius norm of M^T M - I; zero iff columns are orthonormal."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    gram = m.T @ m
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.linalg.norm(gram))


def transform_defect(t: TransformMatrix) -> float:
    """Orthonormality defect of a transform's dense equivalent."""
    if t.kind == "dense":
        return orthonormality_defect(t.coeffs)
    # For a Kronecker product of square factors the defect is driven by the
    # factors; computing on the dense matrix keeps one definition for both kinds.
    return orthonormality_defect(to_dense(t).coeffs)


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Project a square matrix to the nearest orthonormal one (polar factor).

    Uses the SVD polar decomposition M = (U V^T)(V S V^T); the returned U V^T
    minimizes Frobenius distance to M over orthogonal matrices.  Raises
    numpy.linalg.LinAlgError if M is numerically rank deficient, since the
    nearest orthonormal matrix is then not unique.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    u, s, vt = np.linalg.svd(m)
    if s[-1] <= s[0] * 1e-12 or not np.isfinite(s).all():
        raise np.linalg.LinAlgError(
            "matrix is numerically singular; nearest orthonormal matrix is not unique"
        )
    return u @ vt


def dense_transform(matrix: np.ndarray, label: str = "") -> TransformMatrix:
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"dense transform needs a square matrix, got shape {matrix.shape}")
    n = math.isqrt(matrix.shape[0])
    if n * n != matrix.shape[0]:
        raise ValueError(f"dense transform size {matrix.shape[0]} is not a perfect square")
    flag = orthonormality_defect(matrix) <= ORTHONORMAL_TOL
    return TransformMatrix("dense", n, matrix, label, flag)


def separable_transform(horizontal: np.ndarray, vertical: np.ndarray, label: str = "") -> TransformMatrix:
    h = np.ascontiguousarray(horizontal, dtype=np.float64)
    v = np.ascontiguousarray(vertical, dtype=np.float64)
    if h.shape != v.shape or h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"separable factors must be equal square matrices, got {h.shape} and {v.shape}")
    flag = (
        orthonormality_defect(h) <= ORTHONORMAL_TOL
        and orthonormality_defect(v) <= ORTHONORMAL_TOL
    )
    return TransformMatrix("separable", h.shape[0], np.stack([h, v]), label, flag)


def dct2_transform(n: int) -> TransformMatrix:
    """Separable 2-D DCT-II, the anchor transform."""
    c = dct2_matrix(n)
    return separable_transform(c, c, label=f"dct2-{n}")


def to_dense(t: TransformMatrix) -> TransformMatrix:
    """Dense equivalent of a transform.

    For a separable pair, Y = V X H^T on blocks corresponds on row-major
    flattened vectors to y = x @ kron(V, H).T, which is what this returns.
    """
    if t.kind == "dense":
        return t
    dense = np.ascontiguousarray(np.kron(t.vertical, t.horizontal).T)
    return TransformMatrix("dense", t.n, dense, t.label, t.orthonormal)


def forward(t: TransformMatrix, blocks: np.ndarray) -> np.ndarray:
    """Transform flattened blocks; accepts shape (n^2,) or (count, n^2).

    Linear in the input, so integer and real-valued blocks are both fine.
    """
    x = np.asarray(blocks, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != t.n * t.n:
        raise ValueError(f"expected blocks of {t.n * t.n} samples, got shape {blocks.shape}")
    if t.kind == "dense":
        y = x @ t.coeffs
    else:
        grid = x.reshape(-1, t.n, t.n)
        y = (t.vertical @ grid @ t.horizontal.T).reshape(x.shape)
    return y[0] if squeeze else y


def inverse(t: TransformMatrix, coeffs: np.ndarray) -> np.ndarray:
    """Invert ``forward`` by transpose; requires the orthonormal flag."""
    if not t.orthonormal:
        raise ValueError(f"transform {t.label!r} is not orthonormal; transpose inverse is invalid")
    y = np.asarray(coeffs, dtype=np.float64)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[None, :]
    if y.ndim != 2 or y.shape[1] != t.n * t.n:
        raise ValueError(f"expected coefficients of {t.n * t.n} samples, got shape {coeffs.shape}")
    if t.kind == "dense":
        x = y @ t.coeffs.T
    else:
        grid = y.reshape(-1, t.n, t.n)
        x = (t.vertical.T @ grid @ t.horizontal).reshape(y.shape)
    return x[0] if squeeze else x


def transform_to_bytes(t: TransformMatrix) -> bytes:
    """Serialize to the binary transform format (see ``transform_from_bytes``)."""
    label = t.label.encode("utf-8")
    if len(label) > 0xFFFF:
        raise ValueError("transform label too long to serialize")
    head = MAGIC + struct.pack(
        "<HBHH", FORMAT_VERSION, _KIND_CODES[t.kind], t.n, len(label)
    )
    body = np.ascontiguousarray(t.coeffs, dtype="<f8").tobytes()
    return head + label + body


def transform_from_bytes(raw: bytes, origin: str = "transform data") -> TransformMatrix:
    """Parse the binary transform format.

    Layout, all little endian: magic "RDLT", version u16, kind u8 (0 dense,
    1 separable), n u16, label length u16, label bytes (UTF-8), then float64
    coefficients row-major (n^4 values dense; 2*n^2 separable, horizontal
    factor first).  The orthonormal flag is re-measured from the read
    coefficients rather than trusted from the file.
    """
    if raw[:4] != MAGIC:
        raise ValueError(f"{origin}: not a transform record (bad magic {raw[:4]!r})")
    try:
        version, kind_code, n, label_len = struct.unpack_from("<HBHH", raw, 4)
    except struct.error as exc:
        raise ValueError(f"{origin}: truncated header") from exc
    if version != FORMAT_VERSION:
        raise ValueError(f"{origin}: unsupported transform format version {version}")
    if kind_code not in _KIND_NAMES:
        raise ValueError(f"{origin}: unknown transform kind code {kind_code}")
    kind = _KIND_NAMES[kind_code]
    offset = 4 + 7
    label = raw[offset : offset + label_len].decode("utf-8")
    offset += label_len
    count = n * n * n * n if kind == "dense" else 2 * n * n
    expected = offset + 8 * count
    if len(raw) != expected:
        raise ValueError(
            f"{origin}: expected {expected} bytes for a {kind} transform with n={n}, got {len(raw)}"
        )
    coeffs = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)
    if kind == "dense":
        coeffs = coeffs.reshape(n * n, n * n)
        t = dense_transform(coeffs, label)
    else:
        pair = coeffs.reshape(2, n, n)
        t = separable_transform(pair[0], pair[1], label)
    return t


def save_transform(t: TransformMatrix, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(transform_to_bytes(t))


def load_transform(path: str) -> TransformMatrix:
    with open(path, "rb") as fh:
        raw = fh.read()
    return transform_from_bytes(raw, origin=path)


def transform_to_json(t: TransformMatrix) -> dict:
    """JSON-friendly mirror of a transform, for inspection and provenance."""
    entry: dict = {"kind": t.kind, "n": t.n, "label": t.label, "orthonormal": t.orthonormal}
    if t.kind == "dense":
        entry["coeffs"] = t.coeffs.tolist()
    else:
        entry["horizontal"] = t.horizontal.tolist()
        entry["vertical"] = t.vertical.tolist()
    return entry


def save_transform_json(t: TransformMatrix, path: str, extra: dict | None = None) -> None:
    entry = transform_to_json(t)
    if extra:
        entry.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entry, fh, sort_keys=True, indent=2)
        fh.write("\n")
