"""Dense 3-way tensor primitives: unfolding, folding, Khatri-Rao, mode-1
products, and CP reconstruction.

Tensors are plain C-contiguous ``numpy.ndarray`` objects with ``ndim == 3``
and float64 entries.  Modes are numbered 1..3 (axis 0 is mode 1).  The
unfolding convention is the standard CP-literature one: the mode-n unfolding
has the mode-n fibers as columns, ordered so that the remaining mode indices
vary fastest in ascending mode order.  With that convention a CP tensor
satisfies ``unfold(X, 1) == A @ khatri_rao(C, B).T`` exactly.

All functions treat their inputs as read-only and return fresh arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_tensor3(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got ndim={t.ndim}")
    return t


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    return m


@dataclass(frozen=True)
class FactorSet:
    """CP factor matrices, one per mode, all with ``rank`` columns.

    ``a`` is the mode-1 (spatial) factor, ``b`` the mode-2 (spectral) factor
    and ``c`` the mode-3 (temporal) factor.  Treated as immutable: operations
    never write into the stored arrays.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name)))
        if not (self.a.shape[1] == self.b.shape[1] == self.c.shape[1]):
            raise ValueError(
                "factor matrices must share a column count, got "
                f"{self.a.shape[1]}, {self.b.shape[1]}, {self.c.shape[1]}"
            )

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])


def unfold(t, mode: int) -> np.ndarray:
    """Mode-n unfolding: a ``d_mode x (product of the other dims)`` matrix
    whose columns are the mode-n fibers of ``t``.
    """
    t = _as_tensor3(t)
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    return np.reshape(
        np.moveaxis(t, mode - 1, 0), (t.shape[mode - 1], -1), order="F"
    )


def fold(m, mode: int, dims) -> np.ndarray:
    """Exact inverse of :func:`unfold` for the given mode and target dims."""
    m = _as_matrix(m)
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"dims must have length 3, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != mode - 1]
    if m.shape != (dims[mode - 1], rest[0] * rest[1]):
        raise ValueError(
            f"matrix shape {m.shape} inconsistent with dims {dims} for mode {mode}"
        )
    full = np.reshape(m, (dims[mode - 1], rest[0], rest[1]), order="F")
    return np.ascontiguousarray(np.moveaxis(full, 0, mode - 1))


def khatri_rao(a, b) -> np.ndarray:
    """Column-wise Kronecker product: column r is ``kron(a[:, r], b[:, r])``
    (the second argument's row index varies fastest).
    """
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column counts must match, got {a.shape[1]} and {b.shape[1]}"
        )
    return (a[:, None, :] * b[None, :, :]).reshape(
        a.shape[0] * b.shape[0], a.shape[1]
    )


def mode1_product(t, u) -> np.ndarray:
    """Multiply every mode-1 fiber of ``t`` by the matrix ``u``.

    Satisfies ``unfold(mode1_product(t, u), 1) == u @ unfold(t, 1)``.
    """
    t = _as_tensor3(t)
    u = _as_matrix(u)
    if u.shape[1] != t.shape[0]:
        raise ValueError(
            f"matrix has {u.shape[1]} columns but tensor mode-1 size is {t.shape[0]}"
        )
    return np.tensordot(u, t, axes=(1, 0))


def cp_reconstruct(f: FactorSet) -> np.ndarray:
    """Dense tensor with entries ``sum_r a[i,r] * b[j,r] * c[k,r]``."""
    return np.einsum("ir,jr,kr->ijk", f.a, f.b, f.c, optimize=True)


def frob_norm(t) -> float:
    """Frobenius norm (square root of the sum of squared entries)."""
    return float(np.linalg.norm(np.asarray(t, dtype=float)))


def save_tensor(path, t) -> None:
    """Write ``t`` as text: a header line ``T3 d1 d2 d3`` followed by one
    entry per line in C (row-major) storage order.  Entries are printed with
    Python's shortest round-tripping float representation, so
    :func:`load_tensor` restores the tensor bit for bit.
    """
    t = _as_tensor3(t)
    with open(path, "w") as fh:
        fh.write(f"T3 {t.shape[0]} {t.shape[1]} {t.shape[2]}\n")
        for v in t.ravel(order="C"):
            fh.write(repr(float(v)))
            fh.write("\n")


def load_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`save_tensor`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "T3":
            raise ValueError(f"{path}: not a T3 tensor file")
        dims = tuple(int(d) for d in header[1:])
        if any(d <= 0 for d in dims):
            raise ValueError(f"{path}: invalid dims {dims}")
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    if values.size != dims[0] * dims[1] * dims[2]:
        raise ValueError(
            f"{path}: expected {dims[0] * dims[1] * dims[2]} entries, got {values.size}"
        )
    t = values.reshape(dims, order="C")
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{path}: tensor contains non-finite entries")
    return t
