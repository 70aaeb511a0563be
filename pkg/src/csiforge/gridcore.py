"""Complex resource-grid container and the small algebra built on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridShape:
    """Dimensions of a K x L x nRx x nTx resource grid."""

    K: int
    L: int
    nRx: int = 1
    nTx: int = 1

    def __post_init__(self):
        for name in ("K", "L", "nRx", "nTx"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"GridShape.{name} must be a positive integer, got {value!r}")

    @classmethod
    def from_rb(cls, n_rb: int, L: int, nRx: int = 1, nTx: int = 1) -> "GridShape":
        return cls(12 * n_rb, L, nRx, nTx)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.K, self.L, self.nRx, self.nTx)

    @property
    def size(self) -> int:
        return self.K * self.L * self.nRx * self.nTx


class ComplexGrid:
    """Immutable complex128 tensor indexed ``[k, l, r, t]``.

    The array is stored read-only; use :meth:`copy` for a writable
    duplicate. ``to_bytes`` serializes in (r, t, l, k) order with k fastest.
    """

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.complex128)
        if arr.ndim == 2:
            arr = arr[:, :, None, None]
        if arr.ndim != 4:
            raise ValueError(f"grid values must be 2-D or 4-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid values must be finite")
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def zeros(cls, shape: GridShape) -> "ComplexGrid":
        return cls(np.zeros(shape.dims, dtype=np.complex128))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> GridShape:
        return GridShape(*self._values.shape)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def copy(self) -> np.ndarray:
        return self._values.copy()

    def slice(self, r: int = 0, t: int = 0) -> np.ndarray:
        """K x L view of one antenna pair."""
        return self._values[:, :, r, t]

    def to_bytes(self) -> bytes:
        ordered = np.transpose(self._values, (2, 3, 1, 0))
        return np.ascontiguousarray(ordered).astype("<c16").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, shape: GridShape) -> "ComplexGrid":
        flat = np.frombuffer(data, dtype="<c16")
        if flat.size != shape.size:
            raise ValueError(f"expected {shape.size} values, got {flat.size}")
        ordered = flat.reshape(shape.nRx, shape.nTx, shape.L, shape.K)
        return cls(np.transpose(ordered, (3, 2, 0, 1)))

    def __eq__(self, other):
        if not isinstance(other, ComplexGrid):
            return NotImplemented
        return self._values.shape == other._values.shape and np.array_equal(self._values, other._values)

    def __repr__(self):
        return f"ComplexGrid(shape={self._values.shape})"


def _pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def inner_product(a, b) -> complex:
    """Sum of ``a * conj(b)``; linear in ``a``, conjugate-linear in ``b``."""
    a, b = _pair(a, b)
    return complex(np.vdot(b, a))


def fro_norm_sq(a) -> float:
    a = np.asarray(a)
    return float(np.sum(a.real**2 + a.imag**2))


def to_db(ratio) -> float:
    ratio = float(ratio)
    if not ratio > 0:
        raise ValueError(f"dB conversion needs a positive ratio, got {ratio}")
    return 10.0 * np.log10(ratio)


def from_db(db) -> float:
    return float(10.0 ** (float(db) / 10.0))
