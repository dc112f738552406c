"""Uniform periodic grids, tensor fields on them, and the central-difference stencils.

Field values are stored as ``grid.shape + (n,) * rank``. Derivative operators
put the new derivative index in front of the existing component indices, so
``grad(g)[..., k, i, j]`` is ``D_k g_ij``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FieldError

__all__ = [
    "GridSpec",
    "Field",
    "d1",
    "d2",
    "d2_compact",
    "grad",
    "hessian",
    "hessian_compact",
    "symmetrize",
    "write_binary",
    "read_binary",
    "write_csv",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the torus ``[0, L)^dim``.

    Parameters
    ----------
    dim : int
        Number of affine coordinates, 1 to 3.
    N : int
        Nodes per axis; a power of two, at least 16.
    L : float
        Period along every axis.
    """

    dim: int
    N: int
    L: float = 1.0

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise FieldError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.N < 16 or self.N & (self.N - 1):
            raise FieldError(f"N must be a power of two >= 16, got {self.N}")
        if not self.L > 0:
            raise FieldError(f"period must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def coords(self) -> list[np.ndarray]:
        """Coordinate arrays ``x^1, ..., x^n`` with ``indexing='ij'``."""
        return list(np.meshgrid(*([self.axis()] * self.dim), indexing="ij"))

    def node(self, *x: float) -> tuple[int, ...]:
        """Index of the node at coordinates ``x`` (must lie on the grid)."""
        if len(x) != self.dim:
            raise FieldError(f"expected {self.dim} coordinates, got {len(x)}")
        idx = []
        for xi in x:
            k = xi / self.h
            if abs(k - round(k)) > 1e-9:
                raise FieldError(f"coordinate {xi} is not a grid node for N={self.N}")
            idx.append(int(round(k)) % self.N)
        return tuple(idx)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.dim, self.N * factor, self.L)


class Field:
    """Tensor field of a given rank sampled on every node of a grid."""

    def __init__(self, grid: GridSpec, values, rank: int | None = None):
        values = np.asarray(values, dtype=float)
        if rank is None:
            rank = values.ndim - grid.dim
        expected = grid.shape + (grid.dim,) * rank
        if values.shape != expected:
            raise FieldError(f"field shape {values.shape} does not match {expected}")
        if not np.all(np.isfinite(values)):
            raise FieldError("field contains NaN or Inf")
        self.grid = grid
        self.values = values
        self.rank = rank

    def __repr__(self):
        return f"Field(rank={self.rank}, grid={self.grid})"

    def at(self, node) -> np.ndarray | float:
        return self.values[tuple(node)]

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_axis(values: np.ndarray, axis: int):
    if axis < 0 or axis >= values.ndim:
        raise FieldError(f"bad derivative axis {axis}")


def d1(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second-order central first difference along a spatial axis (periodic)."""
    _check_axis(values, axis)
    return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)


def d2(values: np.ndarray, i: int, j: int, h: float) -> np.ndarray:
    """Composed central second difference ``D_i D_j``.

    Commutes exactly in exact arithmetic; on the diagonal this is the wide
    5-point stencil with spacing ``2h``.
    """
    return d1(d1(values, j, h), i, h)


def d2_compact(values: np.ndarray, i: int, j: int, h: float) -> np.ndarray:
    """Second difference with the 3-point stencil on the diagonal."""
    if i != j:
        return d2(values, i, j, h)
    return (np.roll(values, -1, i) - 2.0 * values + np.roll(values, 1, i)) / (h * h)


def grad(values: np.ndarray, dim: int, h: float) -> np.ndarray:
    """Stack ``D_k`` over ``k``; the new index sits right after the spatial axes."""
    return np.stack([d1(values, k, h) for k in range(dim)], axis=dim)


def _hessian(values, dim, h, op):
    out = np.empty(values.shape[:dim] + (dim, dim) + values.shape[dim:])
    for i in range(dim):
        for j in range(i, dim):
            block = op(values, i, j, h)
            out[(slice(None),) * dim + (i, j)] = block
            if i != j:
                out[(slice(None),) * dim + (j, i)] = block
    return out


def hessian(values: np.ndarray, dim: int, h: float) -> np.ndarray:
    """``D_i D_j`` of every component, computed on ``i <= j`` and mirrored."""
    return _hessian(values, dim, h, d2)


def hessian_compact(values: np.ndarray, dim: int, h: float) -> np.ndarray:
    return _hessian(values, dim, h, d2_compact)


def symmetrize(values: np.ndarray) -> np.ndarray:
    """Copy the upper triangle of the last two axes onto the lower one."""
    out = np.array(values, dtype=float, copy=True)
    n = out.shape[-1]
    for i in range(n):
        for j in range(i + 1, n):
            out[..., j, i] = out[..., i, j]
    return out


# -- serialization ---------------------------------------------------------

_MAGIC = b"HKF1"
_HEADER = struct.Struct("<4siidi")  # magic, n, N, L, rank


def write_binary(field: Field, path) -> None:
    """Write ``field`` as header (n, N, L, rank) plus little-endian float64 body."""
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.dim, g.N, float(g.L), field.rank))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))


def read_binary(path) -> Field:
    raw = Path(path).read_bytes()
    magic, n, N, L, rank = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FieldError(f"{path}: not a field file")
    grid = GridSpec(n, N, L)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    shape = grid.shape + (n,) * rank
    if body.size != int(np.prod(shape)):
        raise FieldError(f"{path}: truncated body")
    return Field(grid, body.reshape(shape).astype(float), rank)


def write_csv(field: Field, path) -> None:
    """Debug dump: node index columns, then one column per component."""
    g = field.grid
    comps = list(np.ndindex(*((g.dim,) * field.rank)))
    names = [f"i{a}" for a in range(g.dim)]
    names += ["v" + "".join(str(c) for c in comp) for comp in comps] or ["v"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for node in np.ndindex(*g.shape):
            vals = np.atleast_1d(field.values[node]).reshape(-1)
            w.writerow(list(node) + [repr(float(v)) for v in vals])
