"""Hermitian lift of an affine metric to the tangent bundle.

The lift lives on the chart ``z^j = xi^j + i xi^{n+j}`` and has components
``h_ij(z) = g_ij(x)`` that do not depend on the fiber coordinates.  With the
holomorphic derivative ``d_k = (d/dxi^k - i d/dxi^{n+k}) / 2`` every
holomorphic or antiholomorphic derivative of a lifted quantity is half the
base derivative, which is how the factors of one quarter below arise.

Hessian metrics lift to Kahler metrics; the computable discriminator is the
tensor ``T`` of :func:`hkflow.geometry.t_tensor`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    EPS_POS,
    HessianStructure,
    MetricField,
    _logdet,
    check_positive,
    hessian_curvature,
    inverse_metric,
)
from .grid import Field, GridSpec, d1

__all__ = [
    "HermitianLift",
    "lift_metric",
    "kahler_ricci",
    "kahler_curvature",
    "bisectional_sign_scan",
]


@dataclass(frozen=True)
class HermitianLift:
    """Fiber-independent Hermitian matrix ``h_ij`` over the base grid.

    Components are real, so ``h`` is real symmetric; ``fiber_dim`` records
    the number of fiber coordinates (all derivatives along them vanish).
    """

    grid: GridSpec
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.dim

    @property
    def fiber_dim(self) -> int:
        return self.grid.dim

    def holo(self, f: np.ndarray, k: int) -> np.ndarray:
        """``d f / d z^k`` for a lifted (fiber-independent) array."""
        fiber = np.zeros_like(f)
        return 0.5 * (d1(f, k, self.grid.h) - 1j * fiber)

    def antiholo(self, f: np.ndarray, k: int) -> np.ndarray:
        """``d f / d zbar^k``."""
        fiber = np.zeros_like(f)
        return 0.5 * (d1(f, k, self.grid.h) + 1j * fiber)


def lift_metric(g: MetricField) -> HermitianLift:
    """Copy ``g`` onto the tangent-bundle chart; raises NotPositiveDefinite."""
    values = np.array(g.values, dtype=float)
    check_positive(values, getattr(g, "eps_pos", EPS_POS))
    return HermitianLift(g.grid, values)


def _ddbar(lift: HermitianLift, f: np.ndarray) -> np.ndarray:
    # [..., i, j] = d_i dbar_j f
    n = lift.n
    out = np.empty(f.shape[: lift.n] + (n, n) + f.shape[lift.n :], dtype=complex)
    for j in range(n):
        fj = lift.antiholo(f, j)
        for i in range(n):
            out[(Ellipsis, i, j) + (slice(None),) * (f.ndim - lift.n)] = lift.holo(fj, i)
    return out


def kahler_ricci(lift: HermitianLift) -> Field:
    """Ricci form ``R_{i jbar} = -d_i dbar_j log det h`` of the lift.

    For a lifted metric this equals ``beta / 4``.
    """
    ric = -_ddbar(lift, _logdet(lift.values))
    return Field(lift.grid, ric.real, rank=2)


def kahler_curvature(lift: HermitianLift, hs: HessianStructure):
    """Curvature ``R_{i jbar k lbar}`` of the lift and its defect against ``-Q / 2``.

    ``R_{i jbar k lbar} = -d_k dbar_l h_ij + h^{pq} (d_k h_iq)(dbar_l h_pj)``,
    evaluated through the holomorphic derivatives of the lift.  Returns
    ``(R, defect)`` with ``defect = max |R + Q / 2|`` and ``Q`` from
    :func:`hkflow.geometry.hessian_curvature`.
    """
    n = lift.n
    h = lift.values
    hinv = inverse_metric(h)
    # d2[..., k, l, i, j] = d_k dbar_l h_ij
    d2 = _ddbar(lift, h)
    dh = np.stack([lift.holo(h, k) for k in range(n)], axis=n)  # [..., k, i, q]
    dbh = np.stack([lift.antiholo(h, k) for k in range(n)], axis=n)  # [..., l, p, j]
    first = -np.einsum("...klij->...ijkl", d2)
    second = np.einsum("...pq,...kiq,...lpj->...ijkl", hinv, dh, dbh)
    R = (first + second).real
    Q = hessian_curvature(hs).values
    defect = float(np.max(np.abs(R + 0.5 * Q)))
    return Field(lift.grid, R, rank=4), defect


def _probe_nodes(grid: GridSpec, probes):
    if isinstance(probes, str) and probes == "all":
        return [tuple(ix) for ix in np.ndindex(*grid.shape)]
    return [tuple(int(i) for i in p) for p in probes]


def bisectional_sign_scan(Q, g=None, frames: int = 32, seed: int = 0, probes="all") -> float:
    """Minimum of ``-Q_iijj`` over seeded random g-orthonormal frames.

    Parameters
    ----------
    Q : Field or ndarray
        Hessian curvature on the grid (``[..., i, j, k, l]``), or a stack
        ``[p, i, j, k, l]`` from analytic sampling when ``g`` is a stack too.
    g : MetricField or ndarray, optional
        Metric used to orthonormalize the frames; identity if omitted.
    frames : int
        Random frames per probe node.
    probes : "all" or iterable of node tuples
        Nodes to scan (ignored for stacked input, where every sample is used).

    Returns
    -------
    float
        ``min(-Q'_aabb)``; a value ``>= -tol`` is sample evidence of
        nonnegative Hessian sectional curvature.
    """
    Qv = Q.values if isinstance(Q, Field) else np.asarray(Q, dtype=float)
    n = Qv.shape[-1]
    if isinstance(Q, Field):
        nodes = _probe_nodes(Q.grid, probes)
        Qs = np.stack([Qv[p] for p in nodes])
        if g is None:
            gs = np.broadcast_to(np.eye(n), (len(nodes), n, n))
        else:
            gv = g.values if isinstance(g, Field) else np.asarray(g)
            gs = np.stack([gv[p] for p in nodes])
    else:
        Qs = Qv.reshape((-1,) + (n,) * 4)
        gs = (
            np.broadcast_to(np.eye(n), (len(Qs), n, n))
            if g is None
            else np.asarray(g, dtype=float).reshape(-1, n, n)
        )
    rng = np.random.default_rng(seed)
    # one set of orthogonal matrices shared by all probes keeps the scan cheap
    O, _ = np.linalg.qr(rng.standard_normal((frames, n, n)))
    Linv_T = np.swapaxes(np.linalg.inv(np.linalg.cholesky(gs)), -1, -2)  # [p, i, a]
    E = np.einsum("pia,fab->pfib", Linv_T, O)  # g-orthonormal columns
    diag = np.einsum("pijkl,pfia,pfja,pfkb,pflb->pfab", Qs, E, E, E, E)
    return float(np.min(-diag))
