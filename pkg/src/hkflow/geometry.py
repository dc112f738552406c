"""Pointwise differential geometry of an affine Riemannian metric on a periodic grid.

Everything here is written in affine coordinates, where the flat connection
has vanishing Christoffel symbols and the Levi-Civita symbols coincide with the
difference tensor ``gamma``.  Fixtures that live on a non-periodic chart are
handled through :class:`PotentialJet`, which carries closed-form derivative
samples in place of stencils.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FieldError, NotPositiveDefinite
from .grid import Field, GridSpec, grad, hessian, hessian_compact, symmetrize

EPS_POS = 1e-10

__all__ = [
    "EPS_POS",
    "MetricField",
    "HessianStructure",
    "PotentialJet",
    "metric_from_potential",
    "log_det_field",
    "beta_tensor",
    "koszul_forms",
    "christoffel_gamma",
    "lower_gamma",
    "hessian_curvature",
    "riemann_from_Q",
    "t_tensor",
    "min_eigen_gap",
    "min_eigenvalue",
    "inverse_metric",
    "trace_with",
    "check_positive",
]


# -- linear algebra on stacks of small symmetric matrices -------------------


def min_eigenvalue(values: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue at every node of a stack of symmetric matrices."""
    return np.linalg.eigvalsh(values)[..., 0]


def check_positive(values: np.ndarray, eps_pos: float = EPS_POS, what="metric"):
    lam = min_eigenvalue(values)
    bad = lam <= eps_pos
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NotPositiveDefinite(
            f"{what} not positive definite at node {node} "
            f"(min eigenvalue {lam[node]:.3e} <= {eps_pos:g})",
            node=node,
            min_eig=float(lam[node]),
        )


def _logdet(values: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(values)
    except np.linalg.LinAlgError:
        check_positive(values, 0.0)
        raise NotPositiveDefinite("Cholesky factorization failed") from None
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    return 2.0 * np.sum(np.log(diag), axis=-1)


def inverse_metric(values: np.ndarray) -> np.ndarray:
    return symmetrize(np.linalg.inv(values))


def trace_with(ginv: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    """``g^{ij} A_ij`` nodewise."""
    return np.einsum("...ij,...ij->...", ginv, tensor)


# -- domain types -----------------------------------------------------------


class MetricField(Field):
    """Symmetric positive-definite rank-2 field.

    Construction symmetrizes from the upper triangle and rejects any node whose
    smallest eigenvalue does not exceed ``eps_pos``.
    """

    def __init__(self, grid: GridSpec, values, eps_pos: float = EPS_POS):
        values = symmetrize(np.asarray(values, dtype=float))
        super().__init__(grid, values, rank=2)
        self.eps_pos = eps_pos
        check_positive(self.values, eps_pos)

    @classmethod
    def constant(cls, grid: GridSpec, matrix) -> "MetricField":
        matrix = np.asarray(matrix, dtype=float).reshape(grid.dim, grid.dim)
        return cls(grid, np.broadcast_to(matrix, grid.shape + matrix.shape).copy())


class HessianStructure:
    """Constant form ``G0`` plus a periodic potential ``phi``.

    On the torus the global potential is ``x.G0.x / 2 + phi`` and the induced
    metric is ``G0 + D D phi``.  Positivity of that metric is checked here.
    """

    def __init__(self, grid: GridSpec, G0, phi, eps_pos: float = EPS_POS):
        G0 = np.atleast_2d(np.asarray(G0, dtype=float))
        if G0.shape != (grid.dim, grid.dim):
            raise FieldError(f"G0 must be {grid.dim}x{grid.dim}")
        if not np.allclose(G0, G0.T, rtol=0, atol=0):
            raise FieldError("G0 must be symmetric")
        if np.linalg.eigvalsh(G0)[0] <= 0:
            raise NotPositiveDefinite("G0 is not positive definite")
        if isinstance(phi, Field):
            phi = phi.values
        self.grid = grid
        self.G0 = G0
        self.phi = Field(grid, phi, rank=0)
        self.eps_pos = eps_pos
        self.metric = metric_from_potential(self)


@dataclass
class PotentialJet:
    """Closed-form derivatives of a convex potential at sample points.

    ``phi2[p, i, j]`` is the metric, ``phi3[p, i, j, k]`` and
    ``phi4[p, i, j, k, l]`` its first and second derivatives.  Used for
    fixtures on charts where no periodic stencil applies.
    """

    phi2: np.ndarray
    phi3: np.ndarray
    phi4: np.ndarray

    def __post_init__(self):
        self.phi2 = np.asarray(self.phi2, dtype=float)
        self.phi3 = np.asarray(self.phi3, dtype=float)
        self.phi4 = np.asarray(self.phi4, dtype=float)
        check_positive(self.phi2)

    @property
    def dim(self) -> int:
        return self.phi2.shape[-1]


# -- operations -------------------------------------------------------------


def metric_from_potential(hs: HessianStructure) -> MetricField:
    """``g_ij = (G0)_ij + D_i D_j phi``; raises NotPositiveDefinite if not a metric."""
    grid = hs.grid
    values = hs.G0 + hessian(hs.phi.values, grid.dim, grid.h)
    return MetricField(grid, values, hs.eps_pos)


def log_det_field(g: MetricField) -> Field:
    """Nodewise ``log det g`` from a Cholesky factorization."""
    return Field(g.grid, _logdet(g.values), rank=0)


def _jet_logdet_derivs(jet: PotentialJet):
    ginv = np.linalg.inv(jet.phi2)
    # d_i g_ab = phi_abi ; d_i d_j g_ab = phi_abij
    dlog = np.einsum("pab,pbai->pi", ginv, jet.phi3)
    m = np.einsum("pab,pbci->paci", ginv, jet.phi3)
    d2log = np.einsum("pab,pbaij->pij", ginv, jet.phi4) - np.einsum("paci,pcaj->pij", m, m)
    return dlog, d2log


def beta_tensor(g) -> Field | np.ndarray:
    """``beta_ij = -D_i D_j log det g``.

    Accepts a :class:`MetricField` (stencil path) or a :class:`PotentialJet`
    (closed-form path, returns an array).
    """
    if isinstance(g, PotentialJet):
        return -_jet_logdet_derivs(g)[1]
    grid = g.grid
    L = _logdet(g.values)
    return Field(grid, -hessian(L, grid.dim, grid.h), rank=2)


def koszul_forms(g):
    """First and second Koszul forms ``(alpha, kappa)``.

    ``alpha_i = D_i(log det g) / 2`` and ``kappa_ij = D_i D_j(log det g) / 2``,
    built from the same log-det field and stencils as :func:`beta_tensor`, so
    ``beta + 2 kappa`` vanishes exactly.
    """
    if isinstance(g, PotentialJet):
        dlog, d2log = _jet_logdet_derivs(g)
        return 0.5 * dlog, 0.5 * d2log
    grid = g.grid
    L = _logdet(g.values)
    alpha = Field(grid, 0.5 * grad(L, grid.dim, grid.h), rank=1)
    kappa = Field(grid, 0.5 * hessian(L, grid.dim, grid.h), rank=2)
    return alpha, kappa


def christoffel_gamma(hs) -> Field | np.ndarray:
    """Difference tensor ``gamma^i_jk = g^{il} gamma_ljk`` with ``gamma_ljk = phi_ljk / 2``.

    On the grid the third derivatives of the potential are taken as
    ``D_k g_lj``, the first difference of the induced metric.
    """
    if isinstance(hs, PotentialJet):
        return 0.5 * np.einsum("pil,pljk->pijk", np.linalg.inv(hs.phi2), hs.phi3)
    grid = hs.grid
    g = hs.metric.values
    dg = grad(g, grid.dim, grid.h)  # dg[..., k, l, j] = D_k g_lj
    lowered = 0.5 * np.moveaxis(dg, grid.dim, -1)  # [..., l, j, k]
    ginv = inverse_metric(g)
    return Field(grid, np.einsum("...il,...ljk->...ijk", ginv, lowered), rank=3)


def lower_gamma(gamma: Field, g: MetricField) -> np.ndarray:
    """``gamma_ijk = g_il gamma^l_jk``."""
    return np.einsum("...il,...ljk->...ijk", g.values, gamma.values)


def hessian_curvature(hs) -> Field | np.ndarray:
    """Hessian curvature ``Q_ijkl = phi_ijkl / 2 - g^{pq} phi_ikp phi_jlq / 2``.

    Computed exactly as written, with no pair-exchange symmetry assumed.  On
    the grid the potential's derivatives come from the 3-point second
    difference composed with itself (fourth order) or with a central first
    difference (third order).
    """
    if isinstance(hs, PotentialJet):
        ginv = np.linalg.inv(hs.phi2)
        cubic = np.einsum("pab,pika,pjlb->pijkl", ginv, hs.phi3, hs.phi3)
        return 0.5 * hs.phi4 - 0.5 * cubic
    grid = hs.grid
    n, h = grid.dim, grid.h
    p2 = hessian_compact(hs.phi.values, n, h)  # [..., k, l]
    p4 = hessian_compact(p2, n, h)  # [..., i, j, k, l]
    p3 = grad(p2, n, h)  # [..., i, k, p] = D_i phi_kp
    ginv = inverse_metric(hs.metric.values)
    cubic = np.einsum("...pq,...ikp,...jlq->...ijkl", ginv, p3, p3)
    return Field(grid, 0.5 * p4 - 0.5 * cubic, rank=4)


def riemann_from_Q(Q):
    """``R_ijkl = (Q_ijkl - Q_jikl) / 2``; accepts a Field or a bare array."""
    if isinstance(Q, Field):
        v = Q.values
        return Field(Q.grid, 0.5 * (v - np.swapaxes(v, -4, -3)), rank=4)
    Q = np.asarray(Q)
    return 0.5 * (Q - np.swapaxes(Q, -4, -3))


def t_tensor(g) -> Field | np.ndarray:
    """``T^k_jl = D_j g_kl - D_l g_kj``, indexed ``[..., k, j, l]``.

    Vanishes for Hessian metrics; antisymmetric in ``(j, l)`` exactly.
    """
    if isinstance(g, PotentialJet):
        dg = np.moveaxis(g.phi3, -1, -3)  # [p, m, a, b] = d_m g_ab
        return np.einsum("pjkl->pkjl", dg) - np.einsum("plkj->pkjl", dg)
    grid = g.grid
    dg = grad(g.values, grid.dim, grid.h)  # [..., m, a, b]
    t = np.einsum("...jkl->...kjl", dg) - np.einsum("...lkj->...kjl", dg)
    return Field(grid, t, rank=3)


def min_eigen_gap(g, h) -> float:
    """Smallest eigenvalue of ``g - h`` over all nodes (``>= 0`` iff ``g >= h``)."""
    gv = g.values if isinstance(g, Field) else np.asarray(g, dtype=float)
    hv = h.values if isinstance(h, Field) else np.asarray(h, dtype=float)
    diff = np.broadcast_to(gv - hv, np.broadcast_shapes(gv.shape, hv.shape))
    return float(np.min(min_eigenvalue(diff)))
