"""Barrier-time gate, cutoff profile and conformal exhaustion.

The gate asks for the largest ``S`` such that

    g0 - S beta(g0) + D D u >= theta g0

at every node for a given bounded ``u``.  The feasible set in ``S`` is an
interval containing 0 (the condition is affine in ``S`` and the cone is
convex), so bisection brackets its right end.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from .errors import BadParameter
from .geometry import MetricField, beta_tensor, min_eigenvalue
from .grid import Field, grad, hessian

S_CAP = 1e6
BISECT_TOL = 1e-4

__all__ = [
    "CutoffProfile",
    "build_cutoff",
    "cutoff_property_check",
    "GateResult",
    "sb_estimate",
    "conformal_exhaust",
]


# -- cutoff profile ---------------------------------------------------------


def _smoothstep(u):
    """``r(u) = e^{-1/u} / (e^{-1/u} + e^{-1/(1-u)})`` and its derivative, clipped to [0, 1]."""
    u = np.asarray(u, dtype=float)
    r = np.zeros_like(u)
    dr = np.zeros_like(u)
    r[u >= 1] = 1.0
    m = (u > 0) & (u < 1)
    um = u[m]
    # r = expit(-z) with z = 1/u - 1/(1-u); dr = r (1 - r) dz/du
    z = 1.0 / um - 1.0 / (1.0 - um)
    r[m] = expit(-z)
    dr[m] = expit(-z) * expit(z) * (1.0 / um**2 + 1.0 / (1.0 - um) ** 2)
    return r, dr


@dataclass
class CutoffProfile:
    """The triple ``(f, psi, F)`` for one ``kappa``.

    ``f`` blows up at ``s = 1``; ``psi`` ramps from 0 to 1 on ``[a, b]``
    with ``a = 1 - kappa + kappa^2`` and ``b = 1 - kappa + 2 kappa^2``;
    ``F(s) = int_0^s psi f'``.  Evaluators are vectorized; ``mesh`` and the
    tabulated columns cover ``[0, 1)``.
    """

    kappa: float
    mesh: np.ndarray = field(repr=False)
    table: dict = field(repr=False)

    @property
    def a(self) -> float:
        return 1.0 - self.kappa + self.kappa**2

    @property
    def b(self) -> float:
        return 1.0 - self.kappa + 2.0 * self.kappa**2

    def _w(self, s):
        return (np.asarray(s, dtype=float) - 1.0 + self.kappa) / self.kappa

    def f(self, s):
        w = np.clip(self._w(s), 0.0, None)
        return -np.log1p(-(w**2))

    def fprime(self, s):
        w = np.clip(self._w(s), 0.0, None)
        return 2.0 * w / (self.kappa * (1.0 - w**2))

    def psi(self, s):
        return _smoothstep((np.asarray(s, dtype=float) - self.a) / (self.b - self.a))[0]

    def psiprime(self, s):
        return _smoothstep((np.asarray(s, dtype=float) - self.a) / (self.b - self.a))[1] / (
            self.b - self.a
        )

    def _integrand(self, x: float) -> float:
        # scalar psi * f' on the open ramp, for quad
        u = (x - self.a) / (self.b - self.a)
        if u <= 0.0:
            return 0.0
        w = (x - 1.0 + self.kappa) / self.kappa
        fp = 2.0 * w / (self.kappa * (1.0 - w * w))
        if u >= 1.0:
            return fp
        z = 1.0 / u - 1.0 / (1.0 - u)
        psi = 1.0 / (1.0 + math.exp(z)) if z < 700 else 0.0
        return psi * fp

    def _ramp_integral(self, s, start=None, base=0.0):
        val, _ = quad(self._integrand, self.a if start is None else start, s,
                      epsabs=1e-13, epsrel=1e-12, limit=200)
        return base + val

    def F(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s >= 1.0):
            raise BadParameter("F is defined on [0, 1) only")
        out = np.zeros_like(s)
        Fb = self.table["F_b"]
        ramp = (s > self.a) & (s < self.b)
        if np.any(ramp):
            # cumulative quadrature over the sorted ramp points
            pts, inv = np.unique(s[ramp], return_inverse=True)
            vals = np.empty_like(pts)
            acc, prev = 0.0, self.a
            for i, x in enumerate(pts):
                acc = self._ramp_integral(x, prev, acc)
                vals[i], prev = acc, x
            out[ramp] = vals[inv]
        tail = s >= self.b
        out[tail] = Fb + self.f(s[tail]) - self.f(self.b)
        return out

    def Fprime(self, s):
        return self.psi(s) * self.fprime(s)

    def to_csv(self, path) -> None:
        cols = ("s", "f", "psi", "F")
        data = np.column_stack([self.mesh] + [self.table[c] for c in cols[1:]])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def build_cutoff(kappa: float, points: int = 4097) -> CutoffProfile:
    """Tabulate the cutoff triple on ``points`` mesh nodes of ``[0, 1)``.

    Raises BadParameter unless ``0 < kappa < 1/8``.
    """
    if not 0.0 < kappa < 0.125:
        raise BadParameter(f"kappa must lie in (0, 1/8), got {kappa}")
    mesh = np.linspace(0.0, 1.0, points)[:-1]
    prof = CutoffProfile(kappa, mesh, {})
    prof.table["F_b"] = prof._ramp_integral(prof.b)
    prof.table.update(f=prof.f(mesh), psi=prof.psi(mesh), F=prof.F(mesh))
    return prof


def cutoff_property_check(profile: CutoffProfile, k_max: int = 3, points: int = 20001) -> dict:
    """Support, sign and growth checks on a fine mesh.

    Returns a dict with

    ``F_support_max``   max |F| on ``[0, a]``
    ``F_prime_min``     min F' over the mesh
    ``psi_prime_max``   max psi' (ramp bound is ``2 / kappa^2``)
    ``growth``          ``{k: sup |exp(-k F) F^(k)|}`` for ``k <= k_max``
    ``c2``, ``c3``      achieved constants of the two-sided step condition
    """
    if not 1 <= k_max <= 3:
        raise BadParameter("k_max must be 1, 2 or 3")
    kap = profile.kappa
    s = np.linspace(0.0, 1.0 - 1e-3 * kap, points)
    F = profile.F(s)
    Fp = profile.Fprime(s)
    psi = profile.psi(s)
    derivs = {1: Fp}
    for k in range(2, k_max + 1):
        derivs[k] = np.gradient(derivs[k - 1], s, edge_order=2)
    growth = {k: float(np.max(np.abs(np.exp(-k * F) * derivs[k]))) for k in derivs}

    support = s <= profile.a
    one = s > profile.b
    c2, c3 = _step_constants(profile)
    return {
        "kappa": kap,
        "F_support_max": float(np.max(np.abs(F[support]))),
        "F_prime_min": float(np.min(Fp)),
        "F_monotone": bool(np.all(np.diff(F) >= -1e-12)),
        "f_support_max": float(np.max(np.abs(profile.f(s[s <= 1 - kap])))),
        "f_increasing": bool(np.all(np.diff(profile.f(s[s > 1 - kap])) > 0)),
        "psi_range": (float(psi.min()), float(psi.max())),
        "psi_zero_max": float(np.max(np.abs(psi[support]))),
        "psi_one_dev": float(np.max(np.abs(psi[one] - 1.0))) if np.any(one) else 0.0,
        "psi_prime_min": float(np.min(profile.psiprime(s))),
        "psi_prime_max": float(np.max(profile.psiprime(s))),
        "psi_prime_bound": 2.0 / kap**2,
        "growth": growth,
        "c2": c2,
        "c3": c3,
    }


def _step_constants(profile: CutoffProfile, samples: int = 64, c2_target: float = 1.0):
    """For sampled ``s`` in ``(1 - 2 kappa, 1)`` pick the widest ``tau`` with
    ``exp(F(s + tau) - F(s - tau)) <= 1 + c2_target kappa`` and report the
    worst ``c3 = tau exp(F(s - tau)) / kappa^2`` together with the largest
    achieved ``c2``."""
    kap = profile.kappa
    ss = np.linspace(1 - 2 * kap, 1, samples + 2)[1:-1]
    c2_seen, c3_worst = 0.0, math.inf
    for s in ss:
        room = min(s, 1.0 - s)
        taus = room * np.geomspace(1e-6, 0.999, 200)
        ratio = np.exp(profile.F(s + taus) - profile.F(s - taus))
        ok = ratio <= 1.0 + c2_target * kap
        if not np.any(ok):
            continue
        tau = taus[ok][-1]
        c2_seen = max(c2_seen, float((ratio[ok][-1] - 1.0) / kap))
        c3_worst = min(c3_worst, float(tau * np.exp(profile.F(s - tau)) / kap**2))
    return c2_seen, c3_worst


# -- barrier-time gate ------------------------------------------------------


@dataclass
class GateResult:
    S_max: float
    unbounded: bool
    theta: float
    margin: np.ndarray = field(repr=False)
    trace: list = field(default_factory=list, repr=False)
    infeasible_at_zero: bool = False
    u_descriptor: str = "zero"

    def to_dict(self) -> dict:
        return {
            "S_max": "unbounded" if self.unbounded else self.S_max,
            "theta": self.theta,
            "u": self.u_descriptor,
            "infeasible_at_zero": self.infeasible_at_zero,
            "margin": {
                "min": float(np.min(self.margin)),
                "max": float(np.max(self.margin)),
                "mean": float(np.mean(self.margin)),
            },
            "bisection": [[float(S), float(m)] for S, m in self.trace],
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def sb_estimate(g0: MetricField, u=None, theta: float = 0.5, tol: float = BISECT_TOL,
                cap: float = S_CAP, u_descriptor: str | None = None) -> GateResult:
    """Largest ``S`` with ``g0 - S beta(g0) + D D u >= theta g0`` for THIS ``u``.

    The result lower-bounds the supremum over all bounded ``u``.  ``u=None``
    means ``u = 0``.  The returned ``S_max`` is feasible and ``S_max + tol``
    is not (unless unbounded, when ``S_max = inf``).
    """
    if not 0.0 < theta < 1.0:
        raise BadParameter(f"theta must lie in (0, 1), got {theta}")
    grid = g0.grid
    base = g0.values.copy()
    if u is not None:
        uv = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
        base = base + hessian(uv, grid.dim, grid.h)
    beta = beta_tensor(g0).values
    base = base - theta * g0.values
    trace = []

    def margin(S):
        return min_eigenvalue(base - S * beta)

    def feasible(S):
        m = float(np.min(margin(S)))
        trace.append((S, m))
        return m >= 0.0

    desc = u_descriptor or ("zero" if u is None else "field")
    if not feasible(0.0):
        return GateResult(0.0, False, theta, margin(0.0), trace, True, desc)
    lo, hi = 0.0, 1.0
    while feasible(hi):
        lo, hi = hi, 2.0 * hi
        if hi > cap:
            return GateResult(math.inf, True, theta, margin(lo), trace, False, desc)
    while hi - lo > 0.5 * tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return GateResult(lo, False, theta, margin(lo), trace, False, desc)


# -- conformal exhaustion ---------------------------------------------------


def _normalized_derivs(values, factor1, factor2, Linv, grid):
    n = grid.dim
    d = grad(values, n, grid.h)
    dd = hessian(values, n, grid.h)
    d_n = np.einsum("...ka,...ib,...jc,...abc->...kij", Linv, Linv, Linv, d)
    dd_n = np.einsum("...ka,...lb,...ic,...jd,...abcd->...klij", Linv, Linv, Linv, Linv, dd)
    d_n = d_n * factor1[(Ellipsis,) + (None,) * 3]
    dd_n = dd_n * factor2[(Ellipsis,) + (None,) * 4]
    return float(np.max(np.abs(d_n))), float(np.max(np.abs(dd_n))), float(np.max(dd_n))


def conformal_exhaust(g0: MetricField, rho, rho0: float, kappa: float, profile=None):
    """``h0 = exp(2 F) g0`` with ``F = F(rho / rho0)``.

    The derivative report is taken in coordinates normalized at each node
    (``g0`` whitened by its Cholesky factor, then rescaled by ``exp(F)``
    so that ``h0`` is the identity there).

    Returns
    -------
    (MetricField, dict)
        ``h0`` and ``{"d1_h", "d2_h", "d2_h_upper", "d1_g", "d2_g",
        "d2_g_upper", "inflation_d1", "inflation_d2"}``.
    """
    profile = profile or build_cutoff(kappa)
    rv = rho.values if isinstance(rho, Field) else np.asarray(rho, dtype=float)
    if np.any(rv < 0):
        raise BadParameter("rho must be nonnegative")
    s = rv / rho0
    if np.max(s) >= 1.0:
        raise BadParameter(f"rho / rho0 reaches {np.max(s):.4g} >= 1")
    F = profile.F(s)
    h0 = MetricField(g0.grid, np.exp(2.0 * F)[..., None, None] * g0.values, g0.eps_pos)
    Linv = np.linalg.inv(np.linalg.cholesky(g0.values))
    ones = np.ones_like(F)
    g1, g2, g2u = _normalized_derivs(g0.values, ones, ones, Linv, g0.grid)
    h1, h2, h2u = _normalized_derivs(h0.values, np.exp(-3.0 * F), np.exp(-4.0 * F), Linv, g0.grid)
    report = {
        "rho0": rho0,
        "d1_h": h1,
        "d2_h": h2,
        "d2_h_upper": h2u,
        "d1_g": g1,
        "d2_g": g2,
        "d2_g_upper": g2u,
        "inflation_d1": h1 - g1,
        "inflation_d2": h2 - g2,
    }
    return h0, report
