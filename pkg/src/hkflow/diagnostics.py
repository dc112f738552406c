"""Run-time monitors for flow trajectories.

Everything here reads finalized snapshots and never mutates them.  The
quantities follow the barrier calculus of the scalar formulation:

    Psi    = t phi_dot - phi - n t
    Lambda = (S1 - t) phi_dot + phi + n t

whose heat-operator images are ``-tr_g g0`` and ``-S1 tr_g beta(g0) + tr_g g0``
with ``L_g = g^{ij} D_i D_j``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .errors import InsufficientSnapshots, ZeroVector
from .flow import FlowState, Trajectory, potential_from_trajectory
from .geometry import (
    MetricField,
    beta_tensor,
    inverse_metric,
    min_eigenvalue,
    t_tensor,
    trace_with,
)
from .grid import Field, GridSpec, grad, hessian

TOL_MP = 1e-6

__all__ = [
    "TOL_MP",
    "psi_lambda",
    "lemma41_residuals",
    "a3_constant",
    "barrier_checks",
    "t_conservation",
    "beta_eigenvalues",
    "DecayRate",
    "decay_rate",
    "default_probes",
    "DiagnosticsReport",
    "build_report",
]


def psi_lambda(state: FlowState, S1: float) -> tuple[Field, Field]:
    """Barrier fields ``(Psi, Lambda)`` of a state carrying ``phi`` and ``phi_dot``."""
    n, t = state.grid.dim, state.t
    psi = t * state.phi_dot - state.phi - n * t
    lam = (S1 - t) * state.phi_dot + state.phi + n * t
    return Field(state.grid, psi, rank=0), Field(state.grid, lam, rank=0)


def _potentials(traj: Trajectory):
    """``(phi_k, phi_dot_k)`` per snapshot, reconstructing them for tensor runs."""
    if all(s.phi is not None for s in traj.snapshots):
        return [s.phi for s in traj.snapshots], [s.phi_dot for s in traj.snapshots]
    phis = potential_from_trajectory(traj)
    dots = [s.logdet - traj.refs.logdet0 for s in traj.snapshots]
    return phis, dots


def _L_g(ginv, f, grid):
    return trace_with(ginv, hessian(f, grid.dim, grid.h))


def lemma41_residuals(traj: Trajectory, S1: float | None = None) -> np.ndarray:
    """Max-node residuals ``(r_Psi, r_Lambda)`` of the barrier evolution identities.

    Time derivatives are second-order finite differences over the snapshot
    times (centered inside, one-sided at the ends).

    Returns
    -------
    ndarray, shape (len(traj), 2)
    """
    if len(traj) < 3:
        raise InsufficientSnapshots(f"need >= 3 snapshots, got {len(traj)}")
    grid = traj.grid
    n = grid.dim
    S1 = traj.times[-1] if S1 is None else S1
    times = traj.times
    phis, dots = _potentials(traj)
    psi = np.stack([t * d - p - n * t for t, p, d in zip(times, phis, dots)])
    lam = np.stack([(S1 - t) * d + p + n * t for t, p, d in zip(times, phis, dots)])
    dpsi = np.gradient(psi, times, axis=0, edge_order=2)
    dlam = np.gradient(lam, times, axis=0, edge_order=2)
    g0 = traj.refs.g0.values
    beta0 = traj.refs.beta0
    out = np.empty((len(traj), 2))
    for k, snap in enumerate(traj.snapshots):
        ginv = inverse_metric(snap.g)
        tr_g0 = trace_with(ginv, g0)
        r_psi = dpsi[k] - _L_g(ginv, psi[k], grid) + tr_g0
        r_lam = dlam[k] - _L_g(ginv, lam[k], grid) + S1 * trace_with(ginv, beta0) - tr_g0
        out[k] = np.max(np.abs(r_psi)), np.max(np.abs(r_lam))
    return out


def a3_constant(g0: MetricField) -> float:
    """Numerical ``K`` of the local normal-coordinate bounds of ``g0``.

    At each node the coordinates are changed by the Cholesky factor of
    ``g0`` so that the metric becomes the identity; ``K`` is the largest of
    ``|d g|``, ``|d T|`` and the upper bound of ``d d g`` over all nodes.
    """
    grid = g0.grid
    n = grid.dim
    Linv = np.linalg.inv(np.linalg.cholesky(g0.values))
    dg = grad(g0.values, n, grid.h)  # [..., k, i, j]
    ddg = hessian(g0.values, n, grid.h)  # [..., k, l, i, j]
    dT = grad(t_tensor(g0).values, n, grid.h)  # [..., i, k, j, l]
    dg_n = np.einsum("...ka,...ib,...jc,...abc->...kij", Linv, Linv, Linv, dg)
    ddg_n = np.einsum("...ka,...lb,...ic,...jd,...abcd->...klij", Linv, Linv, Linv, Linv, ddg)
    dT_n = np.einsum("...ia,...kb,...jc,...ld,...abcd->...ikjl", Linv, Linv, Linv, Linv, dT)
    return float(max(np.max(np.abs(dg_n)), np.max(np.abs(dT_n)), np.max(ddg_n), 0.0))


def barrier_checks(
    traj: Trajectory,
    K: float | None = None,
    S1: float | None = None,
    S: float = math.inf,
    tol_mp: float = TOL_MP,
) -> list[dict]:
    """Per-snapshot maximum-principle conclusions and trace bound.

    Parameters
    ----------
    K : float, optional
        Derivative bound of ``g0``; measured with :func:`a3_constant` if omitted.
    S1 : float, optional
        Horizon of the run (defaults to its last time).
    S : float
        Barrier time for which ``g0 - S beta(g0) >= theta g0`` holds with
        ``u = 0`` (e.g. from :func:`hkflow.gate.sb_estimate`); ``inf`` when
        unbounded.  The trace bound needs ``S > S1``.
    tol_mp : float
        Slack allowed in the maximum-principle inequalities.

    Notes
    -----
    Uses ``c(n) = n`` and ``c1 = c2 = n``.  ``S2`` is the midpoint of
    ``(S1, S)``; for infinite ``S`` the limit ``S2 = S1``, ``alpha = 1`` is used.  Violations are
    reported through the booleans, never raised.
    """
    grid = traj.grid
    n = grid.dim
    times = traj.times
    S1 = float(times[-1]) if S1 is None else S1
    K = a3_constant(traj.refs.g0) if K is None else K
    phis, dots = _potentials(traj)
    phi_coef = n * math.log1p(n * K * S1) + 1.0

    applicable = S > S1
    if math.isinf(S):
        S2, alpha = S1, 1.0  # limit S2 -> S1 of the finite-S expression
    else:
        S2 = 0.5 * (S1 + S)
        alpha = 1.0 - S2 / S
    m = max(float(np.max(np.abs((S2 - t) * d + p + n * t))) for t, p, d in zip(times, phis, dots))
    c1 = c2 = float(n)
    A = (2 * m + 1) ** 2 * (c1 * K + 1) / alpha
    root = 0.5 * c1 * K + 0.5 * math.sqrt(c1**2 * K**2 + 4 * c2 * K**2 * A * (1 + 2 * m) ** 3)
    # exp(A) overflows for large m or K; the bound is then vacuous
    trace_bound = root * math.exp(A) + n if applicable and A < 700 else math.inf

    g0inv = inverse_metric(traj.refs.g0.values)
    rows = []
    for t, p, d, snap in zip(times, phis, dots, traj.snapshots):
        sup_psi = float(np.max(t * d - p - n * t))
        phi_bound = phi_coef * t
        sup_phi = float(np.max(p))
        upsilon = float(np.max(trace_with(g0inv, snap.g)))
        rows.append(
            {
                "t": float(t),
                "sup_psi": sup_psi,
                "psi_ok": sup_psi <= tol_mp,
                "sup_phi": sup_phi,
                "phi_bound": phi_bound,
                "phi_margin": phi_bound + tol_mp - sup_phi,
                "phi_ok": sup_phi <= phi_bound + tol_mp,
                "sup_upsilon": upsilon,
                "trace_bound": trace_bound,
                "trace_ok": (upsilon <= trace_bound) if applicable else None,
            }
        )
    return rows


def t_conservation(traj: Trajectory) -> np.ndarray:
    """``max |T(g(t)) - T(g0)|`` per snapshot."""
    T0 = t_tensor(traj.refs.g0).values
    return np.array([np.max(np.abs(t_tensor(traj.metric(k)).values - T0)) for k in range(len(traj))])


def beta_eigenvalues(state, probe, beta=None) -> np.ndarray:
    """Eigenvalues of ``beta`` relative to ``g`` at one node, descending.

    ``state`` may be a FlowState or a MetricField; ``beta`` may be passed in
    to avoid recomputing it.
    """
    g = state.g if isinstance(state, FlowState) else state
    b = beta_tensor(g).values if beta is None else np.asarray(beta)
    node = tuple(int(i) for i in probe)
    # eigh with a second matrix whitens by the Cholesky factor of g
    lam = eigh(b[node], g.values[node], eigvals_only=True)
    return lam[::-1]


@dataclass
class DecayRate:
    times: np.ndarray
    series: np.ndarray
    last: float
    limit: float


def decay_rate(traj: Trajectory, v, probe) -> DecayRate:
    """``(1/t) log(|v|_t^2 / |v|_0^2)`` along a normalized-flow trajectory.

    The limit estimate extrapolates ``t r(t)`` linearly through the last two
    samples, which cancels the ``O(1/t)`` transient of the series.
    """
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ZeroVector("decay rate needs a nonzero tangent vector")
    node = tuple(int(i) for i in probe)
    norms = np.array([v @ s.g[node] @ v for s in traj.snapshots])
    times = traj.times
    keep = times > 0
    t = times[keep]
    series = np.log(norms[keep] / norms[0]) / t
    if len(t) >= 2:
        limit = float((t[-1] * series[-1] - t[-2] * series[-2]) / (t[-1] - t[-2]))
    else:
        limit = float(series[-1]) if len(t) else math.nan
    return DecayRate(t, series, float(series[-1]) if len(t) else math.nan, limit)


def default_probes(grid: GridSpec, count: int = 3, seed: int = 0) -> list[tuple]:
    """The grid origin plus ``count`` seeded pseudo-random nodes."""
    rng = np.random.default_rng(seed)
    probes = [(0,) * grid.dim]
    while len(probes) < count + 1:
        p = tuple(int(i) for i in rng.integers(0, grid.N, size=grid.dim))
        if p not in probes:
            probes.append(p)
    return probes


# -- report -----------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    """Per-snapshot diagnostic records with the probes and tolerances used."""

    columns: list
    rows: list
    probes: list
    tolerances: dict
    extra: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# probes: {json.dumps([list(p) for p in self.probes])}\n")
        buf.write(f"# tolerances: {json.dumps(self.tolerances, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(x) for x in r])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "probes": [list(p) for p in self.probes],
            "tolerances": self.tolerances,
            "columns": self.columns,
            "records": [dict(zip(self.columns, r)) for r in self.rows],
            **self.extra,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True, default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _finite(o):
    # JSON has no infinities; unbounded quantities are written as strings
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return "nan" if math.isnan(o) else ("inf" if o > 0 else "-inf")
    return o


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def build_report(
    traj: Trajectory,
    probes=None,
    S1: float | None = None,
    S: float = math.inf,
    K: float | None = None,
    tol_mp: float = TOL_MP,
) -> DiagnosticsReport:
    """Assemble every monitor for an unnormalized trajectory.

    Column order: ``t, sup_psi, sup_lambda, inf_lambda, r_psi, r_lambda,
    t_dev, upsilon, theta, min_eig_g, min_eig_beta, sup_phi, phi_bound``
    followed by ``lam<p>_<i>`` for each probe ``p`` and eigenvalue ``i``.
    The two residual columns are present only with at least three snapshots.
    """
    grid = traj.grid
    n = grid.dim
    probes = default_probes(grid) if probes is None else [tuple(p) for p in probes]
    S1 = float(traj.times[-1]) if S1 is None else S1
    phis, dots = _potentials(traj)
    # residuals need three snapshots; shorter (aborted) runs omit the columns
    resid = lemma41_residuals(traj, S1) if len(traj) >= 3 else None
    bars = barrier_checks(traj, K=K, S1=S1, S=S, tol_mp=tol_mp)
    tdev = t_conservation(traj)
    g0 = traj.refs.g0.values
    columns = [
        "t", "sup_psi", "sup_lambda", "inf_lambda", "r_psi", "r_lambda", "t_dev",
        "upsilon", "theta", "min_eig_g", "min_eig_beta", "sup_phi", "phi_bound",
    ]
    if resid is None:
        columns = [c for c in columns if c not in ("r_psi", "r_lambda")]
    columns += [f"lam{p}_{i}" for p in range(len(probes)) for i in range(n)]

    rows = []
    for k, snap in enumerate(traj.snapshots):
        t = snap.t
        g = traj.metric(k)
        beta = beta_tensor(g).values
        lam = (S1 - t) * dots[k] + phis[k] + n * t
        ginv = inverse_metric(snap.g)
        row = [
            t,
            bars[k]["sup_psi"],
            float(np.max(lam)),
            float(np.min(lam)),
            *([] if resid is None else [float(resid[k, 0]), float(resid[k, 1])]),
            float(tdev[k]),
            bars[k]["sup_upsilon"],
            float(np.max(trace_with(ginv, g0))),
            float(np.min(min_eigenvalue(snap.g))),
            float(np.min(min_eigenvalue(beta))),
            bars[k]["sup_phi"],
            bars[k]["phi_bound"],
        ]
        for p in probes:
            row += [float(x) for x in beta_eigenvalues(g, p, beta)]
        rows.append(row)
    tolerances = {"tol_mp": tol_mp}
    extra = {"barrier": {"trace_bound": bars[0]["trace_bound"], "S1": S1, "S": S}}
    return DiagnosticsReport(columns, rows, probes, tolerances, extra)
