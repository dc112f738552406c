"""Explicit time integration of the Hesse-Koszul flow.

Two independent code paths integrate the same evolution:

* the tensor scheme advances ``g`` with ``dg/dt = -beta(g)``;
* the scalar scheme advances the potential ``phi`` of the parabolic
  Monge-Ampere equation ``dphi/dt = log det(g0 - t beta(g0) + D D phi) / det g0``
  and rebuilds ``g = g0 - t beta(g0) + D D phi`` after every step.

Both use the classical 4-stage Runge-Kutta method.  The normalized flow
``dg/dt = -beta(g) - g`` uses the tensor path with the extra linear term.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, HKFlowError, NotPositiveDefinite, StepTooLarge
from .geometry import (
    HessianStructure,
    MetricField,
    _logdet,
    beta_tensor,
    min_eigenvalue,
)
from .grid import Field, GridSpec, hessian

log = logging.getLogger(__name__)

# RK4 is stable on the negative real axis up to |z| = 2.785; the composed
# central stencil's symbol is bounded by dim * max|g^-1| / h^2.
RK4_REAL_LIMIT = 2.5

__all__ = [
    "FlowRefs",
    "FlowState",
    "FlowConfig",
    "Snapshot",
    "Trajectory",
    "stable_dt",
    "ma_rhs",
    "step_scalar",
    "step_tensor",
    "normalized_step",
    "potential_from_trajectory",
    "run_flow",
    "check_decomposition",
]


@dataclass(frozen=True)
class FlowRefs:
    """Frozen reference data of the initial metric."""

    g0: MetricField
    beta0: np.ndarray
    logdet0: np.ndarray

    @classmethod
    def from_metric(cls, g0: MetricField) -> "FlowRefs":
        return cls(g0, beta_tensor(g0).values, _logdet(g0.values))

    @property
    def grid(self) -> GridSpec:
        return self.g0.grid

    def g_hat(self, t: float) -> np.ndarray:
        """``g0 - t beta(g0)``."""
        return self.g0.values - t * self.beta0


@dataclass
class FlowState:
    t: float
    phi: np.ndarray
    phi_dot: np.ndarray
    g: MetricField
    refs: FlowRefs

    @classmethod
    def initial(cls, g0) -> "FlowState":
        if isinstance(g0, HessianStructure):
            g0 = g0.metric
        refs = FlowRefs.from_metric(g0)
        zero = np.zeros(g0.grid.shape)
        return cls(0.0, zero, zero.copy(), g0, refs)

    @property
    def grid(self) -> GridSpec:
        return self.g.grid


@dataclass
class FlowConfig:
    """Integration settings.

    ``dt=None`` picks ``c_dt * h^2 / Lambda_max`` from the initial metric.
    ``c_max`` bounds ``dt * Lambda_max / h^2`` for every step and defaults to
    ``2.5 / dim``.
    """

    scheme: str = "tensor"
    t_end: float = 0.01
    dt: float | None = None
    c_dt: float = 0.2
    c_max: float | None = None
    stride: int = 1
    normalized: bool = False

    def __post_init__(self):
        if self.scheme not in ("tensor", "scalar", "both"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.c_dt > 0:
            raise ConfigError("c_dt must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.normalized and self.scheme != "tensor":
            raise ConfigError("the normalized flow is integrated with the tensor scheme only")


# -- step-size control ------------------------------------------------------


def _lambda_max(values: np.ndarray) -> float:
    return float(1.0 / np.min(min_eigenvalue(values)))


def stable_dt(g: MetricField, c: float) -> float:
    """``c * h^2 / Lambda_max`` where ``Lambda_max`` is the largest eigenvalue of ``g^-1``."""
    return c * g.grid.h**2 / _lambda_max(g.values)


def _guard(g: MetricField, dt: float, c_max: float | None):
    if c_max is None:
        c_max = RK4_REAL_LIMIT / g.grid.dim
    bound = stable_dt(g, c_max)
    if dt > bound * (1.0 + 1e-12):
        raise StepTooLarge(f"dt = {dt:.3e} exceeds stability bound {bound:.3e}")


def _rk4(y, rate, dt, t=0.0):
    k1 = rate(y, t)
    k2 = rate(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rate(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rate(y + dt * k3, t + dt)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# -- scalar scheme ----------------------------------------------------------


def _scalar_metric(refs: FlowRefs, phi: np.ndarray, t: float) -> np.ndarray:
    grid = refs.grid
    return refs.g_hat(t) + hessian(phi, grid.dim, grid.h)


def _ma_rate(refs: FlowRefs):
    def rate(phi, t):
        return _logdet(_scalar_metric(refs, phi, t)) - refs.logdet0

    return rate


def ma_rhs(state: FlowState) -> Field:
    """Right-hand side of the scalar equation at ``state``: ``log det g_t / det g0``."""
    return Field(state.grid, _ma_rate(state.refs)(state.phi, state.t), rank=0)


def step_scalar(state: FlowState, dt: float, c_max: float | None = None) -> FlowState:
    """Advance the potential by one RK4 step and rebuild the metric."""
    _guard(state.g, dt, c_max)
    refs = state.refs
    rate = _ma_rate(refs)
    phi = _rk4(state.phi, rate, dt, state.t)
    t = state.t + dt
    g = MetricField(state.grid, _scalar_metric(refs, phi, t), state.g.eps_pos)
    return FlowState(t, phi, rate(phi, t), g, refs)


# -- tensor scheme ----------------------------------------------------------


def _tensor_rate(g0: np.ndarray, grid: GridSpec, normalized: bool):
    def rate(delta, t):
        g = g0 + delta
        rhs = hessian(_logdet(g), grid.dim, grid.h)  # -beta(g)
        if normalized:
            rhs = rhs - g
        return rhs

    return rate


def _tensor_increment(g0: np.ndarray, delta: np.ndarray, grid, dt, normalized=False):
    # The increment is carried apart from g0 so rounding does not accumulate
    # in the metric itself (keeps T(g) at the level of T(g0)).
    return _rk4(delta, _tensor_rate(g0, grid, normalized), dt)


def step_tensor(g: MetricField, dt: float, c_max: float | None = None) -> MetricField:
    """One RK4 step of ``dg/dt = -beta(g)``; symmetry is preserved exactly."""
    _guard(g, dt, c_max)
    delta = _tensor_increment(g.values, np.zeros_like(g.values), g.grid, dt)
    return MetricField(g.grid, g.values + delta, g.eps_pos)


def normalized_step(g: MetricField, dt: float, c_max: float | None = None) -> MetricField:
    """One RK4 step of ``dg/dt = -beta(g) - g``."""
    if dt == 0:
        return g
    _guard(g, dt, c_max)
    delta = _tensor_increment(g.values, np.zeros_like(g.values), g.grid, dt, normalized=True)
    return MetricField(g.grid, g.values + delta, g.eps_pos)


# -- trajectories -----------------------------------------------------------


@dataclass
class Snapshot:
    t: float
    g: np.ndarray
    logdet: np.ndarray
    phi: np.ndarray | None = None
    phi_dot: np.ndarray | None = None


@dataclass
class Trajectory:
    grid: GridSpec
    scheme: str
    refs: FlowRefs
    config: FlowConfig
    dt: float = 0.0
    snapshots: list = field(default_factory=list)
    failure: dict | None = None
    companion: "Trajectory | None" = None
    cross_deviation: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def metric(self, k: int) -> MetricField:
        return MetricField(self.grid, self.snapshots[k].g, self.refs.g0.eps_pos)

    def state(self, k: int) -> FlowState:
        s = self.snapshots[k]
        if s.phi is None:
            raise HKFlowError("snapshot carries no potential; use potential_from_trajectory")
        return FlowState(s.t, s.phi, s.phi_dot, self.metric(k), self.refs)

    def __len__(self):
        return len(self.snapshots)


def potential_from_trajectory(traj: Trajectory) -> list[np.ndarray]:
    """Recover ``phi(t_k) = int_0^t_k log(det g / det g0) ds`` by the trapezoid rule."""
    out = []
    acc = np.zeros(traj.grid.shape)
    prev = None
    for snap in traj.snapshots:
        rate = snap.logdet - traj.refs.logdet0
        if prev is not None:
            acc = acc + 0.5 * (snap.t - prev[0]) * (rate + prev[1])
        out.append(acc.copy())
        prev = (snap.t, rate)
    return out


def _step_plan(cfg: FlowConfig, g0: MetricField) -> tuple[float, int]:
    dt = cfg.dt if cfg.dt is not None else stable_dt(g0, cfg.c_dt)
    _guard(g0, dt, cfg.c_max)
    n = max(1, math.ceil(cfg.t_end / dt - 1e-9))
    return cfg.t_end / n, n


def run_flow(initial, cfg: FlowConfig) -> Trajectory:
    """Integrate from ``initial`` (HessianStructure or MetricField) to ``cfg.t_end``.

    Snapshots are taken at ``t = 0``, every ``cfg.stride`` steps and at the
    final step.  A step error ends the run; the partial trajectory is returned
    with ``failure`` describing the error and its time.
    """
    state = FlowState.initial(initial)
    refs = state.refs
    grid = state.grid
    traj = Trajectory(grid, cfg.scheme, refs, cfg)
    use_scalar = cfg.scheme in ("scalar", "both")
    use_tensor = cfg.scheme == "tensor"
    if cfg.scheme == "both":
        traj.scheme = "scalar"
        traj.companion = Trajectory(grid, "tensor", refs, cfg)

    def record_scalar(st: FlowState):
        traj.snapshots.append(
            Snapshot(st.t, st.g.values, refs.logdet0 + st.phi_dot, st.phi, st.phi_dot)
        )

    def record_tensor(target: Trajectory, t, g):
        L = _logdet(g)
        target.snapshots.append(Snapshot(t, g, L, None, L - refs.logdet0))

    g0v = refs.g0.values
    delta = np.zeros_like(g0v)
    if use_scalar:
        record_scalar(state)
    if use_tensor:
        record_tensor(traj, 0.0, g0v)
    if traj.companion is not None:
        record_tensor(traj.companion, 0.0, g0v)
        traj.cross_deviation.append(0.0)

    t = 0.0
    try:
        dt, n = _step_plan(cfg, refs.g0)
        traj.dt = dt
        if traj.companion is not None:
            traj.companion.dt = dt
        g_tensor = refs.g0
        for k in range(1, n + 1):
            if use_scalar:
                state = step_scalar(state, dt, cfg.c_max)
            if use_tensor or traj.companion is not None:
                _guard(g_tensor, dt, cfg.c_max)
                delta = _tensor_increment(g0v, delta, grid, dt, cfg.normalized)
                g_tensor = MetricField(grid, g0v + delta, refs.g0.eps_pos)
            t = k * dt
            if k % cfg.stride == 0 or k == n:
                if use_scalar:
                    record_scalar(replace(state, t=t))
                if use_tensor:
                    record_tensor(traj, t, g_tensor.values)
                if traj.companion is not None:
                    record_tensor(traj.companion, t, g_tensor.values)
                    traj.cross_deviation.append(
                        float(np.max(np.abs(state.g.values - g_tensor.values)))
                    )
    except (StepTooLarge, NotPositiveDefinite) as exc:
        traj.failure = {"time": t, "error": type(exc).__name__, "message": str(exc)}
        log.warning("flow aborted at t=%.6g: %s", t, exc)
    return traj


def check_decomposition(traj: Trajectory) -> float:
    """Max over snapshots of ``|g - (g0 - t beta(g0) + D D phi)|`` for scalar trajectories."""
    worst = 0.0
    for s in traj.snapshots:
        if s.phi is None:
            raise HKFlowError("decomposition needs a potential")
        rebuilt = _scalar_metric(traj.refs, s.phi, s.t)
        worst = max(worst, float(np.max(np.abs(s.g - rebuilt))))
    return worst

