"""Run configuration, orchestration, refinement studies and plot export.

A run directory contains::

    manifest.json       config, config hash, status, sha256 of every file
    trajectory.json     times, scheme, dt, failure record, cross-scheme deviations
    fields/g_0000.bin   metric per snapshot (binary field format)
    fields/phi_0000.bin potential per snapshot (scalar scheme only)
    diagnostics.csv     one row per snapshot
    diagnostics.json    same records plus tangent-lift and decay-rate data
    gate.json           barrier-time gate (when enabled)
    cutoff.csv          tabulated cutoff profile (when the gate is enabled)
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .errors import ConfigError, MissingRun
from .fixtures import get_fixture, load_oracles
from .flow import FlowConfig, check_decomposition, run_flow
from .gate import build_cutoff, cutoff_property_check, sb_estimate
from .geometry import (
    HessianStructure,
    MetricField,
    _logdet,
    beta_tensor,
    christoffel_gamma,
    hessian_curvature,
    koszul_forms,
    log_det_field,
    min_eigen_gap,
    riemann_from_Q,
    t_tensor,
)
from .grid import Field, read_binary, write_binary
from .tangent_lift import bisectional_sign_scan, kahler_curvature, kahler_ricci, lift_metric

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULTS = {
    "version": SCHEMA_VERSION,
    "fixture": "F3",
    "grid": {"N": 64},
    "flow": {
        "scheme": "tensor",
        "t_end": 0.01,
        "dt": None,
        "c_dt": 0.2,
        "c_max": None,
        "stride": 1,
        "normalized": False,
    },
    "diagnostics": {
        "enabled": True,
        "probes": None,
        "n_probes": 3,
        "seed": 0,
        "S1": None,
        "tol_mp": 1e-6,
        "tol_cross": 1e-5,
        "frames": 32,
    },
    "gate": {"enabled": False, "theta": 0.5, "kappa_cut": 0.1, "u": "zero"},
    "output": "hkflow-run",
}

__all__ = [
    "SCHEMA_VERSION",
    "RunConfig",
    "RunResult",
    "run",
    "run_gate",
    "refine_study",
    "export_plots",
    "sha256_file",
]


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    """Validated run configuration (a single versioned JSON document)."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        version = doc.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        cfg = cls(_merge(DEFAULTS, doc))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def override(self, **changes) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"flow.dt": 1e-4}``."""
        doc = copy.deepcopy(self.data)
        for dotted, val in changes.items():
            if val is None:
                continue
            node = doc
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node[leaf] = val
        return RunConfig.from_dict(doc)

    def validate(self):
        d = self.data
        fx = d["fixture"]
        if not (isinstance(fx, str) and (fx in ("F1", "F2", "F3", "F4", "F5") or Path(fx).is_file())):
            raise ConfigError(f"fixture {fx!r} is neither a built-in id nor a field file")
        N = d["grid"]["N"]
        if not isinstance(N, int) or N < 16 or N & (N - 1):
            raise ConfigError(f"grid.N must be a power of two >= 16, got {N!r}")
        self.flow_config()
        dg = d["diagnostics"]
        for key in ("tol_mp", "tol_cross"):
            if not (isinstance(dg[key], (int, float)) and dg[key] > 0):
                raise ConfigError(f"diagnostics.{key} must be positive")
        if not isinstance(dg["seed"], int):
            raise ConfigError("diagnostics.seed must be an integer")
        gt = d["gate"]
        if not 0 < gt["theta"] < 1:
            raise ConfigError("gate.theta must lie in (0, 1)")
        if not 0 < gt["kappa_cut"] < 0.125:
            raise ConfigError("gate.kappa_cut must lie in (0, 1/8)")
        _parse_u(gt["u"])

    def flow_config(self) -> FlowConfig:
        return FlowConfig(**self.data["flow"])

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        """Digest of everything that affects results (the output path does not)."""
        doc = {k: v for k, v in self.data.items() if k != "output"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _parse_u(desc):
    """``"zero"`` or ``"logdet:<c>"`` (``u = -c log det g0``)."""
    if desc == "zero":
        return ("zero", 0.0)
    if isinstance(desc, str) and desc.startswith("logdet:"):
        try:
            return ("logdet", float(desc.split(":", 1)[1]))
        except ValueError:
            pass
    raise ConfigError(f"gate.u must be 'zero' or 'logdet:<c>', got {desc!r}")


def _build_initial(cfg: RunConfig):
    fx = cfg.data["fixture"]
    N = cfg.data["grid"]["N"]
    if fx in ("F1", "F2", "F3", "F4", "F5"):
        fixture = get_fixture(fx)
        if fixture.kind == "analytic":
            raise ConfigError(f"{fx} exists only in analytic sampling mode and cannot be integrated")
        if fixture.kind == "hessian":
            return fixture.structure(N)
        return fixture.metric(N)
    f = read_binary(fx)
    if f.rank != 2:
        raise ConfigError(f"{fx} holds a rank-{f.rank} field, expected a metric")
    return MetricField(f.grid, f.values)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunResult:
    status: int
    outdir: Path
    failed: list
    manifest: dict


def _gate_u(desc, g0: MetricField):
    kind, c = _parse_u(desc)
    return None if kind == "zero" else -c * _logdet(g0.values)


def _tangent_lift_summary(hs: HessianStructure, g: MetricField, frames: int, seed: int, probes):
    lift = lift_metric(g)
    ric = kahler_ricci(lift).values
    beta = beta_tensor(g).values
    scale = max(float(np.max(np.abs(beta))), 1e-300)
    _, defect = kahler_curvature(lift, hs)
    Q = hessian_curvature(hs)
    return {
        "ricci_vs_beta_rel": float(np.max(np.abs(ric - 0.25 * beta)) / scale),
        "curvature_defect": defect,
        "bisectional_min": bisectional_sign_scan(Q, g, frames=frames, seed=seed, probes=probes),
        "frames": frames,
        "seed": seed,
    }


def run(cfg: RunConfig, outdir=None) -> RunResult:
    """Execute flow, diagnostics and (optionally) the gate; write the run directory.

    Returns a RunResult whose ``status`` is 0 iff every enabled assertion holds.
    Assertion failures are listed by invariant name in ``failed``.
    """
    d = cfg.data
    out = Path(outdir or d["output"])
    (out / "fields").mkdir(parents=True, exist_ok=True)
    initial = _build_initial(cfg)
    fcfg = cfg.flow_config()
    traj = run_flow(initial, fcfg)
    is_hessian = isinstance(initial, HessianStructure)
    failed = []
    summary = {}

    if traj.failure is not None:
        failed.append(traj.failure["error"])

    for k, snap in enumerate(traj.snapshots):
        write_binary(traj.metric(k), out / "fields" / f"g_{k:04d}.bin")
        if snap.phi is not None:
            write_binary(Field(traj.grid, snap.phi, rank=0), out / "fields" / f"phi_{k:04d}.bin")

    if traj.cross_deviation:
        summary["cross_deviation_max"] = max(traj.cross_deviation)
        if summary["cross_deviation_max"] > d["diagnostics"]["tol_cross"]:
            failed.append("cross-scheme")
    if fcfg.scheme in ("scalar", "both") and len(traj):
        summary["decomposition_max"] = check_decomposition(traj)
        if summary["decomposition_max"] > 1e-10:
            failed.append("decomposition")

    traj_doc = {
        "times": [float(t) for t in traj.times],
        "scheme": fcfg.scheme,
        "normalized": fcfg.normalized,
        "dt": traj.dt,
        "config_hash": cfg.hash(),
        "failure": traj.failure,
        "cross_deviation": [float(x) for x in traj.cross_deviation],
    }
    _write_json(out / "trajectory.json", traj_doc)

    gate_res = None
    if d["gate"]["enabled"]:
        g0 = traj.refs.g0
        gate_res = sb_estimate(g0, _gate_u(d["gate"]["u"], g0), d["gate"]["theta"],
                               u_descriptor=d["gate"]["u"])
        gate_res.write(out / "gate.json")
        prof = build_cutoff(d["gate"]["kappa_cut"])
        prof.to_csv(out / "cutoff.csv")
        summary["S_max"] = "unbounded" if gate_res.unbounded else gate_res.S_max

    dg = d["diagnostics"]
    if dg["enabled"] and len(traj):
        probes = dg["probes"]
        if probes is None:
            probes = diag.default_probes(traj.grid, dg["n_probes"], dg["seed"])
        probes = [tuple(int(i) for i in p) for p in probes]
        if fcfg.normalized:
            report = _normalized_report(traj, probes)
        else:
            S = math.inf
            if gate_res is not None and not gate_res.unbounded:
                S = gate_res.S_max
            report = diag.build_report(traj, probes, S1=dg["S1"], S=S, tol_mp=dg["tol_mp"])
            if is_hessian and max(report.column("sup_psi")) > dg["tol_mp"]:
                failed.append("max-principle")
        report.tolerances.update(tol_cross=dg["tol_cross"])
        if is_hessian:
            report.extra["tangent_lift"] = _tangent_lift_summary(
                initial, traj.refs.g0, dg["frames"], dg["seed"], probes
            )
            T = [float(np.max(np.abs(t_tensor(traj.metric(k)).values))) for k in range(len(traj))]
            summary["hessian_T_max"] = max(T)
            if max(T) > 3.0 * T[0] + 1e-12:
                failed.append("hessian-preservation")
        if not all(np.all(np.isfinite(np.asarray(r, dtype=float))) for r in report.rows):
            failed.append("finite-report")
        report.to_csv(out / "diagnostics.csv")
        report.to_json(out / "diagnostics.json")

    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config": d,
        "config_hash": cfg.hash(),
        "status": 1 if failed else 0,
        "failed_invariants": failed,
        "summary": summary,
        "files": {str(p.relative_to(out)): sha256_file(p) for p in files},
    }
    _write_json(out / "manifest.json", manifest)
    return RunResult(1 if failed else 0, out, failed, manifest)


def _normalized_report(traj, probes) -> diag.DiagnosticsReport:
    n = traj.grid.dim
    tdev = diag.t_conservation(traj)
    columns = ["t", "t_dev", "min_eig_g", "min_eig_beta"]
    columns += [f"lam{p}_{i}" for p in range(len(probes)) for i in range(n)]
    rows = []
    for k, snap in enumerate(traj.snapshots):
        g = traj.metric(k)
        beta = beta_tensor(g).values
        row = [snap.t, float(tdev[k]), min_eigen_gap(g, 0.0), min_eigen_gap(beta, 0.0)]
        for p in probes:
            row += [float(x) for x in diag.beta_eigenvalues(g, p, beta)]
        rows.append(row)
    rates = {}
    for i, p in enumerate(probes):
        v = np.zeros(n)
        v[0] = 1.0
        dr = diag.decay_rate(traj, v, p)
        rates[str(i)] = {"node": list(p), "last": dr.last, "limit": dr.limit,
                         "series": [float(x) for x in dr.series]}
    return diag.DiagnosticsReport(columns, rows, probes, {}, {"decay_rate": rates})


def _write_json(path, doc):
    text = json.dumps(diag._finite(doc), indent=2, sort_keys=True, default=diag._json_default)
    Path(path).write_text(text + "\n")


# -- gate subcommand --------------------------------------------------------


def run_gate(cfg: RunConfig, outdir=None) -> RunResult:
    """Barrier-time gate and cutoff checks without a flow run."""
    d = cfg.data
    out = Path(outdir or d["output"])
    out.mkdir(parents=True, exist_ok=True)
    initial = _build_initial(cfg)
    g0 = initial.metric if isinstance(initial, HessianStructure) else initial
    gt = d["gate"]
    res = sb_estimate(g0, _gate_u(gt["u"], g0), gt["theta"], u_descriptor=gt["u"])
    res.write(out / "gate.json")
    prof = build_cutoff(gt["kappa_cut"])
    prof.to_csv(out / "cutoff.csv")
    check = cutoff_property_check(prof)
    _write_json(out / "cutoff_check.json", check)
    failed = []
    if check["F_support_max"] > 1e-12:
        failed.append("cutoff-support")
    if check["F_prime_min"] < -1e-12 or not check["F_monotone"]:
        failed.append("cutoff-sign")
    if not (check["psi_prime_min"] >= 0 and check["psi_prime_max"] <= check["psi_prime_bound"] + 1e-8):
        failed.append("cutoff-ramp")
    if not res.unbounded and not res.infeasible_at_zero:
        if np.min(res.margin) < 0:
            failed.append("gate-bracket")
    files = sorted(p for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config": d,
        "config_hash": cfg.hash(),
        "status": 1 if failed else 0,
        "failed_invariants": failed,
        "summary": {"S_max": "unbounded" if res.unbounded else res.S_max},
        "files": {p.name: sha256_file(p) for p in files},
    }
    _write_json(out / "manifest.json", manifest)
    return RunResult(1 if failed else 0, out, failed, manifest)


# -- refinement study -------------------------------------------------------

ORDER_WINDOW = (1.9, 2.1)
SPATIAL_COLUMNS = ("beta", "kappa", "Q", "defect")


def _level_errors(fid: str, N: int, oracle: dict) -> dict:
    fixture = get_fixture(fid)
    if fixture.kind == "analytic":
        raise ConfigError(f"{fid} has no grid discretization to refine")
    if fixture.kind == "hessian":
        hs = fixture.structure(N)
        g = hs.metric
    else:
        hs, g = None, fixture.metric(N)
    computed = {"g": g.values, "logdet": log_det_field(g).values, "beta": beta_tensor(g).values,
                "T": t_tensor(g).values}
    alpha, kappa = koszul_forms(g)
    computed.update(alpha=alpha.values, kappa=kappa.values)
    if hs is not None:
        Q = hessian_curvature(hs)
        computed.update(gamma=christoffel_gamma(hs).values, Q=Q.values, R=riemann_from_Q(Q).values)
    errs = {}
    for key, quantities in oracle.items():
        node = g.grid.node(*(float(x) for x in key.split(",")))
        for name, comps in quantities.items():
            if name not in computed:
                continue
            for idx, value in comps.items():
                err = abs(float(computed[name][node + tuple(int(c) for c in idx)]) - value)
                errs[name] = max(errs.get(name, 0.0), err)
    if hs is not None:
        errs["defect"] = kahler_curvature(lift_metric(g), hs)[1]
    return errs


def refine_study(cfg: RunConfig, levels: int = 3, floor: float = 1e-11) -> dict:
    """Observed spatial convergence orders against the shipped oracle values.

    Runs the geometry at ``N, 2N, ...`` (``levels`` grids) and reports, per
    quantity, the error at each level and ``log2(e_k / e_{k+1})``.  Errors
    at the rounding floor are reported as ``"exact"``.
    """
    if levels < 2:
        raise ConfigError("refine-study needs at least 2 levels")
    fid = cfg.data["fixture"]
    oracles = load_oracles()
    if fid not in oracles:
        raise ConfigError(f"no oracle values for fixture {fid!r}")
    N0 = cfg.data["grid"]["N"]
    Ns = [N0 * 2**k for k in range(levels)]
    per_level = [_level_errors(fid, N, oracles[fid]) for N in Ns]
    table = {}
    for name in per_level[0]:
        e = [lvl[name] for lvl in per_level]
        orders = []
        for a, b in zip(e[:-1], e[1:]):
            orders.append("exact" if max(a, b) <= floor else float(math.log2(a / b)) if b > 0 else "exact")
        table[name] = {"errors": e, "orders": orders}
    failed = []
    for name in SPATIAL_COLUMNS:
        if name not in table:
            continue
        for o in table[name]["orders"]:
            if o != "exact" and not ORDER_WINDOW[0] <= o <= ORDER_WINDOW[1]:
                failed.append(f"order:{name}")
                break
    return {"fixture": fid, "N": Ns, "window": list(ORDER_WINDOW), "table": table, "failed": failed}


# -- plot export ------------------------------------------------------------


def export_plots(run_dir, path=None) -> Path:
    """Long-format ``(t, quantity, value, probe)`` CSV from a finished run."""
    run_dir = Path(run_dir)
    src = run_dir / "diagnostics.json"
    if not src.is_file():
        raise MissingRun(f"{run_dir} holds no completed run (diagnostics.json missing)")
    doc = json.loads(src.read_text())
    probes = doc["probes"]
    path = Path(path) if path else run_dir / "plots.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "quantity", "value", "probe"])
        for rec in doc["records"]:
            t = rec["t"]
            for col in doc["columns"]:
                if col == "t":
                    continue
                probe = ""
                qty = col
                if col.startswith("lam") and "_" in col:
                    p, i = col[3:].split("_")
                    probe = "-".join(str(x) for x in probes[int(p)])
                    qty = f"lambda_{int(i) + 1}"
                w.writerow([repr(float(t)), qty, repr(float(rec[col])), probe])
    return path
