"""Acceptance suite: one test group per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion.  Expected values marked DERIVED come from the
sympy oracle in tests/assets, never from the package.
"""
import math
import time

import numpy as np
import pytest

from hkflow import diagnostics as D
from hkflow.fixtures import get_fixture
from hkflow.flow import FlowConfig, potential_from_trajectory, run_flow
from hkflow.gate import build_cutoff, cutoff_property_check, sb_estimate
from hkflow.geometry import (
    beta_tensor,
    christoffel_gamma,
    hessian_curvature,
    koszul_forms,
    lower_gamma,
    riemann_from_Q,
    t_tensor,
)
from hkflow.harness import RunConfig, run
from hkflow.tangent_lift import kahler_curvature, kahler_ricci, lift_metric

TWO_PI = 2 * math.pi


def rel(a, b):
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / scale)


def orders(errors):
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


# -- 1. identity suite ------------------------------------------------------


@pytest.mark.criterion(1, "identity suite")
def test_c1_identities():
    t0 = time.perf_counter()
    for fid in ("F1", "F3", "F4", "F5"):
        fx = get_fixture(fid)
        g = fx.metric(64)
        beta = beta_tensor(g).values
        _, kappa = koszul_forms(g)
        assert rel(beta, -2 * kappa.values) <= 1e-12 if np.any(beta) else np.all(beta + 2 * kappa.values == 0)
        ric = kahler_ricci(lift_metric(g)).values
        assert np.max(np.abs(ric - beta / 4)) <= 1e-12 * max(np.max(np.abs(beta)), 1.0)
        if fx.kind == "hessian":
            hs = fx.structure(64)
            gam = christoffel_gamma(hs)
            low = lower_gamma(gam, hs.metric)
            scale = max(np.max(np.abs(low)), 1.0)
            for perm in ("...ikj", "...jik", "...kji", "...jki", "...kij"):
                assert np.max(np.abs(low - np.einsum(f"...ijk->{perm}", low))) <= 1e-12 * scale
            R = riemann_from_Q(hessian_curvature(hs)).values
            assert np.array_equal(R, -np.swapaxes(R, -4, -3))
            assert np.max(np.abs(R + np.swapaxes(R, -2, -1))) <= 1e-12 * max(np.max(np.abs(R)), 1.0)
            if hs.grid.dim == 1:
                assert np.all(R == 0)
    jet = get_fixture("F2").jet()
    _, kappa2 = koszul_forms(jet)
    assert rel(beta_tensor(jet), -2 * kappa2) <= 1e-12
    assert np.all(riemann_from_Q(hessian_curvature(jet)) == 0)
    elapsed = time.perf_counter() - t0
    print(f"criterion 1: identities hold on F1-F5 ({elapsed:.2f} s)")
    assert elapsed <= 5.0


# -- 2. oracle suite --------------------------------------------------------

C_ORACLE = 150.0  # fixed from the refinement study (largest measured constant ~130)


def _f3_values(N):
    hs = get_fixture("F3").structure(N)
    g = hs.metric
    alpha, kappa = koszul_forms(g)
    return {
        "beta11(0)": beta_tensor(g).values[0, 0, 0],
        "kappa11(0)": kappa.values[0, 0, 0],
        "alpha1(1/4)": alpha.values[N // 4, 0],
        "Q1111(0)": hessian_curvature(hs).values[0, 0, 0, 0, 0],
        # T^1_21 at the origin of F4, index order [k, j, l]
        "T1_21(0)": t_tensor(get_fixture("F4").metric(N)).values[0, 0, 0, 1, 0],
    }


@pytest.mark.criterion(2, "oracle suite")
def test_c2_oracle_values(oracle):
    t0 = time.perf_counter()
    o3, o4 = oracle("F3"), oracle("F4")
    expected = {
        "beta11(0)": o3.value("beta", (0, 0), (0,)),
        "kappa11(0)": o3.value("kappa", (0, 0), (0,)),
        "alpha1(1/4)": o3.value("alpha", (0,), (0.25,)),
        "Q1111(0)": o3.value("Q", (0, 0, 0, 0), (0,)),
        "T1_21(0)": o4.value("T", (0, 1, 0), (0, 0)),
    }
    # the closed forms quoted for these points
    assert expected["beta11(0)"] == pytest.approx(TWO_PI**2 / 3, rel=1e-14)
    assert expected["kappa11(0)"] == pytest.approx(-(TWO_PI**2) / 6, rel=1e-14)
    assert expected["alpha1(1/4)"] == pytest.approx(-math.pi / 2, rel=1e-14)
    assert expected["Q1111(0)"] == pytest.approx(-(TWO_PI**2) / 2, rel=1e-14)
    assert expected["T1_21(0)"] == pytest.approx(0.6 * math.pi, rel=1e-14)

    levels = (32, 64, 128)
    errs = {k: [] for k in expected}
    for N in levels:
        vals = _f3_values(N)
        for k in expected:
            errs[k].append(abs(vals[k] - expected[k]))
    h2 = (1 / 64) ** 2
    for k in expected:
        assert errs[k][1] <= C_ORACLE * h2, (k, errs[k][1])
        p = orders(errs[k])
        assert np.all((p >= 1.9) & (p <= 2.1)), (k, p)

    jet = get_fixture("F2").jet(np.linspace(-3, 3, 61))
    Q = hessian_curvature(jet)
    assert np.max(np.abs(Q)) <= 1e-12 * np.max(np.abs(jet.phi4))
    elapsed = time.perf_counter() - t0
    print(f"criterion 2: oracle values within {C_ORACLE} h^2 at N=64, orders in [1.9, 2.1] ({elapsed:.2f} s)")
    assert elapsed <= 10.0


# -- 3. flow equivalence ----------------------------------------------------


@pytest.mark.criterion(3, "flow equivalence")
@pytest.mark.parametrize("fid", ["F3", "F5"])
def test_c3_flow_equivalence(fid):
    t0 = time.perf_counter()
    traj = run_flow(get_fixture(fid).structure(64), FlowConfig(scheme="both", t_end=0.01, dt=1e-4))
    assert traj.failure is None
    assert traj.times[-1] == pytest.approx(0.01)
    dev = max(traj.cross_deviation)
    rebuilt = potential_from_trajectory(traj.companion)
    recon = max(float(np.max(np.abs(p - s.phi))) for p, s in zip(rebuilt, traj.snapshots))
    elapsed = time.perf_counter() - t0
    print(f"criterion 3 [{fid}]: scheme deviation {dev:.2e}, reconstruction {recon:.2e} ({elapsed:.2f} s)")
    assert dev <= 1e-5
    assert recon <= 1e-6
    assert elapsed <= 60.0


# -- 4. conservation --------------------------------------------------------


@pytest.mark.criterion(4, "conservation suite")
def test_c4_t_conservation_F4():
    traj = run_flow(get_fixture("F4").metric(64), FlowConfig(t_end=0.01, dt=1e-4))
    assert traj.failure is None
    dev = D.t_conservation(traj)
    print(f"criterion 4 [F4]: max |T - T0| = {dev.max():.2e}")
    assert dev.max() <= 1e-4


@pytest.mark.criterion(4, "conservation suite")
@pytest.mark.parametrize("fid", ["F1", "F3", "F5"])
def test_c4_hessian_preserved(fid):
    traj = run_flow(get_fixture(fid).structure(64), FlowConfig(t_end=0.01, dt=1e-4))
    T = [float(np.max(np.abs(t_tensor(traj.metric(k)).values))) for k in range(len(traj))]
    print(f"criterion 4 [{fid}]: max|T| initial {T[0]:.2e}, max over run {max(T):.2e}")
    assert max(T) <= 3 * T[0]


# -- 5. maximum-principle conclusions ---------------------------------------


@pytest.mark.criterion(5, "maximum-principle conclusions")
@pytest.mark.parametrize("fid", ["F1", "F3", "F5"])
def test_c5_max_principle(fid):
    traj = run_flow(get_fixture(fid).structure(64), FlowConfig(scheme="scalar", t_end=0.01, dt=1e-4))
    rows = D.barrier_checks(traj)
    sup = max(r["sup_psi"] for r in rows)
    print(f"criterion 5 [{fid}]: sup(t phi_dot - phi - n t) = {sup:.2e}")
    assert sup <= 1e-6
    assert all(r["phi_ok"] for r in rows)


@pytest.mark.criterion(5, "maximum-principle conclusions")
def test_c5_lemma41_residuals():
    t0 = time.perf_counter()
    fx = get_fixture("F3")
    res = {}
    for N, dt in ((32, 4e-4), (64, 1e-4), (128, 2.5e-5)):
        traj = run_flow(fx.structure(N), FlowConfig(scheme="scalar", t_end=0.01, dt=dt))
        res[N] = D.lemma41_residuals(traj).max(axis=0)
    r64 = res[64]
    e = np.array([res[N] for N in (32, 64, 128)])
    p = orders(e[:, 0]), orders(e[:, 1])
    elapsed = time.perf_counter() - t0
    print(f"criterion 5 [F3]: r_Psi {r64[0]:.2e}, r_Lambda {r64[1]:.2e} at N=64; orders {p[0]}, {p[1]}")
    assert np.all(r64 <= 1e-3)
    assert np.all(p[0] >= 1.9) and np.all(p[1] >= 1.9)
    assert elapsed <= 60.0


# -- 6. curvature correspondence --------------------------------------------


@pytest.mark.criterion(6, "curvature correspondence")
@pytest.mark.parametrize("fid", ["F3", "F5"])
def test_c6_curvature_defect_order(fid):
    t0 = time.perf_counter()
    defects = []
    for N in (32, 64, 128):
        hs = get_fixture(fid).structure(N)
        defects.append(kahler_curvature(lift_metric(hs.metric), hs)[1])
    p = orders(defects)
    print(f"criterion 6 [{fid}]: defects {np.array(defects)}, orders {p}")
    assert np.all((p >= 1.9) & (p <= 2.1))
    assert time.perf_counter() - t0 <= 30.0


# -- 7. gate suite ----------------------------------------------------------


@pytest.mark.criterion(7, "gate suite")
@pytest.mark.parametrize("theta", [1e-6, 0.5])
def test_c7_gate_F3(theta):
    t0 = time.perf_counter()
    res = sb_estimate(get_fixture("F3").metric(128), None, theta)
    target = (1 - theta) * 9 / TWO_PI**2
    print(f"criterion 7 [F3, theta={theta}]: S_max {res.S_max:.5f} vs stated {target:.5f}")
    assert time.perf_counter() - t0 <= 10.0
    assert abs(res.S_max - target) <= 1e-3


@pytest.mark.criterion(7, "gate suite")
def test_c7_gate_F1_and_cutoff():
    t0 = time.perf_counter()
    res = sb_estimate(get_fixture("F1").metric(64), None, 0.5)
    assert res.unbounded and res.to_dict()["S_max"] == "unbounded"
    for kappa in (0.05, 0.1):
        prof = build_cutoff(kappa)
        c = cutoff_property_check(prof)
        assert c["F_support_max"] <= 1e-12
        assert c["F_prime_min"] >= -1e-12 and c["F_monotone"]
        assert c["f_support_max"] == 0.0 and c["f_increasing"]
        assert c["psi_range"] == (0.0, 1.0)
        assert c["psi_zero_max"] == 0.0 and c["psi_one_dev"] <= 1e-12
        assert 0.0 <= c["psi_prime_min"] and c["psi_prime_max"] <= 2 / kappa**2 + 1e-8
    print(f"criterion 7: F1 unbounded, cutoff checks pass for kappa 0.05, 0.1 ({time.perf_counter() - t0:.2f} s)")
    assert time.perf_counter() - t0 <= 10.0


# -- 8. normalized flow -----------------------------------------------------


@pytest.mark.criterion(8, "normalized-flow suite")
def test_c8_decay_rate_F1():
    traj = run_flow(get_fixture("F1").metric(16), FlowConfig(t_end=0.1, dt=1e-3, normalized=True))
    worst = 0.0
    for v in ([1.0, 0.0], [0.3, -2.0]):
        dr = D.decay_rate(traj, v, (0, 0))
        worst = max(worst, float(np.max(np.abs(dr.series + 1.0))))
    print(f"criterion 8 [F1]: max |rate + 1| = {worst:.2e}")
    assert worst <= 1e-10


@pytest.mark.criterion(8, "normalized-flow suite")
def test_c8_rescaling_F3():
    hs = get_fixture("F3").structure(64)
    t = 0.05
    norm = run_flow(hs, FlowConfig(t_end=t, dt=1e-4, normalized=True))
    plain = run_flow(hs, FlowConfig(t_end=math.exp(t) - 1.0, dt=1e-4))
    dev = float(np.max(np.abs(norm.snapshots[-1].g - math.exp(-t) * plain.snapshots[-1].g)))
    print(f"criterion 8 [F3]: rescaling deviation {dev:.2e}")
    assert dev <= 1e-5


# -- 9. determinism ---------------------------------------------------------


@pytest.mark.criterion(9, "determinism")
def test_c9_byte_identical(tmp_path):
    cfg = RunConfig.from_dict(
        {"fixture": "F5", "grid": {"N": 32}, "flow": {"scheme": "both", "t_end": 0.002, "dt": 2e-4},
         "gate": {"enabled": True}}
    )
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    assert a.status == b.status == 0
    same = (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()
    print(f"criterion 9: diagnostics.csv identical: {same}; {len(a.manifest['files'])} files hashed")
    assert same
    assert a.manifest["files"] == b.manifest["files"]
