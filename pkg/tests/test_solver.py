import logging

import numpy as np
import pytest
from scipy.linalg import solve

from overhauser.dfield import DiffusionField, Mesh2D, build_field, constant_field
from overhauser.model import DotModel
from overhauser.observables import hyperfine_weights, overhauser
from overhauser.rates import RateParams
from overhauser.solver import (InstabilityError, SolverConfig, _Stepper, evolve, evolve_iter,
                               make_initial)

MESH = Mesh2D.square(300.0, 201)


def gaussian_spread(mesh, r0, D, t):
    X, Y = mesh.grid()
    s2 = r0**2 + 4 * D * t
    return r0**2 / s2 * np.exp(-(X**2 + Y**2) / s2)


def test_initial_condition(dot):
    u = make_initial(MESH, dot, 30.0)
    assert u.values[100, 100] == 1.0
    assert u.values[100, 110] == pytest.approx(np.exp(-1.0))  # node (30, 0)
    assert u.time == 0.0
    assert np.all(u.values[0, :] == 0) and np.all(u.values[:, -1] == 0)
    with pytest.raises(ValueError):
        make_initial(MESH, dot, 0.0)


def test_initial_warns_on_wide_r0(dot, caplog):
    with caplog.at_level(logging.WARNING):
        make_initial(MESH, dot, 200.0)
    assert "boundary truncation" in caplog.text


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(t_end=0.0)
    with pytest.raises(ValueError):
        SolverConfig(t_end=1.0, scheme="rk4")
    with pytest.raises(ValueError):
        SolverConfig(t_end=1.0, snapshot_times=(2.0,))
    with pytest.raises(ValueError):
        SolverConfig(t_end=1.0, boundary="periodic")


@pytest.mark.parametrize("scheme", ["explicit", "adi"])
def test_zero_D_and_zero_init(dot, scheme):
    init = make_initial(MESH, dot, 30.0)
    cfg = SolverConfig(10.0, scheme, dt=0.25, snapshot_times=(5.0, 10.0))
    out = evolve(init, constant_field(MESH, 0.0), cfg)
    for s in out:
        np.testing.assert_array_equal(s.values, init.values)
    zero = type(init)(MESH, np.zeros_like(init.values))
    out = evolve(zero, constant_field(MESH, 7.0), cfg)
    assert all(np.all(s.values == 0) for s in out)


@pytest.mark.parametrize("scheme", ["explicit", "adi"])
def test_constant_D_matches_heat_kernel(dot, scheme):
    D = 7.0
    times = (25.0, 50.0, 100.0)
    cfg = SolverConfig(100.0, scheme, snapshot_times=times)
    for s in evolve(make_initial(MESH, dot, 30.0), constant_field(MESH, D), cfg):
        exact = gaussian_spread(MESH, 30.0, D, s.time)
        assert np.max(np.abs(s.values - exact)) < 0.01 * exact.max()


def test_snapshots_land_on_requested_times(dot):
    cfg = SolverConfig(10.0, "explicit", snapshot_times=(10.0, 0.1, 3.3))
    out = evolve(make_initial(MESH, dot, 30.0), constant_field(MESH, 7.0), cfg)
    assert [s.time for s in out] == [0.1, 3.3, 10.0]


def test_explicit_dt_limit(dot):
    with pytest.raises(ValueError, match="stability limit"):
        evolve(make_initial(MESH, dot, 30.0), constant_field(MESH, 7.0),
               SolverConfig(10.0, "explicit", dt=1.0, snapshot_times=(10.0,)))


def test_instability_detected(dot):
    bad = DiffusionField(MESH, np.full((201, 201), -7.0))
    with pytest.raises(InstabilityError, match="max \\|I\\|"):
        evolve(make_initial(MESH, dot, 30.0), bad,
               SolverConfig(100.0, "explicit", dt=0.2, snapshot_times=(100.0,)))


@pytest.fixture(scope="module")
def field_2T():
    d = DotModel()
    return build_field(MESH, d, RateParams.for_dot(d))


@pytest.mark.parametrize("scheme", ["explicit", "adi"])
def test_discrete_maximum_principle(field_2T, scheme):
    d = DotModel()
    init = make_initial(MESH, d, 30.0)
    prev = init.values.max()
    for s in evolve_iter(init, field_2T, SolverConfig(200.0, scheme), np.linspace(5, 200, 40)):
        assert s.values.min() >= 0.0
        assert s.values.max() <= prev + 1e-15
        prev = s.values.max()


def _curve(D, dot, cfg, ts, mesh=MESH):
    w = hyperfine_weights(mesh, dot)
    init = make_initial(mesh, dot, dot.l0)
    h = [overhauser(init, dot, w)] + [overhauser(s, dot, w) for s in evolve_iter(init, D, cfg, ts[1:])]
    return np.array(h) / h[0]


# (B0, comparison horizon, scenario t_end)
STANDARD = [(2.0, 300.0, 3000.0), (0.2, 60.0, 600.0), (0.01, 0.5, 600.0)]


@pytest.mark.parametrize("B0,horizon,t_end", STANDARD)
def test_scheme_agreement(B0, horizon, t_end):
    dot = DotModel(B0=B0)
    D = build_field(MESH, dot, RateParams.for_dot(dot))
    ts = np.linspace(0, horizon, 31)
    he = _curve(D, dot, SolverConfig(horizon, "explicit"), ts)
    ha = _curve(D, dot, SolverConfig(t_end, "adi"), ts)
    assert np.max(np.abs(ha - he) / he) < 0.005


@pytest.mark.parametrize("B0,horizon,t_end", STANDARD)
def test_mesh_convergence(B0, horizon, t_end):
    dot = DotModel(B0=B0)
    p = RateParams.for_dot(dot)
    fine = Mesh2D.square(300.0, 401)
    ts = np.linspace(0, horizon, 31)
    hc = _curve(build_field(MESH, dot, p), dot, SolverConfig(t_end, "adi"), ts)
    hf = _curve(build_field(fine, dot, p), dot, SolverConfig(t_end, "adi"), ts, fine)
    assert np.max(np.abs(hf - hc) / hc) < 0.01


def test_nondivergence_sum_conserved_for_constant_D(dot):
    init = make_initial(MESH, dot, 30.0)
    s0 = init.values.sum()
    for s in evolve_iter(init, constant_field(MESH, 26.35), SolverConfig(50.0, "explicit"),
                         np.linspace(5, 50, 10)):
        assert abs(s.values.sum() - s0) / s0 < 1e-6


def test_divergence_form_conserves_with_varying_D(field_2T):
    d = DotModel()
    init = make_initial(MESH, d, 30.0)
    s0 = init.values.sum()
    for form in ("divergence",):
        cfg = SolverConfig(50.0, "adi", form=form)
        for s in evolve_iter(init, field_2T, cfg, np.linspace(5, 50, 10)):
            assert abs(s.values.sum() - s0) / s0 < 1e-6


@pytest.mark.parametrize("form", ["nondivergence", "divergence"])
def test_adi_sweeps_match_dense_solve(form):
    rng = np.random.default_rng(3)
    n = 9
    D = rng.uniform(1.0, 50.0, (n, n))
    h, dt = 2.0, 0.3
    st = _Stepper(D, h, form)
    u = np.zeros((n, n))
    u[1:-1, 1:-1] = rng.uniform(size=(n - 2, n - 2))
    m = n - 2
    idx = lambda j, i: j * m + i  # noqa: E731  interior (row j, col i)
    if form == "divergence":
        fx, fy = 0.5 * (D[:, 1:] + D[:, :-1]), 0.5 * (D[1:, :] + D[:-1, :])
    for axis in (1, 0):
        A = np.eye(m * m)
        for j in range(m):
            for i in range(m):
                r, (J, I) = idx(j, i), (j + 1, i + 1)
                for dj, di in (((0, -1), (0, 1)) if axis == 1 else ((-1, 0), (1, 0))):
                    if form == "divergence":
                        c = fx[J, min(I, I + di)] if axis == 1 else fy[min(J, J + dj), I]
                    else:
                        c = D[J, I]
                    A[r, r] += dt * c / h**2
                    jj, ii = j + dj, i + di
                    if 0 <= jj < m and 0 <= ii < m:
                        A[r, idx(jj, ii)] -= dt * c / h**2
        ref = solve(A, u[1:-1, 1:-1].ravel()).reshape(m, m)
        got = st._sweep(u, dt, axis)[1:-1, 1:-1]
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)
