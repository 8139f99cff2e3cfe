import math

import mpmath as mp
import numpy as np
import pytest

from overhauser.model import DotModel, ElectronConfig, Site
from overhauser.rates import (RateParams, broadening, c_coefficient, flipflop_rate,
                              knight_detuning, pair_offsets, pair_rate_table, w_closed_form)

mp.mp.dps = 30
A0_NM = mp.mpf("0.563")
PREF = (mp.mpf("1.25663706212e-6") / (4 * mp.pi) * (mp.mpf("0.95965") * mp.mpf("5.0507837461e-27")) ** 2
        / mp.mpf("1.054571817e-34") / mp.mpf("1e-27"))


def mp_dipolar(d):
    r2 = sum(mp.mpf(x) ** 2 for x in d)
    return PREF * (1 - 3 * mp.mpf(d[2]) ** 2 / r2) / r2 ** mp.mpf(1.5)


def mp_w(C, A, g):
    s = mp.sqrt(2 * mp.pi)
    base = A * A + g
    return C * C * (17 * s / 5 / mp.sqrt(base) + 12 * s / 5 / mp.sqrt(base + 64 * C * C)
                    + 9 * s / 10 / mp.sqrt(base + 256 * C * C))


def site(ix, iy, iz, n=0, a0=0.563):
    return Site(n, ix * a0, iy * a0, iz * a0)


def test_nearest_neighbour_golden(bulk_dot):
    """Bulk x-neighbour pair against a 30-digit recomputation."""
    p = RateParams.for_dot(bulk_dot)
    i, k = (0, 0, 0), (1, 0, 0)
    mid = (0.5, 0.0, 0.0)
    g = mp.mpf(0)
    R = 6
    for jz in range(-R, R + 1):
        for jy in range(-R, R + 1):
            for jx in range(-R, R + 2):
                j = (jx, jy, jz)
                if j in (i, k) or (jx - mid[0]) ** 2 + jy**2 + jz**2 > R * R:
                    continue
                dij = [A0_NM * (a - b) for a, b in zip(j, i)]
                dkj = [A0_NM * (a - b) for a, b in zip(j, k)]
                g += (mp_dipolar(dij) - mp_dipolar(dkj)) ** 2
    g *= 80
    C = mp_dipolar([A0_NM, 0, 0])
    W_ref = float(mp_w(C, 0, g))
    W = flipflop_rate(site(*i), site(*k, 1), bulk_dot, p)
    assert W == pytest.approx(W_ref, rel=1e-11)
    assert broadening(site(*i), site(*k, 1), bulk_dot, p) == pytest.approx(float(g), rel=1e-11)
    assert W == pytest.approx(55.0540, rel=1e-5)  # frozen


def test_c_coefficient_golden(dot):
    i, k = site(10, 3, 0), site(11, 3, 1)
    c = dot.constants
    Ai = dot.A0 * math.exp(-((10 * 0.563) ** 2 + (3 * 0.563) ** 2) / 30**2)
    Ak = dot.A0 * math.cos(math.pi * 0.563 / 10) ** 2 * math.exp(-((11 * 0.563) ** 2 + (3 * 0.563) ** 2) / 30**2)
    zeeman = 4 * c.g_e * c.muB * 2.0 / c.hbar
    ref = float(mp_dipolar([A0_NM, 0, A0_NM])) + 1.0 * Ai * Ak / zeeman
    assert c_coefficient(i, k, dot) == pytest.approx(ref, rel=1e-12)
    assert knight_detuning(i, k, dot) == pytest.approx(Ai - Ak, rel=1e-12)
    down = DotModel(electron=ElectronConfig.down())
    assert knight_detuning(i, k, down) == pytest.approx(-(Ai - Ak), rel=1e-12)


def test_c_coefficient_rejects_zero_field(dot):
    bad = object.__new__(DotModel)  # bypass DotModel's own validation
    object.__setattr__(bad, "__dict__", {**dot.__dict__, "B0": 0.0})
    with pytest.raises(ValueError, match="secular approximation invalid"):
        c_coefficient(site(0, 0, 0), site(1, 0, 0), bad)


def test_w_closed_form_edges():
    assert w_closed_form(0.0, 5.0, 3.0) == 0.0
    np.testing.assert_array_equal(w_closed_form(np.array([0.0, 0.0]), 1.0, 1.0), [0.0, 0.0])
    # large detuning suppresses the rate as 1/|A|
    w1, w2 = w_closed_form(10.0, 1e6, 0.0), w_closed_form(10.0, 2e6, 0.0)
    assert w1 / w2 == pytest.approx(2.0, rel=1e-6)


def test_magic_angle_and_cutoff(bulk_dot):
    p = RateParams.for_dot(bulk_dot)
    w_nn = flipflop_rate(site(0, 0, 0), site(1, 0, 0), bulk_dot, p)
    assert flipflop_rate(site(0, 0, 0), site(1, 1, 1), bulk_dot, p) < 1e-20 * w_nn
    assert flipflop_rate(site(0, 0, 0), site(4, 0, 0), bulk_dot, p) == 0.0


def test_symmetry_nonnegativity_random_pairs():
    """1000 random pairs over fields, spin states and positions."""
    rng = np.random.default_rng(7)
    offs = pair_offsets(3.0)
    dots = [DotModel(B0=b, electron=e) for b in (0.01, 0.2, 2.0)
            for e in (ElectronConfig.up(), ElectronConfig.down(), ElectronConfig.absent())]
    for n in range(1000):
        d = dots[n % len(dots)]
        p = RateParams.for_dot(d)
        a = np.array([rng.integers(-80, 81), rng.integers(-80, 81), rng.integers(-8, 9)])
        b = a + offs[rng.integers(len(offs))]
        if abs(b[2]) > 8:
            b[2] = a[2]
            if (b == a).all():
                b[0] += 1
        i, k = site(*a), site(*b, 1)
        w_ik = flipflop_rate(i, k, d, p)
        assert w_ik >= 0.0
        assert w_ik == flipflop_rate(k, i, d, p)


def test_batched_matches_scalar(dot):
    p = RateParams.for_dot(dot)
    probes = np.array([[0, 0, 0], [20, -7, 3], [53, 0, -8]])
    offs = pair_offsets(3.0)
    tab = pair_rate_table(probes, dot, p, offs)
    for r, kk in enumerate(probes):
        scale = tab.W[r].max()
        for m in range(0, len(offs), 7):
            j = kk + offs[m]
            if abs(j[2]) > 8:
                assert tab.W[r, m] == 0.0
                continue
            ref = flipflop_rate(site(*kk), site(*j, 1), dot, p)
            assert tab.W[r, m] == pytest.approx(ref, rel=1e-12, abs=1e-12 * scale)


def test_zero_A0_equals_absent():
    p = RateParams.for_dot(DotModel())
    probes = np.array([[0, 0, 0], [30, 10, 2]])
    w0 = pair_rate_table(probes, DotModel(A0=0.0), p).W
    wa = pair_rate_table(probes, DotModel(electron=ElectronConfig.absent()), p).W
    np.testing.assert_allclose(w0, wa, rtol=1e-14)


def test_cutoff_validation(dot):
    with pytest.raises(ValueError):
        RateParams(0.5, 6 * 0.563).check(dot)
    with pytest.raises(ValueError):
        RateParams(3 * 0.563, 1.0).check(dot)


def test_knight_suppression_near_edge():
    """At 2 T the Knight gradient slows flip-flops on the dot flank."""
    dot = DotModel()
    bulk = DotModel(electron=ElectronConfig.absent())
    p = RateParams.for_dot(dot)
    i, k = site(40, 0, 0), site(41, 0, 0, 1)
    assert flipflop_rate(i, k, dot, p) < 0.5 * flipflop_rate(i, k, bulk, p)
