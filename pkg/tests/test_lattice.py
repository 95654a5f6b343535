import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermolat.lattice import (ConfigError, Grid, LatticeSpec, dispersion,
                               from_pk, mass_gap_check, strong_pinning_margin,
                               to_pk)


def test_dispersion_values():
    assert dispersion(np.zeros(3), 10.0) == pytest.approx(10.0)
    assert dispersion(np.array([np.pi] * 3), 10.0) == pytest.approx(22.0)
    assert dispersion(np.array([np.pi / 2, 0.0, 0.0]), 10.0) == pytest.approx(12.0)
    assert dispersion(0.0, 10.0) == pytest.approx(10.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3))
def test_dispersion_even_periodic(k):
    k = np.array(k)
    w = dispersion(k, 10.0)
    assert dispersion(-k, 10.0) == pytest.approx(w)
    assert dispersion(k + 2 * np.pi, 10.0) == pytest.approx(w)
    assert w >= 10.0


def test_delta_omega2_vanishes_at_slow_points(grid_d3_small):
    g = grid_d3_small
    a = np.arange(g.nq)
    # p = 0 fibers: b = -a; p = pi: fiber through (a + b) = 2N
    assert np.abs(g.delta_omega2[a, (-a) % g.nq, :]).max() < 1e-12


def test_delta_omega2_product_identity(grid_d3_small):
    g = grid_d3_small
    prod = g.delta_omega2_product()
    scale = np.abs(g.delta_omega2).max()
    assert np.abs(prod - g.delta_omega2).max() <= 1e-12 * max(scale, 1.0)


def test_omega_pk_mean_square_exact(grid_d3_small):
    # defined as the root of the mean square, so re-squaring is exact up to
    # one floating-point rounding
    g = grid_d3_small
    om2 = g.omega_q ** 2
    target = 0.5 * (om2[:, None, :] + om2[None, :, :])
    assert np.abs(g.omega_pk ** 2 - target).max() <= 4 * np.finfo(float).eps * target.max()


def test_mass_gap():
    ok, margin = mass_gap_check(LatticeSpec(n=2, m_transverse=2, dim=3, m2=10.0))
    assert ok and margin == pytest.approx(8.0)
    ok6, margin6 = mass_gap_check(LatticeSpec(n=2, m_transverse=2, dim=3, m2=6.0))
    assert not ok6 and margin6 == pytest.approx(0.0)
    ok1, _ = mass_gap_check(LatticeSpec(n=2, dim=1, m2=10.0))
    assert ok1
    assert strong_pinning_margin(LatticeSpec(n=2, dim=1, m2=10.0)) == pytest.approx(2.0)


def test_to_pk_examples():
    p, k = to_pk([0.0], [0.0], n=4)
    assert p == 0.0 and k[0] == 0.0
    p, k = to_pk([np.pi / 4], [0.0], n=4)
    assert p == pytest.approx(np.pi / 8)
    assert k[0] == pytest.approx(np.pi / 8)


def test_to_pk_roundtrip_exhaustive():
    n = 4
    qs = np.pi * np.arange(2 * n) / n
    for q in qs:
        for qp in qs:
            p, k = to_pk([q], [qp], n=n)
            q2, qp2 = from_pk(p, k, n=n)
            assert q2[0] % (2 * np.pi) == pytest.approx(q % (2 * np.pi), abs=1e-12)
            assert qp2[0] % (2 * np.pi) == pytest.approx(qp % (2 * np.pi), abs=1e-12)


def test_to_pk_rejects_off_lattice():
    with pytest.raises(ValueError):
        to_pk([0.1], [0.0], n=4)
    with pytest.raises(ValueError):
        from_pk(0.1, [0.0], n=4)
    with pytest.raises(ValueError):
        from_pk(np.pi / 8, [0.0], n=4)  # p + k off the coarse lattice


def test_quadrature_normalization(grid_d3_small):
    g = grid_d3_small
    assert g.wk * g.nq * g.n_trans == pytest.approx(1.0)
    assert g.w_dbl * g.np_dbl == pytest.approx(1.0)


def test_pi_shift_is_storage_involution(grid_d3_small):
    # (p, k) -> (p + pi, k + pi) maps the checkerboard onto itself; in the
    # pair storage both images share one cell, so fibers repeat with period 2N
    g = grid_d3_small
    for nidx in range(g.np_dbl):
        b1 = g.fiber_b(nidx)
        b2 = g.fiber_b((nidx + 2 * g.n) % g.np_dbl)
        assert np.array_equal(b1, b2)


def test_json_round_trip():
    spec = LatticeSpec(n=4, m_transverse=2, dim=3, m2=10.0, lam=0.1, gamma=0.3,
                       t1=2.0, t2=1.0, epsilon=0.7)
    text = spec.to_json()
    d = json.loads(text)
    assert set(d) == {"n", "m_transverse", "dim", "m2", "lambda", "gamma",
                      "t1", "t2", "epsilon"}
    back = LatticeSpec.from_json(text)
    assert back == spec


def test_validation_reports_all_violations():
    with pytest.raises(ConfigError) as exc:
        LatticeSpec(n=1, dim=5, m2=-1.0, t1=-2.0).validate()
    msg = str(exc.value)
    assert "n" in msg and "dim" in msg and "m2" in msg and "t1" in msg


def test_resolved_defaults():
    spec = LatticeSpec(n=4, dim=1, m2=10.0).resolved(alpha=0.5)
    assert spec.gamma == pytest.approx(4.0 ** (-1.0 + 0.125))
    assert spec.epsilon == pytest.approx(np.pi / 4)
    spec3 = LatticeSpec(n=4, m_transverse=2, dim=3, m2=10.0).resolved()
    assert spec3.epsilon == pytest.approx(np.pi)
