import numpy as np
import pytest

from thermolat.collision import delta_supported_to_field
from thermolat.fields import (CorrelationField, coarse_transform,
                              coarse_transform_inv, field_from_xspace,
                              field_to_xspace, slow_profile, symmetrize_even,
                              symmetrize_odd, w_field)


def test_random_field_carries_symmetries(grid_d3_small):
    rng = np.random.default_rng(0)
    f = CorrelationField.random(grid_d3_small, rng, with_p=True)
    assert f.symmetry_defect() == 0.0


def test_symmetrize_idempotent(grid_d3_small):
    g = grid_d3_small
    rng = np.random.default_rng(1)
    x = rng.standard_normal((g.nq, g.nq, g.n_trans))
    e = symmetrize_even(x, g)
    o = symmetrize_odd(x, g)
    assert np.allclose(symmetrize_even(e, g), e)
    assert np.allclose(symmetrize_odd(o, g), o)
    # parity projections are orthogonal: the even part of an odd field is 0
    assert np.abs(symmetrize_even(o, g) + symmetrize_odd(e, g)).max() < 1e-14


def test_xspace_round_trip(grid_d1):
    g = grid_d1
    rng = np.random.default_rng(2)
    gxy = rng.standard_normal((g.nq, g.nq))
    F = field_from_xspace(gxy, g)
    back = field_to_xspace(F, g)
    assert np.abs(back.real - gxy).max() < 1e-12
    assert np.abs(back.imag).max() < 1e-12


def test_slow_profile_of_flat_momentum_field(grid_d1):
    g = grid_d1
    P = delta_supported_to_field(1.7 * np.ones((g.nq, g.n_trans)) * g.nq, g)
    prof = slow_profile(P, g)
    assert np.abs(prof.real - 1.7).max() < 1e-12
    assert np.abs(prof.imag).max() < 1e-14


def test_coarse_transform_round_trip(grid_d1):
    g = grid_d1
    rng = np.random.default_rng(3)
    fx = rng.standard_normal(g.nq)
    fp = coarse_transform_inv(fx, g)
    assert np.abs(coarse_transform(fp, g).real - fx).max() < 1e-12


def test_w_field_conjugate_pair(grid_d1):
    rng = np.random.default_rng(4)
    f = CorrelationField.random(grid_d1, rng)
    wp = w_field(f, 1)
    wm = w_field(f, -1)
    assert np.allclose(wm, wp.conj())


def test_value_pk_accessor(grid_d1):
    g = grid_d1
    rng = np.random.default_rng(5)
    f = CorrelationField.random(g, rng)
    nidx, a, t = 3, 2, 0
    b = (nidx - a) % g.nq
    assert f.value_pk("q", nidx, a, t) == f.q[a, b, t]
