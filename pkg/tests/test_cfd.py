from __future__ import annotations

import warnings

import numpy as np
import pytest

from cfdbal.cfd import GroupSpec, cfd2_two_sample, cfd_report, full_sample_term
from cfdbal.errors import EmptyGroupError, InvalidWeightsError, ParameterError
from cfdbal.kernels import SpectralDensity, cross_gram, gram


def _loop_cfd2(K, a, b, iv, iw):
    # double-loop evaluation of the weighted two-sample quadratic form
    s = 0.0
    for i, ai in zip(iv, a):
        for j, aj in zip(iv, a):
            s += ai * aj * K[i, j]
    for i, bi in zip(iw, b):
        for j, bj in zip(iw, b):
            s += bi * bj * K[i, j]
    for i, ai in zip(iv, a):
        for j, bj in zip(iw, b):
            s -= 2 * ai * bj * K[i, j]
    return s


def _loop_report(K, z, w):
    n = len(z)
    n1 = int(sum(z))
    n0 = n - n1
    t1 = [i for i in range(n) if z[i] == 1]
    t0 = [i for i in range(n) if z[i] == 0]
    full = list(range(n))
    u = [1.0 / n] * n
    a1 = [w[i] / n1 for i in t1]
    a0 = [w[i] / n0 for i in t0]
    return (
        _loop_cfd2(K, a1, u, t1, full),
        _loop_cfd2(K, a0, u, t0, full),
        _loop_cfd2(K, a1, a0, t1, t0),
    )


def _feasible_weights(rng, z):
    w = rng.exponential(size=z.size)
    w[z == 1] *= z.sum() / w[z == 1].sum()
    w[z == 0] *= (z.size - z.sum()) / w[z == 0].sum()
    return w


def test_self_distance_zero(rng):
    X = rng.normal(size=(15, 3))
    K = gram(SpectralDensity.gaussian(1.0), X).K
    assert abs(cfd2_two_sample(K, K, K)) <= 1e-10


def test_singletons():
    d = SpectralDensity.laplacian(0.7)
    v, w = np.array([[0.2, 1.0]]), np.array([[1.5, -0.3]])
    val = cfd2_two_sample(gram(d, v).K, gram(d, w).K, cross_gram(d, v, w))
    kvw = np.exp(-(1.3 + 1.3) / 0.7)
    assert val == pytest.approx(1 + 1 - 2 * kvw, abs=1e-15)


def test_weighted_equals_duplication(rng):
    # integer weights on a sample equal uniform weights on the duplicated sample
    d = SpectralDensity.gaussian(1.3)
    V = rng.normal(size=(20, 2))
    W = rng.normal(size=(12, 2))
    counts = rng.integers(1, 4, size=20)
    Vd = np.repeat(V, counts, axis=0)
    weighted = cfd2_two_sample(gram(d, V).K, gram(d, W).K, cross_gram(d, V, W), counts, None)
    dup = cfd2_two_sample(gram(d, Vd).K, gram(d, W).K, cross_gram(d, Vd, W))
    assert weighted == pytest.approx(dup, abs=1e-10)
    Z = np.vstack([V, W])
    Kz = gram(d, Z).K
    a = counts / counts.sum()
    b = np.full(12, 1 / 12)
    loop = _loop_cfd2(Kz, a, b, range(20), range(20, 32))
    assert abs(weighted - loop) <= 1e-8


def test_invalid_weights(rng):
    K = np.eye(3)
    with pytest.raises(InvalidWeightsError):
        cfd2_two_sample(K, K, K, [1, -1, 1], None)
    with pytest.raises(InvalidWeightsError):
        cfd2_two_sample(K, K, K, [0, 0, 0], None)


def test_groupspec():
    g = GroupSpec([1, 0, 1, 1])
    assert (g.n, g.n1, g.n0) == (4, 3, 1)
    with pytest.raises(EmptyGroupError):
        GroupSpec([1, 1, 1])
    with pytest.raises(ParameterError):
        GroupSpec([1, 2, 0])


def test_report_mirrored_groups_zero(rng):
    base = rng.normal(size=(6, 2))
    X = np.vstack([base, base])
    z = np.r_[np.ones(6), np.zeros(6)]
    K = gram(SpectralDensity.gaussian(0.9), X).K
    r = cfd_report(K, GroupSpec(z), np.ones(12))
    assert max(abs(r.cfd1_fn), abs(r.cfd0_fn), abs(r.cfd1_0)) <= 1e-10


def test_report_two_singletons():
    X = np.array([[0.0], [1.0]])
    K = gram(SpectralDensity.gaussian(1.0), X).K
    r = cfd_report(K, GroupSpec([1, 0]), np.ones(2))
    assert r.cfd1_0 == pytest.approx(2 - 2 * np.exp(-1), abs=1e-15)


@pytest.mark.parametrize("spec_seed", range(5))
def test_report_matches_loops(spec_seed):
    rng = np.random.default_rng(spec_seed)
    X = rng.normal(size=(30, 3))
    z = (rng.random(30) < 0.4).astype(float)
    z[:2] = [1, 0]
    w = _feasible_weights(rng, z)
    for d in [SpectralDensity.gaussian(1.0), SpectralDensity.energy()]:
        K = gram(d, X).K
        r = cfd_report(K, GroupSpec(z), w)
        loop = _loop_report(K, z, w)
        assert abs(r.cfd1_fn - loop[0]) <= 1e-8
        assert abs(r.cfd0_fn - loop[1]) <= 1e-8
        assert abs(r.cfd1_0 - loop[2]) <= 1e-8


def test_report_totals_and_constant(rng):
    X = rng.normal(size=(10, 2))
    z = np.r_[np.ones(4), np.zeros(6)]
    K = gram(SpectralDensity.gaussian(1.0), X).K
    r = cfd_report(K, GroupSpec(z), np.ones(10))
    assert r.full_sample_term == pytest.approx(K.mean())
    assert r.full_sample_term == full_sample_term(K)
    assert r.total("two_way") == pytest.approx(r.cfd1_fn + r.cfd0_fn)
    assert r.total() == pytest.approx(r.cfd1_fn + r.cfd0_fn + r.cfd1_0)
    assert set(r.to_dict()) >= {"cfd1_fn", "cfd0_fn", "cfd1_0", "total_three_way"}


def test_report_normalization_warning(rng):
    K = np.eye(4)
    with pytest.warns(RuntimeWarning, match="not normalized"):
        cfd_report(K, GroupSpec([1, 1, 0, 0]), np.array([1.0, 1.5, 1.0, 1.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cfd_report(K, GroupSpec([1, 1, 0, 0]), np.array([1.0, 1.0 + 1e-6, 1.0, 1.0]))


def test_energy_cross_term_nonnegative(rng):
    X = rng.normal(size=(25, 4))
    z = (rng.random(25) < 0.5).astype(float)
    z[:2] = [1, 0]
    K = gram(SpectralDensity.energy(), X).K
    for _ in range(20):
        r = cfd_report(K, GroupSpec(z), _feasible_weights(rng, z))
        assert r.cfd1_0 >= -1e-8 and r.cfd1_fn >= -1e-8 and r.cfd0_fn >= -1e-8
