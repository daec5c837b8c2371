import warnings

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mmgp.datagen import disk_mesh
from mmgp.errors import DimensionMismatch, RankDeficientWarning
from mmgp.fe import assemble_mass
from mmgp.reduction import InnerProduct, decode, encode, explained_energy, fit


@pytest.fixture(scope="module")
def mass_ip():
    m = disk_mesh(0.15, seed=1)
    return InnerProduct("mass", assemble_mass(m))


def _data(seed, n=12, L=40, rank=None):
    rng = np.random.default_rng(seed)
    if rank is None:
        return rng.standard_normal((n, L))
    return rng.standard_normal((n, rank)) @ rng.standard_normal((rank, L)) + rng.standard_normal(L)


def test_identical_snapshots_give_null_basis():
    x = np.arange(5.0)
    with pytest.warns(RankDeficientWarning):
        b = fit(np.tile(x, (4, 1)), 2)
    assert np.array_equal(b.mean, x)
    assert np.all(b.modes == 0) and np.all(b.singular_values == 0)
    assert np.array_equal(decode(b, encode(b, x)), x)


def test_collinear_snapshots_give_one_mode():
    d = np.array([3.0, 4.0, 0.0])
    X = np.outer([-1.0, 0.0, 2.0], d) + 1.0
    with pytest.warns(RankDeficientWarning):
        b = fit(X, 2)
    assert np.allclose(b.modes[:, 0], d / 5, atol=1e-14)
    assert np.all(b.modes[:, 1] == 0)
    assert b.rank == 1
    assert explained_energy(b)[0] == pytest.approx(1.0)


def test_full_rank_reconstruction_is_exact():
    X = _data(0, n=6, L=30)
    b = fit(X, 5)
    assert np.abs(decode(b, encode(b, X)) - X).max() < 1e-12


def test_mean_encodes_to_zero_and_zero_decodes_to_mean(mass_ip):
    X = _data(1, n=8, L=mass_ip.mass.shape[0])
    b = fit(X, 4, mass_ip)
    assert np.abs(encode(b, b.mean)).max() == 0.0
    assert np.array_equal(decode(b, np.zeros(4)), b.mean)


def _weighted(X, ip):
    """Data mapped so that the W inner product becomes Euclidean."""
    if ip.kind == "euclidean":
        return X, lambda Y: Y
    R = scipy.linalg.cholesky(ip.mass.toarray(), lower=False)
    return X @ R.T, lambda Y: scipy.linalg.solve_triangular(R, Y.T, lower=False).T


@pytest.mark.parametrize("kind", ["euclidean", "mass"])
def test_modes_and_energy_match_dense_svd(kind, mass_ip):
    ip = mass_ip if kind == "mass" else InnerProduct()
    L = mass_ip.mass.shape[0]
    X = _data(2, n=10, L=L)
    b = fit(X, 4, ip)
    Y, back = _weighted(X - X.mean(axis=0), ip)
    _, s, Vt = np.linalg.svd(Y, full_matrices=False)
    assert np.allclose(b.singular_values, s[:4], rtol=1e-10)
    assert b.total_energy == pytest.approx(np.sum(s**2), rel=1e-10)
    cov_eigs = np.sort(np.linalg.eigvalsh(Y.T @ Y))[::-1]
    assert np.allclose(explained_energy(b), np.cumsum(cov_eigs[:4]) / cov_eigs.sum(), rtol=1e-9)
    # same subspace as the leading right singular vectors, up to sign
    ref = back(Vt[:4])
    for k in range(4):
        c = ip.dot(b.modes[:, k], ref[k])
        assert abs(abs(c) - 1.0) < 1e-8


def test_projection_is_optimal_among_rank_l_bases(mass_ip):
    L = mass_ip.mass.shape[0]
    X = _data(3, n=10, L=L)
    b = fit(X, 3, mass_ip)
    err = lambda B: np.sum(mass_ip.norm(decode(B, encode(B, X)) - X) ** 2)  # noqa: E731
    best = err(b)
    assert best == pytest.approx(b.total_energy - np.sum(b.singular_values**2), rel=1e-8)
    resid = decode(b, encode(b, X)) - X
    assert np.abs(mass_ip.apply(resid) @ b.modes).max() < 1e-10
    rng = np.random.default_rng(0)
    for _ in range(5):
        Q = fit(rng.standard_normal((6, L)), 3, mass_ip)
        other = type(b)(b.mean, Q.modes, Q.singular_values, b.total_energy, mass_ip)
        assert err(other) >= best - 1e-12


def test_encode_is_adjoint_of_decode_increment(mass_ip):
    L = mass_ip.mass.shape[0]
    b = fit(_data(4, n=9, L=L), 5, mass_ip)
    rng = np.random.default_rng(1)
    c, v = rng.standard_normal(5), rng.standard_normal(L)
    lhs = mass_ip.dot(decode(b, c) - b.mean, v)
    rhs = c @ encode(b, v + b.mean)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_modes_are_w_orthonormal(mass_ip):
    L = mass_ip.mass.shape[0]
    b = fit(_data(5, n=15, L=L), 8, mass_ip)
    G = b.modes.T @ mass_ip.apply(b.modes.T).T
    assert np.abs(G - np.eye(8)).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_snapshot_order_does_not_change_basis(seed):
    X = _data(seed, n=9, L=25)
    perm = np.random.default_rng(seed).permutation(9)
    a, b = fit(X, 4), fit(X[perm], 4)
    assert np.allclose(a.singular_values, b.singular_values, rtol=1e-10)
    assert np.abs(a.modes - b.modes).max() < 1e-8
    assert np.allclose(a.mean, b.mean, atol=1e-14)


def test_sign_convention():
    b = fit(_data(6, n=8, L=20), 4)
    idx = np.argmax(np.abs(b.modes), axis=0)
    assert np.all(b.modes[idx, np.arange(4)] > 0)


def test_rank_deficient_warning_only_when_needed():
    X = _data(7, n=10, L=30, rank=3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit(X, 3)
    with pytest.warns(RankDeficientWarning):
        b = fit(X, 5)
    assert b.rank == 3 and np.all(b.modes[:, 3:] == 0)


def test_dimension_checks(mass_ip):
    with pytest.raises(DimensionMismatch):
        fit(np.zeros((1, 4)), 1)
    with pytest.raises(DimensionMismatch):
        fit(np.zeros((4, 3)), 4)
    b = fit(_data(8, n=5, L=10), 2)
    with pytest.raises(DimensionMismatch):
        encode(b, np.zeros(11))
    with pytest.raises(DimensionMismatch):
        decode(b, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        mass_ip.apply(np.zeros(mass_ip.mass.shape[0] + 1))
