import hashlib
import math

import numpy as np
import pytest

import ideodepth as idd


def test_version():
    assert idd.__version__


def test_kappa_and_consistency():
    assert idd.fleiss_kappa([[3, 0], [2, 1]]) == pytest.approx(-0.2, abs=1e-12)
    assert idd.consistency([1, 1, 0, 0]) == 0.0
    assert idd.consistency([1, None, 1, 1]) == 1.0
    with pytest.raises(idd.InsufficientDataError):
        idd.consistency([1, None, None])
    with pytest.raises(idd.ValidationError):
        idd.consistency([2, 1])


def test_paf_compound_symmetry():
    r = np.full((3, 3), 0.5)
    np.fill_diagonal(r, 1.0)
    sol = idd.principal_axis_factor(r)
    assert np.allclose(sol["initial_eigenvalues"], [2.0, 0.5, 0.5], atol=1e-9)
    assert sol["loadings"].shape == (3, 1)
    assert np.allclose(np.abs(sol["loadings"][:, 0]), math.sqrt(0.5), atol=1e-3)


def test_varimax_keeps_communalities():
    rng = np.random.default_rng(3)
    a = rng.uniform(-0.8, 0.8, size=(6, 2))
    rotated, t = idd.varimax(a)
    assert np.allclose(t.T @ t, np.eye(2), atol=1e-12)
    assert np.allclose((rotated**2).sum(axis=1), (a**2).sum(axis=1), atol=1e-9)
    assert idd.varimax_criterion(rotated) >= idd.varimax_criterion(a) - 1e-12


def test_log_likelihood_matches_numpy():
    csv = "r,k1,k2\na,1,0\nb,null,1\n"
    theta = np.array([[0.3, -0.2], [1.0, 0.5]])
    alpha = np.array([[1.2, 0.4], [-0.7, 0.9]])
    beta = np.array([0.1, -0.3])
    eta = theta @ alpha.T - beta
    p = 1 / (1 + np.exp(-eta))
    want = math.log(p[0, 0]) + math.log(1 - p[0, 1]) + math.log(p[1, 1])
    assert idd.log_likelihood(theta, alpha, beta, csv) == pytest.approx(want, rel=1e-12)


def test_output_score_hand_case():
    assert idd.output_score(0, 0.5, 4, 0.1, 10) == pytest.approx(-0.44, abs=1e-15)
    s = idd.score_summary([0.0, 1.0, 2.0, 3.0])
    assert s["mean"] == 1.5 and s["median"] == 1.5 and s["q1"] == 0.75
    with pytest.raises(idd.DomainError):
        idd.output_score(10, 0.5, 0, 0.5, 10)


def test_tensor_round_trip_and_errors():
    blob = idd.encode_tensor([2, 2], [1.0, -0.0, 2.5, 3.0], {"layer": "14"})
    assert blob[:8] == b"IDPTENS1"
    shape, values, meta = idd.decode_tensor(blob)
    assert shape == [2, 2] and values[2] == 2.5 and meta["layer"] == "14"
    with pytest.raises(idd.FormatError):
        idd.decode_tensor(b"XDPTENS1" + blob[8:])
    with pytest.raises(idd.CorruptionError):
        idd.decode_tensor(blob[:-1])


def test_parse_errors_and_sha():
    with pytest.raises(idd.ParseError):
        idd.parse_response_matrix("r,q1\na,maybe\n")
    rows, cols, cells = idd.parse_response_matrix("r,q1,q2\na,1,null\n")
    assert rows == ["a"] and cols == ["q1", "q2"] and cells == [[1, None]]
    assert idd.sha256_hex(b"abc") == hashlib.sha256(b"abc").hexdigest()


def test_lkj_uniform_mean():
    draws = np.array([idd.sample_correlation_2d(1.0, s) for s in range(2000)])
    assert abs(draws.mean()) < 0.05
    assert np.all(np.abs(draws) < 1)
