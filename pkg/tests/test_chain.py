import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fvlab.chain import (
    bracket,
    build_chain,
    chain_from_dict,
    chain_to_dict,
    is_irreducible,
    load_chain,
    project_zero_mean,
    project_zero_sum,
    random_chain,
    theta,
    tv_norm,
)
from fvlab.errors import (
    ChainFileError,
    DimensionMismatch,
    EmptyDomain,
    NotIrreducible,
    NotStochastic,
    StateNotInDomain,
)

CHAIN_A = [[0, 0.5, 0.5], [0.5, 0, 0.5], [0, 0, 1]]


def test_build_chain_a():
    ch = build_chain(CHAIN_A, ["1", "2"])
    np.testing.assert_array_equal(ch.p_D, [[0, 0.5], [0.5, 0]])
    np.testing.assert_array_equal(ch.q, [0.5, 0.5])
    assert ch.k == 2


def test_build_chain_b(chain_b):
    np.testing.assert_allclose(chain_b.p_D, [[0.7]])
    np.testing.assert_allclose(chain_b.q, [0.3])


def test_disconnected_support_rejected():
    P = [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]]
    with pytest.raises(NotIrreducible):
        build_chain(P, ["1", "2"])


def test_not_stochastic():
    with pytest.raises(NotStochastic):
        build_chain([[0.5, 0.4], [0, 1]], ["1"])
    with pytest.raises(NotStochastic):
        build_chain([[1.5, -0.5], [0, 1]], ["1"])


def test_empty_domain_and_unknown_label():
    with pytest.raises(EmptyDomain):
        build_chain(CHAIN_A, [])
    with pytest.raises(StateNotInDomain):
        build_chain(CHAIN_A, ["1", "7"])


def test_self_loops_kept(chain_d):
    assert chain_d.p_D[0, 0] == pytest.approx(0.1)


def test_labels_map_in_declaration_order(chain_d):
    assert chain_d.domain == ("a", "b", "c")
    assert chain_d.index("c") == 2
    with pytest.raises(StateNotInDomain):
        chain_d.index("dead")


def test_file_errors_name_row_and_column(tmp_path):
    doc = {"states": ["1", "2"], "transition": [[1, 0], [0, "x"]], "domain": ["1"]}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ChainFileError, match="row 1, column 1"):
        load_chain(p)
    p.write_text("{not json")
    with pytest.raises(ChainFileError, match="line 1"):
        load_chain(p)
    with pytest.raises(ChainFileError, match="domain"):
        chain_from_dict({"states": ["1"], "transition": [[1]]})


def test_roundtrip_dict(chain_d):
    again = chain_from_dict(chain_to_dict(chain_d))
    np.testing.assert_array_equal(again.transition, chain_d.transition)
    assert again.domain == chain_d.domain


def test_bracket_examples(chain_a):
    assert bracket([1, -1], [1, -1]) == 2
    assert bracket([0.5, 0.5], [1, 1]) == 1
    assert bracket(theta(0, 1, 2), [3, 5]) == 2
    with pytest.raises(DimensionMismatch):
        bracket([1, 2], [1, 2, 3])


def test_theta_examples():
    np.testing.assert_array_equal(theta(0, 1, 2), [-1, 1])
    np.testing.assert_array_equal(theta(0, 0, 2), [0, 0])
    np.testing.assert_array_equal(theta(1, 0, 2), [1, -1])
    with pytest.raises(StateNotInDomain):
        theta(0, 2, 2)


def test_projection_examples():
    pi = np.array([0.5, 0.5])
    np.testing.assert_allclose(project_zero_mean([1, -1], pi), [1, -1])
    np.testing.assert_allclose(project_zero_mean([1, 1], [0.3, 0.7]), [0, 0])
    np.testing.assert_allclose(project_zero_mean([2, 0], pi), [1, -1])
    np.testing.assert_allclose(project_zero_sum([1, -1], pi), [1, -1])
    np.testing.assert_allclose(project_zero_sum(pi, pi), [0, 0])
    np.testing.assert_allclose(project_zero_sum([1, 0], pi), [0.5, -0.5])


def test_tv_norm_convention():
    assert tv_norm([0.5, -0.5]) == 0.5


def test_random_chains_are_valid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ch = random_chain(int(rng.integers(1, 12)), rng)
        assert is_irreducible(ch.p_D)
        np.testing.assert_allclose(ch.p_D.sum(axis=1) + ch.q, 1.0, atol=1e-12)
        assert np.all(ch.p_D >= 0) and np.all((ch.q >= 0) & (ch.q <= 1))


finite = st.floats(-10, 10, allow_nan=False)
vec4 = arrays(float, 4, elements=finite)
prob4 = arrays(float, 4, elements=st.floats(0.01, 1)).map(lambda w: w / w.sum())


@given(vec4, prob4)
def test_project_zero_mean_idempotent(f, pi):
    g = project_zero_mean(f, pi)
    assert abs(pi @ g) <= 1e-12 * max(1, np.abs(f).max())
    np.testing.assert_allclose(project_zero_mean(g, pi), g, atol=1e-12)


@given(vec4, prob4)
def test_project_zero_sum_idempotent(xi, pi):
    m = project_zero_sum(xi, pi)
    assert abs(m.sum()) <= 1e-12 * max(1, np.abs(xi).max())
    np.testing.assert_allclose(project_zero_sum(m, pi), m, atol=1e-12)


@given(finite, finite, vec4, vec4, vec4)
def test_bracket_bilinear(a, b, rho, sigma, f):
    lhs = bracket(a * rho + b * sigma, f)
    rhs = a * bracket(rho, f) + b * bracket(sigma, f)
    assert lhs == pytest.approx(rhs, abs=1e-9)


@settings(max_examples=50)
@given(vec4, st.integers(0, 3), st.integers(0, 3))
def test_theta_pairing(f, x, y):
    assert bracket(theta(x, y, 4), f) == pytest.approx(f[y] - f[x], abs=1e-12)
    assert theta(x, y, 4).sum() == 0
