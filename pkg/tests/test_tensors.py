import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gopeps.tensors import batched_tensordot, contract, permute, qr_split, svd_truncate


def test_contract_identity(rng):
    b = rng.standard_normal(3)
    np.testing.assert_array_equal(contract(np.eye(3), [1], b, [0]), b)


def test_contract_matches_loops(rng):
    a = rng.standard_normal((2, 2, 2))
    b = rng.standard_normal((2, 2, 2))
    out = contract(a, [1], b, [2])
    ref = np.zeros((2, 2, 2, 2))
    for i in range(2):
        for k in range(2):
            for m in range(2):
                for n in range(2):
                    for j in range(2):
                        ref[i, k, m, n] += a[i, j, k] * b[m, n, j]
    np.testing.assert_allclose(out, ref, atol=1e-14)


def test_contract_outer_product(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal(4)
    out = contract(a, [], b, [])
    assert out.shape == (2, 3, 4)
    np.testing.assert_allclose(out, a[:, :, None] * b)


def test_contract_errors(rng):
    with pytest.raises(ValueError):
        contract(np.ones((2, 3)), [1], np.ones((2, 2)), [0])
    with pytest.raises(ValueError):
        contract(np.ones((2, 2)), [0, 0], np.ones((2, 2)), [0, 1])


def test_contract_bilinear(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(contract(2.5 * a, [1], b, [0]), 2.5 * contract(a, [1], b, [0]))


def test_svd_diagonal_example():
    res = svd_truncate(np.diag([3.0, 2.0, 1.0]), 1, 2)
    np.testing.assert_allclose(res.singular_values, [3, 2])
    assert res.truncation_error == pytest.approx(1 / np.sqrt(14))


def test_svd_full_rank_exact(rng):
    t = rng.standard_normal((3, 4, 5))
    res = svd_truncate(t, 2, 100)
    assert res.truncation_error == 0.0
    np.testing.assert_allclose(res.reconstruct(), t, atol=1e-12)


def test_svd_error_matches_reference(rng):
    m = rng.standard_normal((8, 8))
    s = np.linalg.svd(m, compute_uv=False)
    res = svd_truncate(m, 1, 4)
    assert res.truncation_error == pytest.approx(np.sqrt(np.sum(s[4:] ** 2) / np.sum(s ** 2)), rel=1e-12)
    assert np.all(np.diff(res.singular_values) <= 0)


def test_svd_rejects_nonfinite():
    with pytest.raises(ValueError):
        svd_truncate(np.array([[np.nan, 1.0], [0.0, 1.0]]), 1, 1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), rows=st.integers(1, 6), cols=st.integers(1, 6))
def test_truncation_error_monotone(seed, rows, cols):
    m = np.random.default_rng(seed).standard_normal((rows, cols))
    errs = [svd_truncate(m, 1, chi).truncation_error for chi in range(1, min(rows, cols) + 1)]
    assert all(0.0 <= e <= 1.0 for e in errs)
    assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))
    rel = np.linalg.norm(svd_truncate(m, 1, min(rows, cols)).reconstruct() - m) / np.linalg.norm(m)
    assert rel < 1e-10


def test_qr_identity():
    q, r = qr_split(np.eye(3), 1)
    np.testing.assert_allclose(np.abs(q), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(np.abs(r), np.eye(3), atol=1e-14)


def test_qr_orthogonal_and_exact(rng):
    q, _ = qr_split(rng.standard_normal((6, 3)), 1)
    np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)
    t = rng.standard_normal((2, 3, 4, 5))
    q, r = qr_split(t, 2)
    back = np.tensordot(q, r, axes=([2], [0]))
    assert np.linalg.norm(back - t) / np.linalg.norm(t) < 1e-12
    with pytest.raises(ValueError):
        qr_split(np.array([[np.inf]]), 1)


def test_permute_examples(rng):
    t = rng.standard_normal((2, 3, 4))
    assert np.array_equal(permute(t, [0, 1, 2]), t)
    m = np.arange(6).reshape(2, 3)
    p = permute(m, [1, 0])
    assert p.shape == (3, 2) and p[2, 1] == m[1, 2]
    order = [2, 0, 1]
    np.testing.assert_array_equal(permute(permute(t, order), np.argsort(order)), t)
    with pytest.raises(ValueError):
        permute(t, [0, 0, 1])


def test_batched_tensordot(rng):
    x = rng.standard_normal((5, 2, 3, 4))
    y = rng.standard_normal((5, 4, 3, 6))
    out = batched_tensordot(x, y, ([1, 2], [1, 0]))
    ref = np.stack([np.tensordot(x[i], y[i], axes=([1, 2], [1, 0])) for i in range(5)])
    np.testing.assert_allclose(out, ref, atol=1e-12)
