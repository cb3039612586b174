import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmkl.kernels import KernelSpec, kernel_matrix
from hmkl.mkl import (MklError, combined_gram, lp_update, one_vs_all_scores, predict_mkl, train_lp_mkl,
                      train_one_vs_all_mkl, write_mkl_model)
from hmkl.svm import decision_values, read_model, train_binary_svm
from hmkl.synthetic import make_two_kernel_problem


def _grams(seed, n=16, m=3):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=n) > 0.5, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    specs = [KernelSpec(0, "linear"), KernelSpec(0, "rbf", 1.0), KernelSpec(0, "chi2", 0.5)][:m]
    return [kernel_matrix(s, X) for s in specs], y


def test_combined_gram_examples():
    grams, _ = _grams(0)
    assert np.array_equal(combined_gram([1.0], grams[:1]), grams[0])
    K = grams[1]
    assert np.allclose(combined_gram([0.3, 0.7], [K, K]), K)
    assert np.array_equal(combined_gram([0.0, 0.0], grams[:2]), np.zeros_like(K))
    with pytest.raises(MklError):
        combined_gram([1.0, 1.0], [grams[0], grams[0][:3, :3]])


def test_single_kernel_reduces_to_svm():
    grams, y = _grams(1)
    for p in (1.0, 1.5, 2.0):
        model = train_lp_mkl(grams[:1], y, C=2.0, p=p, svm_tol=1e-8)
        assert model.betas.tolist() == [1.0]
        svm = train_binary_svm(grams[0], y, 2.0, tol=1e-8)
        assert model.svm.objective == pytest.approx(svm.objective, abs=1e-9)


def test_identical_kernels_symmetric_point():
    grams, y = _grams(2)
    model = train_lp_mkl([grams[1], grams[1]], y, C=1.0, p=2.0)
    assert np.allclose(model.betas, [np.sqrt(2) / 2] * 2, atol=1e-4)
    assert np.sum(model.betas ** 2) == pytest.approx(1.0, abs=1e-12)
    for p in (1.25, 3.0):
        b = train_lp_mkl([grams[2]] * 3, y, C=1.0, p=p).betas
        assert np.allclose(b, b[0]) and np.sum(b ** p) == pytest.approx(1.0)


@pytest.mark.parametrize("p", [1.0, 1.25, 2.0])
def test_constraint_and_convergence(p):
    for seed in range(4):
        grams, y = _grams(10 + seed)
        model = train_lp_mkl(grams, y, C=1.0, p=p)
        assert np.all(model.betas >= 0)
        assert abs(np.sum(model.betas ** p) - 1) <= 1e-6
        if model.converged:
            prev = model.trace[-2][0] if len(model.trace) > 1 else np.full(3, (1 / 3) ** (1 / p))
            assert np.max(np.abs(model.trace[-1][0] - prev)) < 1e-4


def _grid_oracle(grams, y, C):
    """Minimize the optimal dual value over weights on the simplex at step 0.01."""
    best = (np.inf, None)
    for b in np.round(np.arange(0.0, 1.0001, 0.01), 2):
        value = train_binary_svm(b * grams[0] + (1 - b) * grams[1], y, C, tol=1e-6).objective
        if value < best[0]:
            best = (value, b)
    return best[1]


def test_informative_plus_noise_sparsity():
    for seed in range(3):
        grams, y = make_two_kernel_problem(seed=seed)
        sparse = train_lp_mkl(grams, y, C=1.0, p=1.0)
        dense = train_lp_mkl(grams, y, C=1.0, p=2.0)
        assert sparse.betas[1] < 0.05
        assert dense.betas[1] > sparse.betas[1]
        # p=1 weights sit at the minimizer of the optimal dual value over the simplex
        assert abs(sparse.betas[0] - _grid_oracle(grams, y, 1.0)) <= 0.011


def test_order_equivariance():
    grams, y = _grams(5)
    a = train_lp_mkl(grams, y, C=1.0, p=1.5, svm_tol=1e-8, tol_beta=1e-8, max_outer=500)
    b = train_lp_mkl(grams[::-1], y, C=1.0, p=1.5, svm_tol=1e-8, tol_beta=1e-8, max_outer=500)
    assert np.allclose(a.betas, b.betas[::-1], atol=1e-5)


def test_lp_update_closed_form():
    b = lp_update(np.array([4.0, 1.0, 0.0]), 2.0)
    # ||w|| = (2, 1, 0): beta ~ ||w||^(2/3), normalized to unit l2 norm
    raw = np.array([2.0, 1.0, 0.0]) ** (2 / 3)
    assert np.allclose(b, raw / np.linalg.norm(raw))
    assert np.allclose(lp_update(np.array([9.0, 1.0]), 1.0), [0.75, 0.25])
    with pytest.raises(MklError):
        lp_update(np.zeros(2), 2.0)


def test_predict_examples():
    grams, y = _grams(6)
    single = train_lp_mkl(grams[:1], y, C=1.0)
    probe = np.random.default_rng(0).random((5, len(y)))
    assert np.allclose(predict_mkl(single, [probe]), decision_values(single.svm, probe))
    grams2, y2 = make_two_kernel_problem(seed=0)
    model = train_lp_mkl(grams2, y2, C=10.0, p=1.0)
    model.betas[1] = 0.0
    cross = [grams2[0][:7], grams2[1][:7]]
    doubled = [grams2[0][:7], 2 * grams2[1][:7]]
    assert np.array_equal(predict_mkl(model, cross), predict_mkl(model, doubled))
    with pytest.raises(MklError):
        predict_mkl(model, cross[:1])


def test_separable_training_signs():
    grams, y = make_two_kernel_problem(seed=1)
    model = train_lp_mkl(grams, y, C=10.0, p=2.0)
    assert np.all(np.sign(predict_mkl(model, grams)) == y)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6), p=st.sampled_from([1.0, 1.25, 2.0, 4.0]))
def test_weights_feasible_property(seed, p):
    grams, y = _grams(seed, n=12)
    model = train_lp_mkl(grams, y, C=1.0, p=p)
    assert np.all(model.betas >= 0) and abs(np.sum(model.betas ** p) - 1) <= 1e-6
    assert np.all(model.svm.alphas <= 1.0) and np.all(model.svm.alphas >= 0)


def test_errors():
    grams, y = _grams(7)
    with pytest.raises(MklError):
        train_lp_mkl(grams, y, p=0.5)
    with pytest.raises(MklError):
        train_lp_mkl(grams, np.ones_like(y))
    with pytest.raises(MklError):
        train_lp_mkl([], y)


def test_one_vs_all_skips_absent_class():
    grams, y = _grams(8)
    labels = np.where(y > 0, 0, 2)          # class 1 absent
    models = train_one_vs_all_mkl(grams, labels, 3, C=1.0)
    assert models[1] is None and models[0] is not None
    scores = one_vs_all_scores(models, [g[:4] for g in grams])
    assert np.all(np.isneginf(scores[:, 1]))


def test_model_file(tmp_path):
    grams, y = _grams(9)
    model = train_lp_mkl(grams, y, C=1.0, specs=["f0:linear", "f0:rbf:1.0", "f0:chi2:0.5"])
    write_mkl_model(tmp_path / "m.txt", model)
    svm, rest = read_model(tmp_path / "m.txt")
    assert np.array_equal(svm.alphas, model.svm.alphas)
    assert rest[0] == "p 2.0"
    assert rest[1].startswith("beta f0:linear ") and float(rest[1].split()[-1]) == model.betas[0]
