import numpy as np
import pytest

from taskquant.errors import NumericalError
from taskquant.linear_task import (LinearTaskModel, design, equalizing_rotation,
                                   estimate, excess_mse, mse_with_digital,
                                   optimal_digital, recommend_quantizers,
                                   waterfill)
from taskquant.quant import overload_safe_support


def random_model(rng, n=None, k=None, eig_range=(0.3, 3.0)):
    n = n or int(rng.integers(3, 31))
    k = k or int(rng.integers(1, min(n, 8) + 1))
    q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    cov = (q * rng.uniform(*eig_range, n)) @ q.T
    gamma = rng.standard_normal((k, n))
    return LinearTaskModel(obs_cov=cov, task_matrix=gamma)


def test_model_validation():
    with pytest.raises(ValueError):
        LinearTaskModel(obs_cov=np.array([[1.0, 0.5], [0.0, 1.0]]),
                        task_matrix=np.eye(2))
    with pytest.raises(ValueError):
        LinearTaskModel(obs_cov=-np.eye(2), task_matrix=np.eye(2))
    with pytest.raises(ValueError):
        LinearTaskModel(obs_cov=np.eye(2), task_matrix=np.eye(3))


def test_optimal_digital_zero_combiner():
    model = random_model(np.random.default_rng(0), n=6, k=2)
    b = optimal_digital(np.zeros((3, 6)), model, support=1.0, levels=4)
    np.testing.assert_allclose(b, 0.0)


def test_optimal_digital_noiseless_limit_recovers_task():
    model = random_model(np.random.default_rng(1), n=5, k=2)
    analog = np.linalg.qr(np.random.default_rng(2).standard_normal((5, 5)))[0]
    b = optimal_digital(analog, model, support=1.0, levels=2 ** 20)
    np.testing.assert_allclose(b @ analog, model.task_matrix, atol=1e-8)


def test_optimal_digital_scalar_wiener():
    model = LinearTaskModel(obs_cov=np.eye(1), task_matrix=np.eye(1))
    support, levels = 1.0, 4
    sigma2 = 2 * support ** 2 / (3 * levels ** 2)
    b = optimal_digital(np.eye(1), model, support, levels)
    assert b[0, 0] == pytest.approx(1 / (1 + sigma2))


def test_excess_mse_extremes():
    rng = np.random.default_rng(3)
    model = random_model(rng, n=6, k=3)
    total = np.trace(model.estimate_covariance())
    assert excess_mse(np.zeros((2, 6)), model, 1.0, 4) == pytest.approx(total)
    # noiseless quantization of a sufficient statistic
    assert excess_mse(model.task_matrix, model, 1.0, 2 ** 20) == pytest.approx(
        0.0, abs=1e-7)


def test_excess_mse_between_zero_and_total():
    rng = np.random.default_rng(4)
    for _ in range(20):
        model = random_model(rng)
        p = int(rng.integers(1, model.k + 2))
        analog = rng.standard_normal((p, model.n))
        val = excess_mse(analog, model, 2.0, 8)
        assert -1e-9 <= val <= np.trace(model.estimate_covariance()) + 1e-9


def test_waterfill_single_mode():
    margin, levels = 4.0, 8
    gains, waterline = waterfill(np.array([1.0]), margin, levels, 1)
    assert waterline == pytest.approx(1 + 3 * levels ** 2 / (2 * margin))
    assert gains[0] == pytest.approx(1.0)


def test_waterfill_zero_modes_get_zero():
    gains, _ = waterfill(np.array([1.0, 0.0]), 3.0, 2, 2)
    np.testing.assert_allclose(gains, [1.0, 0.0], atol=1e-12)


def test_waterfill_matches_bisection_oracle():
    # independent root finder on the normalization equation
    rng = np.random.default_rng(5)
    for _ in range(25):
        count = int(rng.integers(1, 9))
        vals = np.sort(rng.uniform(0, 3, count))[::-1]
        if vals[0] == 0:
            continue
        channels = int(rng.integers(1, count + 2))
        margin = float(rng.uniform(1, 30))
        levels = int(rng.choice([2, 4, 8, 16]))
        gains, waterline = waterfill(vals, margin, levels, channels)
        coef = 2 * margin / (3 * levels ** 2 * channels)
        active = vals[:channels]

        def filled(z):
            return coef * np.maximum(z * active - 1, 0).sum()

        lo, hi = 0.0, 1e12
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if filled(mid) < 1.0:
                lo = mid
            else:
                hi = mid
        assert waterline == pytest.approx(0.5 * (lo + hi), abs=1e-10 * hi + 1e-10)
        assert filled(waterline) == pytest.approx(1.0, rel=1e-10)
        assert np.all(gains >= 0)


def test_waterfill_degenerate_task():
    with pytest.raises(ValueError, match="degenerate"):
        waterfill(np.zeros(3), 4.0, 4, 2)


def test_rotation_identity_when_equal():
    np.testing.assert_allclose(equalizing_rotation(np.full(4, 2.5)), np.eye(4))


def test_rotation_two_by_two():
    u = equalizing_rotation(np.array([2.0, 0.0]))
    rotated = u @ np.diag([2.0, 0.0]) @ u.T
    np.testing.assert_allclose(np.diag(rotated), [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(u @ u.T, np.eye(2), atol=1e-12)


def test_rotation_property_random_draws():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = int(rng.integers(1, 9))
        d = rng.uniform(0, 5, p)
        u = equalizing_rotation(d)
        rotated = np.diag(u @ np.diag(d) @ u.T)
        assert np.max(np.abs(u @ u.T - np.eye(p))) < 1e-10
        assert rotated.max() - rotated.min() <= 1e-9 * max(d.sum(), 1e-12)


def test_rotation_rejects_off_diagonal():
    with pytest.raises(ValueError):
        equalizing_rotation(np.array([[1.0, 0.5], [0.5, 2.0]]))


def test_design_self_consistency_and_equalization():
    rng = np.random.default_rng(7)
    for _ in range(30):
        model = random_model(rng)
        levels = int(rng.choice([2, 4, 8, 16]))
        scale = min(4.0, 0.95 * np.sqrt(3) * levels)
        p = int(rng.integers(1, model.k + 3))
        des = design(model, p, levels, support_scale=scale)
        direct = excess_mse(des.analog, model, des.quantizer.support, levels)
        assert des.predicted_excess_mse == pytest.approx(direct, rel=1e-8)
        var = np.einsum("ij,jk,ik->i", des.analog, model.obs_cov, des.analog)
        assert var.max() - var.min() <= 1e-8 * var.max()


def test_design_white_estimate_shares_task_row_space():
    # when the task-estimate covariance is a scaled identity, combining the
    # task map itself is optimal: row spaces must agree
    rng = np.random.default_rng(8)
    n, k = 8, 3
    gamma = np.linalg.qr(rng.standard_normal((n, k)))[0].T
    model = LinearTaskModel(obs_cov=np.eye(n), task_matrix=gamma)
    des = design(model, k, 8)
    proj_task = gamma.T @ np.linalg.pinv(gamma.T)
    proj_analog = des.analog.T @ np.linalg.pinv(des.analog.T)
    np.testing.assert_allclose(proj_task, proj_analog, atol=1e-9)


def test_design_rank_one_predicted_closed_form():
    rng = np.random.default_rng(9)
    n = 6
    g = rng.standard_normal((1, n))
    model = LinearTaskModel(obs_cov=np.eye(n), task_matrix=g)
    des = design(model, 1, 8)
    lam = des.singular_values[0]
    assert des.predicted_excess_mse == pytest.approx(lam / des.waterline, rel=1e-10)


def test_design_unserved_tail():
    rng = np.random.default_rng(10)
    model = random_model(rng, n=10, k=5)
    p = 2
    des = design(model, p, 4)
    tail = (des.singular_values[p:model.k] ** 2).sum()
    assert des.predicted_excess_mse > tail
    fine = design(model, p, 2 ** 15)
    assert fine.predicted_excess_mse == pytest.approx(tail, rel=1e-3)


def test_design_monotone_in_levels():
    model = random_model(np.random.default_rng(11), n=12, k=4)
    values = [design(model, 4, lv, support_scale=3.0).predicted_excess_mse
              for lv in (2, 4, 8, 16, 32, 64)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_design_dominates_quantizing_the_estimate():
    # 200 random models: joint design beats combining the task estimate
    rng = np.random.default_rng(12)
    for _ in range(200):
        n = int(rng.integers(4, 16))
        model = random_model(rng, n=n, k=int(rng.integers(1, min(n, 5) + 1)))
        levels = int(rng.choice([4, 8, 16]))
        des = design(model, model.k, levels)
        _, margin = overload_safe_support(4.0, levels, model.k)
        var = np.einsum("ij,jk,ik->i", model.task_matrix, model.obs_cov,
                        model.task_matrix)
        support = np.sqrt(margin * var.max())
        baseline = excess_mse(model.task_matrix, model, support, levels)
        assert des.predicted_excess_mse <= baseline + 1e-9


def test_overload_is_rare_at_four_sigma():
    rng = np.random.default_rng(13)
    model = random_model(rng, n=10, k=4)
    des = design(model, 4, 16, support_scale=4.0)
    chol = np.linalg.cholesky(model.obs_cov)
    x = rng.standard_normal((200_000, model.n)) @ chol.T
    z = x @ des.analog.T
    rate = (np.abs(z) > des.quantizer.support).mean()
    assert rate < 1e-3


def test_recommend_quantizers():
    rng = np.random.default_rng(14)
    model = random_model(rng, n=9, k=4)
    assert recommend_quantizers(model) == 4
    gamma = np.vstack([model.task_matrix[:2], model.task_matrix[1]])
    dup = LinearTaskModel(obs_cov=model.obs_cov, task_matrix=gamma)
    assert recommend_quantizers(dup) == 2


def test_estimate_deterministic_pipeline():
    model = random_model(np.random.default_rng(15), n=6, k=2)
    des = design(model, 2, 4)
    out = estimate(des, np.zeros(6), dither=False)
    mid = des.quantizer.alphabet()[des.quantizer.levels // 2]
    np.testing.assert_allclose(out, des.digital @ np.full(2, mid))


def test_estimate_fine_quantization_limit():
    rng = np.random.default_rng(16)
    model = random_model(rng, n=6, k=2)
    des = design(model, 2, 2 ** 14)
    # stay well inside the support so only the fine-cell error remains
    chol = np.linalg.cholesky(model.obs_cov)
    x = 0.3 * rng.standard_normal((64, 6)) @ chol.T
    out = estimate(des, x, dither=False)
    # worst case: half a cell per channel, propagated through the recovery
    bound = np.abs(des.digital).sum(axis=1).max() * des.quantizer.spacing / 2
    np.testing.assert_allclose(out, x @ (des.digital @ des.analog).T,
                               atol=1.01 * bound)


def test_estimate_dimension_mismatch():
    model = random_model(np.random.default_rng(17), n=6, k=2)
    des = design(model, 2, 4)
    with pytest.raises(ValueError):
        estimate(des, np.zeros(5), dither=False)


def test_mse_with_digital_matches_expansion():
    rng = np.random.default_rng(18)
    model = random_model(rng, n=8, k=3)
    analog = rng.standard_normal((3, 8))
    best = optimal_digital(analog, model, 2.0, 8)
    assert mse_with_digital(analog, best, model, 2.0, 8) == pytest.approx(
        excess_mse(analog, model, 2.0, 8), rel=1e-9)
    worse = best + 0.1 * rng.standard_normal(best.shape)
    assert mse_with_digital(analog, worse, model, 2.0, 8) > excess_mse(
        analog, model, 2.0, 8)


def test_ill_conditioned_gram_reports_condition():
    with pytest.raises(ValueError):
        LinearTaskModel(obs_cov=np.diag([1.0, 0.0]), task_matrix=np.eye(2))
    model = LinearTaskModel(obs_cov=np.diag([1.0, 1e-16]), task_matrix=np.eye(2))
    with pytest.raises(NumericalError) as err:
        optimal_digital(np.eye(2), model, support=1e-12, levels=2 ** 30)
    assert err.value.condition_number is not None
