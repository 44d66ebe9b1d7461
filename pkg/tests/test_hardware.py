import numpy as np
import pytest

from taskquant.hardware import (LorentzianCombiner, LorentzianElement,
                                ParameterGrid, PartialConnect, PhaseOnly,
                                PropagationModel, Unconstrained,
                                apply_partial_mask, constrained_design,
                                dma_combiner, lorentzian_response,
                                nearest_complex_blocks, project_lorentzian,
                                project_phase_only, real_composite)
from taskquant.linear_task import (LinearTaskModel, design, excess_mse,
                                   mse_with_digital)


def random_model(rng, n, k):
    q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    cov = (q * rng.uniform(0.3, 3.0, n)) @ q.T
    return LinearTaskModel(obs_cov=cov, task_matrix=rng.standard_normal((k, n)))


def test_phase_only_entries():
    a = np.array([[3 + 4j, -2.0, 0.0]])
    out = project_phase_only(a)
    np.testing.assert_allclose(out, [[0.6 + 0.8j, -1.0, 1.0]])
    # real input stays real
    real = project_phase_only(np.array([[2.0, -0.3, 0.0]]))
    assert np.isrealobj(real)
    np.testing.assert_allclose(real, [[1.0, -1.0, 1.0]])


def test_phase_only_idempotent():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    once = project_phase_only(a)
    np.testing.assert_allclose(project_phase_only(once), once)


def test_partial_mask():
    a = np.arange(8.0).reshape(2, 4) + 1.0
    masked, removed = apply_partial_mask(a, [(0, 1), (2, 3)])
    np.testing.assert_allclose(masked, [[1, 2, 0, 0], [0, 0, 7, 8]])
    assert removed == pytest.approx(np.sqrt(3 ** 2 + 4 ** 2 + 5 ** 2 + 6 ** 2))
    again, residual = apply_partial_mask(masked, [(0, 1), (2, 3)])
    np.testing.assert_allclose(again, masked)
    assert residual == 0.0


def test_partial_mask_diagonal_case():
    a = np.full((3, 3), 2.0)
    masked, _ = apply_partial_mask(a, [(0,), (1,), (2,)])
    np.testing.assert_allclose(masked, 2.0 * np.eye(3))


def test_partial_mask_residual_pythagorean():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 8))
    subsets = [(0, 1), (2, 3), (4, 5), (6, 7)]
    masked, removed = apply_partial_mask(a, subsets)
    assert removed ** 2 + np.linalg.norm(masked) ** 2 == pytest.approx(
        np.linalg.norm(a) ** 2)


def test_partial_mask_rejects_non_partition():
    a = np.zeros((2, 4))
    with pytest.raises(ValueError):
        apply_partial_mask(a, [(0, 1), (1, 2, 3)])
    with pytest.raises(ValueError):
        apply_partial_mask(a, [(0, 1), (2,)])


def test_lorentzian_response_values():
    elem = LorentzianElement(strength=2.0, damping=3.0, resonance=10.0)
    at_res = lorentzian_response(elem, 10.0)
    np.testing.assert_allclose(at_res, 1j * 2.0 * 10.0 / 3.0, rtol=1e-12)
    assert abs(at_res) == pytest.approx(2.0 * 10.0 / 3.0)
    low = lorentzian_response(elem, 0.01)
    assert low == pytest.approx(2.0 * 0.01 ** 2 / 10.0 ** 2, rel=1e-3)


def test_dma_single_element_is_lorentzian():
    elem = LorentzianElement(1.5, 2.0, 8.0)
    out = dma_combiner([[elem]], omega=5.0)
    assert out.shape == (1, 1)
    assert out[0, 0] == lorentzian_response(elem, 5.0)


def test_dma_lossless_propagation_magnitude():
    elem = LorentzianElement(1.5, 2.0, 8.0)
    strips = [[elem, elem, elem]]
    out = dma_combiner(strips, omega=5.0,
                       propagation=PropagationModel(attenuation=0.0, delay=0.3))
    mags = np.abs(out[0])
    np.testing.assert_allclose(mags, mags[0])
    lossy = dma_combiner(strips, omega=5.0,
                         propagation=PropagationModel(attenuation=0.2, delay=0.3))
    assert np.all(np.diff(np.abs(lossy[0])) < 0)


def test_dma_block_sparsity():
    rng = np.random.default_rng(2)
    strips = [[LorentzianElement(*rng.uniform(0.5, 3.0, 3)) for _ in range(3)],
              [LorentzianElement(*rng.uniform(0.5, 3.0, 3)) for _ in range(2)]]
    out = dma_combiner(strips, omega=2.0)
    assert out.shape == (2, 5)
    assert np.all(out[0, 3:] == 0)
    assert np.all(out[1, :3] == 0)
    assert np.all(out[0, :3] != 0)
    assert np.all(out[1, 3:] != 0)


def test_project_lorentzian_exact_point():
    grid = ParameterGrid.regular((0.5, 2.0), (1.0, 3.0), (5.0, 9.0), count=4)
    elem = LorentzianElement(grid.strengths[1], grid.dampings[2],
                             grid.resonances[3])
    omega = 4.0
    desired = np.array([[lorentzian_response(elem, omega)]])
    feasible, params, residual = project_lorentzian(desired, [1], omega, grid)
    assert residual == pytest.approx(0.0, abs=1e-18)
    np.testing.assert_allclose(feasible, desired)
    assert params[(0, 0)] == (grid.strengths[1], grid.dampings[2],
                              grid.resonances[3])


def test_project_lorentzian_off_strip_zero_is_free():
    grid = ParameterGrid.regular((0.5, 2.0), (1.0, 3.0), (5.0, 9.0), count=3)
    desired = np.zeros((2, 2), dtype=complex)
    desired[0, 0] = 0.1
    desired[1, 1] = 0.1
    _, _, residual = project_lorentzian(desired, [1, 1], 4.0, grid)
    base = residual
    desired[0, 1] = 0.5   # off-strip mass now counts
    _, _, residual = project_lorentzian(desired, [1, 1], 4.0, grid)
    assert residual == pytest.approx(base + 0.25)


def test_project_lorentzian_grid_refinement_monotone():
    rng = np.random.default_rng(3)
    desired = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    omega = 4.0
    prop = PropagationModel(attenuation=0.05, delay=0.1)
    residuals = []
    for count in (5, 9, 17):     # each grid contains the previous one
        grid = ParameterGrid.regular((0.5, 2.0), (1.0, 3.0), (5.0, 9.0),
                                     count=count)
        _, _, res = project_lorentzian(desired, [2, 2], omega, grid, prop)
        residuals.append(res)
    assert residuals[0] >= residuals[1] >= residuals[2]


def test_real_composite_roundtrip():
    rng = np.random.default_rng(4)
    c = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    np.testing.assert_allclose(nearest_complex_blocks(real_composite(c)), c)
    with pytest.raises(ValueError):
        nearest_complex_blocks(np.zeros((3, 4)))


def test_constrained_design_unconstrained_matches_plain():
    rng = np.random.default_rng(5)
    model = random_model(rng, 8, 3)
    base = design(model, 3, 8)
    same = constrained_design(model, Unconstrained(), 3, 8)
    np.testing.assert_allclose(same.analog, base.analog)
    np.testing.assert_allclose(same.digital, base.digital)


def test_constrained_design_costs_more():
    rng = np.random.default_rng(6)
    for trial in range(25):
        n = int(rng.integers(4, 12))
        k = int(rng.integers(1, min(n, 4) + 1))
        model = random_model(rng, n, k)
        levels = int(rng.choice([4, 8]))
        base = design(model, k, levels)
        owners = rng.integers(0, k, size=n)
        owners[:k] = np.arange(k)     # every quantizer owns something
        subsets = tuple(tuple(np.flatnonzero(owners == i)) for i in range(k))
        for constraint in (PhaseOnly(), PartialConnect(subsets)):
            con = constrained_design(model, constraint, k, levels)
            assert con.predicted_excess_mse >= base.predicted_excess_mse - 1e-9


def test_constrained_design_reoptimized_digital_helps():
    rng = np.random.default_rng(7)
    model = random_model(rng, 8, 3)
    base = design(model, 3, 8)
    con = constrained_design(model, PhaseOnly(), 3, 8)
    support = con.quantizer.support
    frozen = mse_with_digital(con.analog, base.digital, model, support, 8)
    reopt = excess_mse(con.analog, model, support, 8)
    assert reopt <= frozen + 1e-12


def test_constrained_design_lorentzian_kind():
    rng = np.random.default_rng(8)
    model = random_model(rng, 8, 2)    # embeds a 4x1-ish complex system
    grid = ParameterGrid.regular((0.5, 3.0), (0.5, 3.0), (4.0, 10.0), count=8)
    constraint = LorentzianCombiner(strip_sizes=(2, 2), omega=5.0, grid=grid)
    base = design(model, 4, 8)
    con = constrained_design(model, constraint, 4, 8)
    assert con.predicted_excess_mse >= base.predicted_excess_mse - 1e-9
    # feasible matrix is a real composite with the strip sparsity
    blocks = nearest_complex_blocks(con.analog)
    assert np.all(blocks[0, 2:] == 0)
    assert np.all(blocks[1, :2] == 0)


def test_element_validation():
    with pytest.raises(ValueError):
        LorentzianElement(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        lorentzian_response(LorentzianElement(1.0, 1.0, 1.0), -2.0)
    with pytest.raises(ValueError):
        ParameterGrid(np.array([1.0]), np.array([-1.0]), np.array([1.0]))
