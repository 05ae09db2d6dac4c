import math

import numpy as np
import pytest

from config.experiment import ImportSettings
from src.core.exceptions import ConfigError, DegenerateScaleError, ProgrammingError
from src.core.network import NetworkTopology, forward_batch
from src.training.importer import (
    DisturbModel,
    hidden_output_probe,
    ideal_plan,
    map_weights_to_targets,
    reachable_range,
    tune_sequential,
)
from src.training.trainer import TrainedWeights, coupling_gain, reference_forward
from tests.conftest import make_net, random_weights

NO_DISTURB = DisturbModel(p_disturb=0.0, sigma_disturb=0.0)


def test_tuned_cell_count_rounds_up(tiny_net, tiny_weights):
    # 2 * (5*3 + 4*2) = 46 cells
    for fraction, expected in ((0.3, 14), (0.5, 23), (1.0, 46), (0.01, 1)):
        plan = map_weights_to_targets(tiny_weights, tiny_net, fraction)
        assert plan.n_cells == 46
        assert plan.n_tuned == expected == math.ceil(round(fraction * 46, 9))


def cell_magnitudes(w):
    norm = np.abs(w.T) / np.abs(w).max()
    mag = np.zeros((2 * w.shape[1], w.shape[0]))
    mag[0::2] = np.where(w.T > 0, norm, 0.0)
    mag[1::2] = np.where(w.T < 0, norm, 0.0)
    return mag


def test_largest_weights_are_tuned_first(tiny_net, tiny_weights):
    plan = map_weights_to_targets(tiny_weights, tiny_net, 0.3)
    magnitude = np.concatenate([cell_magnitudes(tiny_weights.w1).ravel(), cell_magnitudes(tiny_weights.w2).ravel()])
    selected = np.concatenate([plan.tune_mask[0].ravel(), plan.tune_mask[1].ravel()])
    assert magnitude[selected].min() >= magnitude[~selected].max()
    assert np.all(plan.targets[0][~plan.tune_mask[0]] == plan.baselines[0])


def test_zero_weight_leaves_both_cells_at_baseline(tiny_net, tiny_weights):
    w1 = tiny_weights.w1.copy()
    w1[2, 1] = 0.0
    weights = TrainedWeights(w1=w1, w2=tiny_weights.w2)
    plan = ideal_plan(weights, tiny_net)
    assert plan.targets[0][2, 2] == plan.baselines[0]
    assert plan.targets[0][3, 2] == plan.baselines[0]
    imported, _ = tune_sequential(tiny_net, plan, seed=0)
    assert imported.array1.v_t[2, 2] == tiny_net.phys.v_t_max
    assert imported.array1.v_t[3, 2] == tiny_net.phys.v_t_max


def test_sign_selects_the_differential_half(tiny_net, tiny_weights):
    plan = ideal_plan(tiny_weights, tiny_net)
    w = tiny_weights.w1.T
    baseline = plan.baselines[0]
    np.testing.assert_array_equal(plan.targets[0][0::2] > baseline, w > 0)
    np.testing.assert_array_equal(plan.targets[0][1::2] > baseline, w < 0)


def test_targets_are_scale_invariant(tiny_net, tiny_weights):
    scaled = TrainedWeights(w1=tiny_weights.w1 * 7.0, w2=tiny_weights.w2 * 0.25)
    a = map_weights_to_targets(tiny_weights, tiny_net, 0.5)
    b = map_weights_to_targets(scaled, tiny_net, 0.5)
    for ta, tb in zip(a.targets, b.targets):
        np.testing.assert_allclose(ta, tb, rtol=1e-12)
    np.testing.assert_array_equal(a.tune_mask[1], b.tune_mask[1])


def test_all_zero_layer_is_rejected(tiny_net, tiny_weights):
    weights = TrainedWeights(w1=np.zeros_like(tiny_weights.w1), w2=tiny_weights.w2)
    with pytest.raises(DegenerateScaleError):
        map_weights_to_targets(weights, tiny_net, 0.3)


def test_unreachable_target_names_the_cell(tiny_net, tiny_weights):
    with pytest.raises(ProgrammingError, match="array1 cell"):
        map_weights_to_targets(tiny_weights, tiny_net, 0.3, i_hi=(1e-6, 1e-7))


def test_plan_arguments_are_validated(tiny_net, tiny_weights):
    with pytest.raises(ConfigError):
        map_weights_to_targets(tiny_weights, tiny_net, 0.0)
    with pytest.raises(ConfigError):
        map_weights_to_targets(tiny_weights, tiny_net, 0.3, order="diagonal")
    with pytest.raises(ConfigError):
        DisturbModel(p_disturb=1.5)


def test_reachable_range_lies_inside_device_limits(tiny_net):
    low, high = reachable_range(tiny_net.array1, tiny_net.phys)
    assert tiny_net.phys.i_floor < low < high < tiny_net.phys.i_sat
    # erased array-2 cells sit at the leakage floor at the 2.7 V reference gate
    low2, _ = reachable_range(tiny_net.array2, tiny_net.phys)
    assert low2 == pytest.approx(tiny_net.phys.i_floor)


def test_ideal_import_is_exact(tiny_net, tiny_weights):
    plan = ideal_plan(tiny_weights, tiny_net)
    _, report = tune_sequential(tiny_net, plan, seed=0)
    assert len(report) == plan.n_tuned
    np.testing.assert_allclose(report.achieved, report.target, rtol=1e-9)
    assert report.stats()["n_disturbed"] == 0


def test_tuning_errors_stay_inside_the_accuracy_band(tiny_net, tiny_weights):
    plan = map_weights_to_targets(tiny_weights, tiny_net, 1.0, accuracy=0.05, disturb=NO_DISTURB)
    _, report = tune_sequential(tiny_net, plan, seed=3)
    stats = report.stats()
    assert stats["fraction_outside_band"] == 0.0
    assert 0.0 < stats["max_abs_relative_error"] <= 0.05 + 1e-9


def test_disturb_creates_outliers_only_on_tuned_cells(tiny_net, tiny_weights):
    plan = map_weights_to_targets(
        tiny_weights, tiny_net, 1.0, accuracy=0.05, disturb=DisturbModel(p_disturb=1.0, sigma_disturb=0.5)
    )
    _, report = tune_sequential(tiny_net, plan, seed=3)
    stats = report.stats()
    assert stats["n_disturbed"] > 0
    assert stats["max_abs_relative_error"] > 0.05
    erased = report.target <= np.where(report.array_index == 1, plan.baselines[0], plan.baselines[1])
    assert not np.any(report.disturbed & erased)


def test_every_tuned_cell_is_reported_once(tiny_net, tiny_weights):
    plan = map_weights_to_targets(tiny_weights, tiny_net, 0.5, order="random", order_seed=2)
    _, report = tune_sequential(tiny_net, plan, seed=1)
    cells = set(zip(report.array_index.tolist(), report.rows.tolist(), report.cols.tolist()))
    assert len(cells) == len(report) == plan.n_tuned
    rows = report.to_rows()
    assert list(rows[0]) == ["cell_id", "array", "row", "col", "target_A", "achieved_A", "disturbed"]


def test_tuning_orders_cover_the_same_cells(tiny_net, tiny_weights):
    orders = {
        name: map_weights_to_targets(tiny_weights, tiny_net, 0.5, order=name, order_seed=5).order[0]
        for name in ("row-major", "column-major", "random")
    }
    reference = sorted(map(tuple, orders["row-major"].tolist()))
    for order in orders.values():
        assert sorted(map(tuple, order.tolist())) == reference
    cols = orders["column-major"][:, 1]
    assert np.all(np.diff(cols) >= 0)


def test_import_is_reproducible(tiny_net, tiny_weights):
    plan = map_weights_to_targets(tiny_weights, tiny_net, 1.0, disturb=DisturbModel(p_disturb=0.2))
    first, report_a = tune_sequential(tiny_net, plan, seed=9)
    second, report_b = tune_sequential(tiny_net, plan, seed=9)
    np.testing.assert_array_equal(report_a.achieved, report_b.achieved)
    np.testing.assert_array_equal(first.array2.v_t, second.array2.v_t)
    _, report_c = tune_sequential(tiny_net, plan, seed=10)
    assert not np.array_equal(report_a.achieved, report_c.achieved)


def test_gain_trim_follows_layer_scale(tiny_net, tiny_weights):
    plan = ideal_plan(tiny_weights, tiny_net)
    scale = np.abs(tiny_weights.w1).max()
    expected = 1.0 / (tiny_net.hidden_params.r_f * 2e-7 / scale)
    assert plan.hidden_params.act_gain == pytest.approx(expected)


def test_ideal_import_reproduces_the_reference_model(flat_phys):
    topology = NetworkTopology(n_inputs=6, n_hidden=5, n_outputs=3)
    net = make_net(topology, flat_phys)
    weights = random_weights(topology, seed=21)
    imported, _ = tune_sequential(net, ideal_plan(weights, net), seed=0)

    patterns = np.random.default_rng(22).integers(0, 2, (30, 6))
    kappa = coupling_gain(flat_phys, net.hidden_params)
    logits = reference_forward(weights, patterns, kappa).logits
    outputs = forward_batch(imported, patterns).output_voltages
    scale = imported.output_params.r_f * 1e-7 / np.abs(weights.w2).max()
    np.testing.assert_allclose((outputs - imported.output_params.v_bias) / scale, logits, rtol=1e-6, atol=1e-6)


def test_probe_of_identical_networks(tiny_net, tiny_weights):
    imported, _ = tune_sequential(tiny_net, ideal_plan(tiny_weights, tiny_net), seed=0)
    patterns = np.random.default_rng(6).integers(0, 2, (20, 4))
    probe = hidden_output_probe(imported, imported, patterns)
    np.testing.assert_array_equal(probe.ideal, probe.imported)
    assert probe.correlation() == pytest.approx(1.0)
    assert np.all(probe.ideal > imported.hidden_params.v_out_min)


def test_tuning_error_grows_with_the_accuracy_setting(tiny_net, tiny_weights):
    mean_errors = []
    for accuracy in (0.01, 0.02, 0.05, 0.1):
        plan = map_weights_to_targets(tiny_weights, tiny_net, 1.0, accuracy=accuracy, disturb=NO_DISTURB)
        errors = [tune_sequential(tiny_net, plan, seed=seed)[1].stats()["rms_relative_error"] for seed in range(20)]
        mean_errors.append(np.mean(errors))
    assert np.all(np.diff(mean_errors) > 0)


def test_cells_left_out_of_the_plan_keep_their_state(tiny_net, tiny_weights):
    plan = map_weights_to_targets(
        tiny_weights, tiny_net, 0.4, accuracy=0.05, disturb=DisturbModel(p_disturb=1.0, sigma_disturb=0.5)
    )
    imported, _ = tune_sequential(tiny_net, plan, seed=4)
    for before, after, mask in zip((tiny_net.array1, tiny_net.array2), (imported.array1, imported.array2),
                                   plan.tune_mask):
        assert (~mask).any()
        np.testing.assert_array_equal(after.v_t[~mask], before.v_t[~mask])


def test_default_import_tracks_the_ideal_hidden_outputs(phys):
    settings = ImportSettings()
    topology = NetworkTopology(n_inputs=40, n_hidden=12, n_outputs=4)
    net = make_net(topology, phys)
    weights = random_weights(topology, seed=23)
    plan = map_weights_to_targets(
        weights, net, settings.tuned_fraction, i_hi=(settings.i_hi1, settings.i_hi2), accuracy=settings.accuracy,
        disturb=DisturbModel(p_disturb=settings.p_disturb, sigma_disturb=settings.sigma_disturb),
    )
    imported, _ = tune_sequential(net, plan, seed=0)
    ideal, _ = tune_sequential(
        net, ideal_plan(weights, net, settings.tuned_fraction, i_hi=(settings.i_hi1, settings.i_hi2)), seed=0
    )
    patterns = np.random.default_rng(24).integers(0, 2, (settings.probe_patterns, 40))
    probe = hidden_output_probe(ideal, imported, patterns)
    assert probe.ideal.size > 50
    assert probe.correlation() > 0.95
