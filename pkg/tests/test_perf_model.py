import numpy as np
import pytest

from config.settings import PROFILES_DIR, WORKLOADS_DIR
from src.core.exceptions import ConfigError
from src.core.network import NetworkTopology
from src.core.perf_model import (
    REFERENCE_SYSTEMS,
    LayerShape,
    Rail,
    SupplyRails,
    TechProfile,
    TechScaling,
    energy_per_classification,
    latency_estimate,
    load_tech_profile,
    load_workload,
    measured_profile,
    mlp_workload,
    perf_report,
    project_scaling,
    rail_matched_neuron_current,
    rail_report,
    static_power,
)


def test_default_rails_give_measured_power():
    assert SupplyRails.default().power == pytest.approx(18.165e-3, rel=1e-12)


def test_energy_at_the_latency_bound():
    power = SupplyRails.default().power
    assert energy_per_classification(power, 1e-6) == pytest.approx(18.165e-9, rel=1e-12)
    assert energy_per_classification(power, 1e-6) <= 20e-9
    assert energy_per_classification(power, 0.5e-6) == pytest.approx(9.0825e-9, rel=1e-12)
    assert energy_per_classification(0.0, 1e-6) == 0.0


def test_energy_needs_positive_latency():
    with pytest.raises(ValueError):
        energy_per_classification(1e-3, 0.0)


def test_rails_are_validated():
    with pytest.raises(ConfigError):
        Rail("arrays", 0.0, 1e-3)
    with pytest.raises(ConfigError):
        Rail("arrays", 1.0, -1e-3)


def test_settling_model_latency_is_sub_microsecond(tiny_net):
    latency = latency_estimate(tiny_net, "settling-model")
    assert 0.3e-6 <= latency <= 1e-6
    assert latency_estimate(tiny_net, "measured-bound", bound=1e-6) == 1e-6
    with pytest.raises(ConfigError):
        latency_estimate(tiny_net, "oscilloscope")


def test_static_power_of_a_small_network(tiny_net):
    patterns = np.random.default_rng(0).integers(0, 2, (12, 4))
    profile = static_power(tiny_net, patterns)
    assert profile.array_currents.shape == (12,)
    assert np.all(profile.array_currents > 0)
    assert profile.avg_power == pytest.approx(float(np.mean(profile.simulated_power)), rel=1e-12)
    assert profile.rail_power == pytest.approx(18.165e-3, rel=1e-12)
    assert np.all(profile.simulated_power > SupplyRails.default().rail("neurons").power)
    report = perf_report(profile, 1e-6)
    assert report.energy == pytest.approx(report.avg_power * report.latency, rel=1e-12)
    assert report.rail_energy == pytest.approx(18.165e-9, rel=1e-12)
    assert report.avg_power == pytest.approx(report.array_power + report.neuron_power, rel=1e-12)
    histogram = profile.current_histogram(n_bins=5)
    assert sum(row["patterns"] for row in histogram) == 12


def test_power_and_energy_follow_the_pattern(tiny_net):
    zeros = static_power(tiny_net, np.zeros((1, 4), dtype=int))
    ones = static_power(tiny_net, np.ones((1, 4), dtype=int))
    assert ones.avg_power > zeros.avg_power
    assert perf_report(ones, 1e-6).energy > perf_report(zeros, 1e-6).energy
    assert ones.rail_power == zeros.rail_power


def test_all_zero_pattern_draws_the_least_power(tiny_net):
    every_pattern = np.array([[(k >> b) & 1 for b in range(4)] for k in range(16)])
    power = static_power(tiny_net, every_pattern).simulated_power
    assert np.argmin(power) == 0
    assert np.all(power[1:] > power[0])


def test_power_grows_with_every_added_bit(tiny_net):
    chain = np.tril(np.ones((5, 4), dtype=int), k=-1)  # 0, 1, 2, 3 then 4 bits set
    power = static_power(tiny_net, chain).simulated_power
    assert np.all(np.diff(power) > 0)


def test_neuron_static_current_is_configurable(tiny_net):
    patterns = np.random.default_rng(1).integers(0, 2, (8, 4))
    base = static_power(tiny_net, patterns, neuron_current=0.0)
    loaded = static_power(tiny_net, patterns, neuron_current=1e-3)
    assert loaded.avg_power - base.avg_power == pytest.approx(1e-3 * 2.7, rel=1e-9)
    with pytest.raises(ValueError):
        static_power(tiny_net, patterns, neuron_current=-1e-3)


def test_rail_matching_reproduces_the_rail_arithmetic(tiny_net):
    patterns = np.random.default_rng(2).integers(0, 2, (20, 4))
    current = rail_matched_neuron_current(tiny_net, patterns)
    assert 0.0 < current < 18.165e-3 / 2.7
    profile = static_power(tiny_net, patterns, neuron_current=current)
    assert profile.avg_power == pytest.approx(18.165e-3, rel=1e-9)
    # other patterns on the same chip still move the power
    assert static_power(tiny_net, np.ones((1, 4)), neuron_current=current).avg_power > profile.avg_power


def test_rail_matching_clamps_at_zero(tiny_net):
    starved = SupplyRails(rails=(Rail("neurons", 2.7, 0.0), Rail("arrays", 1.05, 1e-12)))
    assert rail_matched_neuron_current(tiny_net, np.ones((2, 4)), starved) == 0.0


def test_rail_report_splits_the_rails():
    report = rail_report(SupplyRails.default(), 1e-6)
    assert report.array_power == pytest.approx(1.05 * 2.9e-3)
    assert report.neuron_power == pytest.approx(2.7 * 5.6e-3)
    assert report.avg_power == pytest.approx(18.165e-3)
    assert report.energy == report.rail_energy == pytest.approx(18.165e-9)


def test_alexnet_workload_cell_count():
    workload = load_workload(WORKLOADS_DIR / "alexnet_conv.json")
    assert sum(layer.cells for layer in workload) == 4_668_160


def test_mlp_workload_matches_chip_cell_count():
    assert sum(layer.cells for layer in mlp_workload(NetworkTopology())) == 101780


def _rail_measured(topology=None):
    topology = topology or NetworkTopology()
    return measured_profile(rail_report(SupplyRails.default(), 1e-6), topology, "rails")


@pytest.mark.parametrize(
    "name,time,energy",
    [("esf1", 1e-4, 3e-7), ("esf3", 6e-5, 2e-7)],
)
def test_projections_land_near_published_figures(name, time, energy):
    profile = load_tech_profile(name, PROFILES_DIR, _rail_measured())
    projection = project_scaling(load_workload(WORKLOADS_DIR / "alexnet_conv.json"), profile)
    assert time / 3 <= projection.time <= time * 3
    assert energy / 3 <= projection.energy <= energy * 3
    summary = projection.to_dict()
    assert summary["assumptions"]["multiplex_steps"] == 3025
    assert summary["assumptions"]["derivation"]["latency_scale"] > 0
    assert set(summary["advantage"]) == {"GPU 28 nm", "ASIC 65 nm"}


def test_esf1_is_derived_from_the_measured_chip():
    measured = _rail_measured()
    profile = load_tech_profile("esf1", PROFILES_DIR, measured)
    assert profile.step_latency == pytest.approx(1e-6 * 0.033)
    assert profile.cell_power == pytest.approx(1.05 * 2.9e-3 / 101780 * 0.014)
    assert profile.neuron_power == pytest.approx(2.7 * 5.6e-3 / 101780 * 0.0014)
    assert profile.derivation["base"] == "measured"
    assert profile.derivation["base_derivation"]["source"] == "rails"
    projection = project_scaling(load_workload(WORKLOADS_DIR / "alexnet_conv.json"), profile)
    assert projection.time == pytest.approx(3025 * 3.3e-8)
    assert projection.energy == pytest.approx(
        3025 * 4_668_160 * (profile.cell_power + profile.neuron_power) * 3.3e-8
    )


def test_esf3_scales_esf1():
    measured = _rail_measured()
    esf1 = load_tech_profile("esf1", PROFILES_DIR, measured)
    esf3 = load_tech_profile("esf3", PROFILES_DIR, measured)
    assert esf3.multiplex_steps == esf1.multiplex_steps == 3025
    assert esf3.step_latency == pytest.approx(esf1.step_latency * 0.606)
    assert esf3.cell_power == pytest.approx(esf1.cell_power * 1.3)
    assert esf3.neuron_power == pytest.approx(esf1.neuron_power * 0.8)
    assert esf3.derivation["base"] == "ESF1 180 nm"


def test_projection_follows_the_simulated_power():
    topology = NetworkTopology()
    low = measured_profile(rail_report(SupplyRails.default(), 1e-6), topology)
    high_rails = SupplyRails(rails=(Rail("neurons", 2.7, 11.2e-3), Rail("arrays", 1.05, 5.8e-3)))
    high = measured_profile(rail_report(high_rails, 1e-6), topology)
    workload = load_workload(WORKLOADS_DIR / "alexnet_conv.json")
    low_energy = project_scaling(workload, load_tech_profile("esf1", PROFILES_DIR, low)).energy
    high_energy = project_scaling(workload, load_tech_profile("esf1", PROFILES_DIR, high)).energy
    assert high_energy == pytest.approx(2 * low_energy)


def test_measured_profile_reproduces_the_chip():
    topology = NetworkTopology()
    projection = project_scaling(mlp_workload(topology), _rail_measured(topology))
    assert projection.time == pytest.approx(1e-6)
    assert projection.energy == pytest.approx(18.165e-9)


def test_energy_grows_with_multiplexing():
    workload = [LayerShape(kernel=3, c_in=16, c_out=32)]
    energies = [
        project_scaling(workload, TechProfile("t", steps, 2e-8, 5e-10, 1e-10)).energy for steps in (1, 10, 100)
    ]
    assert energies[0] < energies[1] < energies[2]


def test_reference_systems_are_static():
    assert REFERENCE_SYSTEMS["visual cortex"] == (3e-2, 5e-8)


def test_profile_errors(tmp_path):
    measured = _rail_measured()
    with pytest.raises(ConfigError, match="esf1"):
        load_tech_profile("missing", PROFILES_DIR, measured)
    bad = tmp_path / "bad.profile"
    bad.write_text("[profile]\nlatency_scale = many\n")
    with pytest.raises(ConfigError):
        TechScaling.from_file(bad)
    (tmp_path / "a.profile").write_text(
        "[profile]\nbase = b\nlatency_scale = 1\narray_power_scale = 1\nneuron_power_scale = 1\n"
    )
    (tmp_path / "b.profile").write_text(
        "[profile]\nbase = a\nlatency_scale = 1\narray_power_scale = 1\nneuron_power_scale = 1\n"
    )
    with pytest.raises(ConfigError, match="cycle"):
        load_tech_profile("a", tmp_path, measured)
    with pytest.raises(ConfigError):
        LayerShape(kernel=0, c_in=1, c_out=1)
