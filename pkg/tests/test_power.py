import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enersched.errors import (
    AttributionUndefinedError,
    ContractViolation,
    DegenerateFitError,
    InsufficientDataError,
    NoDataError,
)
from enersched.power import (
    CounterSample,
    PowerModel,
    PowerSample,
    attribute_task_energy,
    correct_attribution,
    estimate_process_power,
    fit_constant_model,
    fit_power_model,
    process_power_series,
    read_counters,
    read_model,
    read_power,
    write_counters,
    write_model,
    write_power,
)
from power_fixtures import TRUE_INTERCEPT, TRUE_WEIGHTS, synthetic_trace


def test_fit_recovers_noiseless_model():
    counters, power = synthetic_trace()
    model = fit_power_model(counters, power, "node0")
    np.testing.assert_allclose(model.weights, TRUE_WEIGHTS, rtol=1e-6)
    assert model.intercept_w == pytest.approx(TRUE_INTERCEPT, rel=1e-6)
    assert model.r_squared >= 0.999999
    assert model.report.intervals_used == 50


@pytest.mark.parametrize("seed", range(10))
def test_fit_with_noise_keeps_high_r_squared(seed):
    counters, power = synthetic_trace(noise_w=1.0, seed=seed)
    assert fit_power_model(counters, power, "node0").r_squared >= 0.99


def test_fit_needs_five_intervals():
    counters, power = synthetic_trace(n_intervals=4)
    with pytest.raises(InsufficientDataError):
        fit_power_model(counters, power, "node0")


def test_fit_zero_counters_is_degenerate():
    counters = [CounterSample(float(t), 1) for t in range(10)]
    power = [PowerSample(float(t), "n", 110.0) for t in range(10)]
    with pytest.raises(DegenerateFitError) as err:
        fit_power_model(counters, power, "n")
    assert "llc_misses" in err.value.columns
    assert fit_constant_model(power, "n").intercept_w == pytest.approx(110.0)


def test_fit_collinear_columns_named():
    counters, power = synthetic_trace()
    tied = [CounterSample(c.timestamp_s, c.process_id, c.llc_misses, c.instructions_retired, c.cpu_cycles, c.cpu_cycles)
            for c in counters]
    with pytest.raises(DegenerateFitError) as err:
        fit_power_model(tied, power, "node0")
    assert {"cpu_cycles", "ref_cycles"} <= set(err.value.columns)


def test_negative_intercept_clamped(caplog):
    counters, power = synthetic_trace(intercept=-5.0)
    model = fit_power_model(counters, power, "node0")
    assert model.intercept_w == 0.0 and model.report.intercept_clamped


def test_alignment_drops_far_samples():
    counters, power = synthetic_trace(n_intervals=10)
    shifted = [PowerSample(p.timestamp_s + (0.7 if i == 3 else 0.2), p.device_id, p.power_w) for i, p in enumerate(power)]
    model = fit_power_model(counters, shifted, "node0")
    assert model.report.intervals_used == 9
    assert model.report.dropped_power_samples == 1


def test_process_estimate_single_term():
    model = PowerModel("n", (1e-7, 0, 0, 0), 0.0, 1.0)
    assert estimate_process_power(model, CounterSample(0, 1, 1e8)) == pytest.approx(10.0)
    assert estimate_process_power(model, CounterSample(0, 1)) == 0.0


def test_process_estimate_dot_product():
    model = PowerModel("n", TRUE_WEIGHTS, TRUE_INTERCEPT, 1.0)
    assert estimate_process_power(model, CounterSample(0, 1, 1e7, 1e9, 2e9, 2e9)) == pytest.approx(11.0)


def test_zero_counters_predict_intercept_at_node_level():
    model = PowerModel("n", TRUE_WEIGHTS, TRUE_INTERCEPT, 1.0)
    assert model.predict_node((0, 0, 0, 0)) == TRUE_INTERCEPT


@pytest.mark.parametrize(
    "measured, raw, expected",
    [
        (100.0, {"A": 30.0, "B": 10.0}, {"A": 75.0, "B": 25.0}),
        (50.0, {"A": 50.0}, {"A": 50.0}),
        (80.0, {"A": 1.0, "B": 1.0, "C": 2.0}, {"A": 20.0, "B": 20.0, "C": 40.0}),
    ],
)
def test_correction_examples(measured, raw, expected):
    got = correct_attribution(measured, raw)
    assert got == pytest.approx(expected, rel=1e-12)


def test_correction_all_zero_raw():
    with pytest.raises(AttributionUndefinedError):
        correct_attribution(100.0, {"A": 0.0, "B": 0.0})


def test_correction_dynamic_only_subtracts_idle():
    got = correct_attribution(100.0, {"A": 3.0, "B": 1.0}, idle_w=60.0)
    assert got == pytest.approx({"A": 30.0, "B": 10.0})


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e4), st.lists(st.floats(1e-6, 1e4), min_size=1, max_size=12))
def test_correction_conserves_measured_power(measured, raws):
    got = correct_attribution(measured, {i: r for i, r in enumerate(raws)})
    assert math.fsum(got.values()) == pytest.approx(measured, rel=1e-9, abs=1e-12)
    assert all(v >= 0 for v in got.values())


def test_series_conserve_each_interval():
    counters, power = synthetic_trace(noise_w=3.0)
    model = fit_power_model(counters, power, "node0")
    series = process_power_series(model, counters, power)
    measured = {p.timestamp_s: p.power_w for p in power}
    totals = {}
    for s in series.values():
        for t, w in s.samples:
            totals[t] = totals.get(t, 0.0) + w
    for t, w in totals.items():
        assert w == pytest.approx(measured[t], rel=1e-9)


def test_task_energy_constant_power():
    assert attribute_task_energy([(float(t), 50.0) for t in range(20)], 3.0, 13.0) == pytest.approx(500.0)


def test_task_energy_trapezoid():
    assert attribute_task_energy([(0.0, 0.0), (2.0, 100.0)], 0.0, 2.0) == pytest.approx(100.0)


def test_task_energy_linear_ramp():
    samples = [(float(t), float(t)) for t in range(11)]
    assert attribute_task_energy(samples, 2.5, 7.5) == pytest.approx((7.5**2 - 2.5**2) / 2, rel=1e-12)


def test_task_energy_constant_extension_outside_span():
    samples = [(1.0, 10.0), (2.0, 30.0)]
    assert attribute_task_energy(samples, 0.0, 3.0) == pytest.approx(10.0 + 20.0 + 30.0)


def test_task_energy_errors():
    with pytest.raises(NoDataError):
        attribute_task_energy([], 0, 1)
    with pytest.raises(ContractViolation):
        attribute_task_energy([(0.0, 1.0)], 2.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 500), min_size=2, max_size=30),
    st.floats(-2, 32), st.floats(0, 20), st.floats(0, 20),
)
def test_task_energy_additive(powers, a, d1, d2):
    samples = [(float(t), p) for t, p in enumerate(powers)]
    b, c = a + d1, a + d1 + d2
    whole = attribute_task_energy(samples, a, c)
    parts = attribute_task_energy(samples, a, b) + attribute_task_energy(samples, b, c)
    assert parts == pytest.approx(whole, rel=1e-9, abs=1e-9)


def test_csv_and_model_round_trip(tmp_path):
    counters, power = synthetic_trace(n_intervals=6)
    write_counters(counters, tmp_path / "c.csv")
    write_power(power, tmp_path / "p.csv")
    assert read_counters(tmp_path / "c.csv") == counters
    assert read_power(tmp_path / "p.csv") == power
    model = fit_power_model(counters, power, "node0")
    write_model(model, tmp_path / "m.json")
    assert read_model(tmp_path / "m.json") == model


def test_empty_counters_file(tmp_path):
    (tmp_path / "c.csv").write_text("")
    assert read_counters(tmp_path / "c.csv") == []
