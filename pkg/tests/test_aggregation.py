import math

import numpy as np
import pytest

from spindlewatch.aggregation import (
    CutSettings,
    MetricDef,
    SegmentationSettings,
    co_operator,
    compute_smart_data,
    criterion_series,
    exceedance_integral,
    exceedance_time,
    learn_threshold,
    quadratic_mean,
    segment_periods,
    t_operator,
)
from spindlewatch.errors import OperatorError, ThresholdLearningError
from spindlewatch.models import CriterionSeries, Threshold, ToolUsagePeriod

from conftest import make_record


def series(values, criterion="nh", start=0.0):
    return CriterionSeries(criterion_id=criterion, start_time=start,
                           values=np.asarray(values, dtype=float))


def threshold(value, criterion="nh"):
    return Threshold(criterion_id=criterion, value=value, provenance="configured")


def brute_force_co(values, t, dt=0.1):
    terms = []
    for x in values:
        if x > t:
            terms.append((x - t) * dt)
    return math.fsum(terms)


def brute_force_t(values, t, dt=0.1):
    count = 0
    for x in values:
        if x > t:
            count += 1
    return count * dt


class TestQuadraticMean:
    def test_equal_inputs_are_identity(self):
        for c in (0.0, 1.0, 7.25, 123.5):
            assert quadratic_mean((c, c, c, c)) == pytest.approx(c, rel=1e-12)

    def test_hand_evaluated_case(self):
        assert quadratic_mean((3.0, 4.0, 0.0, 0.0)) == 2.5

    def test_zero(self):
        assert quadratic_mean((0.0, 0.0, 0.0, 0.0)) == 0.0

    def test_bounds_property(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            v = rng.uniform(0.0, 50.0, 4)
            q = quadratic_mean(v)
            assert v.max() / 2.0 <= q <= v.max() + 1e-12

    def test_bad_inputs(self):
        with pytest.raises(OperatorError):
            quadratic_mean((1.0, 2.0, 3.0))
        with pytest.raises(OperatorError):
            quadratic_mean((1.0, 2.0, float("nan"), 3.0))


class TestCoOperator:
    def test_hand_evaluated_definition(self):
        # samples 25, 30, 15 against T=20: 0.5 + 1.0 + 0 = 1.5
        assert co_operator(series([25.0, 30.0, 15.0]), threshold(20.0), 0.0, 0.2) == 1.5

    def test_all_below_threshold(self):
        assert co_operator(series([5.0, 10.0, 19.9]), threshold(20.0), 0.0, 0.2) == 0.0

    def test_exact_threshold_not_counted(self):
        assert co_operator(series([20.0, 20.0]), threshold(20.0), 0.0, 0.1) == 0.0

    def test_matches_brute_force_oracle_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 500))
            values = rng.uniform(0.0, 50.0, n)
            t = float(rng.uniform(5.0, 45.0))
            got = co_operator(series(values), threshold(t), 0.0, (n - 1) * 0.1)
            assert got == brute_force_co(values, t)

    def test_criterion_mismatch_rejected(self):
        with pytest.raises(OperatorError):
            co_operator(series([1.0], criterion="nh"), threshold(1.0, "vrms"), 0.0, 0.0)

    def test_window_outside_series_rejected(self):
        with pytest.raises(OperatorError):
            co_operator(series([1.0, 2.0]), threshold(1.0), 0.0, 5.0)

    def test_sub_window_selection(self):
        s = series([100.0, 25.0, 30.0, 15.0, 100.0])
        # window [0.1, 0.3] selects samples 25, 30, 15 only
        assert co_operator(s, threshold(20.0), 0.1, 0.3) == 1.5


class TestTOperator:
    def test_hand_evaluated_definition(self):
        assert t_operator(series([25.0, 30.0, 15.0]), threshold(20.0), 0.0, 0.2) == \
            pytest.approx(0.2)

    def test_saturation(self):
        n = 37
        got = t_operator(series([99.0] * n), threshold(20.0), 0.0, (n - 1) * 0.1)
        assert got == n * 0.1

    def test_strict_inequality_at_threshold(self):
        got = t_operator(series([20.0, 20.000001, 19.999999]), threshold(20.0), 0.0, 0.2)
        assert got == 0.1

    def test_matches_brute_force_oracle_exactly(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(1, 500))
            values = rng.uniform(0.0, 50.0, n)
            t = float(rng.uniform(5.0, 45.0))
            got = t_operator(series(values), threshold(t), 0.0, (n - 1) * 0.1)
            assert got == brute_force_t(values, t)


class TestOperatorInvariants:
    def test_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 300))
            values = rng.uniform(0.0, 50.0, n)
            t = float(rng.uniform(5.0, 45.0))
            s = series(values)
            t_f = (n - 1) * 0.1
            co = co_operator(s, threshold(t), 0.0, t_f)
            t_op = t_operator(s, threshold(t), 0.0, t_f)
            assert co >= 0.0
            assert co <= (max(values.max() - t, 0.0)) * t_op + 1e-9
            assert 0.0 <= t_op <= t_f - 0.0 + 0.1 + 1e-9

    def test_additivity_over_sample_aligned_split(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(3, 300))
            values = rng.uniform(0.0, 50.0, n)
            s = series(values)
            t = threshold(20.0)
            t_f = (n - 1) * 0.1
            k = int(rng.integers(0, n - 1))
            split = k * 0.1
            whole = co_operator(s, t, 0.0, t_f)
            parts = co_operator(s, t, 0.0, split) + co_operator(s, t, split + 0.1, t_f)
            assert whole == pytest.approx(parts, abs=1e-9)
            whole_t = t_operator(s, t, 0.0, t_f)
            parts_t = t_operator(s, t, 0.0, split) + t_operator(s, t, split + 0.1, t_f)
            assert whole_t == pytest.approx(parts_t, abs=1e-12)

    def test_threshold_translation_invariance(self):
        rng = np.random.default_rng(7)
        values = rng.uniform(0.0, 50.0, 200)
        for c in (-5.0, 3.0, 17.5):
            base = exceedance_integral(values, 20.0)
            shifted = exceedance_integral(values + c, 20.0 + c)
            assert shifted == pytest.approx(base, rel=1e-9, abs=1e-9)
            assert exceedance_time(values + c, 20.0 + c) == exceedance_time(values, 20.0)


class TestSegmentation:
    def test_two_runs_with_idle_gap(self):
        records = [make_record(0.0, "A"), make_record(0.1, "A"), make_record(0.2, "A"),
                   make_record(0.3, "idle"), make_record(0.4, "B"), make_record(0.5, "B")]
        periods = segment_periods(records, "M1")
        assert len(periods) == 2
        a, b = periods
        assert (a.tool_id, a.t_i, a.t_f) == ("A", 0.0, 0.2)
        assert (b.tool_id, b.t_i, b.t_f) == ("B", 0.4, 0.5)

    def test_empty_stream(self):
        assert segment_periods([], "M1") == []

    def test_single_record_degenerate_duration(self):
        periods = segment_periods([make_record(1.0, "A")], "M1")
        assert len(periods) == 1
        assert periods[0].t_f == pytest.approx(1.0 + 0.1)

    def test_short_idle_gap_does_not_split(self):
        records = [make_record(0.0, "A"), make_record(0.1, "A")]
        records += [make_record(0.2 + 0.1 * i, "idle") for i in range(48)]     # 4.8 s gap
        records += [make_record(5.0, "A"), make_record(5.1, "A")]
        periods = segment_periods(records, "M1")
        assert len(periods) == 1
        assert periods[0].t_i == 0.0 and periods[0].t_f == pytest.approx(5.1)

    def test_long_idle_gap_splits(self):
        records = [make_record(0.0, "A"), make_record(0.1, "A")]
        records += [make_record(0.2 + 0.1 * i, "idle") for i in range(60)]     # 6 s gap
        records += [make_record(6.2, "A")]
        periods = segment_periods(records, "M1")
        assert len(periods) == 2
        assert periods[0].t_f == pytest.approx(0.1)

    def test_tool_change_without_idle_splits(self):
        records = [make_record(0.0, "A"), make_record(0.1, "B")]
        periods = segment_periods(records, "M1")
        assert [p.tool_id for p in periods] == ["A", "B"]

    def test_programs_and_workpieces_collected(self):
        records = [make_record(0.0, "A", program="P1", workpiece="W1"),
                   make_record(0.1, "A", program="P2", workpiece="W1")]
        period = segment_periods(records, "M1")[0]
        assert period.programs == ("P1", "P2")
        assert period.workpieces == ("W1",)

    def test_unordered_input_rejected(self):
        with pytest.raises(OperatorError):
            segment_periods([make_record(1.0, "A"), make_record(0.5, "A")], "M1")

    def test_periods_never_overlap_property(self):
        rng = np.random.default_rng(8)
        tools = ["A", "B", "idle"]
        for _ in range(30):
            records = [make_record(i * 0.1, tools[rng.integers(0, 3)])
                       for i in range(100)]
            periods = segment_periods(records, "M1",
                                      SegmentationSettings(max_idle_gap_s=0.5))
            for p, q in zip(periods, periods[1:]):
                assert p.t_f <= q.t_i + 1e-9


class TestThresholdLearning:
    @staticmethod
    def mixture(seed, n=5000):
        rng = np.random.default_rng(seed)
        n_hi = max(1, int(0.05 * n))
        low = rng.normal(5.0, 1.0, n - n_hi)
        high = rng.normal(40.0, 3.0, n_hi)
        return np.concatenate([low, high])

    def test_bimodal_mixture_separated(self):
        values = self.mixture(0)
        t = learn_threshold(values, "nh")
        assert 10.0 < t.value < 35.0
        assert t.provenance == "learned"
        low = values[values < 15]
        high = values[values > 30]
        assert np.all(low < t.value) and np.all(high > t.value)

    def test_constant_data_falls_back_to_quantile(self):
        t = learn_threshold(np.full(2000, 5.0), "vrms")
        assert t.value == 5.0
        assert "fallback" in t.learned_from

    def test_scale_equivariance(self):
        values = self.mixture(1)
        base = learn_threshold(values, "nh").value
        for c in (0.01, 3.7, 1000.0):
            scaled = learn_threshold(values * c, "nh").value
            assert scaled == pytest.approx(c * base, rel=1e-9)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ThresholdLearningError):
            learn_threshold(np.ones(999), "nh")

    def test_determinism(self):
        values = self.mixture(2)
        assert learn_threshold(values, "nh") == learn_threshold(values, "nh")


def make_period(tool="A", t_i=0.0, t_f=10.0, programs=("P1",), workpieces=("W1",)):
    return ToolUsagePeriod(period_id="M1-P00000", machine_id="M1", tool_id=tool,
                           t_i=t_i, t_f=t_f, programs=programs, workpieces=workpieces)


class TestSmartData:
    METRICS = (
        MetricDef("chatter_duration", source="nh", operator="T", threshold_ref="nh"),
        MetricDef("critical_vibration", source="vrms", operator="CO", threshold_ref="vrms"),
        MetricDef("mean_cutting_power", source="power", operator="mean", cuts_only=True),
        MetricDef("max_spindle_temperature", source="spindle_temperature", operator="max"),
    )
    THRESHOLDS = {"nh": Threshold("nh", 20.0, "configured"),
                  "vrms": Threshold("vrms", 15.0, "configured")}

    def records_with_burst(self):
        # 10 s of records; nh burst above 20 during [4.0, 5.0)
        records = []
        for i in range(100):
            t = i * 0.1
            nh = 30.0 if 4.0 <= t < 5.0 else 0.5
            records.append(make_record(t, "A", nh=nh, vrms=2.0, power=8000.0,
                                       temperature=25.0 + 0.01 * i))
        return records

    def test_planted_burst_duration_recovered(self):
        data = compute_smart_data(make_period(), self.records_with_burst(),
                                  self.THRESHOLDS, self.METRICS)
        by_id = {d.metric_id: d for d in data}
        assert by_id["chatter_duration"].value == pytest.approx(1.0, abs=0.1)
        assert by_id["chatter_duration"].operator == "T"
        assert by_id["chatter_duration"].threshold_used.value == 20.0
        assert by_id["mean_cutting_power"].value == pytest.approx(8000.0)
        assert by_id["max_spindle_temperature"].value == pytest.approx(25.99)

    def test_idle_only_period_omits_cut_metrics(self):
        records = [make_record(i * 0.1, "A", power=500.0) for i in range(20)]
        data = compute_smart_data(make_period(t_f=2.0), records,
                                  self.THRESHOLDS, self.METRICS)
        ids = {d.metric_id for d in data}
        assert "mean_cutting_power" not in ids
        assert "chatter_duration" in ids            # CO/T default to 0, not absent

    def test_co_t_agree_with_standalone_operators(self):
        records = self.records_with_burst()
        period = make_period(t_f=9.9)       # last record time
        data = {d.metric_id: d for d in compute_smart_data(period, records,
                                                           self.THRESHOLDS, self.METRICS)}
        nh_series = criterion_series(records, "nh")
        vrms_series = criterion_series(records, "vrms")
        assert data["chatter_duration"].value == t_operator(
            nh_series, self.THRESHOLDS["nh"], period.t_i, period.t_f)
        assert data["critical_vibration"].value == co_operator(
            vrms_series, self.THRESHOLDS["vrms"], period.t_i, period.t_f)

    def test_missing_threshold_rejected(self):
        with pytest.raises(OperatorError, match="chatter_duration"):
            compute_smart_data(make_period(), self.records_with_burst(),
                               {"vrms": self.THRESHOLDS["vrms"]}, self.METRICS)

    def test_unknown_operator_rejected(self):
        bad = (MetricDef("x", source="nh", operator="median"),)
        with pytest.raises(OperatorError, match="median"):
            compute_smart_data(make_period(), self.records_with_burst(), {}, bad)

    def test_quadratic_mean_fusion_feeds_operators(self):
        # channels (3,4,0,0) fuse to 2.5; threshold 2 -> integral (0.5 x dt) per sample
        records = []
        for i in range(10):
            r = make_record(i * 0.1, "A")
            records.append(r.__class__(**{**r.__dict__, "nh": (3.0, 4.0, 0.0, 0.0)}))
        metric = (MetricDef("co_nh", source="nh", operator="CO", threshold_ref="nh"),)
        data = compute_smart_data(make_period(t_f=0.9), records,
                                  {"nh": Threshold("nh", 2.0, "configured")}, metric)
        assert data[0].value == pytest.approx(0.5 * 0.1 * 10, rel=1e-12)
