import math

import numpy as np
import pytest

from spindlewatch.errors import KpiError, ScopeError
from spindlewatch.kpi import (
    evaluate_kpi,
    instantiate,
    matches_scope,
    schedule_triggers,
    select_scope,
)
from spindlewatch.models import (
    BaselineSpec,
    InstantiationContext,
    KpiModel,
    ModeSpec,
    ScopeFilter,
    SmartDatum,
    Threshold,
    ToolUsagePeriod,
)

DAY = 86_400.0


def datum(tool="10026", value=1.0, metric="chatter_duration", t_i=0.0, t_f=100.0,
          programs=("P1",), workpieces=("W1",), machine="M1", period_id=None):
    period = ToolUsagePeriod(
        period_id=period_id or f"{machine}-{tool}-{t_i}", machine_id=machine,
        tool_id=tool, t_i=t_i, t_f=t_f, programs=programs, workpieces=workpieces)
    return SmartDatum(period=period, metric_id=metric, value=value, operator="T",
                      threshold_used=Threshold("nh", 20.0, "configured"))


def sum_by_tool(kpi_id="chatter_by_tool", metric="chatter_duration"):
    return KpiModel(kpi_id=kpi_id, aggregation="sum", source_metric=metric, group_by="tool")


class TestEvaluateKpi:
    def test_sum_grouped_by_tool_hand_fixture(self):
        data = [datum("10026", 12.4, t_i=0.0), datum("10026", 7.7, t_i=200.0),
                datum("20001", 3.1, t_i=400.0)]
        result = evaluate_kpi(sum_by_tool(), data)
        assert result["10026"] == pytest.approx(20.1, rel=1e-12)
        assert result["20001"] == pytest.approx(3.1, rel=1e-12)

    def test_mean_over_single_datum_is_identity(self):
        model = KpiModel("m", "mean", "chatter_duration", "tool")
        assert evaluate_kpi(model, [datum(value=42.5)]) == {"10026": 42.5}

    def test_weighted_sum_with_unit_weights_equals_sum(self):
        data = [datum("A", 2.0), datum("A", 3.0), datum("B", 5.0)]
        weighted = KpiModel("w", "weighted_sum", "chatter_duration", "tool",
                            weights={"A": 1.0, "B": 1.0})
        assert evaluate_kpi(weighted, data) == evaluate_kpi(sum_by_tool(), data)

    def test_missing_weight_rejected(self):
        model = KpiModel("w", "weighted_sum", "chatter_duration", "tool",
                         weights={"A": 1.0})
        with pytest.raises(KpiError, match="B"):
            evaluate_kpi(model, [datum("A"), datum("B")])

    def test_period_contributes_to_every_program(self):
        model = KpiModel("p", "sum", "chatter_duration", "program")
        result = evaluate_kpi(model, [datum(value=4.0, programs=("P1", "P2"))])
        assert result == {"P1": 4.0, "P2": 4.0}

    def test_other_metrics_ignored(self):
        data = [datum(value=1.0), datum(value=99.0, metric="critical_vibration")]
        assert evaluate_kpi(sum_by_tool(), data) == {"10026": 1.0}

    def test_empty_data_gives_empty_mapping(self):
        assert evaluate_kpi(sum_by_tool(), []) == {}

    def test_baseline_comparison_fixed(self):
        model = KpiModel("b", "baseline_comparison", "chatter_duration", "tool",
                         baseline=BaselineSpec(kind="fixed", value=2.0))
        result = evaluate_kpi(model, [datum(value=3.0), datum(value=5.0)])
        assert result["10026"] == pytest.approx(2.0)    # mean 4.0 / baseline 2.0

    def test_baseline_comparison_window(self):
        model = KpiModel("b", "baseline_comparison", "chatter_duration", "tool",
                         baseline=BaselineSpec(kind="window", time_start=0.0,
                                               time_end=1000.0))
        data = [datum(value=2.0, t_i=100.0), datum(value=6.0, t_i=2000.0)]
        # full-scope mean is 4.0; baseline window holds only the 2.0 datum
        result = evaluate_kpi(model, data)
        assert result["10026"] == pytest.approx(2.0)

    def test_baseline_required(self):
        model = KpiModel("b", "baseline_comparison", "chatter_duration", "tool")
        with pytest.raises(KpiError):
            evaluate_kpi(model, [datum()])


class TestSelectScope:
    DATA = [datum("A", 1.0, t_i=0.0, programs=("P1",)),
            datum("A", 2.0, t_i=100.0, programs=("P1", "P2")),
            datum("B", 4.0, t_i=200.0, programs=("P2",))]

    def test_tool_filter(self):
        got = select_scope(self.DATA, ScopeFilter(tool="A"))
        assert [d.value for d in got] == [1.0, 2.0]

    def test_disjoint_time_range_is_empty(self):
        assert select_scope(self.DATA, ScopeFilter(time_start=5000.0, time_end=6000.0)) == []

    def test_program_filter_matches_enumeration_oracle(self):
        scope = ScopeFilter(program="P2")
        got = select_scope(self.DATA, scope)
        oracle = [d for d in self.DATA if "P2" in d.period.programs]
        assert got == oracle

    def test_time_range_uses_period_start(self):
        got = select_scope(self.DATA, ScopeFilter(time_start=0.0, time_end=150.0))
        assert [d.value for d in got] == [1.0, 2.0]

    def test_malformed_range_rejected(self):
        with pytest.raises(ScopeError):
            select_scope(self.DATA, ScopeFilter(time_start=10.0, time_end=5.0))


def context(scope=None, mode=None):
    return InstantiationContext(
        objective="find worst tools", decider="manufacturing_department",
        scope=scope or ScopeFilter(), mode=mode or ModeSpec(kind="on_demand"))


class TestInstantiate:
    MODELS = [sum_by_tool(),
              KpiModel("chatter_by_program", "sum", "chatter_duration", "program")]
    DATA = [datum("10026", 12.4, t_i=0.0, programs=("P1",)),
            datum("10026", 7.7, t_i=200.0, programs=("P1",)),
            datum("20001", 3.1, t_i=400.0, programs=("P2",))]

    def test_two_models_give_two_result_mappings(self):
        ind = instantiate(context(), self.MODELS, self.DATA)
        assert set(ind.kpi_results) == {"chatter_by_tool", "chatter_by_program"}
        assert ind.kpi_results["chatter_by_tool"]["10026"] == pytest.approx(20.1)
        assert ind.kpi_results["chatter_by_program"]["P1"] == pytest.approx(20.1)

    def test_empty_store_gives_empty_mappings(self):
        ind = instantiate(context(), self.MODELS, [])
        assert ind.kpi_results == {"chatter_by_tool": {}, "chatter_by_program": {}}

    def test_determinism_including_digest(self):
        a = instantiate(context(), self.MODELS, self.DATA)
        b = instantiate(context(), self.MODELS, list(self.DATA))
        assert a == b
        assert a.inputs_digest == b.inputs_digest and len(a.inputs_digest) == 64

    def test_digest_tracks_inputs(self):
        a = instantiate(context(), self.MODELS, self.DATA)
        b = instantiate(context(), self.MODELS, self.DATA[:2])
        assert a.inputs_digest != b.inputs_digest

    def test_no_models_rejected(self):
        with pytest.raises(KpiError):
            instantiate(context(), [], self.DATA)

    def test_model_errors_carry_kpi_id(self):
        bad = KpiModel("bad_kpi", "weighted_sum", "chatter_duration", "tool", weights={})
        with pytest.raises(KpiError):
            instantiate(context(), [bad], self.DATA)

    def test_invalid_mode_rejected(self):
        with pytest.raises(ScopeError):
            instantiate(context(mode=ModeSpec(kind="periodic", period_s=-1.0)),
                        self.MODELS, self.DATA)


class TestScheduleTriggers:
    def test_periodic_quarterly_over_426_days(self):
        mode = ModeSpec(kind="periodic", period_s=90 * DAY)
        triggers = schedule_triggers(mode, horizon=(0.0, 426 * DAY))
        assert triggers == [90 * DAY, 180 * DAY, 270 * DAY, 360 * DAY]

    def test_invalid_period_rejected(self):
        with pytest.raises(ScopeError):
            schedule_triggers(ModeSpec(kind="periodic", period_s=0.0), horizon=(0.0, 1.0))

    def test_on_demand_counts_requests(self):
        mode = ModeSpec(kind="on_demand")
        assert schedule_triggers(mode, requests=[10.0, 20.0]) == [10.0, 20.0]
        assert schedule_triggers(mode) == []

    def test_on_event_predicate(self):
        mode = ModeSpec(kind="on_event", event_metric="chatter_duration",
                        event_threshold=5.0)
        quiet = [datum(value=1.0), datum(value=4.9)]
        assert schedule_triggers(mode, events=quiet) == []
        loud = [datum(value=6.0, t_f=123.0)]
        assert schedule_triggers(mode, events=loud) == [123.0]


class TestKpiAlgebraProperties:
    @staticmethod
    def random_fixture(rng):
        """Random smart data with dyadic values and 0.5 s aligned period starts."""
        tools = [f"T{k}" for k in range(rng.integers(2, 6))]
        data = []
        for i in range(rng.integers(5, 40)):
            value = float(rng.integers(0, 1 << 20)) / 1024.0
            t_i = float(rng.integers(0, 200)) * 0.5
            data.append(datum(tools[rng.integers(0, len(tools))], value,
                              t_i=t_i, t_f=t_i + 0.5, period_id=f"p{i}"))
        return data

    def test_scope_monotonicity(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            data = self.random_fixture(rng)
            t_mid = float(rng.integers(0, 200)) * 0.5
            small = evaluate_kpi(sum_by_tool(),
                                 select_scope(data, ScopeFilter(time_start=0.0, time_end=t_mid)))
            large = evaluate_kpi(sum_by_tool(),
                                 select_scope(data, ScopeFilter(time_start=0.0, time_end=1e9)))
            assert set(small) <= set(large)
            for entity, value in small.items():
                assert large[entity] >= value - 1e-12

    def test_partition_additivity_exact(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            data = self.random_fixture(rng)
            cuts = sorted({float(c) * 0.5 for c in rng.integers(1, 220, 3)})
            edges = [0.0] + cuts + [1e9]
            whole = evaluate_kpi(sum_by_tool(),
                                 select_scope(data, ScopeFilter(time_start=0.0, time_end=1e9)))
            parts: dict[str, float] = {}
            for lo, hi in zip(edges, edges[1:]):
                sub = evaluate_kpi(sum_by_tool(),
                                   select_scope(data, ScopeFilter(time_start=lo, time_end=hi)))
                for entity, value in sub.items():
                    parts[entity] = parts.get(entity, 0.0) + value
            assert parts == whole       # exact: dyadic values, exact partial sums

    def test_ranking_invariance_under_scaling(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            data = self.random_fixture(rng)
            base = evaluate_kpi(sum_by_tool(), data)
            base_rank = sorted(base, key=lambda e: (-base[e], e))
            for c in (2.0, 0.5, 3.0):
                scaled_data = [SmartDatum(period=d.period, metric_id=d.metric_id,
                                          value=d.value * c, operator=d.operator,
                                          threshold_used=d.threshold_used)
                               for d in data]
                scaled = evaluate_kpi(sum_by_tool(), scaled_data)
                rank = sorted(scaled, key=lambda e: (-scaled[e], e))
                assert rank == base_rank
