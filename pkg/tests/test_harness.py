import copy

import numpy as np
import pytest

from siglab.harness import (
    MetricRow,
    aggregate,
    compare,
    load_scenario,
    read_metrics,
    run_experiment,
    write_metrics,
)
from siglab.harness.config import ConfigError
from siglab.harness.experiment import run_trial, write_aggregate, write_comparison
from siglab.scenarios import scenario_path


@pytest.fixture(scope="module")
def toy_cfg():
    cfg = load_scenario(scenario_path("toy2"))
    cfg.episodes = 3
    cfg.dqn.episodes = 3
    cfg.ppo.episodes = 3
    cfg.seeds = [11, 12]
    return cfg


class TestScenarioLoading:
    def test_shipped_scenarios_parse(self):
        for name in ("toy2", "standard8", "utah10"):
            cfg = load_scenario(scenario_path(name))
            assert cfg.layout.combos
            assert cfg.demand.total >= 0

    def test_unknown_keys_rejected(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        src = scenario_path("toy2").read_text()
        bad.write_text(src + "\nbogus_section: 1\n")
        with pytest.raises(ConfigError, match="bogus_section"):
            load_scenario(bad)

    def test_unknown_controller_rejected(self, tmp_path):
        src = scenario_path("toy2").read_text()
        bad = tmp_path / "bad.yaml"
        bad.write_text(src.replace("kind: hardmax", "kind: magic"))
        # demand path is relative to the file: copy it next to the config
        (tmp_path / "demand_toy.csv").write_text(
            scenario_path("demand_toy.csv").read_text())
        with pytest.raises(ConfigError, match="magic"):
            load_scenario(bad)

    def test_missing_demand_rejected(self, tmp_path):
        src = scenario_path("toy2").read_text()
        bad = tmp_path / "bad.yaml"
        bad.write_text(src)
        with pytest.raises(ConfigError, match="demand file not found"):
            load_scenario(bad)

    def test_clearance_override_applies(self):
        cfg = load_scenario(scenario_path("utah10"))
        by_phases = {tuple(sorted(c.phases)): c.combo_index
                     for c in cfg.layout.combos}
        key = (by_phases[(4, 9)], by_phases[(4, 7)])
        cases = cfg.layout.clearance.table[key]
        assert len(cases) == 2  # both partial and permissive marked


class TestRunExperiment:
    def test_row_count_is_trials_times_episodes(self, toy_cfg, tmp_path):
        rows = run_experiment(toy_cfg, tmp_path / "m.csv",
                              controller="fixed-time")
        assert len(rows) == 2 * 3
        assert len(read_metrics(tmp_path / "m.csv")) == 6

    def test_rerun_is_byte_identical(self, toy_cfg, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        run_experiment(toy_cfg, a, controller="precedence")
        run_experiment(toy_cfg, b, controller="precedence")
        assert a.read_bytes() == b.read_bytes()

    def test_actuated_zero_demand_zero_delay(self, tmp_path):
        cfg = load_scenario(scenario_path("toy2"))
        cfg.demand_path = scenario_path("demand_zero.csv")
        from siglab.simulator import load_demand
        cfg.demand = load_demand(cfg.demand_path, cfg.layout)
        cfg.episodes = 2
        cfg.seeds = [1]
        rows = run_experiment(cfg, None, controller="actuated")
        assert all(r.avg_delay == 0.0 for r in rows)
        assert all(r.vehicles == 0 for r in rows)

    def test_parallel_trials_match_sequential(self, toy_cfg, tmp_path):
        seq = run_experiment(toy_cfg, None, controller="fixed-time", n_jobs=1)
        par = run_experiment(toy_cfg, None, controller="fixed-time", n_jobs=2)
        assert seq == par

    def test_metric_rows_validate(self, toy_cfg):
        rows = run_trial(toy_cfg, 11, controller="actuated")
        for r in rows:
            assert r.avg_delay >= 0
            assert r.vehicles <= toy_cfg.demand.total


class TestAggregate:
    def _rows(self, values, controller="x", episode=0):
        return [MetricRow(seed=i, episode=episode, controller=controller,
                          avg_delay=v, total_delay=v, vehicles=1,
                          discounted_return=-v)
                for i, v in enumerate(values)]

    def test_constant_column_has_zero_width_ci(self):
        agg = aggregate(self._rows([5.0, 5.0, 5.0, 5.0]))
        a = agg[0]
        assert a.mean == 5.0
        assert a.ci_low == pytest.approx(5.0)
        assert a.ci_high == pytest.approx(5.0)

    def test_two_values_mean(self):
        agg = aggregate(self._rows([4.0, 8.0]))
        assert agg[0].mean == 6.0

    def test_single_trial_has_no_ci(self):
        agg = aggregate(self._rows([4.0]))
        assert agg[0].ci_low is None and agg[0].ci_high is None
        assert agg[0].n == 1

    def test_ci_coverage_monte_carlo(self):
        # 95% t-interval over n=6 normal draws: coverage across 1000
        # resamples should land near 0.95
        rng = np.random.default_rng(77)
        true_mean = 3.0
        covered = 0
        trials = 1000
        for _ in range(trials):
            sample = rng.normal(true_mean, 2.0, size=6)
            agg = aggregate(self._rows(list(sample)))
            if agg[0].ci_low <= true_mean <= agg[0].ci_high:
                covered += 1
        assert 0.93 <= covered / trials <= 0.97

    def test_groups_by_controller_and_episode(self):
        rows = (self._rows([1.0, 2.0], "a", 0) + self._rows([3.0, 5.0], "a", 1)
                + self._rows([10.0, 20.0], "b", 0))
        agg = aggregate(rows)
        assert [(a.controller, a.episode, a.mean) for a in agg] == [
            ("a", 0, 1.5), ("a", 1, 4.0), ("b", 0, 15.0)]


class TestCompare:
    def _rows(self, values, controller, episode=4):
        return [MetricRow(seed=i, episode=episode, controller=controller,
                          avg_delay=v, total_delay=v, vehicles=1,
                          discounted_return=-v)
                for i, v in enumerate(values)]

    def test_equal_is_zero_percent(self):
        cand = self._rows([7.0, 9.0], "c")
        assert compare(cand, cand).percent_reduction == 0.0

    def test_twenty_percent_reduction(self):
        cand = self._rows([8.0], "c")
        base = self._rows([10.0], "b")
        assert compare(cand, base).percent_reduction == pytest.approx(20.0)

    def test_zero_baseline_is_undefined(self):
        cand = self._rows([1.0], "c")
        base = self._rows([0.0], "b")
        assert compare(cand, base).percent_reduction is None

    def test_uses_final_episode_only(self):
        cand = (self._rows([100.0], "c", episode=0)
                + self._rows([5.0], "c", episode=3))
        base = self._rows([10.0], "b", episode=3)
        cmp = compare(cand, base)
        assert cmp.candidate_mean == 5.0
        assert cmp.percent_reduction == pytest.approx(50.0)


class TestFileFormats:
    def test_metrics_roundtrip(self, tmp_path):
        rows = [MetricRow(1, 0, "x", 1.25, 10.0, 8, -3.5),
                MetricRow(2, 1, "y", 0.0, 0.0, 0, 0.0)]
        path = tmp_path / "m.csv"
        write_metrics(rows, path)
        header = path.read_text().splitlines()[0]
        assert header == ("seed,episode,controller,avg_delay,total_delay,"
                          "vehicles,discounted_return")
        back = read_metrics(path)
        assert back[0].avg_delay == 1.25
        assert back[1].controller == "y"

    def test_aggregate_and_comparison_files(self, tmp_path):
        rows = [MetricRow(i, 0, "x", float(v), v, 1, -v)
                for i, v in enumerate([4.0, 8.0])]
        agg = aggregate(rows)
        write_aggregate(agg, tmp_path / "agg.csv")
        assert "mean_avg_delay" in (tmp_path / "agg.csv").read_text()
        cmp = compare(rows, rows)
        write_comparison(cmp, tmp_path / "cmp.csv")
        assert "percent_reduction" in (tmp_path / "cmp.csv").read_text()
