"""Experiment orchestration: trials, metric files, aggregation, comparison.

One metric row is written per (trial seed, episode). Within a trial every
episode re-simulates the same demand realization (the trial's seed), so
learning curves measure the controller, not arrival noise; trials differ by
seed and supply the population for confidence intervals. Identical configs
and seeds reproduce byte-identical metric files.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from ..regulatable import PrecedenceParams
from ..simulator import TrafficSim
from ..trainers import (
    ActuatedController,
    DqnTrainer,
    FixedTimeController,
    PpoTrainer,
    PrecedenceController,
    cma_es_tune,
)
from ..trainers.baselines import run_controller_episode
from ..trainers.dqn import EpisodeResult
from .config import ScenarioConfig

METRICS_HEADER = ("seed", "episode", "controller", "avg_delay", "total_delay",
                  "vehicles", "discounted_return")


@dataclass(frozen=True)
class MetricRow:
    seed: int
    episode: int
    controller: str
    avg_delay: float
    total_delay: float
    vehicles: int
    discounted_return: float

    def validate(self) -> None:
        if self.avg_delay < 0 or self.total_delay < 0:
            raise ValueError("delay must be non-negative")


def _format(x: float) -> str:
    return f"{x:.6f}"


def write_metrics(rows: list[MetricRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([r.seed, r.episode, r.controller,
                             _format(r.avg_delay), _format(r.total_delay),
                             r.vehicles, _format(r.discounted_return)])


def read_metrics(path) -> list[MetricRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(MetricRow(
                seed=int(rec["seed"]),
                episode=int(rec["episode"]),
                controller=rec["controller"],
                avg_delay=float(rec["avg_delay"]),
                total_delay=float(rec["total_delay"]),
                vehicles=int(rec["vehicles"]),
                discounted_return=float(rec["discounted_return"]),
            ))
    return rows


def make_env(cfg: ScenarioConfig) -> TrafficSim:
    return TrafficSim(cfg.layout, cfg.constants, cfg.demand)


def _load_theta(cfg: ScenarioConfig) -> PrecedenceParams:
    if cfg.theta_path is not None:
        return PrecedenceParams.load(cfg.layout, cfg.theta_path)
    return PrecedenceParams.ones(cfg.layout)


class CmaFitness:
    """Mean episode delay of a flattened parameter vector (picklable)."""

    def __init__(self, cfg: ScenarioConfig, seeds: list[int], max_steps: int):
        self.cfg = cfg
        self.seeds = seeds
        self.max_steps = max_steps

    def __call__(self, vec: np.ndarray) -> float:
        cfg = self.cfg
        env = make_env(cfg)
        params = PrecedenceParams.unflatten(cfg.layout, vec)
        params.clamp_exponents()
        controller = PrecedenceController(env.codec, params)
        delays = []
        for s in self.seeds:
            result = run_controller_episode(env, controller, s,
                                            gamma=cfg.dqn.gamma,
                                            max_steps=self.max_steps)
            if env.departed < env.spawned_total:
                return float("inf")  # failed to clear the scenario
            delays.append(result.avg_delay)
        return float(np.mean(delays))


def run_trial(cfg: ScenarioConfig, seed: int,
              controller: str | None = None) -> list[MetricRow]:
    """All episodes of one trial; returns one MetricRow per episode."""
    kind = controller or cfg.controller
    env = make_env(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    rows: list[MetricRow] = []

    def to_rows(results: list[EpisodeResult]) -> list[MetricRow]:
        return [MetricRow(seed=seed, episode=i, controller=kind,
                          avg_delay=r.avg_delay, total_delay=r.total_delay,
                          vehicles=r.vehicles,
                          discounted_return=r.discounted_return)
                for i, r in enumerate(results)]

    if kind in ("dqn", "value", "softmax", "hardmax"):
        mode = None if kind == "dqn" else kind
        trainer = DqnTrainer(env, cfg.dqn, rng, mode=mode)
        rows = to_rows(trainer.train(trial_seed=seed))
    elif kind == "ppo":
        trainer = PpoTrainer(env, cfg.ppo, rng)
        rows = to_rows(trainer.train(trial_seed=seed))
    elif kind == "cma":
        # fitness episodes are the trial's own evaluation episodes, so the
        # tuned parameters are judged on the demand they were tuned for
        fitness = CmaFitness(
            cfg, [cfg.dqn.episode_seed(seed, k)
                  for k in range(cfg.cma.fitness_episodes)],
            cfg.dqn.max_steps)
        state = cma_es_tune(
            PrecedenceParams.ones(cfg.layout).flatten(),
            fitness,
            generations=cfg.cma.generations,
            initial_variance=cfg.cma.initial_variance,
            population=cfg.cma.population,
            seed=seed,
            n_jobs=cfg.cma.n_jobs,
        )
        best = PrecedenceParams.unflatten(cfg.layout, state.best_x)
        best.clamp_exponents()
        controller_obj = PrecedenceController(env.codec, best)
        results = [run_controller_episode(env, controller_obj,
                                          cfg.dqn.episode_seed(seed, ep),
                                          gamma=cfg.dqn.gamma,
                                          max_steps=cfg.dqn.max_steps)
                   for ep in range(cfg.episodes)]
        rows = to_rows(results)
    else:
        if kind == "actuated":
            controller_obj = ActuatedController(
                cfg.layout, max_green=cfg.actuated.max_green,
                gap=cfg.actuated.gap, order=cfg.actuated.order)
        elif kind == "fixed-time":
            plan = cfg.fixed_time_plan or _equal_split_plan(cfg)
            controller_obj = FixedTimeController(cfg.layout, plan,
                                                 cfg.constants.min_phase)
        elif kind == "precedence":
            controller_obj = PrecedenceController(env.codec, _load_theta(cfg))
        else:
            raise ValueError(f"unhandled controller {kind!r}")
        results = [run_controller_episode(env, controller_obj,
                                          cfg.dqn.episode_seed(seed, ep),
                                          gamma=cfg.dqn.gamma,
                                          max_steps=cfg.dqn.max_steps)
                   for ep in range(cfg.episodes)]
        rows = to_rows(results)
    for r in rows:
        r.validate()
    return rows


def _equal_split_plan(cfg: ScenarioConfig) -> list[tuple[int, float]]:
    green = max(cfg.constants.min_phase,
                10 * cfg.constants.min_phase)
    return [(c.combo_index, green) for c in cfg.layout.combos]


def _trial_task(args):
    cfg, seed, controller = args
    return run_trial(cfg, seed, controller)


def run_experiment(cfg: ScenarioConfig, out_path=None,
                   controller: str | None = None,
                   seeds: list[int] | None = None,
                   n_jobs: int | None = None) -> list[MetricRow]:
    """Run every trial seed and optionally write the metrics CSV."""
    seeds = seeds if seeds is not None else cfg.seeds
    n_jobs = n_jobs if n_jobs is not None else cfg.n_jobs
    tasks = [(cfg, s, controller) for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            per_trial = list(pool.map(_trial_task, tasks))
    else:
        per_trial = [_trial_task(t) for t in tasks]
    rows = [row for trial in per_trial for row in trial]
    if out_path is not None:
        write_metrics(rows, out_path)
    return rows


@dataclass(frozen=True)
class AggregateRow:
    controller: str
    episode: int
    n: int
    mean: float
    ci_low: float | None
    ci_high: float | None


def aggregate(rows: list[MetricRow],
              confidence: float = 0.95) -> list[AggregateRow]:
    """Per-(controller, episode) mean and t-distribution confidence interval."""
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        groups.setdefault((r.controller, r.episode), []).append(r.avg_delay)
    out = []
    for (controller, episode) in sorted(groups):
        values = np.asarray(groups[(controller, episode)])
        n = len(values)
        mean = float(values.mean())
        if n >= 2:
            sem = float(values.std(ddof=1) / np.sqrt(n))
            half = float(stats.t.ppf(0.5 + confidence / 2, df=n - 1) * sem)
            lo, hi = mean - half, mean + half
        else:
            lo = hi = None
        out.append(AggregateRow(controller, episode, n, mean, lo, hi))
    return out


def write_aggregate(agg: list[AggregateRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("controller", "episode", "n", "mean_avg_delay",
                         "ci_low", "ci_high"))
        for a in agg:
            writer.writerow([
                a.controller, a.episode, a.n, _format(a.mean),
                "" if a.ci_low is None else _format(a.ci_low),
                "" if a.ci_high is None else _format(a.ci_high)])


@dataclass(frozen=True)
class Comparison:
    candidate: str
    baseline: str
    episode: int
    candidate_mean: float
    baseline_mean: float
    percent_reduction: float | None  # None when the baseline mean is zero


def compare(candidate_rows: list[MetricRow],
            baseline_rows: list[MetricRow]) -> Comparison:
    """Percent delay reduction on final-episode averages."""
    def final_mean(rows):
        last = max(r.episode for r in rows)
        vals = [r.avg_delay for r in rows if r.episode == last]
        names = {r.controller for r in rows}
        return last, float(np.mean(vals)), "+".join(sorted(names))

    ep_c, mean_c, name_c = final_mean(candidate_rows)
    ep_b, mean_b, name_b = final_mean(baseline_rows)
    if mean_b == 0.0:
        reduction = None
    else:
        reduction = 100.0 * (mean_b - mean_c) / mean_b
    return Comparison(
        candidate=name_c, baseline=name_b, episode=max(ep_c, ep_b),
        candidate_mean=mean_c, baseline_mean=mean_b,
        percent_reduction=reduction)


def write_comparison(cmp: Comparison, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("candidate", "baseline", "episode", "candidate_mean",
                         "baseline_mean", "percent_reduction"))
        writer.writerow([
            cmp.candidate, cmp.baseline, cmp.episode,
            _format(cmp.candidate_mean), _format(cmp.baseline_mean),
            "undefined" if cmp.percent_reduction is None
            else _format(cmp.percent_reduction)])
