"""Command-line interface: run, aggregate, compare, audit-monotonicity, explain."""

from __future__ import annotations

from pathlib import Path

import click
import numpy as np

from ..regulatable import (
    MIXED,
    PrecedenceParams,
    combo_values,
    explain as explain_decision,
    monotonicity_audit,
    select_action,
)
from ..simulator import STATE_VAR_NAMES
from . import report
from .config import load_scenario
from .experiment import (
    aggregate as aggregate_rows,
    compare as compare_rows,
    make_env,
    read_metrics,
    run_experiment,
    write_aggregate,
    write_comparison,
    write_metrics,
)


def _parse_seeds(text: str | None) -> list[int] | None:
    if not text:
        return None
    return [int(tok) for tok in text.replace(",", " ").split()]


@click.group()
def main():
    """Traffic signal control laboratory."""


@main.command()
@click.option("--config", "-c", "config_path", required=True,
              type=click.Path(exists=True), help="Scenario file.")
@click.option("--out", "-o", "outdir", default="results",
              type=click.Path(), help="Output directory.")
@click.option("--controller", default=None,
              help="Override the scenario's controller kind.")
@click.option("--seeds", default=None, help="Comma-separated trial seeds.")
@click.option("--episodes", default=None, type=int,
              help="Override episodes per trial.")
@click.option("--jobs", default=None, type=int,
              help="Parallel trial workers.")
def run(config_path, outdir, controller, seeds, episodes, jobs):
    """Run an experiment and write one metrics row per (seed, episode)."""
    cfg = load_scenario(config_path)
    if episodes:
        cfg.episodes = episodes
        cfg.dqn.episodes = episodes
        cfg.ppo.episodes = episodes
    kind = controller or cfg.controller
    out = Path(outdir)
    metrics_path = out / f"metrics_{cfg.name}_{kind}.csv"
    rows = run_experiment(cfg, metrics_path, controller=controller,
                          seeds=_parse_seeds(seeds), n_jobs=jobs)
    click.echo(f"wrote {len(rows)} rows to {metrics_path}")


@main.command()
@click.argument("metrics_csv", type=click.Path(exists=True))
@click.option("--out", "-o", "outdir", default=None, type=click.Path(),
              help="Output directory (defaults to the input's).")
@click.option("--figures/--no-figures", default=True,
              help="Also render the learning-curve figure.")
def aggregate(metrics_csv, outdir, figures):
    """Per-episode mean and 95% confidence interval per controller."""
    rows = read_metrics(metrics_csv)
    agg = aggregate_rows(rows)
    out = Path(outdir) if outdir else Path(metrics_csv).parent
    stem = Path(metrics_csv).stem
    agg_path = out / f"{stem}_aggregate.csv"
    write_aggregate(agg, agg_path)
    click.echo(f"wrote {agg_path}")
    if figures:
        fig_path = out / f"{stem}_curves.png"
        report.learning_curves(agg, fig_path)
        click.echo(f"wrote {fig_path}")


@main.command()
@click.argument("candidate_csv", type=click.Path(exists=True))
@click.argument("baseline_csv", type=click.Path(exists=True))
@click.option("--out", "-o", "outdir", default=None, type=click.Path())
@click.option("--figures/--no-figures", default=True)
def compare(candidate_csv, baseline_csv, outdir, figures):
    """Percent delay reduction of candidate over baseline (final episode)."""
    cand = read_metrics(candidate_csv)
    base = read_metrics(baseline_csv)
    cmp = compare_rows(cand, base)
    out = Path(outdir) if outdir else Path(candidate_csv).parent
    cmp_path = out / "comparison.csv"
    write_comparison(cmp, cmp_path)
    if cmp.percent_reduction is None:
        click.echo("baseline mean is zero: reduction undefined")
    else:
        click.echo(f"{cmp.candidate} vs {cmp.baseline}: "
                   f"{cmp.percent_reduction:.1f}% delay reduction "
                   f"({cmp.candidate_mean:.1f} vs {cmp.baseline_mean:.1f} s/veh)")
    click.echo(f"wrote {cmp_path}")
    if figures:
        fig_path = out / "comparison.png"
        report.comparison_bars(cmp, fig_path)
        click.echo(f"wrote {fig_path}")


def _collect_observations(cfg, n, seed):
    """Harvest real observations by rolling random actions in the simulator."""
    env = make_env(cfg)
    rng = np.random.default_rng(seed)
    out = []
    episode = 0
    while len(out) < n:
        obs = env.reset(seed + episode)
        while not env.done and len(out) < n:
            out.append(obs)
            obs, _, _ = env.step(int(rng.integers(len(cfg.layout.combos))))
        episode += 1
    return out


@main.command("audit-monotonicity")
@click.option("--config", "-c", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--theta", default=None, type=click.Path(exists=True),
              help="Precedence checkpoint to audit (default: all ones).")
@click.option("--samples", default=1000, type=int,
              help="Observations to sample.")
@click.option("--seed", default=0, type=int)
@click.option("--out", "-o", "outdir", default="results", type=click.Path())
@click.option("--figures/--no-figures", default=True)
def audit_monotonicity(config_path, theta, samples, seed, outdir, figures):
    """Verify the precedence response direction to every state variable."""
    cfg = load_scenario(config_path)
    params = (PrecedenceParams.load(cfg.layout, theta) if theta
              else PrecedenceParams.ones(cfg.layout))
    states = _collect_observations(cfg, samples, seed)
    verdicts = monotonicity_audit(params, states)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"audit_{cfg.name}.csv"
    with open(csv_path, "w") as fh:
        fh.write("combo,phase,variable,verdict\n")
        for combo in cfg.layout.combos:
            for slot, pid in enumerate(combo.phases):
                for i in range(6):
                    v = verdicts[(combo.combo_index, slot, i)]
                    fh.write(f"{combo.combo_index},{pid},"
                             f"{STATE_VAR_NAMES[i]},{v}\n")
    mixed = sum(1 for v in verdicts.values() if v == MIXED)
    click.echo(f"audited {len(verdicts)} (combo, phase, variable) responses "
               f"over {samples} states: {mixed} mixed")
    click.echo(f"wrote {csv_path}")
    if figures:
        fig_path = out / f"audit_{cfg.name}.png"
        report.audit_heatmap(verdicts, cfg.layout, fig_path)
        click.echo(f"wrote {fig_path}")
    if mixed:
        raise SystemExit(1)


@main.command()
@click.option("--config", "-c", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--theta", default=None, type=click.Path(exists=True))
@click.option("--steps", default=40, type=int,
              help="Decisions to roll before explaining.")
@click.option("--seed", default=0, type=int)
@click.option("--out", "-o", "outdir", default="results", type=click.Path())
@click.option("--figures/--no-figures", default=True)
def explain(config_path, theta, steps, seed, outdir, figures):
    """Decompose one greedy decision into per-variable contributions."""
    cfg = load_scenario(config_path)
    params = (PrecedenceParams.load(cfg.layout, theta) if theta
              else PrecedenceParams.ones(cfg.layout))
    env = make_env(cfg)
    obs = env.reset(seed)
    previous = cfg.layout.combos[obs.current_combo]
    for _ in range(steps):
        if env.done:
            break
        previous = cfg.layout.combos[obs.current_combo]
        obs, _, _ = env.step(select_action(obs, params))
    chosen = select_action(obs, params)
    decision = explain_decision(obs, params, chosen, previous)
    vals = combo_values(obs, params)
    click.echo(f"clock {obs.clock:.0f}s: chosen combo {chosen.combo_index}, "
               f"previous combo {previous.combo_index}")
    for combo in cfg.layout.combos:
        c = combo.combo_index
        marker = "*" if c == chosen.combo_index else " "
        click.echo(f" {marker} combo {c} phases {combo.phases}: "
                   f"g = {vals[c]:.3f}")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"explain_{cfg.name}.csv"
    with open(csv_path, "w") as fh:
        fh.write("combo,phase,variable,term,flag_factor\n")
        for combo in cfg.layout.combos:
            c = combo.combo_index
            for slot, pid in enumerate(combo.phases):
                for i in range(6):
                    fh.write(f"{c},{pid},{STATE_VAR_NAMES[i]},"
                             f"{decision.terms[c][slot, i]:.6f},"
                             f"{decision.flag_factors[c]:.6f}\n")
    click.echo(f"wrote {csv_path}")
    if figures:
        fig_path = out / f"explain_{cfg.name}.png"
        report.explain_bars(decision, cfg.layout, fig_path)
        click.echo(f"wrote {fig_path}")


if __name__ == "__main__":
    main()
