"""Scenario files: one YAML document describing layout, demand, and tuning.

Every experiment is reproducible from a single scenario file plus a seed
list. Unknown keys are rejected so typos fail loudly instead of silently
falling back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from ..intersection import (
    ClearanceCase,
    ClearanceSpec,
    IntersectionLayout,
    build_layout,
    generate_clearance_table,
    validate_layout,
)
from ..simulator import DemandProfile, SimConstants, load_demand
from ..trainers import DqnConfig, PpoConfig


class ConfigError(ValueError):
    pass


CONTROLLER_KINDS = (
    "dqn", "value", "softmax", "hardmax",
    "ppo", "cma", "actuated", "fixed-time", "precedence",
)

_CASE_NAMES = {
    "full": ClearanceCase.FULL,
    "partial": ClearanceCase.PARTIAL,
    "permissive": ClearanceCase.PERMISSIVE,
    "none": ClearanceCase.NONE,
}


@dataclass
class CmaSettings:
    initial_variance: float = 0.2
    population: int = 12
    generations: int = 200
    fitness_episodes: int = 1
    n_jobs: int = 1
    eval_episodes: int = 1


@dataclass
class ActuatedSettings:
    max_green: float = 300.0
    gap: float = 3.0
    order: list[int] | None = None


@dataclass
class ScenarioConfig:
    name: str
    path: Path
    layout: IntersectionLayout
    demand: DemandProfile
    demand_path: Path
    constants: SimConstants
    controller: str
    episodes: int
    seeds: list[int]
    dqn: DqnConfig
    ppo: PpoConfig
    cma: CmaSettings
    actuated: ActuatedSettings
    fixed_time_plan: list[tuple[int, float]]
    theta_path: Path | None = None
    feature_scales: list[float] | None = None
    n_jobs: int = 1


def _require_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _apply_section(instance, section: dict, where: str):
    names = {f.name for f in fields(instance)}
    _require_keys(section, names, where)
    for key, value in section.items():
        current = getattr(instance, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(instance, key, value)
    return instance


def _build_clearance(layout_combos, phases, section: dict) -> ClearanceSpec:
    _require_keys(section, {"full", "partial", "permissive", "overrides"},
                  "clearance")
    table = generate_clearance_table(
        layout_combos, phases,
        full_s=float(section.get("full", 2.0)),
        partial_s=float(section.get("partial", 2.0)),
        permissive_s=float(section.get("permissive", 1.0)))
    by_phases = {tuple(sorted(c.phases)): c.combo_index for c in layout_combos}
    for entry in section.get("overrides", []) or []:
        _require_keys(entry, {"from", "to", "cases"}, "clearance override")
        try:
            src = by_phases[tuple(sorted(entry["from"]))]
            dst = by_phases[tuple(sorted(entry["to"]))]
        except KeyError as exc:
            raise ConfigError(
                f"clearance override names a non-combo phase set: {exc}")
        cases = []
        for c in entry["cases"]:
            _require_keys(c, {"case", "duration"}, "clearance case")
            name = str(c["case"]).lower()
            if name not in _CASE_NAMES:
                raise ConfigError(f"unknown clearance case {c['case']!r}")
            cases.append((_CASE_NAMES[name], float(c.get("duration", 0.0))))
        table[(src, dst)] = cases
    return ClearanceSpec(table=table)


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; raises ConfigError on any defect."""
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    _require_keys(doc, {"name", "layout", "clearance", "demand", "simulation",
                        "controller", "training", "ppo", "cma", "actuated",
                        "fixed_time", "experiment", "features", "theta"},
                  "scenario")

    layout_sec = doc.get("layout")
    if not layout_sec:
        raise ConfigError("scenario needs a layout section")
    _require_keys(layout_sec, {"phases", "conflicts", "allow_singletons"},
                  "layout")
    phase_specs = layout_sec.get("phases") or []
    if not phase_specs:
        raise ConfigError("layout.phases is empty")
    conflicts = [tuple(p) for p in layout_sec.get("conflicts", [])]
    layout = build_layout(
        doc.get("name", path.stem), phase_specs, conflicts,
        allow_singletons=bool(layout_sec.get("allow_singletons", True)))
    if "clearance" in doc:
        spec = _build_clearance(layout.combos, layout.phases, doc["clearance"])
        layout = IntersectionLayout(
            name=layout.name, phases=layout.phases, conflict=layout.conflict,
            clearance=spec, combos=layout.combos,
            allow_singletons=layout.allow_singletons, lanes=layout.lanes)
    problems = validate_layout(layout)
    if problems:
        raise ConfigError(f"invalid layout: {problems}")

    sim_sec = dict(doc.get("simulation") or {})
    allowed = {f.name for f in fields(SimConstants)}
    _require_keys(sim_sec, allowed, "simulation")
    constants = SimConstants(**sim_sec)
    for name in ("link_length", "free_flow_speed", "saturation_headway",
                 "yellow", "min_phase", "bin_seconds"):
        if getattr(constants, name) <= 0 and name not in ("yellow",):
            raise ConfigError(f"simulation.{name} must be positive")
    if constants.yellow < 0 or constants.overtime < 0:
        raise ConfigError("durations must be non-negative")

    demand_rel = doc.get("demand")
    if not demand_rel:
        raise ConfigError("scenario needs a demand file")
    demand_path = (path.parent / demand_rel).resolve()
    if not demand_path.exists():
        raise ConfigError(f"demand file not found: {demand_path}")
    demand = load_demand(demand_path, layout)

    controller_sec = dict(doc.get("controller") or {})
    _require_keys(controller_sec, {"kind"}, "controller")
    controller = str(controller_sec.get("kind", "actuated"))
    if controller not in CONTROLLER_KINDS:
        raise ConfigError(f"unknown controller kind {controller!r}; "
                          f"choose from {CONTROLLER_KINDS}")

    exp_sec = dict(doc.get("experiment") or {})
    _require_keys(exp_sec, {"episodes", "seeds", "n_jobs"}, "experiment")
    episodes = int(exp_sec.get("episodes", 20))
    seeds = [int(s) for s in exp_sec.get("seeds", [0])]
    if episodes <= 0 or not seeds:
        raise ConfigError("experiment needs positive episodes and >=1 seed")

    dqn = _apply_section(DqnConfig(), dict(doc.get("training") or {}),
                         "training")
    dqn.episodes = episodes
    ppo = _apply_section(PpoConfig(), dict(doc.get("ppo") or {}), "ppo")
    ppo.episodes = episodes
    cma = _apply_section(CmaSettings(), dict(doc.get("cma") or {}), "cma")
    actuated = _apply_section(ActuatedSettings(), dict(doc.get("actuated") or {}),
                              "actuated")
    plan = [(int(c), float(g)) for c, g in (doc.get("fixed_time") or {})
            .get("plan", [])]

    features = dict(doc.get("features") or {})
    _require_keys(features, {"scales"}, "features")
    scales = features.get("scales")

    theta = doc.get("theta")
    theta_path = (path.parent / theta).resolve() if theta else None
    if theta_path and not theta_path.exists():
        raise ConfigError(f"theta checkpoint not found: {theta_path}")

    return ScenarioConfig(
        name=str(doc.get("name", path.stem)),
        path=path,
        layout=layout,
        demand=demand,
        demand_path=demand_path,
        constants=constants,
        controller=controller,
        episodes=episodes,
        seeds=seeds,
        dqn=dqn,
        ppo=ppo,
        cma=cma,
        actuated=actuated,
        fixed_time_plan=plan,
        theta_path=theta_path,
        feature_scales=list(scales) if scales else None,
        n_jobs=int(exp_sec.get("n_jobs", 1)),
    )
