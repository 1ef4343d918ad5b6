"""Experiment runner: seeded sweeps, on-disk artifacts, cross-seed summaries.

Layout under the output root, one directory per experiment:

    <root>/<label>/manifest.json          config echo, version, flags
    <root>/<label>/summary.csv            per-checkpoint aggregates over seeds
    <root>/<label>/seed-XXXX/manifest.json
    <root>/<label>/seed-XXXX/episodes.csv
    <root>/<label>/seed-XXXX/diagnostics.json

All numeric CSV fields are written with repr, so identical runs produce
byte-identical files; wall-clock fields are the only nondeterministic values.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, config_from_dict
from .diagnostics import ill_posedness, naive_baseline, regret_curve, transfer_term
from .driver import RunCaps, RunConfig, RunResult, run_learner
from .errors import ValidationError
from .hypotheses import ClassCaps, HypothesisClasses
from .model import TransitionMode
from .planning import SelectionMode, true_aggregated_model, value_iteration
from .scenarios import Scenario, build_scenario

EPISODE_COLUMNS = [
    "seed",
    "episode",
    "instant_regret",
    "cum_regret",
    "conf_sizes_R",
    "conf_sizes_P",
    "beta1",
    "beta2",
    "beta3",
    "flags",
    "wallclock_ms",
]

SUMMARY_COLUMNS = ["episode", "num_seeds", "mean_cum_regret", "std_cum_regret", "truth_coverage"]


def _fmt(x) -> str:
    return repr(float(x))


def _sizes_r(rec) -> str:
    return ";".join(str(n) for n in rec.reward_set_sizes)


def _sizes_p(rec) -> str:
    parts = []
    for per in rec.transition_set_sizes:
        if isinstance(per, tuple):
            parts.append(",".join(str(n) for n in per))
        else:
            parts.append(str(per))
    return ";".join(parts)


def _truth_in_record(rec, classes: HypothesisClasses) -> bool | None:
    """Whether the designated true candidates survive in every set of this record."""
    for h in range(classes.horizon):
        ri = classes.truth_reward_idx[h]
        if ri is None:
            return None
        if ri not in rec.reward_sets[h]:
            return False
        ti = classes.truth_transition_idx[h]
        per = rec.transition_sets[h]
        if classes.mode is TransitionMode.GENERAL:
            if ti is None:
                return None
            if ti not in per:
                return False
        else:
            for i, idx in enumerate(ti):
                if idx is None:
                    return None
                if idx not in per[i]:
                    return False
    return True


def build_from_config(cfg: ScenarioConfig) -> Scenario:
    """Construct the scenario named by the config and apply the class caps."""
    scenario = build_scenario(cfg.generator, cfg.generator_seed, cfg.generator_params)
    caps = ClassCaps(per_step=cfg.per_step_cap, joint=cfg.joint_cap)
    if caps != scenario.classes.caps:
        scenario.classes = replace(scenario.classes, caps=caps)
    return scenario


def run_config_for(cfg: ScenarioConfig, scenario: Scenario, seed: int) -> RunConfig:
    return RunConfig(
        episodes=cfg.episodes,
        delta=cfg.delta,
        mode=scenario.model.transition_mode,
        seed=seed,
        optimism=SelectionMode.EXACT if cfg.optimism == "exact" else SelectionMode.POINTWISE,
        beta_scale=cfg.beta_scale,
        caps=RunCaps(selector=cfg.selector_cap),
        evaluation_cadence=cfg.evaluation_cadence,
        recompute_every=cfg.recompute_every,
        strict_realizability=cfg.strict_realizability,
    )


def checkpoints(episodes: int, cadence: int) -> list[int]:
    marks = sorted(set(range(cadence, episodes + 1, cadence)) | {episodes})
    return marks


@dataclass
class SeedOutcome:
    seed: int
    cum_at: dict[int, float]
    truth_prefix_at: dict[int, bool | None]
    run_flags: tuple[str, ...]
    wallclock_ms: float


def write_episodes_csv(path: Path, seed: int, run: RunResult) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODE_COLUMNS)
        for rec in run.episodes:
            writer.writerow(
                [
                    seed,
                    rec.episode,
                    _fmt(rec.instant_regret),
                    _fmt(rec.cum_regret),
                    _sizes_r(rec),
                    _sizes_p(rec),
                    _fmt(rec.betas[0]),
                    _fmt(rec.betas[1]),
                    _fmt(rec.betas[2]),
                    ";".join(rec.flags),
                    _fmt(rec.wallclock_ms),
                ]
            )


def run_seed(
    cfg: ScenarioConfig, seed: int, seed_dir: Path, shared_diag: dict | None = None
) -> SeedOutcome:
    """Run one seed end to end and write its artifact directory."""
    t0 = time.perf_counter()
    scenario = build_from_config(cfg)
    knowledge = scenario.knowledge()
    run = run_learner(scenario.model, knowledge, scenario.classes, run_config_for(cfg, scenario, seed))
    curve = regret_curve(run, scenario.model, knowledge)

    seed_dir.mkdir(parents=True, exist_ok=True)
    write_episodes_csv(seed_dir / "episodes.csv", seed, run)

    diag: dict = {}
    if cfg.diagnostics.regret:
        diag["regret"] = curve.as_dict()
    if cfg.diagnostics.naive_baseline and run.dataset is not None:
        diag["naive_baseline"] = naive_baseline(run.dataset, scenario.model).as_dict()
    if shared_diag:
        diag.update(shared_diag)
    if run.realizability is not None:
        diag["realizability"] = run.realizability.as_dict()
    (seed_dir / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True))

    marks = checkpoints(cfg.episodes, cfg.evaluation_cadence)
    cum_at: dict[int, float] = {}
    truth_at: dict[int, bool | None] = {}
    ok: bool | None = True
    by_episode = {rec.episode: rec for rec in run.episodes}
    for k in range(1, cfg.episodes + 1):
        t = _truth_in_record(by_episode[k], scenario.classes)
        if t is None:
            ok = None
        elif ok is True and not t:
            ok = False
        if k in marks:
            cum_at[k] = float(by_episode[k].cum_regret)
            truth_at[k] = ok
    wall = (time.perf_counter() - t0) * 1000.0

    manifest = {
        "config": cfg.raw,
        "version": __version__,
        "seed": seed,
        "scenario": scenario.name,
        "mode": scenario.model.transition_mode.value,
        "scenario_params": scenario.params,
        "run_flags": sorted(run.flags),
        "class_flags": sorted(scenario.classes.flags),
        "realizability": None if run.realizability is None else run.realizability.as_dict(),
        "truth_event": truth_at.get(cfg.episodes),
        "final_cum_regret": cum_at[cfg.episodes],
        "wallclock_ms": wall,
    }
    (seed_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return SeedOutcome(
        seed=seed,
        cum_at=cum_at,
        truth_prefix_at=truth_at,
        run_flags=tuple(sorted(run.flags)),
        wallclock_ms=wall,
    )


def _seed_task(cfg: ScenarioConfig, seed: int, seed_dir: str, shared: dict | None) -> SeedOutcome:
    return run_seed(cfg, seed, Path(seed_dir), shared)


def shared_diagnostics(cfg: ScenarioConfig, scenario: Scenario) -> dict:
    """Seed-independent oracles requested by the config, computed once."""
    out: dict = {}
    H = scenario.model.horizon
    if cfg.diagnostics.ill_posedness:
        out["ill_posedness"] = [
            ill_posedness(
                scenario.model, scenario.classes, h, policy_budget=cfg.diagnostics.policy_budget
            ).as_dict()
            for h in range(H)
        ]
    if cfg.diagnostics.transfer:
        out["transfer"] = [
            transfer_term(
                scenario.model, scenario.classes, h, policy_budget=cfg.diagnostics.policy_budget
            ).as_dict()
            for h in range(H)
        ]
    return out


def write_summary(path: Path, cfg: ScenarioConfig, outcomes: list[SeedOutcome]) -> None:
    marks = checkpoints(cfg.episodes, cfg.evaluation_cadence)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for k in marks:
            cums = np.array([o.cum_at[k] for o in outcomes])
            truths = [o.truth_prefix_at[k] for o in outcomes]
            known = [t for t in truths if t is not None]
            coverage = "" if len(known) < len(truths) else _fmt(np.mean([1.0 if t else 0.0 for t in known]))
            std = float(np.std(cums, ddof=1)) if len(cums) > 1 else 0.0
            writer.writerow(
                [k, len(outcomes), _fmt(cums.mean()), _fmt(std), coverage]
            )


def experiment_dir(cfg: ScenarioConfig, output_root: str | None = None) -> Path:
    root = Path(output_root) if output_root else Path(cfg.output.root)
    return root / (cfg.output.label or cfg.generator)


def run_experiment(cfg: ScenarioConfig, output_root: str | None = None) -> Path:
    """Run every seed, write all artifacts, and return the experiment directory.

    Any error is recorded in the experiment manifest before being re-raised,
    so a failed directory is self-describing.
    """
    exp_dir = experiment_dir(cfg, output_root)
    exp_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    manifest: dict = {
        "config": cfg.raw,
        "version": __version__,
        "seeds": list(cfg.seeds),
        "status": "running",
    }
    try:
        scenario = build_from_config(cfg)
        shared = shared_diagnostics(cfg, scenario)
        plan = value_iteration(true_aggregated_model(scenario.model))
        manifest["scenario"] = scenario.name
        manifest["mode"] = scenario.model.transition_mode.value
        manifest["class_flags"] = sorted(scenario.classes.flags)
        manifest["optimal_target_value"] = plan.value_at_initial

        outcomes: list[SeedOutcome] = []
        dirs = {seed: exp_dir / f"seed-{seed:04d}" for seed in cfg.seeds}
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [
                    pool.submit(_seed_task, cfg, seed, str(dirs[seed]), shared)
                    for seed in cfg.seeds
                ]
                outcomes = [f.result() for f in futures]
        else:
            for seed in cfg.seeds:
                outcomes.append(run_seed(cfg, seed, dirs[seed], shared))

        write_summary(exp_dir / "summary.csv", cfg, outcomes)
        flags = sorted({f for o in outcomes for f in o.run_flags})
        manifest["run_flags"] = flags
        manifest["status"] = "ok"
        manifest["wallclock_ms"] = (time.perf_counter() - started) * 1000.0
        (exp_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return exp_dir
    except Exception as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["wallclock_ms"] = (time.perf_counter() - started) * 1000.0
        (exp_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        raise


def diagnose(cfg: ScenarioConfig, output_root: str | None = None) -> Path:
    """Compute scenario-level oracles without running the learner.

    Writes diagnostics.json with the identifiability measures, the
    realizability report, and the optimal target value. Sample-dependent
    diagnostics (regret, naive baseline) need a run and are skipped here.
    """
    from .hypotheses import check_realizability

    exp_dir = experiment_dir(cfg, output_root)
    exp_dir.mkdir(parents=True, exist_ok=True)
    scenario = build_from_config(cfg)
    knowledge = scenario.knowledge()
    H = scenario.model.horizon
    report = check_realizability(scenario.model, scenario.classes, knowledge)
    plan = value_iteration(true_aggregated_model(scenario.model))
    diag = {
        "scenario": scenario.name,
        "mode": scenario.model.transition_mode.value,
        "version": __version__,
        "optimal_target_value": plan.value_at_initial,
        "realizability": report.as_dict(),
        "ill_posedness": [
            ill_posedness(
                scenario.model, scenario.classes, h, policy_budget=cfg.diagnostics.policy_budget
            ).as_dict()
            for h in range(H)
        ],
        "transfer": [
            transfer_term(
                scenario.model, scenario.classes, h, policy_budget=cfg.diagnostics.policy_budget
            ).as_dict()
            for h in range(H)
        ],
    }
    (exp_dir / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True))
    return exp_dir


def apply_override(data: dict, dotted: str, value) -> dict:
    """Return a copy of a config mapping with one dotted path replaced."""
    out = deepcopy(data)
    parts = dotted.split(".")
    node = out
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value
    return out


def sweep_configs(base: dict, grid: dict[str, list]) -> list[tuple[str, ScenarioConfig]]:
    """Cartesian product of dotted-path overrides; returns (label, config) pairs.

    Every combination is validated; the first invalid combination aborts the
    sweep with its full violation list.
    """
    combos: list[tuple[str, dict]] = [("", base)]
    for key, values in grid.items():
        nxt = []
        for label, data in combos:
            for v in values:
                tag = f"{key.split('.')[-1]}={v}"
                nxt.append((f"{label},{tag}" if label else tag, apply_override(data, key, v)))
        combos = nxt
    out = []
    for label, data in combos:
        try:
            cfg = config_from_dict(data)
        except ValidationError as exc:
            raise ValidationError(f"sweep point [{label}]: {exc}") from None
        label_dir = label.replace(",", "_").replace("=", "-") or "base"
        base_label = cfg.output.label or cfg.generator
        cfg.output.label = f"{base_label}_{label_dir}"
        out.append((label, cfg))
    return out
