"""Online learning loop: roll out, refit confidence sets, plan optimistically.

Each episode the committed policy is played once, the episode's samples join
the per-step datasets, every candidate's minimax loss is refreshed, and the
next policy is the optimal policy of the highest-value model whose candidates
all survive their confidence thresholds. The returned mixture over episode
policies is the standard online-to-batch output.

The learner path touches only trajectory observables, the learner-visible
knowledge object, and the candidate classes. Environment internals are used
solely to generate rollouts (and, optionally, for the realizability gate at
startup, which does not influence any decision).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, RealizabilityError
from .estimation import (
    BetaLevels,
    ConfidenceSets,
    LossEvaluator,
    StepDataset,
    confidence_levels,
)
from .hypotheses import HypothesisClasses, RealizabilityReport, check_realizability
from .model import (
    LearnerKnowledge,
    MixturePolicy,
    Policy,
    StrategicModel,
    TransitionMode,
    make_rng,
    rollout,
)
from .planning import (
    AggregatedMDP,
    CandidateAggregates,
    SelectionMode,
    optimistic_select,
    policy_value,
)


@dataclass(frozen=True)
class RunCaps:
    selector: int = 1_000_000


@dataclass
class RunConfig:
    """Inputs of one learning run."""

    episodes: int
    delta: float
    mode: TransitionMode
    seed: int
    optimism: SelectionMode = SelectionMode.EXACT
    beta_scale: float = 1.0
    caps: RunCaps = field(default_factory=RunCaps)
    evaluation_cadence: int = 50
    recompute_every: int = 1
    strict_realizability: bool = False
    check_realizability_at_start: bool = True

    def validate(self) -> None:
        if self.episodes < 1:
            raise ConfigError("episodes must be at least 1")
        if not (0.0 < self.delta < 1.0):
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.beta_scale <= 0:
            raise ConfigError("beta_scale must be positive")
        if self.recompute_every < 1 or self.evaluation_cadence < 1:
            raise ConfigError("recompute_every and evaluation_cadence must be at least 1")


@dataclass
class EpisodeRecord:
    """Everything logged for one episode.

    The confidence sets and selection stored here are the ones computed after
    this episode's data was appended, i.e. the state that produces the next
    policy. Regret fields are filled later by the diagnostics oracle.
    """

    episode: int
    reward_sets: tuple[tuple[int, ...], ...]
    transition_sets: tuple
    betas: tuple[float, float, float]
    optimistic_value: float
    relaxed: bool
    chosen_reward_idx: tuple[int, ...] | None
    chosen_transition_idx: tuple | None
    chosen_reward_losses: tuple[float, ...] | None
    chosen_transition_losses: tuple | None
    flags: tuple[str, ...]
    wallclock_ms: float
    instant_regret: float | None = None
    cum_regret: float | None = None

    @property
    def reward_set_sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.reward_sets)

    @property
    def transition_set_sizes(self) -> tuple:
        if self.transition_sets and isinstance(self.transition_sets[0][0], tuple):
            return tuple(tuple(len(c) for c in per) for per in self.transition_sets)
        return tuple(len(s) for s in self.transition_sets)


@dataclass
class RunResult:
    config: RunConfig
    policies: list[Policy]
    mixture: MixturePolicy
    episodes: list[EpisodeRecord]
    realizability: RealizabilityReport | None
    flags: tuple[str, ...]
    final_sets: ConfidenceSets | None = None
    dataset: StepDataset | None = None

    def canonical_json(self, include_wallclock: bool = False) -> str:
        """Deterministic serialization; wall-clock fields excluded by default."""
        eps = []
        for rec in self.episodes:
            d = {
                "episode": rec.episode,
                "reward_sets": rec.reward_sets,
                "transition_sets": rec.transition_sets,
                "betas": rec.betas,
                "optimistic_value": rec.optimistic_value,
                "relaxed": rec.relaxed,
                "chosen_reward_idx": rec.chosen_reward_idx,
                "chosen_transition_idx": rec.chosen_transition_idx,
                "chosen_reward_losses": rec.chosen_reward_losses,
                "chosen_transition_losses": rec.chosen_transition_losses,
                "flags": rec.flags,
                "instant_regret": rec.instant_regret,
                "cum_regret": rec.cum_regret,
            }
            if include_wallclock:
                d["wallclock_ms"] = rec.wallclock_ms
            eps.append(d)
        payload = {
            "config": {
                "episodes": self.config.episodes,
                "delta": self.config.delta,
                "mode": self.config.mode.value,
                "seed": self.config.seed,
                "optimism": self.config.optimism.value,
                "beta_scale": self.config.beta_scale,
                "selector_cap": self.config.caps.selector,
                "recompute_every": self.config.recompute_every,
            },
            "flags": sorted(self.flags),
            "policies": [p.action_probs.tolist() for p in self.policies],
            "episodes": eps,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def run_learner(
    env: StrategicModel,
    knowledge: LearnerKnowledge,
    classes: HypothesisClasses,
    cfg: RunConfig,
) -> RunResult:
    """Run the full online loop for cfg.episodes episodes.

    Per episode: roll out the committed policy, append its samples, rebuild
    the confidence sets from all data at the fixed-horizon confidence levels,
    and select the optimistic surviving model; its optimal policy is committed
    for the next episode. The mixture over all committed policies is returned.
    """
    cfg.validate()
    if cfg.mode is not env.transition_mode:
        raise ConfigError(
            f"config mode {cfg.mode.value} does not match environment mode "
            f"{env.transition_mode.value}"
        )
    if classes.mode is not env.transition_mode:
        raise ConfigError("classes mode does not match environment mode")

    report: RealizabilityReport | None = None
    run_flags: set[str] = set()
    if cfg.check_realizability_at_start:
        report = check_realizability(env, classes, knowledge)
        if not report.passed:
            if cfg.strict_realizability:
                raise RealizabilityError(
                    "realizability check failed: "
                    + "; ".join(
                        c.detail
                        for c in (
                            report.truth_in_rewards,
                            report.truth_in_transitions,
                            report.projections_in_discriminators,
                            report.values_in_targets,
                        )
                        if c.detail
                    )
                )
            run_flags.add("realizability-not-verified")

    H = knowledge.horizon
    rng = make_rng(cfg.seed)
    dataset = StepDataset(
        mode=env.transition_mode,
        horizon=H,
        num_states=knowledge.num_states,
        num_actions=knowledge.num_actions,
        num_feedbacks=knowledge.num_feedbacks,
        state_dim=env.state_dim,
        grid=knowledge.grid,
    )
    evaluator = LossEvaluator(classes)
    aggregates = CandidateAggregates.from_classes(classes, knowledge)
    sizes = classes.sizes()
    betas = confidence_levels(
        classes.bound, cfg.episodes, H, sizes, cfg.delta, cfg.beta_scale
    )
    if cfg.recompute_every > 1:
        run_flags.add("stale-sets-deviation")

    policy = Policy.uniform(H, knowledge.num_states, knowledge.num_actions)
    policies: list[Policy] = []
    records: list[EpisodeRecord] = []
    initial_cell: int | None = None
    sets: ConfidenceSets | None = None
    selection = None

    for k in range(1, cfg.episodes + 1):
        t0 = time.perf_counter()
        traj = rollout(env, policy, rng)
        policies.append(policy)
        dataset.append_trajectory(traj)
        if initial_cell is None:
            first = traj.steps[0].state
            if env.transition_mode is TransitionMode.DYNAMICAL:
                assert knowledge.grid is not None
                initial_cell = knowledge.grid.locate(np.asarray(first, dtype=float))
            else:
                initial_cell = int(first)

        episode_flags: list[str] = []
        if k == 1 or k % cfg.recompute_every == 0 or k == cfg.episodes:
            sets, selection = build_sets_and_select(
                evaluator, dataset, betas, aggregates, initial_cell, cfg, episode_flags
            )
        else:
            episode_flags.append("stale-sets")
        assert sets is not None and selection is not None
        policy = selection.policy

        episode_flags.extend(sets.fallback_flags)
        if selection.relaxed:
            episode_flags.append("relaxed-selection")
        chosen_r_losses = None
        chosen_t_losses = None
        if selection.reward_idx is not None:
            chosen_r_losses = tuple(
                float(sets.reward_loss_values[h][selection.reward_idx[h]]) for h in range(H)
            )
        if selection.transition_idx is not None:
            if classes.mode is TransitionMode.GENERAL:
                chosen_t_losses = tuple(
                    float(sets.transition_loss_values[h][selection.transition_idx[h]])
                    for h in range(H)
                )
            else:
                chosen_t_losses = tuple(
                    tuple(
                        float(sets.transition_loss_values[h][i][selection.transition_idx[h][i]])
                        for i in range(len(selection.transition_idx[h]))
                    )
                    for h in range(H)
                )
        records.append(
            EpisodeRecord(
                episode=k,
                reward_sets=tuple(tuple(s) for s in sets.reward_sets),
                transition_sets=_freeze_transition_sets(sets),
                betas=(
                    sets.betas.reward,
                    sets.betas.transition_general,
                    sets.betas.transition_dynamical,
                ),
                optimistic_value=selection.value,
                relaxed=selection.relaxed,
                chosen_reward_idx=selection.reward_idx,
                chosen_transition_idx=selection.transition_idx,
                chosen_reward_losses=chosen_r_losses,
                chosen_transition_losses=chosen_t_losses,
                flags=tuple(episode_flags),
                wallclock_ms=(time.perf_counter() - t0) * 1000.0,
            )
        )
        for f in episode_flags:
            if f.endswith("empty-set-fallback"):
                run_flags.add("empty-set-fallback")

    return RunResult(
        config=cfg,
        policies=policies,
        mixture=MixturePolicy(policies),
        episodes=records,
        realizability=report,
        flags=tuple(sorted(run_flags)),
        final_sets=sets,
        dataset=dataset,
    )


def build_sets_and_select(
    evaluator: LossEvaluator,
    dataset: StepDataset,
    betas: BetaLevels,
    aggregates: CandidateAggregates,
    initial_cell: int,
    cfg: RunConfig,
    episode_flags: list[str],
):
    from .estimation import build_confidence_sets

    sets = build_confidence_sets(evaluator, dataset, betas)
    try:
        selection = optimistic_select(
            aggregates,
            sets.reward_sets,
            sets.transition_sets,
            initial_cell,
            mode=cfg.optimism,
            cap=cfg.caps.selector,
        )
    except CapacityError:
        episode_flags.append("selector-capacity-fallback")
        selection = optimistic_select(
            aggregates,
            sets.reward_sets,
            sets.transition_sets,
            initial_cell,
            mode=SelectionMode.POINTWISE,
            cap=cfg.caps.selector,
        )
    return sets, selection


def _freeze_transition_sets(sets: ConfidenceSets) -> tuple:
    out = []
    for per in sets.transition_sets:
        if per and isinstance(per[0], tuple):
            out.append(tuple(tuple(c) for c in per))
        else:
            out.append(tuple(per))
    return tuple(out)


def mixture_value(policy: MixturePolicy, oracle: AggregatedMDP) -> float:
    """Average exact value of the mixture components on the evaluation oracle."""
    H = oracle.horizon
    for comp in policy.components:
        if comp.action_probs.shape[0] != H:
            raise ConfigError("mixture component horizon does not match the oracle")
    vals = [policy_value(oracle, comp) for comp in policy.components]
    return float(np.mean(vals))
