"""Minimax instrumented losses and confidence sets over finite candidate classes.

Each candidate is scored by the best discriminator: for rewards,

    loss(R) = max_f  sum_tau f(s, a) * (R(s, a, e) - r)  -  0.5 * sum_tau f(s, a)^2,

a self-normalized objective whose maximum stays near zero exactly when the
residual has zero conditional mean given (state, action) under the data
distribution. Projecting onto (state, action) discriminators is what removes
the confounding that plain regression on realized feedback picks up.
Transition candidates are scored the same way with residuals P g(s, a, e) -
g(next state) against every next-step value target g (general mode), or
per-coordinate mean-map residuals G_i(s, a, e) - next_state_i (dynamical).

Because states, actions, and feedbacks are finite, every empirical sum is a
linear functional of per-(s, a, e) counts, so datasets store running count
tensors and losses are evaluated from them in closed form. A candidate stays
in the confidence set while its loss is at most the confidence level beta;
an empty set falls back to the loss minimizer and raises a flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidIndexError, ValidationError
from .hypotheses import ClassSizes, HypothesisClasses
from .model import Grid, Trajectory, TransitionMode


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class StepData:
    """Running sums for one step: everything the losses need, order-free.

    counts[s, a, e] is the number of samples, reward_sums their reward total.
    General mode tracks next_counts[s, a, s']; dynamical mode tracks
    next_sums[s, a, e, i], the per-coordinate totals of next-state vectors.
    Raw per-sample arrays are kept for reference recomputation in tests.
    """

    counts: np.ndarray
    reward_sums: np.ndarray
    next_counts: np.ndarray | None
    next_sums: np.ndarray | None
    num_samples: int = 0
    raw_states: list[int] = field(default_factory=list)
    raw_actions: list[int] = field(default_factory=list)
    raw_feedbacks: list[int] = field(default_factory=list)
    raw_rewards: list[float] = field(default_factory=list)
    raw_next: list = field(default_factory=list)


class StepDataset:
    """Per-step sample store for one run, appended one episode at a time."""

    def __init__(
        self,
        mode: TransitionMode,
        horizon: int,
        num_states: int,
        num_actions: int,
        num_feedbacks: int,
        state_dim: int = 0,
        grid: Grid | None = None,
    ) -> None:
        self.mode = mode
        self.horizon = horizon
        self.num_states = num_states
        self.num_actions = num_actions
        self.num_feedbacks = num_feedbacks
        self.state_dim = state_dim
        self.grid = grid
        if mode is TransitionMode.DYNAMICAL and grid is None:
            raise ConfigError("dynamical datasets need the grid used to bin states")
        self.steps = [self._empty_step() for _ in range(horizon)]

    def _empty_step(self) -> StepData:
        S, A, E = self.num_states, self.num_actions, self.num_feedbacks
        if self.mode is TransitionMode.GENERAL:
            return StepData(
                counts=np.zeros((S, A, E)),
                reward_sums=np.zeros((S, A, E)),
                next_counts=np.zeros((S, A, S)),
                next_sums=None,
            )
        return StepData(
            counts=np.zeros((S, A, E)),
            reward_sums=np.zeros((S, A, E)),
            next_counts=None,
            next_sums=np.zeros((S, A, E, self.state_dim)),
        )

    def append(self, h: int, s: int, a: int, e: int, r: float, s_next) -> None:
        if not (0 <= h < self.horizon):
            raise InvalidIndexError(f"step {h} out of range")
        d = self.steps[h]
        d.counts[s, a, e] += 1.0
        d.reward_sums[s, a, e] += r
        if self.mode is TransitionMode.GENERAL:
            assert d.next_counts is not None
            d.next_counts[s, a, int(s_next)] += 1.0
        else:
            assert d.next_sums is not None
            d.next_sums[s, a, e] += np.asarray(s_next, dtype=float)
        d.num_samples += 1
        d.raw_states.append(s)
        d.raw_actions.append(a)
        d.raw_feedbacks.append(e)
        d.raw_rewards.append(float(r))
        d.raw_next.append(s_next)

    def append_trajectory(self, traj: Trajectory) -> None:
        """Record one episode using observable fields only."""
        if len(traj) != self.horizon:
            raise ValidationError("trajectory length does not match the horizon")
        for h, step in enumerate(traj.steps):
            if self.mode is TransitionMode.DYNAMICAL:
                assert self.grid is not None
                s = self.grid.locate(np.asarray(step.state, dtype=float))
                s_next = np.asarray(step.next_state, dtype=float)
            else:
                s = int(step.state)
                s_next = int(step.next_state)
            self.append(h, s, step.action, step.feedback, step.reward, s_next)

    @property
    def num_episodes(self) -> int:
        return self.steps[0].num_samples if self.steps else 0


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _discriminator_score(targets: np.ndarray, disc: np.ndarray, sa_counts: np.ndarray) -> np.ndarray:
    """max over discriminators of linear term minus half its empirical square.

    targets is (..., S, A): the per-(s, a) aggregated residual weights.
    Returns the max over the discriminator family for each leading index.
    """
    n_f = disc.shape[0]
    flat_f = disc.reshape(n_f, -1)
    quad = 0.5 * (flat_f**2) @ sa_counts.reshape(-1)
    lead = targets.shape[:-2]
    flat_t = targets.reshape(-1, flat_f.shape[1])
    scores = flat_t @ flat_f.T - quad[None, :]
    return scores.max(axis=1).reshape(lead)


def reward_losses(data_h: StepData, reward_tables: np.ndarray, disc: np.ndarray) -> np.ndarray:
    """Loss of every reward candidate (nR, S, A, E) at one step."""
    aggregated = np.einsum("rsae,sae->rsa", reward_tables, data_h.counts)
    aggregated -= data_h.reward_sums.sum(axis=-1)[None]
    return _discriminator_score(aggregated, disc, data_h.counts.sum(axis=-1))


def reward_loss(data_h: StepData, reward_table: np.ndarray, disc: np.ndarray) -> float:
    """Minimax loss of a single reward candidate."""
    return float(reward_losses(data_h, reward_table[None], disc)[0])


def transition_losses_general(
    data_h: StepData,
    transition_tables: np.ndarray,
    value_targets_next: np.ndarray,
    disc: np.ndarray,
    applied: np.ndarray | None = None,
) -> np.ndarray:
    """Loss of every transition candidate (nP, S, A, E, S) at one step.

    The outer maximum runs over next-step value targets, the inner one over
    discriminators. ``applied`` may carry the data-independent tensor
    P g(s, a, e) of shape (nP, nG, S, A, E) to avoid recomputing it per call.
    """
    assert data_h.next_counts is not None
    if applied is None:
        applied = np.einsum("psaex,gx->pgsae", transition_tables, value_targets_next)
    weighted = np.einsum("pgsae,sae->pgsa", applied, data_h.counts)
    visited = np.einsum("sax,gx->gsa", data_h.next_counts, value_targets_next)
    targets = weighted - visited[None]
    scores = _discriminator_score(targets, disc, data_h.counts.sum(axis=-1))
    return scores.max(axis=1)


def transition_loss_general(
    data_h: StepData,
    transition_table: np.ndarray,
    value_targets_next: np.ndarray,
    disc: np.ndarray,
) -> float:
    return float(
        transition_losses_general(data_h, transition_table[None], value_targets_next, disc)[0]
    )


def mean_map_losses(
    data_h: StepData, mean_tables: np.ndarray, coord: int, disc: np.ndarray
) -> np.ndarray:
    """Loss of every mean-map candidate (nM, S, A, E) for one state coordinate."""
    assert data_h.next_sums is not None
    aggregated = np.einsum("msae,sae->msa", mean_tables, data_h.counts)
    aggregated -= data_h.next_sums[..., coord].sum(axis=-1)[None]
    return _discriminator_score(aggregated, disc, data_h.counts.sum(axis=-1))


def mean_map_loss(
    data_h: StepData, mean_table: np.ndarray, coord: int, disc: np.ndarray
) -> float:
    return float(mean_map_losses(data_h, mean_table[None], coord, disc)[0])


class LossEvaluator:
    """Caches data-independent tensors so per-episode evaluation stays cheap.

    Holds references to the (immutable) classes; per step it precomputes the
    applied tensors P g for every transition candidate and value target.
    Evaluation from a dataset then reduces to small matrix products against
    the running count tensors, which matches a from-scratch per-sample
    computation to floating-point accuracy.
    """

    def __init__(self, classes: HypothesisClasses) -> None:
        self.classes = classes
        self._applied: list[np.ndarray | None] = []
        if classes.mode is TransitionMode.GENERAL:
            assert classes.transition_tables is not None
            for h in range(classes.horizon):
                self._applied.append(
                    np.einsum(
                        "psaex,gx->pgsae",
                        classes.transition_tables[h],
                        classes.value_targets[h + 1],
                    )
                )
        else:
            self._applied = [None] * classes.horizon

    def reward_losses(self, dataset: StepDataset, h: int) -> np.ndarray:
        return reward_losses(
            dataset.steps[h], self.classes.reward_tables[h], self.classes.discriminators[h]
        )

    def transition_losses(self, dataset: StepDataset, h: int) -> np.ndarray | list[np.ndarray]:
        if self.classes.mode is TransitionMode.GENERAL:
            assert self.classes.transition_tables is not None
            return transition_losses_general(
                dataset.steps[h],
                self.classes.transition_tables[h],
                self.classes.value_targets[h + 1],
                self.classes.discriminators[h],
                applied=self._applied[h],
            )
        assert self.classes.mean_map_tables is not None
        return [
            mean_map_losses(dataset.steps[h], per, i, self.classes.discriminators[h])
            for i, per in enumerate(self.classes.mean_map_tables[h])
        ]


# ---------------------------------------------------------------------------
# Confidence levels and sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaLevels:
    """Confidence levels for reward, general-transition, and mean-map losses."""

    reward: float
    transition_general: float
    transition_dynamical: float


def confidence_levels(
    bound: float,
    num_episodes: int,
    horizon: int,
    sizes: ClassSizes,
    delta: float,
    beta_scale: float = 1.0,
) -> BetaLevels:
    """Concentration thresholds 28 B^2 log(card / delta), scaled by beta_scale.

    card multiplies episodes, horizon, and the total class sizes involved in
    each loss: discriminators and rewards for the reward level; additionally
    value targets for general transitions; discriminators and transition
    candidates for the dynamical level. Natural log. beta_scale is a practical
    knob (1.0 reproduces the analysis constant; small fractions are the
    operating range at desk scale).
    """
    if num_episodes < 1 or horizon < 1:
        raise ConfigError("episode count and horizon must be positive")
    if not (0.0 < delta < 1.0):
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    if beta_scale <= 0:
        raise ConfigError("beta_scale must be positive")
    if bound <= 0:
        raise ConfigError("bound must be positive")
    if min(sizes.rewards, sizes.transitions, sizes.discriminators, sizes.value_targets) < 1:
        raise ConfigError("class sizes must be positive")
    base = 28.0 * bound * bound * beta_scale
    kh = float(num_episodes) * float(horizon)
    b1 = base * math.log(kh * sizes.discriminators * sizes.rewards / delta)
    b2 = base * math.log(
        kh * sizes.discriminators * sizes.value_targets * sizes.transitions / delta
    )
    b3 = base * math.log(kh * sizes.discriminators * sizes.transitions / delta)
    return BetaLevels(reward=b1, transition_general=b2, transition_dynamical=b3)


@dataclass
class ConfidenceSets:
    """Surviving candidate indices per step, with the losses that produced them.

    reward_sets[h] and (general) transition_sets[h] are ascending index
    tuples; dynamical transition_sets[h] is a tuple of per-coordinate index
    tuples. fallback_flags records empty-set fallbacks, which keep only the
    loss minimizer.
    """

    mode: TransitionMode
    reward_sets: list[tuple[int, ...]]
    transition_sets: list
    reward_loss_values: list[np.ndarray]
    transition_loss_values: list
    betas: BetaLevels
    fallback_flags: tuple[str, ...] = ()


def _threshold(losses: np.ndarray, beta: float, label: str, flags: list[str]) -> tuple[int, ...]:
    keep = np.flatnonzero(losses <= beta)
    if keep.size == 0:
        flags.append(f"{label}-empty-set-fallback")
        keep = np.array([int(np.argmin(losses))])
    return tuple(int(i) for i in keep)


def build_confidence_sets(
    evaluator: LossEvaluator, dataset: StepDataset, betas: BetaLevels
) -> ConfidenceSets:
    """Threshold every candidate's loss at the mode-appropriate level."""
    classes = evaluator.classes
    flags: list[str] = []
    reward_sets = []
    reward_vals = []
    transition_sets: list = []
    transition_vals: list = []
    for h in range(classes.horizon):
        r_losses = evaluator.reward_losses(dataset, h)
        reward_vals.append(r_losses)
        reward_sets.append(_threshold(r_losses, betas.reward, f"reward-h{h}", flags))
        t_losses = evaluator.transition_losses(dataset, h)
        transition_vals.append(t_losses)
        if classes.mode is TransitionMode.GENERAL:
            transition_sets.append(
                _threshold(t_losses, betas.transition_general, f"transition-h{h}", flags)
            )
        else:
            per = tuple(
                _threshold(
                    t_losses[i], betas.transition_dynamical, f"mean-map-h{h}-c{i}", flags
                )
                for i in range(len(t_losses))
            )
            transition_sets.append(per)
    return ConfidenceSets(
        mode=classes.mode,
        reward_sets=reward_sets,
        transition_sets=transition_sets,
        reward_loss_values=reward_vals,
        transition_loss_values=transition_vals,
        betas=betas,
        fallback_flags=tuple(flags),
    )
