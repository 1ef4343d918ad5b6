"""Episodic simulator for principal-agent interactions with hidden agent types.

The environment is an episodic MDP in which, at every step, a hidden agent type
is drawn, the agent best-responds to the principal's action, and the principal
observes only a feedback signal and a reward. The reward carries an additive
type-dependent shift (demeaned under the source type distribution) plus
Gaussian noise, so conditioning on the realized feedback biases naive reward
estimates. Transitions are either a finite kernel indexed by feedback
("general" mode) or a mean map plus type shift plus Gaussian noise on a
continuous state vector ("dynamical" mode, states binned on a uniform grid).

All stochastic operations take an explicit numpy Generator and consume draws in
a fixed documented order, so a run is reproducible from its 64-bit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidIndexError, ValidationError

SIMPLEX_TOL = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    """Return a counter-based generator for the given 64-bit seed."""
    return np.random.Generator(np.random.Philox(seed))


def draw_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Sample an index from a probability vector with a single uniform draw.

    Uses inverse-CDF on the cumulative sums, so a degenerate (one-hot) vector
    returns its support point for every value of the uniform.
    """
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(idx, len(probs) - 1)


def _draw_categorical_rows(rng: np.random.Generator, rows: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF sampling, one draw per row of (n, m) probabilities."""
    cum = np.cumsum(rows, axis=1)
    u = rng.random(rows.shape[0])
    idx = (cum > u[:, None]).argmax(axis=1)
    # argmax of an all-False row is 0; map rounding leftovers to the last index
    bad = cum[:, -1] <= u
    idx[bad] = rows.shape[1] - 1
    return idx


class TransitionMode(Enum):
    """How next states are produced: finite kernel or mean map on a grid."""

    GENERAL = "general"
    DYNAMICAL = "dynamical"


# ---------------------------------------------------------------------------
# Grid for dynamical-mode states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid over a bounding box in up to a few dimensions.

    Cells are indexed row-major over the per-dimension bins. Points outside the
    box belong to the nearest boundary cell, and Gaussian mass outside the box
    is folded into the boundary cells the same way.
    """

    lows: tuple[float, ...]
    highs: tuple[float, ...]
    cells_per_dim: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.lows) == len(self.highs) == len(self.cells_per_dim)):
            raise ValidationError("grid lows/highs/cells_per_dim lengths differ")
        if any(n < 1 for n in self.cells_per_dim):
            raise ValidationError("grid needs at least one cell per dimension")
        if any(h <= l for l, h in zip(self.lows, self.highs)):
            raise ValidationError("grid box must have positive extent per dimension")

    @property
    def dim(self) -> int:
        return len(self.cells_per_dim)

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    def widths(self) -> np.ndarray:
        return (np.asarray(self.highs) - np.asarray(self.lows)) / np.asarray(
            self.cells_per_dim
        )

    def locate(self, point: np.ndarray) -> int:
        """Cell index containing the point, clipped to the box."""
        point = np.asarray(point, dtype=float)
        if point.shape != (self.dim,):
            raise ValidationError(f"point shape {point.shape} does not match grid dim {self.dim}")
        rel = (point - np.asarray(self.lows)) / self.widths()
        sub = np.clip(np.floor(rel).astype(int), 0, np.asarray(self.cells_per_dim) - 1)
        return int(np.ravel_multi_index(tuple(sub), self.cells_per_dim))

    def locate_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        rel = (points - np.asarray(self.lows)) / self.widths()
        sub = np.clip(np.floor(rel).astype(int), 0, np.asarray(self.cells_per_dim) - 1)
        return np.ravel_multi_index(tuple(sub.T), self.cells_per_dim)

    def center(self, cell: int) -> np.ndarray:
        sub = np.asarray(np.unravel_index(cell, self.cells_per_dim))
        return np.asarray(self.lows) + (sub + 0.5) * self.widths()

    def centers(self) -> np.ndarray:
        return np.stack([self.center(c) for c in range(self.num_cells)])

    def edges(self, dim: int) -> np.ndarray:
        return np.linspace(self.lows[dim], self.highs[dim], self.cells_per_dim[dim] + 1)

    def gaussian_mass_1d(self, mean: float, scale: float, dim: int) -> np.ndarray:
        """Per-bin mass of N(mean, scale^2) along one dimension.

        Tail mass below/above the box is folded into the first/last bin. A zero
        scale degenerates to a point mass in the bin containing the mean.
        """
        n = self.cells_per_dim[dim]
        if scale == 0.0:
            width = self.widths()[dim]
            j = int(np.clip(math.floor((mean - self.lows[dim]) / width), 0, n - 1))
            out = np.zeros(n)
            out[j] = 1.0
            return out
        from scipy.special import ndtr

        edges = self.edges(dim)
        cdf = ndtr((edges - mean) / scale)
        cdf[0] = 0.0
        cdf[-1] = 1.0
        return np.diff(cdf)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass
class StrategicModel:
    """Full simulator description, including components hidden from the learner.

    Shapes (H = horizon, S = states or grid cells, A = principal actions,
    T = agent types, B = agent actions, E = feedbacks, d = state dimension):

      source_type_dist    (H, T)   per-step type distribution generating data
      target_type_dist    (H, T)   population the learner optimizes for
      agent_reward        (H, S, A, T, B)
      feedback_kernel     (H, S, A, T, B, E)
      principal_reward    (H, S, A, E)   values within [0, reward_bound]
      reward_confound     (H, T)   additive shift, demeaned under source per step
      transition_kernel   (H, S, A, E, S)   general mode only
      mean_map            (H, S, A, E, d)   dynamical mode only (S = grid cells)
      trans_confound      (H, T, d)   dynamical, demeaned under source per step

    Construction demeans both confound tables under the per-step source
    distribution and then validates every distribution row to 1e-9. In
    dynamical mode the state is a d-vector, tables are indexed by the grid cell
    of the state, and the initial state is the center of cell
    ``initial_state``.
    """

    horizon: int
    num_states: int
    num_actions: int
    num_feedbacks: int
    num_types: int
    num_agent_actions: int
    initial_state: int
    source_type_dist: np.ndarray
    target_type_dist: np.ndarray
    agent_reward: np.ndarray
    feedback_kernel: np.ndarray
    principal_reward: np.ndarray
    reward_confound: np.ndarray
    reward_noise_std: float
    reward_bound: float
    transition_mode: TransitionMode
    transition_kernel: np.ndarray | None = None
    state_dim: int = 0
    grid: Grid | None = None
    mean_map: np.ndarray | None = None
    trans_confound: np.ndarray | None = None
    trans_noise_scale: float = 1.0

    def __post_init__(self) -> None:
        for name in (
            "source_type_dist",
            "target_type_dist",
            "agent_reward",
            "feedback_kernel",
            "principal_reward",
            "reward_confound",
        ):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.transition_kernel is not None:
            self.transition_kernel = np.asarray(self.transition_kernel, dtype=float)
        if self.mean_map is not None:
            self.mean_map = np.asarray(self.mean_map, dtype=float)
        if self.trans_confound is not None:
            self.trans_confound = np.asarray(self.trans_confound, dtype=float)
        self._demean_confounds()
        self.validate()

    def _demean_confounds(self) -> None:
        src = self.source_type_dist
        if self.reward_confound.shape == (self.horizon, self.num_types) and src.shape == (
            self.horizon,
            self.num_types,
        ):
            mean = np.sum(src * self.reward_confound, axis=1, keepdims=True)
            self.reward_confound = self.reward_confound - mean
            if self.trans_confound is not None:
                tmean = np.einsum("ht,htd->hd", src, self.trans_confound)
                self.trans_confound = self.trans_confound - tmean[:, None, :]

    def validate(self) -> None:
        H, S, A, E = self.horizon, self.num_states, self.num_actions, self.num_feedbacks
        T, B = self.num_types, self.num_agent_actions
        if H < 1:
            raise ValidationError("horizon must be at least 1")
        shapes = {
            "source_type_dist": (self.source_type_dist, (H, T)),
            "target_type_dist": (self.target_type_dist, (H, T)),
            "agent_reward": (self.agent_reward, (H, S, A, T, B)),
            "feedback_kernel": (self.feedback_kernel, (H, S, A, T, B, E)),
            "principal_reward": (self.principal_reward, (H, S, A, E)),
            "reward_confound": (self.reward_confound, (H, T)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {want}")
        _check_simplex(self.source_type_dist, "source_type_dist")
        _check_simplex(self.target_type_dist, "target_type_dist")
        _check_simplex(self.feedback_kernel, "feedback_kernel")
        if self.reward_noise_std < 0:
            raise ValidationError("reward_noise_std must be nonnegative")
        if self.reward_bound <= 0:
            raise ValidationError("reward_bound must be positive")
        lo, hi = self.principal_reward.min(), self.principal_reward.max()
        if lo < -SIMPLEX_TOL or hi > self.reward_bound + SIMPLEX_TOL:
            raise ValidationError(
                f"principal_reward range [{lo}, {hi}] exceeds [0, {self.reward_bound}]"
            )
        if not (0 <= self.initial_state < S):
            raise InvalidIndexError(f"initial_state {self.initial_state} out of range")
        resid = np.abs(np.sum(self.source_type_dist * self.reward_confound, axis=1))
        if resid.max() > SIMPLEX_TOL:
            raise ValidationError("reward_confound is not demeaned under the source")
        if self.transition_mode is TransitionMode.GENERAL:
            if self.transition_kernel is None:
                raise ValidationError("general mode requires transition_kernel")
            if self.transition_kernel.shape != (H, S, A, E, S):
                raise ValidationError(
                    f"transition_kernel has shape {self.transition_kernel.shape}, "
                    f"expected {(H, S, A, E, S)}"
                )
            _check_simplex(self.transition_kernel, "transition_kernel")
        else:
            if self.grid is None or self.mean_map is None or self.trans_confound is None:
                raise ValidationError("dynamical mode requires grid, mean_map, trans_confound")
            if self.state_dim != self.grid.dim:
                raise ValidationError("state_dim does not match grid dimension")
            if self.num_states != self.grid.num_cells:
                raise ValidationError("num_states must equal the grid cell count")
            if self.mean_map.shape != (H, S, A, E, self.state_dim):
                raise ValidationError(
                    f"mean_map has shape {self.mean_map.shape}, "
                    f"expected {(H, S, A, E, self.state_dim)}"
                )
            if self.trans_confound.shape != (H, T, self.state_dim):
                raise ValidationError("trans_confound shape mismatch")
            if self.trans_noise_scale < 0:
                raise ValidationError("trans_noise_scale must be nonnegative")
            tres = np.abs(np.einsum("ht,htd->hd", self.source_type_dist, self.trans_confound))
            if tres.max() > SIMPLEX_TOL:
                raise ValidationError("trans_confound is not demeaned under the source")

    def initial_state_vector(self) -> np.ndarray:
        assert self.grid is not None
        return self.grid.center(self.initial_state)


def _check_simplex(arr: np.ndarray, name: str) -> None:
    if arr.min() < -SIMPLEX_TOL:
        raise ValidationError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if np.abs(sums - 1.0).max() > SIMPLEX_TOL:
        off = float(np.abs(sums - 1.0).max())
        raise ValidationError(f"{name} rows deviate from sum 1 by {off}")


# ---------------------------------------------------------------------------
# Learner-visible knowledge
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LearnerKnowledge:
    """What the learner is allowed to see about the environment.

    Holds the target type distribution and the per-type feedback distributions
    after best-response substitution, plus, in dynamical mode, the grid and
    the structural transition noise scale (a public model constant, unit by
    default). Contains no source distribution, no confound tables, and no
    reward noise level.
    """

    target_type_dist: np.ndarray
    feedback_by_type: np.ndarray  # (H, S, A, T, E)
    grid: Grid | None = None
    trans_noise_scale: float = 1.0

    @classmethod
    def from_model(cls, model: StrategicModel) -> "LearnerKnowledge":
        return cls(
            target_type_dist=model.target_type_dist.copy(),
            feedback_by_type=feedback_by_type(model),
            grid=model.grid,
            trans_noise_scale=model.trans_noise_scale,
        )

    @property
    def horizon(self) -> int:
        return self.feedback_by_type.shape[0]

    @property
    def num_states(self) -> int:
        return self.feedback_by_type.shape[1]

    @property
    def num_actions(self) -> int:
        return self.feedback_by_type.shape[2]

    @property
    def num_feedbacks(self) -> int:
        return self.feedback_by_type.shape[4]

    def feedback_mix(self, type_dist: np.ndarray | None = None) -> np.ndarray:
        """Feedback distribution (H, S, A, E) under a type distribution.

        Defaults to the target distribution.
        """
        dist = self.target_type_dist if type_dist is None else np.asarray(type_dist)
        return np.einsum("ht,hsate->hsae", dist, self.feedback_by_type)


def best_response(model: StrategicModel, h: int, s: int, a: int, t: int) -> int:
    """Agent action maximizing the agent's reward; lowest index on ties."""
    _check_index(h, model.horizon, "step")
    _check_index(s, model.num_states, "state")
    _check_index(a, model.num_actions, "action")
    _check_index(t, model.num_types, "type")
    return int(np.argmax(model.agent_reward[h, s, a, t]))


def best_response_table(model: StrategicModel) -> np.ndarray:
    """Best responses for every (h, s, a, t), lowest index on ties."""
    return np.argmax(model.agent_reward, axis=-1)


def feedback_by_type(model: StrategicModel) -> np.ndarray:
    """Feedback kernel (H, S, A, T, E) with best responses substituted."""
    br = best_response_table(model)  # (H, S, A, T)
    idx = br[..., None, None]
    return np.take_along_axis(model.feedback_kernel, idx, axis=4)[..., 0, :]


def _check_index(i: int, n: int, what: str) -> None:
    if not (0 <= i < n):
        raise InvalidIndexError(f"{what} index {i} out of range [0, {n})")


# ---------------------------------------------------------------------------
# Trajectories and policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HiddenStep:
    """Per-step variables the learner never observes."""

    agent_type: int
    agent_action: int
    reward_shift: float


@dataclass(frozen=True)
class TrajectoryStep:
    state: int | np.ndarray
    action: int
    feedback: int
    reward: float
    next_state: int | np.ndarray
    hidden: HiddenStep


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class Policy:
    """Markov policy: per-step, per-state distribution over principal actions."""

    action_probs: np.ndarray  # (H, S, A)

    def __post_init__(self) -> None:
        self.action_probs = np.asarray(self.action_probs, dtype=float)
        if self.action_probs.ndim != 3:
            raise ValidationError("policy table must have shape (H, S, A)")
        _check_simplex(self.action_probs, "policy")

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "Policy":
        table = np.full((horizon, num_states, num_actions), 1.0 / num_actions)
        return cls(table)

    @classmethod
    def deterministic(cls, actions: np.ndarray, num_actions: int) -> "Policy":
        """Build from an (H, S) table of action indices."""
        actions = np.asarray(actions, dtype=int)
        H, S = actions.shape
        table = np.zeros((H, S, num_actions))
        for h in range(H):
            table[h, np.arange(S), actions[h]] = 1.0
        return cls(table)

    def sample_action(self, rng: np.random.Generator, h: int, s: int) -> int:
        return draw_categorical(rng, self.action_probs[h, s])


@dataclass
class MixturePolicy:
    """Uniform mixture over episode policies; the standard online-to-batch output."""

    components: list[Policy]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValidationError("mixture needs at least one component")

    def sample_component(self, rng: np.random.Generator) -> Policy:
        return self.components[int(rng.integers(len(self.components)))]


# ---------------------------------------------------------------------------
# Stepping and rollouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepOutcome:
    feedback: int
    reward: float
    next_state: int | np.ndarray
    hidden: HiddenStep


def env_step(
    model: StrategicModel, h: int, state: int | np.ndarray, a: int, rng: np.random.Generator
) -> StepOutcome:
    """Advance the environment one step.

    Draw order is fixed: agent type, best response (deterministic), feedback,
    reward noise, then next-state noise. Noise draws are always consumed, and
    scaled afterwards, so the stream layout does not depend on parameters.
    """
    _check_index(h, model.horizon, "step")
    _check_index(a, model.num_actions, "action")
    if model.transition_mode is TransitionMode.DYNAMICAL:
        assert model.grid is not None
        state_vec = np.asarray(state, dtype=float)
        s = model.grid.locate(state_vec)
    else:
        s = int(state)
        _check_index(s, model.num_states, "state")

    t = draw_categorical(rng, model.source_type_dist[h])
    b = int(np.argmax(model.agent_reward[h, s, a, t]))
    e = draw_categorical(rng, model.feedback_kernel[h, s, a, t, b])
    noise = rng.standard_normal() * model.reward_noise_std
    shift = float(model.reward_confound[h, t]) + float(noise)
    r = float(model.principal_reward[h, s, a, e]) + shift

    if model.transition_mode is TransitionMode.GENERAL:
        assert model.transition_kernel is not None
        s_next: int | np.ndarray = draw_categorical(rng, model.transition_kernel[h, s, a, e])
    else:
        assert model.mean_map is not None and model.trans_confound is not None
        eta = rng.standard_normal(model.state_dim) * model.trans_noise_scale
        s_next = model.mean_map[h, s, a, e] + model.trans_confound[h, t] + eta

    return StepOutcome(feedback=e, reward=r, next_state=s_next, hidden=HiddenStep(t, b, shift))


def rollout(model: StrategicModel, policy: Policy, rng: np.random.Generator) -> Trajectory:
    """Play one episode; states in dynamical mode are vectors."""
    if policy.action_probs.shape != (model.horizon, model.num_states, model.num_actions):
        raise ValidationError("policy shape does not match the model")
    traj = Trajectory()
    if model.transition_mode is TransitionMode.DYNAMICAL:
        state: int | np.ndarray = model.initial_state_vector()
    else:
        state = model.initial_state
    for h in range(model.horizon):
        if model.transition_mode is TransitionMode.DYNAMICAL:
            assert model.grid is not None
            cell = model.grid.locate(np.asarray(state))
        else:
            cell = int(state)
        a = policy.sample_action(rng, h, cell)
        out = env_step(model, h, state, a, rng)
        traj.steps.append(
            TrajectoryStep(
                state=state,
                action=a,
                feedback=out.feedback,
                reward=out.reward,
                next_state=out.next_state,
                hidden=out.hidden,
            )
        )
        state = out.next_state
    return traj


def sample_step_batch(
    model: StrategicModel, h: int, s: int, a: int, rng: np.random.Generator, n: int
) -> dict[str, np.ndarray]:
    """Draw n independent step outcomes at a fixed (h, s, a), vectorized.

    Samples the same per-step law as env_step but with a batched draw layout,
    so it is not pathwise-aligned with repeated env_step calls. Intended for
    Monte-Carlo checks. In dynamical mode s is a cell index and states are
    taken at the cell center.
    """
    _check_index(h, model.horizon, "step")
    _check_index(s, model.num_states, "state")
    _check_index(a, model.num_actions, "action")
    types = _draw_categorical_rows(rng, np.tile(model.source_type_dist[h], (n, 1)))
    br = best_response_table(model)[h, s, a]  # (T,)
    bs = br[types]
    feed_rows = model.feedback_kernel[h, s, a, types, bs]
    es = _draw_categorical_rows(rng, feed_rows)
    noise = rng.standard_normal(n) * model.reward_noise_std
    shifts = model.reward_confound[h, types] + noise
    rewards = model.principal_reward[h, s, a, es] + shifts
    out = {"types": types, "agent_actions": bs, "feedbacks": es, "rewards": rewards}
    if model.transition_mode is TransitionMode.GENERAL:
        assert model.transition_kernel is not None
        rows = model.transition_kernel[h, s, a, es]
        out["next_states"] = _draw_categorical_rows(rng, rows)
    else:
        assert model.mean_map is not None and model.trans_confound is not None
        eta = rng.standard_normal((n, model.state_dim)) * model.trans_noise_scale
        out["next_states"] = model.mean_map[h, s, a, es] + model.trans_confound[h, types] + eta
    return out
