"""Finite candidate classes for rewards, transitions, and their discriminators.

A candidate reward maps (state, action, feedback) to a bounded value; a
candidate transition is a feedback-indexed kernel (general mode) or a per-
coordinate mean map on grid cells (dynamical mode). Estimation additionally
needs two discriminator families: state-action test functions used inside the
minimax losses, and state value functions used as regression targets for
transitions.

Two closure operations make the families rich enough for the losses to be
well-calibrated:

  close_discriminators   adds, for every candidate residual against the truth,
                         its conditional expectation given (state, action)
                         under the source population;
  close_value_targets    adds the optimal value tables of every joint
                         candidate model aggregated under the target.

Both closures only append (never remove), deduplicate bit-exactly, and are
idempotent. The realizability check verifies truth membership and both closure
properties by exact table equality through the same code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import CapacityError, ValidationError
from .model import LearnerKnowledge, StrategicModel, TransitionMode, feedback_by_type
from .planning import CandidateAggregates

DEFAULT_PER_STEP_CAP = 8
DEFAULT_JOINT_CAP = 1_000_000


@dataclass(frozen=True)
class ClassCaps:
    per_step: int = DEFAULT_PER_STEP_CAP
    joint: int = DEFAULT_JOINT_CAP


@dataclass(frozen=True)
class ClassSizes:
    """Total (summed over steps, and coordinates where relevant) class sizes."""

    rewards: int
    transitions: int
    discriminators: int
    value_targets: int


@dataclass
class HypothesisClasses:
    """Per-step candidate and discriminator families.

    reward_tables[h] is (nR_h, S, A, E). In general mode transition_tables[h]
    is (nP_h, S, A, E, S); in dynamical mode mean_map_tables[h][i] is
    (n_hi, S, A, E) for each state coordinate i. discriminators[h] is
    (nF_h, S, A) and always contains the zero function. value_targets has
    H + 1 entries of shape (nG_h, S); the terminal entry is the zero function
    alone. truth_*_idx record where the true tables sit when known; None means
    not designated.
    """

    mode: TransitionMode
    bound: float
    reward_tables: list[np.ndarray]
    discriminators: list[np.ndarray]
    value_targets: list[np.ndarray]
    transition_tables: list[np.ndarray] | None = None
    mean_map_tables: list[list[np.ndarray]] | None = None
    truth_reward_idx: list[int | None] = field(default_factory=list)
    truth_transition_idx: list = field(default_factory=list)
    caps: ClassCaps = field(default_factory=ClassCaps)
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        H = len(self.reward_tables)
        if H == 0:
            raise ValidationError("need at least one step of reward candidates")
        self.reward_tables = [np.asarray(r, dtype=float) for r in self.reward_tables]
        S, A = self.reward_tables[0].shape[1:3]
        if self.bound <= 0:
            raise ValidationError("bound must be positive")
        if not self.truth_reward_idx:
            self.truth_reward_idx = [None] * H
        if not self.truth_transition_idx:
            if self.mode is TransitionMode.GENERAL:
                self.truth_transition_idx = [None] * H
            else:
                dim = len(self.mean_map_tables[0]) if self.mean_map_tables else 0
                self.truth_transition_idx = [[None] * dim for _ in range(H)]
        if self.mode is TransitionMode.GENERAL:
            if self.transition_tables is None or len(self.transition_tables) != H:
                raise ValidationError("general mode needs transition_tables per step")
            self.transition_tables = [np.asarray(p, dtype=float) for p in self.transition_tables]
        else:
            if self.mean_map_tables is None or len(self.mean_map_tables) != H:
                raise ValidationError("dynamical mode needs mean_map_tables per step")
            self.mean_map_tables = [
                [np.asarray(g, dtype=float) for g in per] for per in self.mean_map_tables
            ]
        self.discriminators = [np.asarray(f, dtype=float) for f in self.discriminators]
        if len(self.discriminators) != H:
            raise ValidationError("discriminators must have one family per step")
        zero_sa = np.zeros((S, A))
        for h in range(H):
            if not any(np.array_equal(f, zero_sa) for f in self.discriminators[h]):
                self.discriminators[h] = np.concatenate(
                    [self.discriminators[h], zero_sa[None]], axis=0
                )
        self.value_targets = [np.asarray(g, dtype=float) for g in self.value_targets]
        if len(self.value_targets) == H:
            self.value_targets.append(np.zeros((1, S)))
        if len(self.value_targets) != H + 1:
            raise ValidationError("value_targets must cover steps 1..H+1")
        if not np.array_equal(self.value_targets[H], np.zeros((1, S))):
            raise ValidationError("terminal value-target family must be the zero function alone")
        self._validate(S, A)

    def _validate(self, S: int, A: int) -> None:
        H = self.horizon
        flags = list(self.flags)
        for h in range(H):
            nR = self.reward_tables[h].shape[0]
            if nR == 0:
                raise ValidationError(f"no reward candidates at step {h}")
            if nR > self.caps.per_step:
                raise CapacityError(
                    f"{nR} reward candidates at step {h} exceed the per-step cap {self.caps.per_step}"
                )
            if self.reward_tables[h].min() < -1e-9 or self.reward_tables[h].max() > self.bound + 1e-9:
                raise ValidationError(f"reward candidates at step {h} leave [0, bound]")
            if self.mode is TransitionMode.GENERAL:
                assert self.transition_tables is not None
                nP = self.transition_tables[h].shape[0]
                if nP == 0:
                    raise ValidationError(f"no transition candidates at step {h}")
                if nP > self.caps.per_step:
                    raise CapacityError(
                        f"{nP} transition candidates at step {h} exceed the per-step cap"
                    )
                rows = self.transition_tables[h].sum(axis=-1)
                if np.abs(rows - 1.0).max() > 1e-9 or self.transition_tables[h].min() < -1e-9:
                    raise ValidationError(f"transition candidates at step {h} are not kernels")
            else:
                assert self.mean_map_tables is not None
                for i, per in enumerate(self.mean_map_tables[h]):
                    if per.shape[0] == 0:
                        raise ValidationError(f"no mean-map candidates at step {h}, coordinate {i}")
                    if per.shape[0] > self.caps.per_step:
                        raise CapacityError(
                            f"{per.shape[0]} mean-map candidates at step {h} exceed the per-step cap"
                        )
            fmax = np.abs(self.discriminators[h]).max()
            if fmax > self.bound + 1e-9 and "discriminator-bound-exceeded" not in flags:
                flags.append("discriminator-bound-exceeded")
        for h in range(H + 1):
            if self.value_targets[h].size and np.abs(self.value_targets[h]).max() > self.bound + 1e-9:
                if "value-target-bound-exceeded" not in flags:
                    flags.append("value-target-bound-exceeded")
        self.flags = tuple(flags)

    @property
    def horizon(self) -> int:
        return len(self.reward_tables)

    def sizes(self) -> ClassSizes:
        """Summed class sizes, the cardinalities used by the confidence levels."""
        rewards = sum(r.shape[0] for r in self.reward_tables)
        if self.mode is TransitionMode.GENERAL:
            assert self.transition_tables is not None
            transitions = sum(p.shape[0] for p in self.transition_tables)
        else:
            assert self.mean_map_tables is not None
            transitions = sum(g.shape[0] for per in self.mean_map_tables for g in per)
        discriminators = sum(f.shape[0] for f in self.discriminators)
        value_targets = sum(g.shape[0] for g in self.value_targets)
        return ClassSizes(rewards, transitions, discriminators, value_targets)


# ---------------------------------------------------------------------------
# Residual enumeration shared by closures, checks, and diagnostics
# ---------------------------------------------------------------------------


def source_feedback_mix(model: StrategicModel) -> np.ndarray:
    """Feedback distribution (H, S, A, E) under the source population."""
    fb = feedback_by_type(model)
    return np.einsum("ht,hsate->hsae", model.source_type_dist, fb)


def source_projection(kappa_h: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Conditional expectation of nu(s, a, e) given (s, a) under kappa(e | s, a).

    kappa_h is (S, A, E); nu is (..., S, A, E). Shared by the discriminator
    closure, the realizability check, and the diagnostics so membership tests
    stay bit-exact.
    """
    return np.einsum("sae,...sae->...sa", kappa_h, nu)


def iter_residuals(
    model: StrategicModel, classes: HypothesisClasses, h: int
) -> Iterator[tuple[str, np.ndarray]]:
    """Yield (label, table) residuals of every candidate against the truth at step h.

    Reward residuals are candidate minus true reward. General-mode transition
    residuals are (candidate kernel minus truth) applied to every value target
    at the next step. Dynamical-mode residuals are per-coordinate mean-map
    differences. Labels identify the source for witnesses in reports.
    """
    true_r = model.principal_reward[h]
    for j, cand in enumerate(classes.reward_tables[h]):
        yield f"reward[{j}]", cand - true_r
    if classes.mode is TransitionMode.GENERAL:
        assert classes.transition_tables is not None and model.transition_kernel is not None
        delta = classes.transition_tables[h] - model.transition_kernel[h]
        targets = classes.value_targets[h + 1]
        applied = np.einsum("psaex,gx->pgsae", delta, targets)
        for j in range(applied.shape[0]):
            for g in range(applied.shape[1]):
                yield f"transition[{j}]*value[{g}]", applied[j, g]
    else:
        assert classes.mean_map_tables is not None and model.mean_map is not None
        for i, per in enumerate(classes.mean_map_tables[h]):
            truth = model.mean_map[h][..., i]
            for j, cand in enumerate(per):
                yield f"mean_map[{i}][{j}]", cand - truth


# ---------------------------------------------------------------------------
# Closures
# ---------------------------------------------------------------------------


def _dedup_append(base: np.ndarray, extra: list[np.ndarray]) -> np.ndarray:
    """Append tables not already present, preserving order; bit-exact keys."""
    seen = {np.ascontiguousarray(row).tobytes() for row in base}
    keep = []
    for row in extra:
        key = np.ascontiguousarray(row).tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(row)
    if not keep:
        return base
    return np.concatenate([base, np.stack(keep)], axis=0)


def close_discriminators(
    model: StrategicModel, classes: HypothesisClasses
) -> HypothesisClasses:
    """Add the source-conditional projection of every candidate residual.

    Projections use the true per-type feedback mixture under the source
    population, so this runs harness-side when classes are built. Appends
    only, deduplicates bit-exactly, and is idempotent.
    """
    kappa = source_feedback_mix(model)
    new_disc = []
    for h in range(classes.horizon):
        extra = [source_projection(kappa[h], nu) for _, nu in iter_residuals(model, classes, h)]
        new_disc.append(_dedup_append(classes.discriminators[h], extra))
    return replace(classes, discriminators=new_disc)


def enumerate_suffix_values(
    classes: HypothesisClasses, knowledge: LearnerKnowledge
) -> list[np.ndarray]:
    """Optimal value tables of every joint candidate model, per step, deduplicated.

    Entry h holds the distinct tables V(s) achievable at step h by choosing one
    candidate pair per step from h onward and solving the aggregated model
    under the target. The joint cap guards the enumeration size.
    """
    agg = CandidateAggregates.from_classes(classes, knowledge)
    H = classes.horizon
    joint = 1
    for h in range(H):
        nR = classes.reward_tables[h].shape[0]
        if classes.mode is TransitionMode.GENERAL:
            assert classes.transition_tables is not None
            nP = classes.transition_tables[h].shape[0]
        else:
            assert classes.mean_map_tables is not None
            nP = int(np.prod([g.shape[0] for g in classes.mean_map_tables[h]]))
        joint *= nR * nP
    if joint > classes.caps.joint:
        raise CapacityError(f"value closure would enumerate {joint} joint models, cap is {classes.caps.joint}")
    S = classes.reward_tables[0].shape[1]
    values = np.zeros((1, S))
    out: list[np.ndarray] = [np.zeros((0, S))] * H
    for h in range(H - 1, -1, -1):
        R = agg.rewards[h]
        if classes.mode is TransitionMode.GENERAL:
            assert agg.transitions is not None
            expected = np.einsum("psax,vx->pvsa", agg.transitions[h], values)
            q = R[:, None, None, :, :] + expected[None]
            flat = q.max(axis=-1).reshape(-1, S)
        else:
            assert agg.mean_masses is not None and agg.grid is not None
            if agg.grid.dim == 1:
                expected = np.einsum("msac,vc->mvsa", agg.mean_masses[h][0], values)
                q = R[:, None, None, :, :] + expected[None]
                flat = q.max(axis=-1).reshape(-1, S)
            else:
                dims = agg.grid.cells_per_dim
                v3 = values.reshape(values.shape[0], dims[0], dims[1])
                part = np.einsum("nsac,vbc->nvsab", agg.mean_masses[h][1], v3)
                expected = np.einsum("msab,nvsab->mnvsa", agg.mean_masses[h][0], part)
                q = R[:, None, None, None, :, :] + expected[None]
                flat = q.max(axis=-1).reshape(-1, S)
        values = _unique_rows(flat)
        out[h] = values
    return out


def _unique_rows(arr: np.ndarray) -> np.ndarray:
    seen: set[bytes] = set()
    keep = []
    for row in arr:
        key = np.ascontiguousarray(row).tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(row)
    return np.stack(keep) if keep else arr.reshape(0, arr.shape[-1])


def close_value_targets(
    classes: HypothesisClasses, knowledge: LearnerKnowledge
) -> HypothesisClasses:
    """Add every joint candidate model's optimal value tables under the target.

    Appends only, deduplicates bit-exactly, idempotent. Raises a bound flag
    (recorded on the returned classes) when inserted values exceed the class
    bound; values are never clamped.
    """
    suffix = enumerate_suffix_values(classes, knowledge)
    new_targets = list(classes.value_targets)
    for h in range(classes.horizon):
        new_targets[h] = _dedup_append(classes.value_targets[h], list(suffix[h]))
    out = replace(classes, value_targets=new_targets)
    return out


def close_classes(
    model: StrategicModel, classes: HypothesisClasses, knowledge: LearnerKnowledge
) -> HypothesisClasses:
    """Value-target closure followed by the discriminator closure.

    Order matters: transition residual projections range over the closed
    value-target family.
    """
    closed = close_value_targets(classes, knowledge)
    return close_discriminators(model, closed)


# ---------------------------------------------------------------------------
# Realizability check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClauseResult:
    passed: bool
    detail: str | None = None


@dataclass(frozen=True)
class RealizabilityReport:
    truth_in_rewards: ClauseResult
    truth_in_transitions: ClauseResult
    projections_in_discriminators: ClauseResult
    values_in_targets: ClauseResult
    flags: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return (
            self.truth_in_rewards.passed
            and self.truth_in_transitions.passed
            and self.projections_in_discriminators.passed
            and self.values_in_targets.passed
        )

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "truth_in_rewards": vars(self.truth_in_rewards),
            "truth_in_transitions": vars(self.truth_in_transitions),
            "projections_in_discriminators": vars(self.projections_in_discriminators),
            "values_in_targets": vars(self.values_in_targets),
            "flags": list(self.flags),
        }


def _contains(table_set: np.ndarray, table: np.ndarray) -> bool:
    return any(np.array_equal(row, table) for row in table_set)


def check_realizability(
    model: StrategicModel, classes: HypothesisClasses, knowledge: LearnerKnowledge
) -> RealizabilityReport:
    """Verify truth membership and both closure properties by exact equality.

    The first failing location is reported as a counterexample witness. The
    projection and value computations reuse the closure code paths, so a
    closed class always passes bit-exactly.
    """
    H = classes.horizon
    r_clause = ClauseResult(True)
    for h in range(H):
        if not _contains(classes.reward_tables[h], model.principal_reward[h]):
            r_clause = ClauseResult(False, f"true reward missing at step {h}")
            break
        idx = classes.truth_reward_idx[h]
        if idx is not None and not np.array_equal(
            classes.reward_tables[h][idx], model.principal_reward[h]
        ):
            r_clause = ClauseResult(False, f"designated reward index {idx} wrong at step {h}")
            break
    t_clause = ClauseResult(True)
    for h in range(H):
        if classes.mode is TransitionMode.GENERAL:
            assert classes.transition_tables is not None and model.transition_kernel is not None
            if not _contains(classes.transition_tables[h], model.transition_kernel[h]):
                t_clause = ClauseResult(False, f"true transition missing at step {h}")
                break
        else:
            assert classes.mean_map_tables is not None and model.mean_map is not None
            stop = False
            for i, per in enumerate(classes.mean_map_tables[h]):
                if not _contains(per, model.mean_map[h][..., i]):
                    t_clause = ClauseResult(
                        False, f"true mean map missing at step {h}, coordinate {i}"
                    )
                    stop = True
                    break
            if stop:
                break
    kappa = source_feedback_mix(model)
    p_clause = ClauseResult(True)
    for h in range(H):
        done = False
        for label, nu in iter_residuals(model, classes, h):
            proj = source_projection(kappa[h], nu)
            if not _contains(classes.discriminators[h], proj):
                p_clause = ClauseResult(
                    False, f"projection of {label} missing from discriminators at step {h}"
                )
                done = True
                break
        if done:
            break
    v_clause = ClauseResult(True)
    try:
        suffix = enumerate_suffix_values(classes, knowledge)
        for h in range(H):
            done = False
            for j, table in enumerate(suffix[h]):
                if not _contains(classes.value_targets[h], table):
                    v_clause = ClauseResult(
                        False, f"candidate value table {j} missing from targets at step {h}"
                    )
                    done = True
                    break
            if done:
                break
    except CapacityError as exc:
        v_clause = ClauseResult(False, f"not checkable: {exc}")
    return RealizabilityReport(
        truth_in_rewards=r_clause,
        truth_in_transitions=t_clause,
        projections_in_discriminators=p_clause,
        values_in_targets=v_clause,
        flags=classes.flags,
    )
