"""Ground-truth-aware oracles: occupancies, regret, identifiability measures.

Everything here may read environment internals; none of it feeds back into
learning decisions. The two identifiability measures are worst-case ratios
over candidate residuals and enumerated policies:

  ill_posedness    max MSE / projected-MSE under the source occupancy, i.e.
                   how much resolution the (state, action) instrument loses
                   when the feedback dimension is averaged out;
  transfer_term    max target-MSE / source-MSE, a concentrability coefficient
                   between the two populations.

Both quantify over deterministic Markov policies, exhaustively up to a budget
and by uniform sampling beyond it (flagged as a lower-bound estimate).
Infinite values are explicit flags with witnesses, never sentinel floats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .estimation import StepDataset
from .hypotheses import HypothesisClasses, iter_residuals, source_feedback_mix
from .model import (
    LearnerKnowledge,
    Policy,
    StrategicModel,
    TransitionMode,
    feedback_by_type,
    make_rng,
)
from .planning import discretize_gaussian, policy_value, true_aggregated_model, value_iteration

JENSEN_TOL = 1e-9


# ---------------------------------------------------------------------------
# Occupancy
# ---------------------------------------------------------------------------


@dataclass
class OccupancyTable:
    """Exact per-step distributions induced by a policy and a type population.

    joints[h] is the (S, A, E) distribution of (state, action, feedback);
    marginals follow by summation. In dynamical mode states are grid cells and
    the table is exact only when transition noise and type shifts vanish,
    otherwise a resolution flag is set.
    """

    joints: list[np.ndarray]
    type_dist: np.ndarray
    flags: tuple[str, ...] = ()

    def state_action(self, h: int) -> np.ndarray:
        return self.joints[h].sum(axis=-1)

    def states(self, h: int) -> np.ndarray:
        return self.joints[h].sum(axis=(1, 2))


def occupancy(
    env: StrategicModel, policy: Policy, type_dist: np.ndarray | None = None
) -> OccupancyTable:
    """Forward dynamic program for the joint (state, action, feedback) law.

    type_dist defaults to the source population. The next-state step averages
    the true transitions consistently with the same population.
    """
    dist = env.source_type_dist if type_dist is None else np.asarray(type_dist, dtype=float)
    fb = feedback_by_type(env)  # (H, S, A, T, E)
    H, S = env.horizon, env.num_states
    if policy.action_probs.shape != (H, S, env.num_actions):
        raise ValidationError("policy shape does not match the environment")
    flags: tuple[str, ...] = ()
    if env.transition_mode is TransitionMode.DYNAMICAL:
        assert env.trans_confound is not None
        if env.trans_noise_scale > 0 or np.any(env.trans_confound != 0.0):
            flags = ("grid-resolution-approximation",)
    d = np.zeros(S)
    d[env.initial_state] = 1.0
    joints: list[np.ndarray] = []
    for h in range(H):
        sa = d[:, None] * policy.action_probs[h]  # (S, A)
        per_type = (
            sa[:, :, None, None] * dist[h][None, None, :, None] * fb[h]
        )  # (S, A, T, E)
        joint = per_type.sum(axis=2)
        joints.append(joint)
        total = joint.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"occupancy at step {h} sums to {total}")
        if env.transition_mode is TransitionMode.GENERAL:
            assert env.transition_kernel is not None
            d = np.einsum("sae,saex->x", joint, env.transition_kernel[h])
        else:
            assert env.mean_map is not None and env.trans_confound is not None
            assert env.grid is not None
            means = (
                env.mean_map[h][None, ...]
                + env.trans_confound[h][:, None, None, None, :]
            )  # (T, S, A, E, d)
            kernel = discretize_gaussian(means, env.grid, env.trans_noise_scale)
            d = np.einsum("sate,tsaec->c", per_type, kernel)
    return OccupancyTable(joints=joints, type_dist=dist, flags=flags)


def occupancy_mse(occ: OccupancyTable, h: int, nu: np.ndarray) -> float:
    """Mean square of a (state, action, feedback) function under the occupancy."""
    return float(np.sum(occ.joints[h] * nu * nu))


# ---------------------------------------------------------------------------
# Policy enumeration
# ---------------------------------------------------------------------------


def deterministic_policy_tables(
    num_states: int,
    num_actions: int,
    steps: int,
    budget: int,
    sample_seed: int = 0,
) -> tuple[list[np.ndarray], bool]:
    """All (steps, S) deterministic action tables, or a uniform sample of budget many.

    Returns (tables, sampled). Exhaustive enumeration is used exactly when
    num_actions ** (num_states * steps) fits the budget.
    """
    total = num_actions ** (num_states * steps)
    if total <= budget:
        tables = [
            np.array(combo, dtype=int).reshape(steps, num_states)
            for combo in itertools.product(range(num_actions), repeat=num_states * steps)
        ]
        return tables, False
    rng = make_rng(sample_seed)
    tables = [
        rng.integers(num_actions, size=(steps, num_states)) for _ in range(budget)
    ]
    return tables, True


def _extend_to_policy(table: np.ndarray, horizon: int, num_actions: int) -> Policy:
    steps, S = table.shape
    full = np.zeros((horizon, S), dtype=int)
    full[:steps] = table
    return Policy.deterministic(full, num_actions)


# ---------------------------------------------------------------------------
# Identifiability measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticWitness:
    residual: str
    policy_actions: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class RatioResult:
    """Worst-case ratio together with the witness that attains it.

    value is None exactly when infinite is set; degenerate marks the
    all-residuals-zero case (value 1 by convention); lower_bound_estimate
    marks sampled policy enumeration.
    """

    value: float | None
    infinite: bool
    degenerate: bool
    lower_bound_estimate: bool
    witness: DiagnosticWitness | None
    num_policies: int
    num_residuals: int

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "infinite": self.infinite,
            "degenerate": self.degenerate,
            "lower_bound_estimate": self.lower_bound_estimate,
            "witness": None
            if self.witness is None
            else {
                "residual": self.witness.residual,
                "policy_actions": [list(r) for r in self.witness.policy_actions],
            },
            "num_policies": self.num_policies,
            "num_residuals": self.num_residuals,
        }


def _collect_residuals(
    env: StrategicModel, classes: HypothesisClasses, h: int
) -> tuple[list[str], np.ndarray | None]:
    labels, tables = [], []
    for label, nu in iter_residuals(env, classes, h):
        if np.any(nu != 0.0):
            labels.append(label)
            tables.append(nu)
    if not tables:
        return labels, None
    return labels, np.stack(tables)


def _state_action_occupancy(
    env: StrategicModel, table: np.ndarray, h: int, dist: np.ndarray
) -> np.ndarray:
    """Occupancy (S, A) at step h for a deterministic action table over steps 0..h."""
    policy = _extend_to_policy(table, env.horizon, env.num_actions)
    occ = occupancy(env, policy, dist)
    return occ.state_action(h)


def ill_posedness(
    env: StrategicModel,
    classes: HypothesisClasses,
    h: int,
    policy_budget: int = 4096,
    sample_seed: int = 0,
) -> RatioResult:
    """Worst-case MSE over projected MSE at step h under the source population.

    Residuals range over candidate rewards minus truth and candidate
    transitions minus truth applied to next-step value targets (mean-map
    differences in dynamical mode). Policies are deterministic Markov over
    steps up to h. Every evaluated pair is checked for the projected MSE
    never exceeding the MSE.
    """
    labels, nus = _collect_residuals(env, classes, h)
    tables, sampled = deterministic_policy_tables(
        env.num_states, env.num_actions, h + 1, policy_budget, sample_seed
    )
    if nus is None:
        return RatioResult(1.0, False, True, sampled, None, len(tables), 0)
    kappa = source_feedback_mix(env)[h]  # (S, A, E)
    sq = np.einsum("sae,nsae->nsa", kappa, nus * nus)  # conditional second moments
    proj = np.einsum("sae,nsae->nsa", kappa, nus)
    proj_sq = proj * proj
    n = nus.shape[0]
    sq_flat = sq.reshape(n, -1)
    proj_flat = proj_sq.reshape(n, -1)
    best = -np.inf
    best_witness: DiagnosticWitness | None = None
    for table in tables:
        d = _state_action_occupancy(env, table, h, env.source_type_dist).reshape(-1)
        mse = sq_flat @ d
        pmse = proj_flat @ d
        if np.any(pmse > mse + JENSEN_TOL):
            raise ValidationError("projected MSE exceeded MSE; occupancy inconsistency")
        zero_p = pmse == 0.0
        infinite = zero_p & (mse > 0.0)
        if np.any(infinite):
            j = int(np.flatnonzero(infinite)[0])
            witness = DiagnosticWitness(labels[j], tuple(tuple(int(a) for a in row) for row in table))
            return RatioResult(None, True, False, sampled, witness, len(tables), n)
        valid = ~zero_p
        if np.any(valid):
            ratios = mse[valid] / pmse[valid]
            j_local = int(np.argmax(ratios))
            if ratios[j_local] > best:
                best = float(ratios[j_local])
                j = int(np.flatnonzero(valid)[j_local])
                best_witness = DiagnosticWitness(
                    labels[j], tuple(tuple(int(a) for a in row) for row in table)
                )
    if best == -np.inf:
        return RatioResult(1.0, False, True, sampled, None, len(tables), n)
    return RatioResult(best, False, False, sampled, best_witness, len(tables), n)


def transfer_term(
    env: StrategicModel,
    classes: HypothesisClasses,
    h: int,
    policy_budget: int = 4096,
    sample_seed: int = 0,
) -> RatioResult:
    """Worst-case target-MSE over source-MSE at step h, same enumeration scheme."""
    labels, nus = _collect_residuals(env, classes, h)
    tables, sampled = deterministic_policy_tables(
        env.num_states, env.num_actions, h + 1, policy_budget, sample_seed
    )
    if nus is None:
        return RatioResult(1.0, False, True, sampled, None, len(tables), 0)
    fb = feedback_by_type(env)
    kappa_src = np.einsum("t,sate->sae", env.source_type_dist[h], fb[h])
    kappa_tgt = np.einsum("t,sate->sae", env.target_type_dist[h], fb[h])
    n = nus.shape[0]
    src_flat = np.einsum("sae,nsae->nsa", kappa_src, nus * nus).reshape(n, -1)
    tgt_flat = np.einsum("sae,nsae->nsa", kappa_tgt, nus * nus).reshape(n, -1)
    best = -np.inf
    best_witness: DiagnosticWitness | None = None
    for table in tables:
        d_src = _state_action_occupancy(env, table, h, env.source_type_dist).reshape(-1)
        d_tgt = _state_action_occupancy(env, table, h, env.target_type_dist).reshape(-1)
        mse_src = src_flat @ d_src
        mse_tgt = tgt_flat @ d_tgt
        zero_s = mse_src == 0.0
        infinite = zero_s & (mse_tgt > 0.0)
        if np.any(infinite):
            j = int(np.flatnonzero(infinite)[0])
            witness = DiagnosticWitness(labels[j], tuple(tuple(int(a) for a in row) for row in table))
            return RatioResult(None, True, False, sampled, witness, len(tables), n)
        valid = ~zero_s
        if np.any(valid):
            ratios = mse_tgt[valid] / mse_src[valid]
            j_local = int(np.argmax(ratios))
            if ratios[j_local] > best:
                best = float(ratios[j_local])
                j = int(np.flatnonzero(valid)[j_local])
                best_witness = DiagnosticWitness(
                    labels[j], tuple(tuple(int(a) for a in row) for row in table)
                )
    if best == -np.inf:
        return RatioResult(1.0, False, True, sampled, None, len(tables), n)
    return RatioResult(best, False, False, sampled, best_witness, len(tables), n)


# ---------------------------------------------------------------------------
# Naive confounded baseline
# ---------------------------------------------------------------------------


@dataclass
class NaiveBaselineReport:
    """Cell-wise reward regression on realized feedback, and its exact bias.

    empirical_mean[h, s, a, e] averages observed rewards in that cell (NaN
    when unvisited); empirical_bias subtracts the true reward table. The
    population bias is the exact conditional mean of the reward shift given
    the cell, computed from environment internals; it is what the empirical
    bias converges to, and is nonzero wherever feedback correlates with type.
    """

    counts: np.ndarray
    empirical_mean: np.ndarray
    empirical_bias: np.ndarray
    population_bias: np.ndarray
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        def clean(arr: np.ndarray) -> list:
            return np.where(np.isnan(arr), None, arr.round(12)).tolist()

        return {
            "counts": self.counts.astype(int).tolist(),
            "empirical_bias": clean(self.empirical_bias),
            "population_bias": clean(self.population_bias),
            "flags": list(self.flags),
        }


def naive_baseline(dataset: StepDataset, env: StrategicModel) -> NaiveBaselineReport:
    """Average reward per (h, s, a, e) cell versus the true reward table."""
    H, S, A, E = env.horizon, env.num_states, env.num_actions, env.num_feedbacks
    counts = np.stack([dataset.steps[h].counts for h in range(H)])
    sums = np.stack([dataset.steps[h].reward_sums for h in range(H)])
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    empirical_bias = mean - env.principal_reward
    fb = feedback_by_type(env)
    weighted = np.einsum("ht,hsate->hsae", env.source_type_dist * env.reward_confound, fb)
    kappa = np.einsum("ht,hsate->hsae", env.source_type_dist, fb)
    with np.errstate(invalid="ignore", divide="ignore"):
        population_bias = np.where(kappa > 0, weighted / np.maximum(kappa, 1e-300), np.nan)
    empty = int(np.sum(counts == 0))
    flags = (f"empty-cells:{empty}",) if empty else ()
    return NaiveBaselineReport(
        counts=counts,
        empirical_mean=mean,
        empirical_bias=empirical_bias,
        population_bias=population_bias,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Regret
# ---------------------------------------------------------------------------


@dataclass
class RegretCurve:
    optimal_value: float
    instant: np.ndarray
    cumulative: np.ndarray
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "optimal_value": self.optimal_value,
            "instant": [float(x) for x in self.instant],
            "cumulative": [float(x) for x in self.cumulative],
            "flags": list(self.flags),
        }


def regret_curve(run, env: StrategicModel, knowledge: LearnerKnowledge) -> RegretCurve:
    """Exact per-episode regret against the optimal aggregated target value.

    Fills the regret fields of the run's episode records in place and returns
    the series. Raises if any instantaneous regret is below -1e-9.
    """
    oracle = true_aggregated_model(env)
    plan = value_iteration(oracle)
    vstar = plan.value_at_initial
    inst = np.array([vstar - policy_value(oracle, pol) for pol in run.policies])
    if inst.size and inst.min() < -1e-9:
        raise ValidationError(f"negative regret {inst.min()} against the optimal value")
    cum = np.cumsum(inst)
    for i, rec in enumerate(run.episodes):
        rec.instant_regret = float(inst[i])
        rec.cum_regret = float(cum[i])
    flags = ()
    if env.transition_mode is TransitionMode.DYNAMICAL:
        flags = ("grid-resolution-approximation",)
    return RegretCurve(optimal_value=vstar, instant=inst, cumulative=cum, flags=flags)
