"""Minimax losses, data accumulation, confidence levels and sets."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategicmdp import (
    BetaLevels,
    ClassSizes,
    ConfigError,
    LearnerKnowledge,
    LossEvaluator,
    Policy,
    StepDataset,
    TransitionMode,
    build_confidence_sets,
    build_scenario,
    confidence_levels,
    make_rng,
    mean_map_losses,
    reward_losses,
    rollout,
    transition_losses_general,
)
from strategicmdp.estimation import StepData, _threshold, reward_loss, transition_loss_general

from helpers import tiny_dynamical, tiny_general


def one_cell_data(counts_by_e, reward_sums_by_e, next_counts=None):
    """StepData with all samples in the (s=0, a=0) cell of a 1x1 problem."""
    E = len(counts_by_e)
    S = 2 if next_counts is not None else 1
    counts = np.zeros((S, 1, E))
    counts[0, 0] = counts_by_e
    sums = np.zeros((S, 1, E))
    sums[0, 0] = reward_sums_by_e
    nc = None
    if next_counts is not None:
        nc = np.zeros((S, 1, S))
        nc[0, 0] = next_counts
    return StepData(counts=counts, reward_sums=sums, next_counts=nc, next_sums=None)


# ---------------------------------------------------------------------------
# Frozen hand oracles
# ---------------------------------------------------------------------------


def test_reward_loss_hand_oracle():
    # 10 samples, empirical reward sum 5.0, candidate predicts 0.2 everywhere:
    # aggregated residual weight is 10*0.2 - 5.0 = -3; best discriminator in
    # {0, 1, -1, -0.3} is -0.3 with score 0.9 - 0.5*10*0.09 = 0.45
    data = one_cell_data([6.0, 4.0], [3.0, 2.0])
    candidate = np.full((1, 1, 2), 0.2)
    disc = np.array([[[0.0]], [[1.0]], [[-1.0]], [[-0.3]]])
    loss = reward_loss(data, candidate, disc)
    np.testing.assert_allclose(loss, 0.45, atol=1e-12)


def test_reward_loss_zero_discriminator_floors_at_zero():
    data = one_cell_data([6.0, 4.0], [3.0, 2.0])
    candidate = np.full((1, 1, 2), 0.2)
    disc = np.array([[[0.0]], [[1.0]]])  # only bad directions available
    loss = reward_loss(data, candidate, disc)
    assert loss == 0.0


def test_reward_loss_optimal_discriminator_closed_form():
    # with f = residual/n available, the max equals n/2 * (mean residual)^2
    data = one_cell_data([6.0, 4.0], [3.0, 2.0])
    candidate = np.full((1, 1, 2), 0.2)
    disc = np.array([[[0.0]], [[-0.3]], [[-0.15]], [[0.3]]])
    want = 0.5 * 10.0 * 0.3**2
    np.testing.assert_allclose(reward_loss(data, candidate, disc), want, atol=1e-12)


def test_transition_loss_hand_oracle():
    # 10 samples at one cell, 7 land in state 0 and 3 in state 1; candidate
    # kernel predicts a coin flip; with target g = 1[state 0] the residual
    # weight is 5 - 7 = -2, and f = -0.2 attains 0.4 - 0.5*10*0.04 = 0.2
    data = one_cell_data([10.0], [0.0], next_counts=[7.0, 3.0])
    kernel = np.full((2, 1, 1, 2), 0.5)
    targets = np.array([[1.0, 0.0], [0.0, 0.0]])
    disc = np.array([[[0.0], [0.0]], [[-0.2], [0.0]], [[1.0], [0.0]]])
    loss = transition_loss_general(data, kernel, targets, disc)
    np.testing.assert_allclose(loss, 0.2, atol=1e-12)


def test_mean_map_loss_hand_oracle():
    # 5 samples with next-coordinate total 2.0; candidate mean 0.1 gives
    # residual weight 0.5 - 2.0 = -1.5; f = -0.3 attains 0.45 - 0.225 = 0.225
    data = StepData(
        counts=np.full((1, 1, 1), 5.0),
        reward_sums=np.zeros((1, 1, 1)),
        next_counts=None,
        next_sums=np.full((1, 1, 1, 1), 2.0),
    )
    tables = np.full((1, 1, 1, 1), 0.1)
    disc = np.array([[[0.0]], [[-0.3]]])
    loss = mean_map_losses(data, tables, 0, disc)[0]
    np.testing.assert_allclose(loss, 0.225, atol=1e-12)


def test_confidence_levels_frozen_values():
    sizes = ClassSizes(rewards=8, transitions=4, discriminators=40, value_targets=12)
    betas = confidence_levels(1.0, 100, 4, sizes, 0.1)
    np.testing.assert_allclose(betas.reward, 393.7463778050824, atol=1e-9)
    np.testing.assert_allclose(betas.transition_general, 443.9156429434679, atol=1e-9)
    np.testing.assert_allclose(betas.transition_dynamical, 374.3382567494039, atol=1e-9)
    # the scale knob multiplies all three levels
    half = confidence_levels(1.0, 100, 4, sizes, 0.1, beta_scale=0.5)
    np.testing.assert_allclose(half.reward, 196.8731889025412, atol=1e-9)


def test_confidence_levels_reject_bad_inputs():
    sizes = ClassSizes(8, 4, 40, 12)
    with pytest.raises(ConfigError):
        confidence_levels(1.0, 0, 4, sizes, 0.1)
    with pytest.raises(ConfigError):
        confidence_levels(1.0, 100, 4, sizes, 1.5)
    with pytest.raises(ConfigError):
        confidence_levels(1.0, 100, 4, sizes, 0.1, beta_scale=0.0)
    with pytest.raises(ConfigError):
        confidence_levels(-1.0, 100, 4, sizes, 0.1)
    with pytest.raises(ConfigError):
        confidence_levels(1.0, 100, 4, ClassSizes(0, 4, 40, 12), 0.1)


# ---------------------------------------------------------------------------
# Dataset accumulation
# ---------------------------------------------------------------------------


def collect_episodes(model, episodes, seed=0):
    kn = LearnerKnowledge.from_model(model)
    data = StepDataset(
        mode=model.transition_mode,
        horizon=model.horizon,
        num_states=model.num_states,
        num_actions=model.num_actions,
        num_feedbacks=model.num_feedbacks,
        state_dim=model.state_dim,
        grid=model.grid,
    )
    rng = make_rng(seed)
    policy = Policy.uniform(model.horizon, model.num_states, model.num_actions)
    for _ in range(episodes):
        data.append_trajectory(rollout(model, policy, rng))
    return data, kn


def test_append_trajectory_matches_manual_append():
    model = tiny_general()
    data, _ = collect_episodes(model, 20)
    rebuilt = StepDataset(TransitionMode.GENERAL, 2, 2, 2, 2)
    for h in range(2):
        src = data.steps[h]
        for s, a, e, r, nxt in zip(
            src.raw_states, src.raw_actions, src.raw_feedbacks, src.raw_rewards, src.raw_next
        ):
            rebuilt.append(h, s, a, e, r, nxt)
    for h in range(2):
        np.testing.assert_array_equal(rebuilt.steps[h].counts, data.steps[h].counts)
        np.testing.assert_array_equal(rebuilt.steps[h].next_counts, data.steps[h].next_counts)
    assert rebuilt.num_episodes == 20


def test_losses_invariant_under_sample_permutation():
    model = tiny_general(reward_noise=0.2)
    data, _ = collect_episodes(model, 30)
    shuffled = StepDataset(TransitionMode.GENERAL, 2, 2, 2, 2)
    perm_rng = np.random.default_rng(1)
    for h in range(2):
        src = data.steps[h]
        order = perm_rng.permutation(src.num_samples)
        for i in order:
            shuffled.append(
                h,
                src.raw_states[i],
                src.raw_actions[i],
                src.raw_feedbacks[i],
                src.raw_rewards[i],
                src.raw_next[i],
            )
    candidate = np.stack([model.principal_reward[0] + 0.1])
    disc = np.concatenate([np.zeros((1, 2, 2)), np.full((1, 2, 2), -0.1)])
    a = reward_losses(data.steps[0], candidate, disc)
    b = reward_losses(shuffled.steps[0], candidate, disc)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_dynamical_dataset_bins_states():
    model = tiny_dynamical()
    data, _ = collect_episodes(model, 15)
    for h in range(model.horizon):
        assert data.steps[h].num_samples == 15
        np.testing.assert_allclose(data.steps[h].counts.sum(), 15.0)
        assert data.steps[h].next_sums.shape == (4, 2, 2, 1)


def test_wrong_candidate_loss_grows_with_data():
    model = tiny_general(reward_noise=0.0)
    small, kn = collect_episodes(model, 50, seed=3)
    big, _ = collect_episodes(model, 200, seed=3)
    wrong = np.clip(model.principal_reward[0] + 0.2, 0.0, 1.0)[None]
    proj = np.full((2, 2), -0.2)
    disc = np.stack([np.zeros((2, 2)), proj, -proj])
    loss_small = reward_losses(small.steps[0], wrong, disc)[0]
    loss_big = reward_losses(big.steps[0], wrong, disc)[0]
    assert loss_big > loss_small > 0


# ---------------------------------------------------------------------------
# Thresholding and sets
# ---------------------------------------------------------------------------


def test_threshold_is_inclusive():
    flags: list[str] = []
    kept = _threshold(np.array([0.45, 0.46]), 0.45, "demo", flags)
    assert kept == (0,)
    assert flags == []


def test_threshold_empty_set_falls_back_to_minimizer():
    flags: list[str] = []
    kept = _threshold(np.array([5.0, 3.0, 4.0]), 1.0, "demo", flags)
    assert kept == (1,)
    assert flags == ["demo-empty-set-fallback"]


def test_build_confidence_sets_keeps_truth_with_generous_levels():
    scenario = build_scenario("recsys-small")
    data, _ = collect_episodes(scenario.model, 40, seed=5)
    evaluator = LossEvaluator(scenario.classes)
    betas = BetaLevels(reward=1e9, transition_general=1e9, transition_dynamical=1e9)
    sets = build_confidence_sets(evaluator, data, betas)
    for h in range(3):
        assert 0 in sets.reward_sets[h]
        assert 0 in sets.transition_sets[h]
        assert sets.reward_sets[h] == tuple(sorted(sets.reward_sets[h]))
    assert sets.fallback_flags == ()


def test_build_confidence_sets_fallback_flag():
    scenario = build_scenario("recsys-small")
    data, _ = collect_episodes(scenario.model, 40, seed=5)
    evaluator = LossEvaluator(scenario.classes)
    betas = BetaLevels(reward=-1.0, transition_general=1e9, transition_dynamical=1e9)
    sets = build_confidence_sets(evaluator, data, betas)
    assert any("empty-set-fallback" in f for f in sets.fallback_flags)
    for h in range(3):
        assert len(sets.reward_sets[h]) == 1


def test_loss_evaluator_matches_direct_functions():
    scenario = build_scenario("recsys-small")
    data, _ = collect_episodes(scenario.model, 25, seed=7)
    classes = scenario.classes
    evaluator = LossEvaluator(classes)
    for h in range(3):
        direct = reward_losses(
            data.steps[h], classes.reward_tables[h], classes.discriminators[h]
        )
        np.testing.assert_array_equal(evaluator.reward_losses(data, h), direct)
        direct_t = transition_losses_general(
            data.steps[h],
            classes.transition_tables[h],
            classes.value_targets[h + 1],
            classes.discriminators[h],
        )
        np.testing.assert_allclose(evaluator.transition_losses(data, h), direct_t, atol=1e-12)


def test_loss_evaluator_dynamical_per_coordinate():
    scenario = build_scenario("dyn-1d")
    data, _ = collect_episodes(scenario.model, 25, seed=7)
    evaluator = LossEvaluator(scenario.classes)
    per_coord = evaluator.transition_losses(data, 0)
    assert isinstance(per_coord, list) and len(per_coord) == 1
    assert per_coord[0].shape == (scenario.classes.mean_map_tables[0][0].shape[0],)


@given(
    shift=st.floats(min_value=-0.2, max_value=0.2, allow_nan=False),
    episodes=st.integers(min_value=1, max_value=12),
    seed=st.integers(min_value=0, max_value=999),
)
@settings(max_examples=30, deadline=None)
def test_truth_loss_never_exceeds_any_candidate_by_construction(shift, episodes, seed):
    # the minimax loss with a zero-containing discriminator family is >= 0,
    # and shifting a candidate away from the data can only raise the best
    # response available to the adversary at large sample asymmetry
    model = tiny_general(reward_noise=0.0)
    data, _ = collect_episodes(model, episodes, seed=seed)
    cand = np.clip(model.principal_reward[0] + shift, 0.0, 1.0)[None]
    disc = np.stack([np.zeros((2, 2)), np.full((2, 2), 0.1), np.full((2, 2), -0.1)])
    loss = reward_losses(data.steps[0], cand, disc)[0]
    assert loss >= 0.0
