"""Hand-built tiny environments and independent brute-force oracles.

Everything here is deliberately slow and literal: plain loops and recursion,
no shared code with the package internals beyond the public constructors.
"""

from __future__ import annotations

import itertools

import numpy as np

from strategicmdp import Grid, Policy, StrategicModel, TransitionMode


def tiny_general(
    reward_noise: float = 0.0,
    confound: tuple[float, float] = (0.3, -0.3),
    source: tuple[float, float] = (0.6, 0.4),
    target: tuple[float, float] = (0.2, 0.8),
    horizon: int = 2,
) -> StrategicModel:
    """Two-state two-action environment with a compliant and a contrary type."""
    H, S, A, E, T, B = horizon, 2, 2, 2, 2, 2
    agent = np.zeros((H, S, A, T, B))
    for a in range(A):
        agent[:, :, a, 0, a] = 1.0
        agent[:, :, a, 1, 1 - a] = 1.0
    feed = np.zeros((H, S, A, T, B, E))
    feed[..., 0, :] = (0.9, 0.1)
    feed[..., 1, :] = (0.2, 0.8)
    e_idx = np.arange(E)[None, None, None, :]
    a_idx = np.arange(A)[None, None, :, None]
    reward = np.broadcast_to(
        0.3 + 0.2 * (e_idx == 0) + 0.1 * (a_idx == 1), (H, S, A, E)
    ).copy()
    kernel = np.zeros((H, S, A, E, S))
    kernel[..., 0, :] = (0.7, 0.3)
    kernel[..., 1, :] = (0.3, 0.7)
    return StrategicModel(
        horizon=H,
        num_states=S,
        num_actions=A,
        num_feedbacks=E,
        num_types=T,
        num_agent_actions=B,
        initial_state=0,
        source_type_dist=np.tile(source, (H, 1)),
        target_type_dist=np.tile(target, (H, 1)),
        agent_reward=agent,
        feedback_kernel=feed,
        principal_reward=reward,
        reward_confound=np.tile(confound, (H, 1)),
        reward_noise_std=reward_noise,
        reward_bound=1.0,
        transition_mode=TransitionMode.GENERAL,
        transition_kernel=kernel,
    )


def tiny_dynamical(
    noise_scale: float = 0.25, reward_noise: float = 0.0
) -> StrategicModel:
    """Four-cell 1-d environment with a drift-plus-pull mean map."""
    H, A, E, T, B = 2, 2, 2, 2, 2
    grid = Grid((-1.0,), (1.0,), (4,))
    S = grid.num_cells
    agent = np.zeros((H, S, A, T, B))
    for a in range(A):
        agent[:, :, a, 0, a] = 1.0
        agent[:, :, a, 1, 1 - a] = 1.0
    feed = np.zeros((H, S, A, T, B, E))
    feed[..., 0, :] = (0.9, 0.1)
    feed[..., 1, :] = (0.2, 0.8)
    e_idx = np.arange(E)[None, None, None, :]
    a_idx = np.arange(A)[None, None, :, None]
    reward = np.broadcast_to(
        0.3 + 0.2 * (e_idx == 0) + 0.1 * (a_idx == 1), (H, S, A, E)
    ).copy()
    centers = grid.centers()[:, 0]
    mean = (
        0.5 * centers[None, :, None, None]
        + 0.3 * (a_idx == 1)
        - 0.2 * (e_idx == 1)
    )
    mean_map = np.clip(np.broadcast_to(mean, (H, S, A, E)), -0.9, 0.9)[..., None]
    return StrategicModel(
        horizon=H,
        num_states=S,
        num_actions=A,
        num_feedbacks=E,
        num_types=T,
        num_agent_actions=B,
        initial_state=1,
        source_type_dist=np.tile((0.6, 0.4), (H, 1)),
        target_type_dist=np.tile((0.2, 0.8), (H, 1)),
        agent_reward=agent,
        feedback_kernel=feed,
        principal_reward=reward,
        reward_confound=np.tile((0.3, -0.3), (H, 1)),
        reward_noise_std=reward_noise,
        reward_bound=1.0,
        transition_mode=TransitionMode.DYNAMICAL,
        state_dim=1,
        grid=grid,
        mean_map=mean_map.copy(),
        trans_confound=np.tile(np.array([[0.2], [-0.2]]), (H, 1, 1)),
        trans_noise_scale=noise_scale,
    )


def all_action_tables(horizon: int, num_states: int, num_actions: int):
    """Yield every deterministic (H, S) action table."""
    for flat in itertools.product(range(num_actions), repeat=horizon * num_states):
        yield np.asarray(flat, dtype=int).reshape(horizon, num_states)


def eval_table_recursive(
    rewards: np.ndarray, transitions: np.ndarray, actions: np.ndarray, h: int, s: int
) -> float:
    """Pure-Python recursive evaluation of a deterministic action table."""
    if h == rewards.shape[0]:
        return 0.0
    a = int(actions[h, s])
    total = float(rewards[h, s, a])
    for x in range(rewards.shape[1]):
        p = float(transitions[h, s, a, x])
        if p > 0.0:
            total += p * eval_table_recursive(rewards, transitions, actions, h + 1, x)
    return total


def brute_force_optimum(rewards, transitions, initial_state):
    """Best deterministic-policy value by exhaustive enumeration."""
    H, S, A = rewards.shape
    best = -np.inf
    best_actions = None
    for actions in all_action_tables(H, S, A):
        v = eval_table_recursive(rewards, transitions, actions, 0, initial_state)
        if v > best:
            best = v
            best_actions = actions
    return best, best_actions


def uniform_policy_for(model: StrategicModel) -> Policy:
    return Policy.uniform(model.horizon, model.num_states, model.num_actions)
