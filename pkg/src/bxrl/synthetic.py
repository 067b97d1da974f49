"""Synthetic trajectory generators with planted behavior modes.

Both generators script a deliberately suboptimal policy that switches between
three qualitatively different control modes. The active mode id is recorded in
``mode_labels`` as hidden ground truth for evaluation; the rest of the
pipeline never sees it. Generation is a pure function of (seed, config).
"""

from __future__ import annotations

import numpy as np

from .data import ActionSpec, Dataset, ObservationSpec, Trajectory
from .errors import InvalidConfig

POINTMASS_MODES = ("dash_east", "circle", "brake")
GRIDLAVA_MODES = ("explore", "cross_lava", "approach_goal")

# Action ids for the grid world.
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}


def generate_pointmass(seed: int, num_episodes: int, episode_len: int = 60) -> Dataset:
    """Continuous point-mass episodes switching between three motion modes.

    Observation is [x, y, vx, vy]; the 2-d action is clamped to [-1, 1]
    component-wise. Mode 0 dashes east, mode 1 follows a curving northward
    arc, mode 2 brakes against the current velocity, so the three modes have
    well separated mean actions.
    """
    if num_episodes < 1:
        raise InvalidConfig(f"num_episodes must be >= 1, got {num_episodes}")
    if episode_len < 20:
        raise InvalidConfig(f"episode_len must be >= 20, got {episode_len}")
    rng = np.random.default_rng(seed)

    trajectories = []
    for _ in range(num_episodes):
        pos = rng.uniform(-2.0, 2.0, size=2)
        vel = np.zeros(2)
        # First three segments visit every mode once, in random order; extra
        # segments keep alternating so mode transitions recur within episodes.
        plan = list(rng.permutation(3))
        seg_lens = [int(rng.integers(episode_len // 6, episode_len // 3 + 1)) for _ in plan]
        while sum(seg_lens) < episode_len:
            choices = [m for m in range(3) if m != plan[-1]]
            plan.append(int(rng.choice(choices)))
            seg_lens.append(int(rng.integers(episode_len // 6, episode_len // 3 + 1)))

        observations, actions, labels = [], [], []
        t = 0
        for mode, seg_len in zip(plan, seg_lens):
            for step in range(seg_len):
                if t >= episode_len:
                    break
                # Positions are reported in arena units (quarter scale) so the
                # action-driven velocity components dominate the observation.
                observations.append([pos[0] / 4.0, pos[1] / 4.0, vel[0], vel[1]])
                if mode == 0:
                    act = np.array([0.85, -0.4 * vel[1]])
                elif mode == 1:
                    phase = np.pi / 2 + (np.pi / 4) * np.sin(2 * np.pi * step / 10.0)
                    act = 0.7 * np.array([np.cos(phase), np.sin(phase)])
                else:
                    act = -1.4 * vel
                act = np.clip(act + rng.normal(0.0, 0.05, size=2), -1.0, 1.0)
                actions.append(act)
                labels.append(mode)
                # High action gain: the next velocity is dominated by the
                # current action, so behavior modes imprint on the dynamics.
                vel = np.clip(0.82 * vel + 0.45 * act, -2.0, 2.0)
                pos = np.clip(pos + 0.12 * vel, -4.0, 4.0)
                t += 1
            if t >= episode_len:
                break
        trajectories.append(
            Trajectory(
                observations=np.asarray(observations),
                actions=np.asarray(actions),
                mode_labels=np.asarray(labels),
            )
        )

    return Dataset(
        obs_spec=ObservationSpec(kind="vector", dim=4),
        act_spec=ActionSpec(kind="continuous", dim=2),
        trajectories=trajectories,
        name=f"pointmass-seed{seed}",
    )


class _GridLayout:
    """Static lava-wall layout: a vertical lava column with one gap."""

    def __init__(self, grid_size: int):
        self.size = grid_size
        self.lava_x = grid_size // 2
        self.gap_y = grid_size // 2
        self.goals = ((grid_size - 2, 1), (grid_size - 2, grid_size - 2))
        self.lava = {
            (self.lava_x, y) for y in range(grid_size) if y != self.gap_y
        }

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.size and 0 <= y < self.size

    def is_safe(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and (x, y) not in self.lava

    def safe_actions(self, x: int, y: int) -> list[int]:
        return [a for a, (dx, dy) in _MOVES.items() if self.is_safe(x + dx, y + dy)]

    def nearest_goal(self, x: int, y: int) -> int:
        d0 = abs(x - self.goals[0][0]) + abs(y - self.goals[0][1])
        d1 = abs(x - self.goals[1][0]) + abs(y - self.goals[1][1])
        return 0 if d0 <= d1 else 1

    def vector_obs(self, x: int, y: int) -> list[float]:
        # Raw cell coordinates: per-step position changes stay O(1), so the
        # chosen action has a visible effect on the next observation.
        goal = self.nearest_goal(x, y)
        lava_adj = [
            1.0 if (x + dx, y + dy) in self.lava else 0.0
            for dx, dy in (_MOVES[UP], _MOVES[DOWN], _MOVES[LEFT], _MOVES[RIGHT])
        ]
        return [float(x), float(y), float(goal == 0), float(goal == 1)] + lava_adj

    def image_obs(self, x: int, y: int) -> np.ndarray:
        img = np.zeros((3, self.size, self.size))
        img[0, y, x] = 1.0
        for lx, ly in self.lava:
            img[1, ly, lx] = 1.0
        for gx, gy in self.goals:
            img[2, gy, gx] = 1.0
        return img


def _greedy_action(layout: _GridLayout, x: int, y: int, tx: int, ty: int,
                   rng: np.random.Generator) -> int:
    """Step toward (tx, ty), preferring the axis with the larger gap."""
    prefs = []
    if abs(tx - x) >= abs(ty - y):
        prefs += [RIGHT if tx > x else LEFT] if tx != x else []
        prefs += [DOWN if ty > y else UP] if ty != y else []
    else:
        prefs += [DOWN if ty > y else UP] if ty != y else []
        prefs += [RIGHT if tx > x else LEFT] if tx != x else []
    for a in prefs:
        dx, dy = _MOVES[a]
        if layout.is_safe(x + dx, y + dy):
            return a
    safe = layout.safe_actions(x, y)
    return int(rng.choice(safe))


def generate_gridlava(seed: int, num_episodes: int, grid_size: int = 8,
                      image_obs: bool = False, max_steps: int = 40) -> Dataset:
    """Discrete grid episodes: explore, cross the lava wall, approach a goal.

    The scripted policy is intentionally suboptimal: it wanders before
    crossing and takes a random safe action 15% of the time while approaching
    the goal. ``image_obs`` switches observations to a 3-channel occupancy
    image (agent / lava / goals) to exercise convolutional behavior cloning.
    """
    if num_episodes < 1:
        raise InvalidConfig(f"num_episodes must be >= 1, got {num_episodes}")
    if grid_size < 6:
        raise InvalidConfig(f"grid_size must be >= 6, got {grid_size}")
    rng = np.random.default_rng(seed)
    layout = _GridLayout(grid_size)

    def observe(x, y):
        return layout.image_obs(x, y) if image_obs else layout.vector_obs(x, y)

    trajectories = []
    for _ in range(num_episodes):
        x = int(rng.integers(0, max(1, layout.lava_x - 1)))
        y = int(rng.integers(0, grid_size))
        observations, actions, labels = [], [], []

        def record(a: int, mode: int):
            nonlocal x, y
            observations.append(observe(x, y))
            actions.append(a)
            labels.append(mode)
            dx, dy = _MOVES[a]
            x, y = x + dx, y + dy

        # Explore stays west of the lava wall so every episode crosses later.
        explore_len = int(rng.integers(4, 11))
        for _ in range(explore_len):
            west = [
                a
                for a in layout.safe_actions(x, y)
                if x + _MOVES[a][0] <= layout.lava_x - 1
            ]
            record(int(rng.choice(west)), 0)

        # Cross: head for the gap, then push east through the column.
        while x <= layout.lava_x and len(actions) < max_steps:
            if x == layout.lava_x - 1 and y != layout.gap_y:
                a = _greedy_action(layout, x, y, x, layout.gap_y, rng)
            elif x >= layout.lava_x - 1 and y == layout.gap_y:
                a = RIGHT
            else:
                a = _greedy_action(layout, x, y, layout.lava_x - 1, layout.gap_y, rng)
            record(a, 1)

        goal = layout.goals[layout.nearest_goal(x, y)]
        while (x, y) != goal and len(actions) < max_steps:
            if rng.random() < 0.15:
                a = int(rng.choice(layout.safe_actions(x, y)))
            else:
                a = _greedy_action(layout, x, y, goal[0], goal[1], rng)
            record(a, 2)

        trajectories.append(
            Trajectory(
                observations=np.asarray(observations),
                actions=np.asarray(actions, dtype=np.int64),
                mode_labels=np.asarray(labels),
            )
        )

    obs_spec = (
        ObservationSpec(kind="image", height=grid_size, width=grid_size, channels=3)
        if image_obs
        else ObservationSpec(kind="vector", dim=8)
    )
    return Dataset(
        obs_spec=obs_spec,
        act_spec=ActionSpec(kind="discrete", num_classes=4),
        trajectories=trajectories,
        name=f"gridlava-seed{seed}",
    )
