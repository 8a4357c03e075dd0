"""Tabular Q-learning over the inference MDP, plus the episode loop that
drives the inference stack (clues are processed above the query they serve).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kb import QueryTriple
from .mdp import Action, initial_state, judge_action
from .paths import FeatureSet

N_ACTIONS = len(Action)


@dataclass
class QTable:
    """Action-value table with the learning schedule baked in.

    Unvisited entries read as zero; the visited-state set lets the runner
    tell a trained state from a genuinely unseen one.
    """

    alpha: float = 0.8
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.1
    pretrain_steps: int = 50_000

    values: dict[int, list[float]] = field(default_factory=dict)
    visited: set[int] = field(default_factory=set)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")

    def q(self, state: int, action: Action) -> float:
        row = self.values.get(state)
        return row[action] if row is not None else 0.0

    def row(self, state: int) -> list[float]:
        row = self.values.get(state)
        return list(row) if row is not None else [0.0] * N_ACTIONS

    def epsilon(self, step: int) -> float:
        """Linear decay from eps_start to eps_end over the pretrain steps."""
        if step >= self.pretrain_steps:
            return self.eps_end
        frac = step / self.pretrain_steps
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_payload(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "eps_start": self.eps_start,
            "eps_end": self.eps_end,
            "pretrain_steps": self.pretrain_steps,
            "values": {str(s): row for s, row in sorted(self.values.items())},
            "visited": sorted(self.visited),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "QTable":
        table = cls(
            alpha=payload["alpha"],
            gamma=payload["gamma"],
            eps_start=payload["eps_start"],
            eps_end=payload["eps_end"],
            pretrain_steps=payload["pretrain_steps"],
        )
        table.values = {int(s): list(row) for s, row in payload["values"].items()}
        table.visited = set(payload["visited"])
        return table


def choose_action(table: QTable, state: int, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy draw; greedy ties break toward the lowest action id."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    row = table.row(state)
    best = max(row)
    for action in Action:
        if row[action] == best:
            return action
    raise AssertionError("unreachable")


def q_update(
    table: QTable,
    state: int,
    action: Action,
    reward: float,
    next_state: int,
    terminal: bool = False,
) -> None:
    """One-step temporal-difference backup; terminal targets bootstrap at 0."""
    row = table.values.setdefault(state, [0.0] * N_ACTIONS)
    table.visited.add(state)
    future = 0.0 if terminal else max(table.row(next_state))
    row[action] += table.alpha * (reward + table.gamma * future - row[action])


def detect_fault(history: list[int], interaction_limit: int) -> bool:
    """True when the last (limit + 1) observed states are all identical."""
    window = interaction_limit + 1
    if len(history) < window:
        return False
    tail = history[-window:]
    return all(s == tail[0] for s in tail)


def fault_explore(tried: set[Action], rng: np.random.Generator) -> Action:
    """Uniform draw over untried actions; INFER only once all else failed."""
    remaining = [a for a in Action if a not in tried and a is not Action.INFER]
    if not remaining:
        return Action.INFER
    return remaining[int(rng.integers(len(remaining)))]


@dataclass
class DataInstance:
    """A query or clue flowing through the inference stack."""

    triple: QueryTriple
    budget: int
    mode: str = "T"          # T=train, V=validation, E=evaluation, C=clue
    label: bool | None = None
    features: FeatureSet | None = None
    experiences: list = field(default_factory=list)
    strategy: list = field(default_factory=list)
    questions_asked: int = 0
    verdict: bool | None = None

    def __post_init__(self):
        if self.mode not in ("T", "V", "E", "C"):
            raise ValueError(f"bad instance mode {self.mode!r}")
        if self.budget < 0:
            raise ValueError("interaction budget cannot be negative")
        if self.mode == "C" and self.label is None:
            raise ValueError("clue instances carry a +/- label")

    @property
    def relation(self) -> str:
        return self.triple.r


@dataclass
class Frame:
    """Stack entry: an instance, its MDP state, and episode-local trackers."""

    instance: DataInstance
    state: int
    history: list[int] = field(default_factory=list)
    fault_mode: bool = False
    fault_state: int | None = None
    tried: set = field(default_factory=set)
    needs_refresh: bool = False
    strategy: list = field(default_factory=list)
    won: bool = False
    # transition stashed while pushed clue instances run above this frame
    pending: tuple | None = None


class InferenceStack:
    """Processing always targets the top; clues sit above their query."""

    def __init__(self):
        self._frames: list[Frame] = []
        self.total_pushed = 0

    def push(self, frame: Frame) -> None:
        self._frames.append(frame)
        self.total_pushed += 1

    def push_instance(self, instance: DataInstance) -> Frame:
        frame = Frame(instance, initial_state(instance.mode),
                      strategy=instance.strategy)
        self.push(frame)
        return frame

    def pop(self) -> Frame:
        frame = self._frames.pop()
        if self._frames:
            self._frames[-1].needs_refresh = True
        return frame

    @property
    def top(self) -> Frame:
        return self._frames[-1]

    def __len__(self) -> int:
        return len(self._frames)


@dataclass
class EpisodeResult:
    strategy: list
    won: bool
    verdict: bool | None = None
    aborted: bool = False
    steps: int = 0


STEP_CAP_FACTOR = 10
STEP_CAP_BASE = 6


def run_episode(
    instance: DataInstance,
    table: QTable,
    executor,
    stack: InferenceStack | None = None,
    mode: str = "act",
    rng: np.random.Generator | None = None,
    epsilon=None,
    on_step=None,
) -> EpisodeResult:
    """Drive one query episode (and any clue episodes it spawns) to the end.

    ``mode`` is "train" (epsilon-greedy, Q updated every step) or "act"
    (greedy; Q updated only after fault recovery kicks in).  ``epsilon`` may
    be a float or a zero-argument callable evaluated per step.
    """
    if mode not in ("train", "act"):
        raise ValueError(f"bad episode mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    stack = stack if stack is not None else InferenceStack()
    root = stack.push_instance(instance)
    limit = instance.budget
    per_instance_cap = STEP_CAP_FACTOR * (limit + STEP_CAP_BASE)
    steps = 0
    result = EpisodeResult(strategy=root.strategy, won=False)

    def record(frame: Frame, s0: int, action: Action, reward: float, s1: int,
               learning: bool, terminal: bool = False) -> None:
        frame.instance.experiences.append((s0, action, reward, s1))
        if learning:
            q_update(table, s0, action, reward, s1, terminal=terminal)

    def note_state(frame: Frame, s0: int, s1: int) -> None:
        if s1 != s0:
            frame.fault_mode = False
            frame.fault_state = None
            frame.tried = set()
            frame.history = [s1]
        else:
            frame.history.append(s1)

    while True:
        if steps >= per_instance_cap * stack.total_pushed:
            result.aborted = True
            result.steps = steps
            return result
        frame = stack.top
        if frame.needs_refresh:
            frame.needs_refresh = False
            before = frame.state
            frame.state = executor.refresh_lookup_bits(frame)
            if frame.pending is not None:
                s0, action, reward, learning = frame.pending
                frame.pending = None
                record(frame, s0, action, reward, frame.state, learning)
                note_state(frame, s0, frame.state)
            elif frame.state != before:
                note_state(frame, before, frame.state)
        state = frame.state

        if frame.fault_mode and state == frame.fault_state:
            action = fault_explore(frame.tried, rng)
            frame.tried.add(action)
        elif mode == "train":
            eps = epsilon() if callable(epsilon) else (
                epsilon if epsilon is not None else table.eps_end)
            action = choose_action(table, state, eps, rng)
        else:
            action = choose_action(table, state, 0.0, rng)

        learning = mode == "train" or frame.fault_mode
        valid, reward = judge_action(state, action)
        steps += 1
        if on_step is not None:
            on_step()

        if action is Action.INFER:
            outcome = executor.execute(action, frame, stack)
            record(frame, state, action, outcome.reward, outcome.state,
                   learning, terminal=True)
            frame.strategy.append(action)
            frame.won = outcome.reward > 0
            finished = stack.pop()
            if finished is root:
                result.won = finished.won
                result.verdict = finished.instance.verdict
                result.steps = steps
                return result
            continue

        if not valid:
            record(frame, state, action, reward, state, learning)
            frame.history.append(state)
        else:
            outcome = executor.execute(action, frame, stack)
            frame.strategy.append(action)
            frame.state = outcome.state
            if stack.top is not frame:
                # clue instances were pushed; close this transition against
                # the refreshed state once the frame resumes
                frame.pending = (state, action, outcome.reward, learning)
            else:
                record(frame, state, action, outcome.reward, outcome.state, learning)
                note_state(frame, state, outcome.state)

        if mode == "act" and not frame.fault_mode and detect_fault(frame.history, limit):
            frame.fault_mode = True
            frame.fault_state = frame.state
            frame.tried = set()
