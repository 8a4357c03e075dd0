"""The inference MDP: a 10-bit state, six actions, and their reward rules."""

from __future__ import annotations

from enum import IntEnum

QERS = 1 << 0   # query entities and relation searched
SEF = 1 << 1    # source entity found
TEF = 1 << 2    # target entity found
QRF = 1 << 3    # query relation found
CLUE = 1 << 4   # instance is a clue
ILO = 1 << 5    # interaction limit over
PFE = 1 << 6    # path features extracted
NEFS = 1 << 7   # non-empty feature set
CPF = 1 << 8    # complete path features found
INFI = 1 << 9   # inference invoked (display only)

N_STATES = 1 << 10

BIT_NAMES = [
    (QERS, "QERS"), (SEF, "SEF"), (TEF, "TEF"), (QRF, "QRF"), (CLUE, "CLUE"),
    (ILO, "ILO"), (PFE, "PFE"), (NEFS, "NEFS"), (CPF, "CPF"), (INFI, "INFI"),
]


class Action(IntEnum):
    SEARCH = 0        # search source, target, relation in the KB
    ASK_CLUE = 1      # ask for an example of the query relation
    ASK_LINK = 2      # ask for the missing link of an incomplete path
    ASK_CONNECT = 3   # ask how an unknown entity connects to the KB
    EXTRACT = 4       # extract path features between source and target
    INFER = 5         # store the instance and invoke prediction (terminal)


PROCESSING_ACTIONS = (Action.SEARCH, Action.EXTRACT, Action.INFER)
INTERACTIVE_ACTIONS = (Action.ASK_CLUE, Action.ASK_LINK, Action.ASK_CONNECT)
TERMINAL_ACTION = Action.INFER


def state_str(state: int) -> str:
    on = [name for bit, name in BIT_NAMES if state & bit]
    return "{" + ",".join(on) + "}" if on else "{}"


def initial_state(mode: str) -> int:
    """All-zero start state; the CLUE bit is set for clue instances."""
    return CLUE if mode == "C" else 0


def judge_action(state: int, action: Action, empty_features: bool = False) -> tuple[bool, float]:
    """Validity and reward of an action in a state.

    ``empty_features`` signals that EXTRACT ran but produced nothing, which
    is penalized like an invalid choice even though the action executed.
    INFER always executes; its reward says whether the episode is won.
    """
    if action == Action.SEARCH:
        return (True, 0.0) if not state & QERS else (False, -1.0)
    if action == Action.ASK_CLUE:
        ok = (not state & ILO and not state & CLUE
              and state & QERS and not state & QRF)
        return (True, 0.0) if ok else (False, -1.0)
    if action == Action.ASK_LINK:
        ok = (state & PFE and state & NEFS and not state & ILO
              and not state & CPF)
        return (True, 0.0) if ok else (False, -1.0)
    if action == Action.ASK_CONNECT:
        bad = (not state & QERS) or (state & SEF and state & TEF) or (state & ILO)
        return (False, -1.0) if bad else (True, 0.0)
    if action == Action.EXTRACT:
        if (not state & QERS) or (state & PFE):
            return (False, -1.0)
        if empty_features:
            return (False, -1.0)
        return (True, 0.0)
    if action == Action.INFER:
        won = bool(state & QRF and state & CPF)
        return (won, 1.0 if won else -1.0)
    raise ValueError(f"unknown action {action!r}")
