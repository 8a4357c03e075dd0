import numpy as np
import pytest

from openkbc.kb import QueryTriple
from openkbc.mdp import (
    CLUE,
    CPF,
    ILO,
    N_STATES,
    NEFS,
    PFE,
    QERS,
    QRF,
    SEF,
    TEF,
    Action,
    initial_state,
    judge_action,
)
from openkbc.strategy import (
    DataInstance,
    InferenceStack,
    QTable,
    choose_action,
    detect_fault,
    fault_explore,
    q_update,
    run_episode,
)


class TestInitialState:
    def test_plain_modes_start_at_zero(self):
        assert initial_state("T") == 0
        assert initial_state("E") == 0

    def test_clue_mode_sets_only_clue_bit(self):
        assert initial_state("C") == CLUE


class TestJudgeAction:
    def test_search_valid_only_before_search(self):
        assert judge_action(0, Action.SEARCH) == (True, 0.0)
        assert judge_action(QERS, Action.SEARCH) == (False, -1.0)

    def test_infer_win_condition(self):
        state = QRF | CPF
        assert judge_action(state, Action.INFER) == (True, 1.0)
        assert judge_action(QRF, Action.INFER) == (False, -1.0)

    def test_ask_link_blocked_when_budget_over(self):
        state = PFE | NEFS | ILO
        assert judge_action(state, Action.ASK_LINK) == (False, -1.0)

    def test_extract_empty_result_penalized(self):
        state = QERS
        assert judge_action(state, Action.EXTRACT) == (True, 0.0)
        assert judge_action(state, Action.EXTRACT, empty_features=True) == (False, -1.0)

    def test_totality_and_literal_reward_table(self):
        # literal transcription of the published reward conditions
        def oracle(s, a, empty):
            if a == Action.SEARCH:
                return 0.0 if not s & QERS else -1.0
            if a == Action.ASK_CLUE:
                return 0.0 if (not s & ILO and not s & CLUE and s & QERS
                               and not s & QRF) else -1.0
            if a == Action.ASK_LINK:
                return 0.0 if (s & PFE and s & NEFS and not s & ILO
                               and not s & CPF) else -1.0
            if a == Action.ASK_CONNECT:
                return -1.0 if (not s & QERS or (s & SEF and s & TEF)
                                or s & ILO) else 0.0
            if a == Action.EXTRACT:
                if not s & QERS or s & PFE or empty:
                    return -1.0
                return 0.0
            return 1.0 if (s & QRF and s & CPF) else -1.0

        for state in range(N_STATES):
            for action in Action:
                for empty in (False, True):
                    _, reward = judge_action(state, action, empty)
                    assert reward == oracle(state, action, empty)


class TestChooseAction:
    def test_greedy_picks_max(self):
        table = QTable()
        table.values[5] = [0.0, 0.1, 0.0, 0.0, 0.9, 0.2]
        rng = np.random.default_rng(0)
        assert choose_action(table, 5, 0.0, rng) == Action.EXTRACT

    def test_tie_breaks_to_lowest_id(self):
        table = QTable()
        rng = np.random.default_rng(0)
        assert choose_action(table, 77, 0.0, rng) == Action.SEARCH

    def test_uniform_exploration_at_epsilon_one(self):
        table = QTable()
        rng = np.random.default_rng(1)
        draws = 60_000
        counts = np.zeros(6)
        for _ in range(draws):
            counts[choose_action(table, 0, 1.0, rng)] += 1
        expected = draws / 6
        sigma = np.sqrt(draws * (1 / 6) * (5 / 6))
        assert np.all(np.abs(counts - expected) < 3 * sigma)


class TestQUpdate:
    def test_single_negative_update(self):
        table = QTable(alpha=0.8, gamma=0.9)
        q_update(table, 3, Action.SEARCH, -1.0, 3)
        assert table.q(3, Action.SEARCH) == pytest.approx(-0.8)

    def test_terminal_positive_update(self):
        table = QTable(alpha=0.8, gamma=0.9)
        q_update(table, 3, Action.INFER, 1.0, 3 | CPF, terminal=True)
        assert table.q(3, Action.INFER) == pytest.approx(0.8)

    def test_fixed_point_convergence(self):
        # repeated updates with constant reward and self-loop approach r/(1-gamma)
        table = QTable(alpha=0.5, gamma=0.9)
        reward = 0.5
        for _ in range(2000):
            q_update(table, 9, Action.SEARCH, reward, 9)
        assert table.q(9, Action.SEARCH) == pytest.approx(reward / (1 - 0.9), rel=1e-6)

    def test_epsilon_schedule(self):
        table = QTable(eps_start=1.0, eps_end=0.1, pretrain_steps=1000)
        assert table.epsilon(0) == pytest.approx(1.0)
        assert table.epsilon(500) == pytest.approx(0.55)
        assert table.epsilon(1000) == pytest.approx(0.1)
        assert table.epsilon(99999) == pytest.approx(0.1)


class TestDetectFault:
    def test_window_of_identical_states(self):
        assert detect_fault([7] * 6, 5)
        assert not detect_fault([7] * 5, 5)

    def test_break_in_window(self):
        assert not detect_fault([7, 7, 7, 7, 7, 8], 5)

    def test_zero_budget_boundary(self):
        assert detect_fault([4], 0)
        assert not detect_fault([], 0)


class TestFaultExplore:
    def test_terminal_only_after_all_tried(self):
        rng = np.random.default_rng(0)
        tried = {Action.SEARCH, Action.ASK_CLUE, Action.ASK_LINK,
                 Action.ASK_CONNECT, Action.EXTRACT}
        assert fault_explore(tried, rng) == Action.INFER

    def test_untried_pool_first(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            action = fault_explore(set(), rng)
            assert action != Action.INFER

    def test_single_remaining_nonterminal(self):
        rng = np.random.default_rng(0)
        tried = {Action.SEARCH, Action.ASK_CLUE, Action.ASK_LINK, Action.ASK_CONNECT}
        assert fault_explore(tried, rng) == Action.EXTRACT


class StubOutcome:
    def __init__(self, reward, state, terminal=False):
        self.reward = reward
        self.state = state
        self.terminal = terminal


class ScriptedExecutor:
    """Deterministic state machine standing in for the real executor."""

    def __init__(self, transitions):
        # transitions: {(state, action): (reward, next_state)}
        self.transitions = transitions

    def refresh_lookup_bits(self, frame):
        return frame.state

    def execute(self, action, frame, stack):
        if action == Action.INFER:
            won = bool(frame.state & QRF and frame.state & CPF)
            return StubOutcome(1.0 if won else -1.0, frame.state, True)
        reward, state = self.transitions.get((frame.state, action),
                                             (0.0, frame.state))
        return StubOutcome(reward, state)


def happy_path_transitions():
    s0 = 0
    s1 = QERS | SEF | TEF | QRF
    s2 = s1 | PFE | NEFS | CPF
    return {
        (s0, Action.SEARCH): (0.0, s1),
        (s1, Action.EXTRACT): (0.0, s2),
    }


class TestRunEpisode:
    def _instance(self, budget=5):
        return DataInstance(QueryTriple("a", "r", "b"), budget=budget, mode="T")

    def test_trained_table_follows_greedy_win(self):
        table = QTable()
        executor = ScriptedExecutor(happy_path_transitions())
        rng = np.random.default_rng(0)
        for _ in range(400):
            result = run_episode(self._instance(), table, executor, mode="train",
                                 rng=rng, epsilon=0.4)
        result = run_episode(self._instance(), table, executor, mode="act",
                             rng=rng)
        assert result.won
        assert result.strategy == [Action.SEARCH, Action.EXTRACT, Action.INFER]

    def test_invalid_actions_never_mutate_state(self):
        table = QTable()
        executor = ScriptedExecutor(happy_path_transitions())
        rng = np.random.default_rng(3)
        instance = self._instance()
        run_episode(instance, table, executor, mode="train", rng=rng, epsilon=1.0)
        for state, action, reward, next_state in instance.experiences:
            valid, expected_reward = judge_action(state, action)
            if not valid and action != Action.INFER:
                assert state == next_state
                assert reward == -1.0

    def test_every_episode_ends_terminal_or_aborted(self):
        table = QTable()
        executor = ScriptedExecutor(happy_path_transitions())
        rng = np.random.default_rng(4)
        for _ in range(50):
            instance = self._instance(budget=2)
            result = run_episode(instance, table, executor, mode="train",
                                 rng=rng, epsilon=1.0)
            if not result.aborted:
                assert instance.experiences[-1][1] == Action.INFER

    def test_fault_recovery_in_unseen_state(self):
        # a state the policy never visited, where nothing changes the state
        table = QTable()
        stuck = QERS | SEF | TEF | ILO | PFE | NEFS
        executor = ScriptedExecutor({})
        rng = np.random.default_rng(5)
        instance = self._instance(budget=5)
        stack = InferenceStack()
        frame_holder = {}

        class Tap(ScriptedExecutor):
            def execute(self, action, frame, stack):
                frame_holder["frame"] = frame
                return super().execute(action, frame, stack)

        executor = Tap({})
        instance2 = DataInstance(QueryTriple("a", "r", "b"), budget=5, mode="T")
        # seed the episode directly in the stuck state via a scripted search
        executor.transitions = {(0, Action.SEARCH): (0.0, stuck)}
        result = run_episode(instance2, table, executor, mode="act", rng=rng)
        taken = [a for _, a, _, _ in instance2.experiences]
        assert taken[-1] == Action.INFER
        # fault exploration tried every non-terminal action before giving up
        explored = set(taken[taken.index(Action.SEARCH, 1):-1]) if Action.SEARCH in taken[1:] else set(taken[1:-1])
        assert {Action.ASK_CLUE, Action.ASK_LINK, Action.ASK_CONNECT}.issubset(
            set(taken))
        assert stuck in table.values  # fault learning wrote entries
