import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlrtree import _kernels as K
from rlrtree.dqn import (
    SELU_ALPHA,
    SELU_LAMBDA,
    DQNAgent,
    ExplorationState,
    ModelError,
    QNetwork,
    ReplayMemory,
    Transition,
    greedy,
    load_model,
    loss_and_grads,
    save_model,
    select_action,
    selu,
    td_targets,
    train_step,
)
from rlrtree.features import StateVector


def scalar_forward(net, s):
    """Loop-based forward pass used as an independent oracle."""
    h = []
    for j in range(net.hidden):
        z = sum(net.w1[j, i] * s[i] for i in range(len(s))) + net.b1[j]
        h.append(SELU_LAMBDA * z if z > 0 else SELU_LAMBDA * SELU_ALPHA * (np.exp(z) - 1.0))
    return [sum(net.w2[a, j] * h[j] for j in range(net.hidden)) + net.b2[a] for a in range(net.k)]


def random_batch(rng, k, B):
    S = rng.random((B, 4 * k))
    A = rng.integers(0, k, B)
    Y = rng.normal(0, 1, B)
    return S, A, Y


def bandit_converges(seed, steps=500):
    """Two arms with Gaussian rewards; success when the greedy arm is the better one."""
    rng = np.random.default_rng(seed)
    s = StateVector(rng.random(8), 2)
    agent = DQNAgent(QNetwork.init(2, rng), gamma=0.0, lr=0.01, batch=16, memory_cap=500, sync_every=10)
    means = (0.2, 0.5) if seed % 2 else (0.5, 0.2)
    for _ in range(steps):
        a = select_action(agent.net, s, agent.exploration, rng)
        agent.memory.push(Transition(s, a, rng.normal(means[a], 0.2), None, True))
        agent.learn(rng)
        agent.exploration.step()
    return greedy(agent.net.forward(s), 2) == int(np.argmax(means))


class TestNetwork:
    def test_selu_constants(self):
        assert selu(np.array([1.0]))[0] == pytest.approx(1.0507009873554805)
        assert selu(np.array([-50.0]))[0] == pytest.approx(-SELU_LAMBDA * SELU_ALPHA)

    def test_forward_matches_scalar_loop(self, rng):
        net = QNetwork.init(3, rng, hidden=8)
        s = rng.random(12)
        assert net.forward(s) == pytest.approx(scalar_forward(net, s), abs=1e-12)

    def test_kernel_forward_matches_numpy(self, rng):
        net = QNetwork.init(2, rng)
        for _ in range(20):
            s = rng.random(8) * 2 - 0.5
            q = np.empty(2)
            K.q_forward(*net.params(), s, q)
            assert q == pytest.approx(net.forward(s), abs=1e-12)

    def test_init_bounds(self, rng):
        net = QNetwork.init(2, rng)
        assert np.abs(net.w1).max() <= np.sqrt(1 / 8)
        assert np.abs(net.w2).max() <= np.sqrt(1 / 64)
        assert net.w1.shape == (64, 8) and net.w2.shape == (2, 64)

    def test_bad_shapes(self):
        with pytest.raises(ModelError):
            QNetwork(np.zeros((4, 7)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))

    def test_wrong_state_length(self, rng):
        with pytest.raises(ValueError):
            QNetwork.init(2, rng).forward(np.zeros(12))


class TestGradients:
    def test_finite_differences(self, rng):
        eps = 1e-6
        worst = 0.0
        for _ in range(20):
            net = QNetwork.init(2, rng, hidden=16)
            S, A, Y = random_batch(rng, 2, 8)
            _, grads = loss_and_grads(net, S, A, Y)
            for p, g in zip(net.params(), grads):
                for idx in np.ndindex(p.shape):
                    old = p[idx]
                    p[idx] = old + eps
                    up, _ = loss_and_grads(net, S, A, Y)
                    p[idx] = old - eps
                    down, _ = loss_and_grads(net, S, A, Y)
                    p[idx] = old
                    num = (up - down) / (2 * eps)
                    worst = max(worst, abs(num - g[idx]) / max(1e-8, abs(num) + abs(g[idx])))
        assert worst < 1e-4

    def test_step_reduces_loss(self, rng):
        net = QNetwork.init(2, rng)
        S, A, Y = random_batch(rng, 2, 32)
        before, grads = loss_and_grads(net, S, A, Y)
        for p, g in zip(net.params(), grads):
            p -= 1e-3 * g
        assert loss_and_grads(net, S, A, Y)[0] < before


class TestTargets:
    def test_terminal_does_not_bootstrap(self, rng):
        net = QNetwork.init(2, rng)
        S2 = rng.random((2, 8))
        y = td_targets(net, np.array([1.0, 1.0]), np.array([True, False]), S2, np.array([2, 2]), 0.9)
        assert y[0] == 1.0
        assert y[1] == pytest.approx(1.0 + 0.9 * net.forward(S2[1]).max())

    def test_max_restricted_to_valid_actions(self):
        net = QNetwork.zeros(2)
        net.b2[:] = [1.0, 5.0]
        y = td_targets(net, np.array([0.0]), np.array([False]), np.zeros((1, 8)), np.array([1]), 1.0)
        assert y[0] == 1.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_raises(self, rng):
        net = QNetwork.init(2, rng)
        s = StateVector(np.zeros(8), 2)
        with pytest.raises(FloatingPointError):
            train_step(net, net.copy(), [Transition(s, 0, float("inf"), None, True)], 0.9, 0.1)


class TestExploration:
    def test_decay_and_floor(self):
        e = ExplorationState()
        for _ in range(1000):
            e.step()
        assert e.epsilon == 0.1
        assert ExplorationState(1.0).step() == pytest.approx(0.99)

    def test_single_valid_action(self, rng):
        s = StateVector(np.zeros(8), 1)
        assert all(select_action(QNetwork.init(2, rng), s, 1.0, rng) == 0 for _ in range(50))

    def test_random_actions_stay_valid(self, rng):
        s = StateVector(np.zeros(12), 2)
        acts = {select_action(QNetwork.init(3, rng), s, 1.0, rng) for _ in range(200)}
        assert acts == {0, 1}

    def test_greedy_ties_low_index(self):
        assert greedy(np.array([1.0, 1.0, 0.0]), 3) == 0


class TestReplay:
    def test_capacity_evicts_oldest(self):
        mem = ReplayMemory(3)
        s = StateVector(np.zeros(8), 2)
        for r in range(5):
            mem.push(Transition(s, 0, float(r), None, True))
        assert [t.r for t in mem.buffer] == [2.0, 3.0, 4.0]

    def test_sample_without_replacement(self, rng):
        mem = ReplayMemory(100)
        s = StateVector(np.zeros(8), 2)
        for r in range(100):
            mem.push(Transition(s, 0, float(r), None, True))
        batch = mem.sample(64, rng)
        assert len({t.r for t in batch}) == 64

    def test_small_memory_samples_with_replacement(self, rng):
        mem = ReplayMemory(100)
        mem.push(Transition(StateVector(np.zeros(8), 2), 1, 0.5, None, True))
        assert len(mem.sample(8, rng)) == 8

    def test_invalid_transition(self):
        s = StateVector(np.zeros(8), 1)
        with pytest.raises(ValueError):
            Transition(s, 1, 0.0, None, True)
        with pytest.raises(ValueError):
            Transition(s, 0, 0.0, None, False)


class TestAgent:
    def test_target_sync_schedule(self, rng):
        agent = DQNAgent(QNetwork.init(2, rng), gamma=0.9, lr=0.05, batch=4, sync_every=3)
        s = StateVector(rng.random(8), 2)
        agent.memory.push(Transition(s, 0, 1.0, s, False))
        agent.learn(rng)
        agent.learn(rng)
        assert not np.array_equal(agent.net.w2, agent.target.w2)
        agent.learn(rng)
        assert np.array_equal(agent.net.w2, agent.target.w2)

    def test_bandit_converges(self):
        assert sum(bandit_converges(seed) for seed in range(20)) >= 19


class TestModelFiles:
    def test_round_trip(self, rng, tmp_path):
        net = QNetwork.init(2, rng)
        path = tmp_path / "m.json"
        save_model(path, net, {"agent": "split", "dims": 2, "hyperparameters": {"lr": 0.01}, "seed": 4})
        back, meta = load_model(path, agent="split", k=2)
        for a, b in zip(net.params(), back.params()):
            assert np.array_equal(a, b)
        assert meta["seed"] == 4 and meta["hyperparameters"] == {"lr": 0.01}

    def test_wrong_agent_or_k(self, rng, tmp_path):
        path = tmp_path / "m.json"
        save_model(path, QNetwork.init(2, rng), {"agent": "choosesubtree"})
        with pytest.raises(ModelError):
            load_model(path, agent="split")
        with pytest.raises(ModelError):
            load_model(path, k=3)

    def test_bad_version(self, rng, tmp_path):
        path = tmp_path / "m.json"
        save_model(path, QNetwork.init(2, rng), {"agent": "choosesubtree"})
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelError, match="version"):
            load_model(path)

    def test_garbage(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json")
        with pytest.raises(ModelError):
            load_model(path)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 4), B=st.integers(1, 16))
def test_gradient_shapes_and_zero_error(seed, k, B):
    """Targets equal to current predictions give zero loss and zero gradients."""
    rng = np.random.default_rng(seed)
    net = QNetwork.init(k, rng, hidden=8)
    S = rng.random((B, 4 * k))
    A = rng.integers(0, k, B)
    Y = net.forward(S)[np.arange(B), A]
    loss, grads = loss_and_grads(net, S, A, Y)
    assert loss == pytest.approx(0.0, abs=1e-20)
    for p, g in zip(net.params(), grads):
        assert g.shape == p.shape and np.allclose(g, 0.0)
