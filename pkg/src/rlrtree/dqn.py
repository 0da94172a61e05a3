"""Deep Q-learning pieces: a one-hidden-layer SELU network, replay memory,
epsilon-greedy exploration and the gradient-descent update.

Everything is plain numpy. Networks are small (4k inputs, 64 hidden units,
k outputs) so a hand-written backward pass is both fast and easy to check.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import SELU_ALPHA, SELU_LAMBDA
from .features import StateVector

FORMAT_VERSION = 1
HIDDEN = 64
AGENTS = ("choosesubtree", "split")


class ModelError(ValueError):
    """Unreadable model file, or a model that does not fit the caller."""


def selu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, SELU_LAMBDA * z, SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def selu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


@dataclass
class QNetwork:
    w1: np.ndarray  # (hidden, 4k)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (k, hidden)
    b2: np.ndarray  # (k,)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        h, inp = self.w1.shape
        k = self.w2.shape[0]
        if inp != 4 * k or self.b1.shape != (h,) or self.w2.shape != (k, h) or self.b2.shape != (k,):
            raise ModelError(
                f"inconsistent shapes w1{self.w1.shape} b1{self.b1.shape} w2{self.w2.shape} b2{self.b2.shape}"
            )

    @classmethod
    def init(cls, k: int, rng: np.random.Generator, hidden: int = HIDDEN) -> QNetwork:
        """Uniform weights in +-sqrt(1/fan_in) per layer."""
        if k < 1:
            raise ValueError("k must be at least 1")
        b_in = math.sqrt(1.0 / (4 * k))
        b_hid = math.sqrt(1.0 / hidden)
        return cls(
            rng.uniform(-b_in, b_in, (hidden, 4 * k)),
            rng.uniform(-b_in, b_in, hidden),
            rng.uniform(-b_hid, b_hid, (k, hidden)),
            rng.uniform(-b_hid, b_hid, k),
        )

    @classmethod
    def zeros(cls, k: int, hidden: int = HIDDEN) -> QNetwork:
        return cls(np.zeros((hidden, 4 * k)), np.zeros(hidden), np.zeros((k, hidden)), np.zeros(k))

    @property
    def k(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.w1, self.b1, self.w2, self.b2

    def copy(self) -> QNetwork:
        return QNetwork(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def forward(self, s) -> np.ndarray:
        """Q-values for one state (length 4k) or a batch (B, 4k)."""
        x = np.asarray(s.values if isinstance(s, StateVector) else s, dtype=np.float64)
        if x.shape[-1] != self.w1.shape[1]:
            raise ValueError(f"state length {x.shape[-1]} does not match network input {self.w1.shape[1]}")
        return selu(x @ self.w1.T + self.b1) @ self.w2.T + self.b2

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def greedy(q: np.ndarray, valid_actions: int) -> int:
    """Arg-max over the first ``valid_actions`` values, ties to the lowest index."""
    return int(np.argmax(q[:valid_actions]))


@dataclass
class ExplorationState:
    epsilon: float = 1.0
    decay: float = 0.99
    floor: float = 0.1

    def step(self) -> float:
        self.epsilon = max(self.floor, self.epsilon * self.decay)
        return self.epsilon


def select_action(net: QNetwork, s: StateVector, eps, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice among the valid actions of ``s``."""
    e = eps.epsilon if isinstance(eps, ExplorationState) else float(eps)
    if s.valid_actions == 1:
        return 0
    if rng.random() < e:
        return int(rng.integers(s.valid_actions))
    return greedy(net.forward(s), s.valid_actions)


@dataclass(frozen=True)
class Transition:
    s: StateVector
    a: int
    r: float
    s_next: StateVector | None
    terminal: bool

    def __post_init__(self):
        if not 0 <= self.a < self.s.valid_actions:
            raise ValueError(f"action {self.a} outside the {self.s.valid_actions} valid actions")
        if not self.terminal and self.s_next is None:
            raise ValueError("non-terminal transition needs a next state")


@dataclass
class ReplayMemory:
    capacity: int = 5000
    buffer: deque = field(init=False)

    def __post_init__(self):
        self.buffer = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.buffer)

    @property
    def size(self) -> int:
        return len(self.buffer)

    def push(self, t: Transition) -> None:
        self.buffer.append(t)

    def clear(self) -> None:
        self.buffer.clear()

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sample; without replacement unless the memory is smaller than ``batch``."""
        if not self.buffer:
            raise ValueError("cannot sample from an empty replay memory")
        n = len(self.buffer)
        idx = rng.choice(n, size=batch, replace=n < batch)
        return [self.buffer[i] for i in idx]


def _batch_arrays(batch, k):
    S = np.stack([t.s.values for t in batch])
    A = np.fromiter((t.a for t in batch), np.int64, len(batch))
    R = np.fromiter((t.r for t in batch), np.float64, len(batch))
    T = np.fromiter((t.terminal for t in batch), np.bool_, len(batch))
    S2 = np.stack([t.s.values if t.terminal else t.s_next.values for t in batch])
    V2 = np.fromiter((1 if t.terminal else t.s_next.valid_actions for t in batch), np.int64, len(batch))
    return S, A, R, T, S2, V2


def td_targets(target_net: QNetwork, R, T, S2, V2, gamma: float) -> np.ndarray:
    q2 = target_net.forward(S2)
    masked = np.where(np.arange(q2.shape[1])[None, :] < V2[:, None], q2, -np.inf)
    boot = np.where(T, 0.0, masked.max(axis=1))
    return R + gamma * boot


def loss_and_grads(net: QNetwork, S, A, Y) -> tuple[float, tuple]:
    """MSE between Q(s, a) and fixed targets Y, averaged over the batch, with gradients."""
    B = S.shape[0]
    z = S @ net.w1.T + net.b1
    h = selu(z)
    q = h @ net.w2.T + net.b2
    rows = np.arange(B)
    err = q[rows, A] - Y
    loss = float(np.mean(err**2))
    dq = 2.0 * err / B
    gw2 = np.zeros_like(net.w2)
    gb2 = np.zeros_like(net.b2)
    np.add.at(gw2, A, dq[:, None] * h)
    np.add.at(gb2, A, dq)
    dz = dq[:, None] * net.w2[A] * selu_grad(z)
    return loss, (dz.T @ S, dz.sum(axis=0), gw2, gb2)


def train_step(net: QNetwork, target_net: QNetwork, batch, gamma: float, lr: float) -> float:
    """One gradient-descent step on the batch; returns the loss before the step."""
    if not batch:
        raise ValueError("empty batch")
    S, A, R, T, S2, V2 = _batch_arrays(batch, net.k)
    Y = td_targets(target_net, R, T, S2, V2, gamma)
    loss, grads = loss_and_grads(net, S, A, Y)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss {loss}")
    for p, g in zip(net.params(), grads):
        p -= lr * g
    if not net.is_finite():
        raise FloatingPointError("network parameters became non-finite")
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    for dst, src in zip(target_net.params(), net.params()):
        dst[...] = src


@dataclass
class DQNAgent:
    """A network with its frozen target, replay memory and exploration schedule."""

    net: QNetwork
    gamma: float
    lr: float
    batch: int = 64
    memory_cap: int = 5000
    sync_every: int = 30
    exploration: ExplorationState = field(default_factory=ExplorationState)
    target: QNetwork = field(init=False)
    memory: ReplayMemory = field(init=False)
    steps: int = field(init=False, default=0)

    def __post_init__(self):
        self.target = self.net.copy()
        self.memory = ReplayMemory(self.memory_cap)

    @property
    def k(self) -> int:
        return self.net.k

    def learn(self, rng: np.random.Generator) -> float | None:
        """One train step from replay memory, syncing the target every ``sync_every`` steps."""
        if not len(self.memory):
            return None
        loss = train_step(self.net, self.target, self.memory.sample(self.batch, rng), self.gamma, self.lr)
        self.steps += 1
        if self.steps % self.sync_every == 0:
            sync_target(self.net, self.target)
        return loss


def _as_list(a: np.ndarray):
    return a.tolist()


def save_model(path, net: QNetwork, meta: dict) -> None:
    """Write a JSON model file. ``meta`` needs agent, dims, hyperparameters and seed."""
    agent = meta.get("agent")
    if agent not in AGENTS:
        raise ModelError(f"agent must be one of {AGENTS}, got {agent!r}")
    doc = {
        "format_version": FORMAT_VERSION,
        "agent": agent,
        "k": net.k,
        "dims": int(meta.get("dims", 2)),
        "hidden": net.hidden,
        "activation": "selu",
        "w1": _as_list(net.w1),
        "b1": _as_list(net.b1),
        "w2": _as_list(net.w2),
        "b2": _as_list(net.b2),
        "hyperparameters": meta.get("hyperparameters", {}),
        "seed": meta.get("seed"),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_model(path, agent: str | None = None, k: int | None = None) -> tuple[QNetwork, dict]:
    """Read a model file, optionally requiring a given agent kind and k."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported model format version {doc.get('format_version') if isinstance(doc, dict) else None}")
    if doc.get("activation") != "selu":
        raise ModelError(f"{path}: unsupported activation {doc.get('activation')!r}")
    try:
        net = QNetwork(*(np.array(doc[f], dtype=np.float64) for f in ("w1", "b1", "w2", "b2")))
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelError(f"{path}: malformed parameters ({exc})") from None
    if net.k != doc.get("k") or net.hidden != doc.get("hidden"):
        raise ModelError(f"{path}: header disagrees with parameter shapes")
    if agent is not None and doc.get("agent") != agent:
        raise ModelError(f"{path}: expected a {agent} model, found {doc.get('agent')!r}")
    if k is not None and net.k != k:
        raise ModelError(f"{path}: model has k={net.k}, pipeline expects k={k}")
    meta = {key: doc[key] for key in ("agent", "k", "dims", "hidden", "hyperparameters", "seed") if key in doc}
    return net, meta
