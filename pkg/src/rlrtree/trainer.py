"""DQN training of the ChooseSubtree and Split agents.

Both loops compare a tree under training (``t_rl``) with a reference tree
(``t_ref``) that is reset to the same structure every ``p`` objects. The
reward for a round is the drop in normalised node accesses of the training
queries: ``mean(acc_ref / h_ref) - mean(acc_rl / h_rl)``.

All randomness flows from ``TrainConfig.seed`` through independent numpy
streams, so a run is bitwise reproducible.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from .dataset import Dataset
from .dqn import DQNAgent, ExplorationState, QNetwork, Transition
from .features import StateVector
from .geometry import Rect
from .policy import Policy
from .rtree import RTree, build_tree

log = logging.getLogger(__name__)

# decisions recorded per object are bounded by the tree height
_MAX_DEPTH = 64


@dataclass
class TrainConfig:
    k: int = 2
    p: int = 10
    epochs_cs: int = 20
    epochs_split: int = 15
    parts: int = 15
    gamma_cs: float = 0.95
    gamma_split: float = 0.8
    lr_cs: float = 0.003
    lr_split: float = 0.01
    batch: int = 64
    memory_cap: int = 5000
    target_sync_every: int = 30
    train_query_area_fraction: float = 1e-4
    aspect_ratio_range: tuple[float, float] = (0.1, 10.0)
    M: int = 50
    m: int = 20
    eps_start: float = 1.0
    eps_decay: float = 0.99
    eps_floor: float = 0.1
    region_volume: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.aspect_ratio_range = tuple(float(x) for x in self.aspect_ratio_range)
        self.validate()

    def validate(self) -> None:
        ints = ("k", "p", "epochs_cs", "epochs_split", "parts", "batch", "memory_cap", "target_sync_every", "M", "m")
        for name in ints:
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 0:
                raise ValueError(f"{name} must be a non-negative integer")
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if min(self.p, self.parts, self.batch, self.memory_cap, self.target_sync_every, self.m) < 1:
            raise ValueError("p, parts, batch, memory_cap, target_sync_every and m must be positive")
        if self.parts < 2:
            raise ValueError("parts must be at least 2")
        if not 2 * self.m <= self.M:
            raise ValueError(f"need m <= M/2, got m={self.m}, M={self.M}")
        for name in ("gamma_cs", "gamma_split"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("lr_cs", "lr_split", "train_query_area_fraction", "region_volume"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        lo, hi = self.aspect_ratio_range
        if not 0.0 < lo <= hi:
            raise ValueError("aspect_ratio_range must be positive and ordered")
        if not 0.0 < self.eps_floor <= self.eps_start <= 1.0 or not 0.0 < self.eps_decay <= 1.0:
            raise ValueError("exploration schedule out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspect_ratio_range"] = list(self.aspect_ratio_range)
        return d


# -- queries and reward ------------------------------------------------------


def query_windows(centers: np.ndarray, fraction: float, ratio_range, rng: np.random.Generator, region_volume=1.0):
    """Boxes of volume ``fraction * region_volume`` centred at each row of ``centers``.

    The aspect ratio rho (first side over second side) is drawn uniformly
    from ``ratio_range``; further dimensions use the cube side.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    n, d = centers.shape
    volume = fraction * region_volume
    rho = rng.uniform(ratio_range[0], ratio_range[1], n)
    sides = np.empty((n, d))
    if d == 1:
        sides[:, 0] = volume
    else:
        # the first two sides carry the ratio, the rest share the cube side
        s = volume ** (1.0 / d)
        pair = s * s
        sides[:, 0] = np.sqrt(pair * rho)
        sides[:, 1] = np.sqrt(pair / rho)
        sides[:, 2:] = s
    return centers - sides / 2.0, centers + sides / 2.0


def make_training_query(center, cfg: TrainConfig, rng: np.random.Generator) -> Rect:
    qlo, qhi = query_windows(center, cfg.train_query_area_fraction, cfg.aspect_ratio_range, rng, cfg.region_volume)
    return Rect(tuple(qlo[0]), tuple(qhi[0]))


def _as_windows(queries):
    if isinstance(queries, tuple) and len(queries) == 2 and isinstance(queries[0], np.ndarray):
        return queries
    qs = list(queries)
    return np.array([q.lo for q in qs], dtype=np.float64), np.array([q.hi for q in qs], dtype=np.float64)


def normalized_access_rate(tree: RTree, qlo: np.ndarray, qhi: np.ndarray) -> float:
    return float(np.mean(tree.count_accesses(qlo, qhi)) / tree.height)


def compute_reward(tree_rl: RTree, tree_ref: RTree, queries) -> float:
    """Positive when the tree under training needs fewer normalised accesses."""
    qlo, qhi = _as_windows(queries)
    if len(qlo) == 0:
        raise ValueError("reward needs at least one query")
    if len(tree_rl) == 0 or len(tree_ref) == 0:
        raise ValueError("reward needs non-empty trees")
    return normalized_access_rate(tree_ref, qlo, qhi) - normalized_access_rate(tree_rl, qlo, qhi)


# -- shared plumbing ---------------------------------------------------------


@dataclass
class RoundRecord:
    agent: str
    epoch: int
    round: int
    r: float
    epsilon: float
    loss: float | None
    memory_size: int
    transitions: int
    part: int | None = None


@dataclass
class _Run:
    cfg: TrainConfig
    data: Dataset
    logger: Callable[[dict], None] | None
    on_round: Callable | None
    rng: np.random.Generator
    epoch_no: int = 0
    summaries: list = field(default_factory=list)

    def emit(self, rec: dict) -> None:
        if self.logger is not None:
            self.logger(rec)


def _no_net():
    return (np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))


def _make_agent(cfg: TrainConfig, init: QNetwork | None, rng, gamma, lr) -> DQNAgent:
    net = init.copy() if init is not None else QNetwork.init(cfg.k, rng)
    if net.k != cfg.k:
        raise ValueError(f"initial network has k={net.k}, config has k={cfg.k}")
    return DQNAgent(
        net,
        gamma=gamma,
        lr=lr,
        batch=cfg.batch,
        memory_cap=cfg.memory_cap,
        sync_every=cfg.target_sync_every,
        exploration=ExplorationState(cfg.eps_start, cfg.eps_decay, cfg.eps_floor),
    )


def _push_chain(agent: DQNAgent, states, actions, nvalid, r: float) -> int:
    """Transitions of one object's decision chain; the last one is terminal."""
    n = len(actions)
    svs = [StateVector(states[i], int(nvalid[i])) for i in range(n)]
    for i in range(n):
        last = i == n - 1
        agent.memory.push(Transition(svs[i], int(actions[i]), r, None if last else svs[i + 1], last))
    return n


def _rounds(n: int, p: int):
    for start in range(0, n, p):
        yield start, min(n, start + p)


def _fresh_tree(cfg: TrainConfig, dims: int, n: int) -> RTree:
    return RTree(dims, cfg.M, cfg.m, capacity=max(16, 2 * n // cfg.m))


def _finish_round(run: _Run, agent: DQNAgent, name, rno, r, ntrans, part=None, eps=None):
    loss = agent.learn(run.rng) if len(agent.memory) else None
    rec = RoundRecord(
        name,
        run.epoch_no,
        rno,
        r,
        agent.exploration.epsilon if eps is None else eps,
        loss,
        len(agent.memory),
        ntrans,
        part,
    )
    agent.exploration.step()
    run.emit({"type": "round", **asdict(rec)})
    return rec


# -- ChooseSubtree -----------------------------------------------------------


def _cs_epoch(run: _Run, agent: DQNAgent, split_rule: int, split_net, eps_override, max_valid) -> None:
    cfg, data = run.cfg, run.data
    run.epoch_no += 1
    agent.memory.clear()
    d = data.dims
    t_rl = _fresh_tree(cfg, d, len(data))
    t_ref = _fresh_tree(cfg, d, len(data))
    sp = split_net.params() if split_net is not None else _no_net()
    ref_args = (K.CHOOSE_MIN_AREA, split_rule, cfg.k, _no_net(), sp)
    states = np.empty((_MAX_DEPTH, 4 * cfg.k))
    actions = np.empty(_MAX_DEPTH, np.int64)
    nvalid = np.empty(_MAX_DEPTH, np.int64)
    rewards = []
    centers = data.centers()
    cs = agent.net.params()
    for rno, (a, b) in enumerate(_rounds(len(data), cfg.p)):
        t_ref.copy_from(t_rl)
        _insert_range(t_ref, data, a, b, ref_args)
        eps = agent.exploration.epsilon if eps_override is None else eps_override
        draws = run.rng.random((b - a, 2, _MAX_DEPTH))
        chains = []
        for i in range(a, b):
            t_rl._grow(t_rl.node_count + t_rl.height + 4)
            rec = K.explore_insert_cs(
                *t_rl._arrays(), data.lo[i], data.hi[i], data.ids[i], cfg.M, cfg.m, split_rule, cfg.k, cs, sp,
                eps, draws[i - a, 0], draws[i - a, 1], max_valid, states, actions, nvalid,
            )
            if rec:
                chains.append((states[:rec].copy(), actions[:rec].copy(), nvalid[:rec].copy()))
        qlo, qhi = query_windows(
            centers[a:b], cfg.train_query_area_fraction, cfg.aspect_ratio_range, run.rng, cfg.region_volume
        )
        r = compute_reward(t_rl, t_ref, (qlo, qhi))
        ntrans = sum(_push_chain(agent, *c, r) for c in chains)
        rewards.append(r)
        _finish_round(run, agent, "choosesubtree", rno, r, ntrans, eps=eps)
        if run.on_round is not None:
            run.on_round(t_rl, t_ref, r)
    _epoch_summary(run, "choosesubtree", agent, rewards)


def _insert_range(tree: RTree, data: Dataset, a: int, b: int, args) -> None:
    crule, srule, k, cs, sp = args
    start = a
    while start < b:
        tree._grow(tree.node_count + (b - start) // tree.m + 2 * tree.height + 8)
        start = K.insert_many(
            *tree._arrays(), data.lo[:b], data.hi[:b], data.ids[:b], start, tree.M, tree.m, crule, srule, k, cs, sp
        )


def _epoch_summary(run: _Run, name: str, agent: DQNAgent, rewards) -> None:
    rec = {
        "type": "epoch",
        "agent": name,
        "epoch": run.epoch_no,
        "rounds": len(rewards),
        "mean_r": float(np.mean(rewards)) if rewards else 0.0,
        "epsilon": agent.exploration.epsilon,
        "train_steps": agent.steps,
    }
    run.summaries.append(rec)
    run.emit(rec)


def train_choose_subtree(
    data: Dataset,
    cfg: TrainConfig,
    *,
    init_net: QNetwork | None = None,
    logger: Callable[[dict], None] | None = None,
    on_round: Callable | None = None,
    epsilon: float | None = None,
    max_valid: int | None = None,
) -> QNetwork:
    """Learn a ChooseSubtree network; splits use the minimum-overlap partition.

    ``epsilon`` pins the exploration rate and ``max_valid`` caps the number
    of actions the agent may pick from. Both exist for diagnostics.
    ``on_round(t_rl, t_ref, r)`` is called after every round.
    """
    if len(data) < cfg.p:
        raise ValueError(f"dataset has {len(data)} objects, fewer than p={cfg.p}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    run = _Run(cfg, data, logger, on_round, np.random.default_rng(seeds[1]))
    agent = _make_agent(cfg, init_net, np.random.default_rng(seeds[0]), cfg.gamma_cs, cfg.lr_cs)
    for _ in range(cfg.epochs_cs):
        _cs_epoch(run, agent, K.SPLIT_MIN_OVERLAP, None, epsilon, max_valid or cfg.k)
    return agent.net


# -- Split -------------------------------------------------------------------


def prepare_split_training(data: Dataset, j: int, parts: int, cfg: TrainConfig) -> tuple[RTree, int, Dataset]:
    """Base tree from the first j/parts of the objects, then fill or set aside the rest.

    Objects that would overflow the leaf they reach are set aside as the
    training part; every other object is inserted. Returns the base tree,
    the number of filled objects and the training part.
    """
    if not 1 <= j <= parts - 1:
        raise ValueError(f"j must lie in [1, {parts - 1}], got {j}")
    n0 = len(data) * j // parts
    base = build_tree(data[:n0], Policy(), cfg.M, cfg.m) if n0 else RTree(data.dims, cfg.M, cfg.m)
    rest = data[n0:]
    take = np.zeros(len(rest), np.bool_)
    if len(rest):
        K.fill_or_reject(*base._arrays(), rest.lo, rest.hi, rest.ids, cfg.M, K.CHOOSE_MIN_AREA, take)
    return base, int(len(rest) - take.sum()), rest.take(np.nonzero(take)[0])


def _split_epoch(run: _Run, agent: DQNAgent, prepared, choose_rule: int, cs_net, eps_override) -> None:
    cfg = run.cfg
    run.epoch_no += 1
    agent.memory.clear()
    cs = cs_net.params() if cs_net is not None else _no_net()
    ref_args = (choose_rule, K.SPLIT_MIN_OVERLAP, cfg.k, cs, _no_net())
    states = np.empty((_MAX_DEPTH, 4 * cfg.k))
    actions = np.empty(_MAX_DEPTH, np.int64)
    nvalid = np.empty(_MAX_DEPTH, np.int64)
    sp = agent.net.params()
    rewards = []
    rno = 0
    t_rl = t_ref = None
    for j, (base, _, train) in enumerate(prepared, start=1):
        if len(train) == 0:
            log.warning("split training: empty training part for j=%d, skipped", j)
            run.emit({"type": "warning", "epoch": run.epoch_no, "part": j, "message": "empty training part"})
            continue
        if t_rl is None or t_rl._cnt.shape[0] < base.node_count:
            t_rl, t_ref = base.clone(), base.clone()
        centers = train.centers()
        for a, b in _rounds(len(train), cfg.p):
            t_rl.copy_from(base)
            t_ref.copy_from(base)
            _insert_range(t_ref, train, a, b, ref_args)
            eps = agent.exploration.epsilon if eps_override is None else eps_override
            draws = run.rng.random((b - a, 2, _MAX_DEPTH))
            chains = []
            queried = []
            for i in range(a, b):
                t_rl._grow(t_rl.node_count + t_rl.height + 4)
                rec, overflow = K.explore_insert_split(
                    *t_rl._arrays(), train.lo[i], train.hi[i], train.ids[i], cfg.M, cfg.m, choose_rule, cfg.k,
                    cs, sp, eps, draws[i - a, 0], draws[i - a, 1], cfg.k, states, actions, nvalid,
                )
                if overflow:
                    queried.append(i)
                if rec:
                    chains.append((states[:rec].copy(), actions[:rec].copy(), nvalid[:rec].copy()))
            r = 0.0
            if queried:
                qlo, qhi = query_windows(
                    centers[queried], cfg.train_query_area_fraction, cfg.aspect_ratio_range, run.rng,
                    cfg.region_volume,
                )
                r = compute_reward(t_rl, t_ref, (qlo, qhi))
            ntrans = sum(_push_chain(agent, *c, r) for c in chains)
            rewards.append(r)
            _finish_round(run, agent, "split", rno, r, ntrans, part=j, eps=eps)
            rno += 1
            if run.on_round is not None:
                run.on_round(t_rl, t_ref, r)
    _epoch_summary(run, "split", agent, rewards)


def _prepare_all(data: Dataset, cfg: TrainConfig):
    # the base trees only depend on the data, so every epoch reuses them
    return [prepare_split_training(data, j, cfg.parts, cfg) for j in range(1, cfg.parts)]


def train_split(
    data: Dataset,
    cfg: TrainConfig,
    *,
    init_net: QNetwork | None = None,
    logger: Callable[[dict], None] | None = None,
    on_round: Callable | None = None,
    epsilon: float | None = None,
) -> QNetwork:
    """Learn a Split network on almost-full base trees; ChooseSubtree is minimum area enlargement."""
    if len(data) < cfg.parts:
        raise ValueError(f"dataset has {len(data)} objects, fewer than parts={cfg.parts}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    run = _Run(cfg, data, logger, on_round, np.random.default_rng(seeds[1]))
    agent = _make_agent(cfg, init_net, np.random.default_rng(seeds[2]), cfg.gamma_split, cfg.lr_split)
    prepared = _prepare_all(data, cfg)
    for _ in range(cfg.epochs_split):
        _split_epoch(run, agent, prepared, K.CHOOSE_MIN_AREA, None, epsilon)
    return agent.net


# -- both agents ---------------------------------------------------------------


def combined_schedule(epochs_cs: int, epochs_split: int) -> list[str]:
    """Alternate cs, split, cs, ... and finish the longer schedule alone."""
    out = []
    for i in range(max(epochs_cs, epochs_split)):
        if i < epochs_cs:
            out.append("cs")
        if i < epochs_split:
            out.append("split")
    return out


def train_combined(
    data: Dataset,
    cfg: TrainConfig,
    *,
    init_cs: QNetwork | None = None,
    init_split: QNetwork | None = None,
    logger: Callable[[dict], None] | None = None,
    on_round: Callable | None = None,
) -> tuple[QNetwork, QNetwork]:
    """Train both agents alternately, each using the other's current greedy policy.

    In a ChooseSubtree epoch both trees split with the current Split network;
    in a Split epoch both trees descend with the current ChooseSubtree network.
    """
    if len(data) < max(cfg.p, cfg.parts):
        raise ValueError(f"dataset has {len(data)} objects, fewer than p={cfg.p} or parts={cfg.parts}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    run = _Run(cfg, data, logger, on_round, np.random.default_rng(seeds[1]))
    cs_agent = _make_agent(cfg, init_cs, np.random.default_rng(seeds[0]), cfg.gamma_cs, cfg.lr_cs)
    sp_agent = _make_agent(cfg, init_split, np.random.default_rng(seeds[2]), cfg.gamma_split, cfg.lr_split)
    prepared = None
    for phase in combined_schedule(cfg.epochs_cs, cfg.epochs_split):
        if phase == "cs":
            _cs_epoch(run, cs_agent, K.SPLIT_RL, sp_agent.net, None, cfg.k)
        else:
            if prepared is None:
                prepared = _prepare_all(data, cfg)
            _split_epoch(run, sp_agent, prepared, K.CHOOSE_RL, cs_agent.net, None)
    return cs_agent.net, sp_agent.net


# -- inference ---------------------------------------------------------------


def rlr_policy(net_cs: QNetwork | None, net_split: QNetwork | None, k: int | None = None) -> Policy:
    for net in (net_cs, net_split):
        if net is not None and k is not None and net.k != k:
            raise ValueError(f"model has k={net.k}, expected k={k}")
    return Policy(
        "rl" if net_cs is not None else "min-area-enlargement",
        "rl" if net_split is not None else "min-overlap-partition",
        net_cs,
        net_split,
    )


def build_rlr_tree(data: Dataset, net_cs: QNetwork | None, net_split: QNetwork | None, cfg: TrainConfig) -> RTree:
    """Insert objects one by one, letting the networks pick subtrees and splits greedily."""
    policy = rlr_policy(net_cs, net_split, cfg.k)
    tree = _fresh_tree(cfg, data.dims, len(data))
    tree.insert_many(data, policy)
    return tree


class JsonlLogger:
    """Append one JSON object per line to a file."""

    def __init__(self, path):
        self._fh = open(path, "w")

    def __call__(self, rec: dict) -> None:
        self._fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    raise TypeError(f"not serialisable: {type(x)}")
