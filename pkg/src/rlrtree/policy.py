"""Insertion policies: a ChooseSubtree rule paired with a Split rule.

:class:`Policy` covers every built-in combination, including greedy use of
trained networks, and is executed entirely by compiled kernels. Any object
implementing :class:`InsertPolicy` can be passed to ``RTree.insert`` instead;
it then runs through the slower Python insertion path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol

import numpy as np

from . import _kernels as K

if TYPE_CHECKING:
    from .dataset import ObjectRecord
    from .dqn import QNetwork
    from .rtree import RTree

CHOOSE_RULES = {
    "min-area-enlargement": K.CHOOSE_MIN_AREA,
    "rstar-overlap": K.CHOOSE_RSTAR,
    "rl": K.CHOOSE_RL,
}
SPLIT_RULES = {
    "linear": K.SPLIT_LINEAR,
    "quadratic": K.SPLIT_QUADRATIC,
    "greene": K.SPLIT_GREENE,
    "rstar-topology": K.SPLIT_RSTAR,
    "min-overlap-partition": K.SPLIT_MIN_OVERLAP,
    "rl": K.SPLIT_RL,
}

# CLI-visible heuristic names
NAMED = {
    "guttman-linear": ("min-area-enlargement", "linear"),
    "guttman-quadratic": ("min-area-enlargement", "quadratic"),
    "greene": ("min-area-enlargement", "greene"),
    "rstar": ("rstar-overlap", "rstar-topology"),
    "ref": ("min-area-enlargement", "min-overlap-partition"),
}

_NO_NET = (np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))


class InsertPolicy(Protocol):
    def choose_subtree(self, tree: RTree, node: int, obj: ObjectRecord) -> int:
        """Entry index of ``node`` that receives ``obj``."""

    def split(self, tree: RTree, node: int) -> np.ndarray:
        """Boolean mask over the node's M+1 entries; True stays in group 1."""


@dataclass(frozen=True)
class Policy:
    choose_rule: str = "min-area-enlargement"
    split_rule: str = "min-overlap-partition"
    cs_net: QNetwork | None = None
    split_net: QNetwork | None = None

    def __post_init__(self):
        if self.choose_rule not in CHOOSE_RULES:
            raise ValueError(f"unknown ChooseSubtree rule {self.choose_rule!r}")
        if self.split_rule not in SPLIT_RULES:
            raise ValueError(f"unknown Split rule {self.split_rule!r}")
        if self.choose_rule == "rl" and self.cs_net is None:
            raise ValueError("rl ChooseSubtree needs a network")
        if self.split_rule == "rl" and self.split_net is None:
            raise ValueError("rl Split needs a network")
        if self.cs_net is not None and self.split_net is not None and self.cs_net.k != self.split_net.k:
            raise ValueError("ChooseSubtree and Split networks disagree on k")

    @property
    def k(self) -> int:
        for net in (self.cs_net, self.split_net):
            if net is not None:
                return net.k
        return 1

    def kernel_args(self) -> tuple:
        cs = self.cs_net.params() if self.cs_net is not None else _NO_NET
        sp = self.split_net.params() if self.split_net is not None else _NO_NET
        return CHOOSE_RULES[self.choose_rule], SPLIT_RULES[self.split_rule], self.k, cs, sp

    def choose_subtree(self, tree: RTree, node: int, obj: ObjectRecord) -> int:
        olo, ohi = obj.mbr.as_arrays()
        crule, _, k, cs, _ = self.kernel_args()
        return int(K.choose(tree._lo, tree._hi, tree._ref, tree._cnt, tree._lvl, node, olo, ohi, crule, tree.M, k, cs))

    def split(self, tree: RTree, node: int) -> np.ndarray:
        _, srule, k, _, sp = self.kernel_args()
        mask = np.empty(tree._cnt[node], np.bool_)
        K.split_mask(tree._lo[node], tree._hi[node], tree._ref[node], tree._cnt[node], tree.m, srule, k, sp, mask)
        return mask


def policy_from_name(name: str, cs_net: QNetwork | None = None, split_net: QNetwork | None = None) -> Policy:
    """Resolve a CLI policy name. ``rlr`` uses whichever networks are given."""
    if name in NAMED:
        return Policy(*NAMED[name])
    if name == "rlr":
        if cs_net is None and split_net is None:
            raise ValueError("policy 'rlr' needs at least one trained model")
        return Policy(
            "rl" if cs_net is not None else "min-area-enlargement",
            "rl" if split_net is not None else "min-overlap-partition",
            cs_net,
            split_net,
        )
    raise ValueError(f"unknown policy {name!r}; expected one of {sorted(NAMED) + ['rlr']}")


REFERENCE = Policy(*NAMED["ref"])
