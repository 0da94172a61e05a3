"""R-Trees whose ChooseSubtree and Split decisions are learned with deep Q-learning."""

from .dataset import Dataset, ObjectRecord, read_dataset, write_dataset
from .geometry import Rect, rect_area, rect_margin, rect_overlap_area, rect_union
from .policy import REFERENCE, InsertPolicy, Policy, policy_from_name
from .rtree import QueryStats, RTree, build_tree, clone_structure

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "InsertPolicy",
    "ObjectRecord",
    "Policy",
    "QueryStats",
    "REFERENCE",
    "RTree",
    "Rect",
    "build_tree",
    "clone_structure",
    "policy_from_name",
    "read_dataset",
    "rect_area",
    "rect_margin",
    "rect_overlap_area",
    "rect_union",
    "write_dataset",
]
