from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BuildPlan:
    """Open stations per decision point.

    ``indexed_by`` is ``"tree_node"`` (keys are ids of the tree node where the
    decision is taken, i.e. the depth ``t-1`` node for year ``t``) or
    ``"stage"`` (keys are years ``1..|T|``, shared by every scenario).
    """
    open: np.ndarray  # (n_keys, n_options), 0/1
    keys: tuple[int, ...]
    indexed_by: str = "stage"

    def __post_init__(self):
        arr = np.asarray(self.open, dtype=np.int8)
        arr.setflags(write=False)
        object.__setattr__(self, "open", arr)
        if arr.ndim != 2 or arr.shape[0] != len(self.keys):
            raise ValueError("plan rows must match keys")
        if self.indexed_by not in ("stage", "tree_node"):
            raise ValueError(f"unknown plan index {self.indexed_by!r}")

    def row(self, key: int) -> np.ndarray:
        return self.open[self.keys.index(key)]

    def to_dict(self) -> dict:
        return {"indexed_by": self.indexed_by,
                "open": {str(k): [int(v) for v in r] for k, r in zip(self.keys, self.open)}}

    @classmethod
    def from_dict(cls, doc: dict) -> "BuildPlan":
        keys = tuple(int(k) for k in doc["open"])
        return cls(np.array([doc["open"][str(k)] for k in keys], dtype=np.int8), keys, doc["indexed_by"])
