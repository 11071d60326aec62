"""Merging joint layouts of several datasets into one unified indexing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..volumetric import Pose


@dataclass
class LayoutMap:
    """Unified joint names plus, per dataset, source index -> unified index.

    The unified layout is the joint list of the largest dataset (first one on
    ties). Joints of other datasets map onto it by name; names absent from the
    unified layout are listed in ``dropped``. Unified joints a dataset does not
    provide are invalid for that dataset's samples.
    """

    joints: list[str]
    mapping: dict[str, dict[int, int]]
    dropped: dict[str, list[str]] = field(default_factory=dict)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def valid_mask(self, dataset: str) -> np.ndarray:
        mask = np.zeros(self.n_joints, bool)
        mask[list(self.mapping[dataset].values())] = True
        return mask

    def convert(self, dataset: str, pose: Pose) -> Pose:
        """Re-index ``pose`` into the unified layout; missing joints become NaN and invalid."""
        coords = np.full((self.n_joints, pose.dim), np.nan)
        vis = np.zeros(self.n_joints)
        valid = np.zeros(self.n_joints, bool)
        for src, dst in self.mapping[dataset].items():
            coords[dst] = pose.coords[src]
            vis[dst] = pose.visibility[src]
            valid[dst] = pose.valid[src]
        return Pose(coords, vis, valid, pose.label_dim)

    def flip_pairs(self, pairs_by_name: Sequence[tuple[str, str]]) -> list[tuple[int, int]]:
        idx = {n: i for i, n in enumerate(self.joints)}
        return [(idx[a], idx[b]) for a, b in pairs_by_name if a in idx and b in idx]


def merge_layouts(datasets: Mapping[str, Sequence[str]], aliases: Mapping[str, str] | None = None) -> LayoutMap:
    """Build a :class:`LayoutMap` from ``{dataset: [joint names]}``.

    ``aliases`` renames joints (``{"upper_neck": "neck"}``) before matching.
    """
    if not datasets:
        raise ValueError("merge_layouts needs at least one dataset")
    aliases = dict(aliases or {})
    names: dict[str, list[str]] = {}
    for ds, joints in datasets.items():
        canon = [aliases.get(j, j) for j in joints]
        seen = set()
        for j in canon:
            if j in seen:
                raise ValueError(f"dataset {ds!r} lists joint {j!r} twice")
            seen.add(j)
        names[ds] = canon
    base = max(names, key=lambda k: len(names[k]))
    unified = list(names[base])
    pos = {n: i for i, n in enumerate(unified)}
    mapping, dropped = {}, {}
    for ds, joints in names.items():
        mapping[ds] = {i: pos[j] for i, j in enumerate(joints) if j in pos}
        dropped[ds] = [j for j in joints if j not in pos]
    return LayoutMap(unified, mapping, dropped)
