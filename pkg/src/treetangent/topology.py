"""Explicit binary tree topologies for the finite-ensemble simulator.

A topology is stored as parent arrays: every internal node and every leaf
records its parent node id and the slot (``"left"``/``"right"``) it occupies.
Ids are dense and start at 1; the root is the node whose parent is ``None``.

JSON layout::

    {"kind": "tree",
     "nodes":  [{"id": 1, "parent": null, "slot": null}, ...],
     "leaves": [{"id": 1, "parent": 1, "slot": "left"}, ...]}

``kind="rule_set"`` marks a left-only chain with a single leaf.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .kernels import LeafProfile

__all__ = [
    "TreeTopology",
    "perfect_binary",
    "decision_list",
    "rule_set",
    "shared_profile_pair",
    "profile_of",
    "mirror",
    "load_topology",
]

LEFT, RIGHT = "left", "right"
KINDS = ("tree", "rule_set")


@dataclass(frozen=True)
class TreeTopology:
    kind: str
    node_parent: tuple      # node_parent[k] is the parent id of node k+1 (None for root)
    node_slot: tuple
    leaf_parent: tuple
    leaf_slot: tuple

    def __post_init__(self):
        for name in ("node_parent", "node_slot", "leaf_parent", "leaf_slot"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self._validate()

    @property
    def n_nodes(self) -> int:
        return len(self.node_parent)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_parent)

    def _validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        n = self.n_nodes
        if n < 1 or self.n_leaves < 1:
            raise ValueError("a topology needs at least one internal node and one leaf")
        if len(self.node_slot) != n or len(self.leaf_slot) != self.n_leaves:
            raise ValueError("parent and slot arrays differ in length")
        roots = [k + 1 for k, p in enumerate(self.node_parent) if p is None]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root node, found {len(roots)}")

        occupied = {}
        children = {i: [] for i in range(1, n + 1)}
        entries = [("node", k + 1, p, s) for k, (p, s) in enumerate(zip(self.node_parent, self.node_slot))]
        entries += [("leaf", k + 1, p, s) for k, (p, s) in enumerate(zip(self.leaf_parent, self.leaf_slot))]
        for what, ident, parent, slot in entries:
            if parent is None:
                continue
            if parent not in children:
                raise ValueError(f"{what} {ident} has unknown parent {parent}")
            if slot not in (LEFT, RIGHT):
                raise ValueError(f"{what} {ident} has invalid slot {slot!r}")
            if (parent, slot) in occupied:
                raise ValueError(f"slot {slot} of node {parent} is used twice")
            occupied[(parent, slot)] = (what, ident)
            children[parent].append((what, ident))
        for node, ch in children.items():
            if not ch:
                raise ValueError(f"internal node {node} has no children")

        # acyclic + connected: every node reaches the root
        for k in range(n):
            seen = set()
            cur = k + 1
            while cur is not None:
                if cur in seen:
                    raise ValueError(f"cycle through node {cur}")
                seen.add(cur)
                cur = self.node_parent[cur - 1]

        if self.kind == "rule_set":
            if self.n_leaves != 1 or any(s == RIGHT for _, s in occupied):
                raise ValueError("a rule set must be a left-only chain ending in one leaf")
            if any(len(ch) != 1 for ch in children.values()):
                raise ValueError("a rule set must be a chain")

    # -- derived structure ---------------------------------------------------

    @cached_property
    def paths(self) -> tuple:
        """Root-to-leaf path per leaf as ``((node_id, is_right), ...)``, root first."""
        out = []
        for parent, slot in zip(self.leaf_parent, self.leaf_slot):
            path = []
            node, went_right = parent, slot == RIGHT
            while node is not None:
                path.append((node, went_right))
                went_right = self.node_slot[node - 1] == RIGHT
                node = self.node_parent[node - 1]
            out.append(tuple(reversed(path)))
        return tuple(out)

    @property
    def leaf_depths(self) -> tuple:
        return tuple(len(p) for p in self.paths)

    @property
    def max_depth(self) -> int:
        return max(self.leaf_depths)

    @cached_property
    def path_arrays(self):
        """Padded path tables used by the vectorized simulator.

        Returns ``(nodes, right, mask)`` with shape ``(n_leaves, max_depth)``;
        ``nodes`` holds 0-based node indices and padding is masked out.
        """
        L, D = self.n_leaves, self.max_depth
        nodes = np.zeros((L, D), dtype=np.intp)
        right = np.zeros((L, D), dtype=bool)
        mask = np.zeros((L, D), dtype=bool)
        for l, path in enumerate(self.paths):
            for k, (node, is_right) in enumerate(path):
                nodes[l, k] = node - 1
                right[l, k] = is_right
                mask[l, k] = True
        for arr in (nodes, right, mask):
            arr.setflags(write=False)
        return nodes, right, mask

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "nodes": [
                {"id": k + 1, "parent": p, "slot": s}
                for k, (p, s) in enumerate(zip(self.node_parent, self.node_slot))
            ],
            "leaves": [
                {"id": k + 1, "parent": p, "slot": s}
                for k, (p, s) in enumerate(zip(self.leaf_parent, self.leaf_slot))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, raw: dict) -> "TreeTopology":
        def unpack(items, what):
            items = sorted(items, key=lambda e: int(e["id"]))
            ids = [int(e["id"]) for e in items]
            if ids != list(range(1, len(ids) + 1)):
                raise ValueError(f"{what} ids must be dense from 1, got {ids}")
            parents = tuple(None if e.get("parent") is None else int(e["parent"]) for e in items)
            slots = tuple(e.get("slot") for e in items)
            return parents, slots

        np_, ns = unpack(raw["nodes"], "node")
        lp, ls = unpack(raw["leaves"], "leaf")
        return cls(raw.get("kind", "tree"), np_, ns, lp, ls)

    @classmethod
    def from_json(cls, text: str) -> "TreeTopology":
        return cls.from_dict(json.loads(text))


def load_topology(path) -> TreeTopology:
    return TreeTopology.from_json(Path(path).read_text(encoding="utf-8"))


class _Builder:
    def __init__(self):
        self.np, self.ns, self.lp, self.ls = [], [], [], []

    def node(self, parent=None, slot=None) -> int:
        self.np.append(parent)
        self.ns.append(slot)
        return len(self.np)

    def leaf(self, parent, slot):
        self.lp.append(parent)
        self.ls.append(slot)

    def build(self, kind="tree") -> TreeTopology:
        return TreeTopology(kind, self.np, self.ns, self.lp, self.ls)


def perfect_binary(depth: int) -> TreeTopology:
    """Perfect binary tree, nodes numbered breadth first."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    b = _Builder()
    level = [b.node()]
    for _ in range(depth - 1):
        nxt = []
        for parent in level:
            nxt.append(b.node(parent, LEFT))
            nxt.append(b.node(parent, RIGHT))
        level = nxt
    for parent in level:
        b.leaf(parent, LEFT)
        b.leaf(parent, RIGHT)
    return b.build()


def decision_list(depth: int) -> TreeTopology:
    """Tree growing to the right only: a left leaf at every depth, two at the bottom."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    b = _Builder()
    node = b.node()
    for _ in range(depth - 1):
        b.leaf(node, LEFT)
        node = b.node(node, RIGHT)
    b.leaf(node, LEFT)
    b.leaf(node, RIGHT)
    return b.build()


def rule_set(depth: int) -> TreeTopology:
    """A single rule: a left-only chain of ``depth`` nodes ending in one leaf."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    b = _Builder()
    node = b.node()
    for _ in range(depth - 1):
        node = b.node(node, LEFT)
    b.leaf(node, LEFT)
    return b.build("rule_set")


def shared_profile_pair() -> tuple:
    """Two non-isomorphic trees sharing the leaf profile ``{2: 2, 3: 4}``.

    Shape A splits the left subtree twice more and ends the right subtree
    at depth 2; shape B gives each depth-1 node one internal and one leaf
    child.
    """
    a = _Builder()
    root = a.node()
    l, r = a.node(root, LEFT), a.node(root, RIGHT)
    ll, lr = a.node(l, LEFT), a.node(l, RIGHT)
    a.leaf(r, LEFT)
    a.leaf(r, RIGHT)
    for n in (ll, lr):
        a.leaf(n, LEFT)
        a.leaf(n, RIGHT)

    b = _Builder()
    root = b.node()
    l, r = b.node(root, LEFT), b.node(root, RIGHT)
    ll = b.node(l, LEFT)
    b.leaf(l, RIGHT)
    rr = b.node(r, RIGHT)
    b.leaf(r, LEFT)
    for n in (ll, rr):
        b.leaf(n, LEFT)
        b.leaf(n, RIGHT)
    return a.build(), b.build()


def mirror(topo: TreeTopology) -> TreeTopology:
    """Swap left and right children everywhere (rule sets are returned unchanged)."""
    if topo.kind == "rule_set":
        return topo
    flip = {LEFT: RIGHT, RIGHT: LEFT, None: None}
    return TreeTopology(
        topo.kind,
        topo.node_parent,
        tuple(flip[s] for s in topo.node_slot),
        topo.leaf_parent,
        tuple(flip[s] for s in topo.leaf_slot),
    )


def profile_of(topo: TreeTopology) -> LeafProfile:
    """Leaf count per depth."""
    counts = {}
    for d in topo.leaf_depths:
        counts[d] = counts.get(d, 0) + 1
    return LeafProfile(counts)
