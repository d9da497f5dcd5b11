"""Binary cluster trees over the index range 0..n-1."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

DEFAULT_LEAF_SIZE = 128


class MalformedTree(ValueError):
    pass


@dataclass
class ClusterNode:
    id: int
    lo: int  # first index, inclusive
    hi: int  # one past the last index
    level: int
    parent: int | None = None
    children: tuple[int, int] | None = None

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def is_root(self) -> bool:
        return self.parent is None

    @property
    def indices(self) -> range:
        return range(self.lo, self.hi)


@dataclass
class ClusterTree:
    """Nodes are numbered level by level, top-down; node 0 is the root."""

    nodes: list[ClusterNode]
    n: int
    leaf_size: int = field(default=DEFAULT_LEAF_SIZE)

    @property
    def root(self) -> ClusterNode:
        return self.nodes[0]

    @property
    def levels(self) -> int:
        return 1 + max(nd.level for nd in self.nodes)

    def leaves(self) -> list[ClusterNode]:
        """Leaves in left-to-right order."""
        out = []

        def walk(nd: ClusterNode) -> None:
            if nd.is_leaf:
                out.append(nd)
            else:
                walk(self.nodes[nd.children[0]])
                walk(self.nodes[nd.children[1]])

        walk(self.root)
        return out

    def postorder(self) -> Iterator[ClusterNode]:
        stack = [(self.root, False)]
        while stack:
            nd, done = stack.pop()
            if done or nd.is_leaf:
                yield nd
                continue
            stack.append((nd, True))
            stack.append((self.nodes[nd.children[1]], False))
            stack.append((self.nodes[nd.children[0]], False))

    def children(self, nd: ClusterNode) -> tuple[ClusterNode, ClusterNode]:
        a, b = nd.children
        return self.nodes[a], self.nodes[b]

    def validate(self) -> None:
        root = self.root
        if root.lo != 0 or root.hi != self.n:
            raise MalformedTree("root must cover 0..n-1")
        for nd in self.nodes:
            if nd.size <= 0:
                raise MalformedTree(f"node {nd.id} has an empty range")
            if nd.is_leaf:
                continue
            c1, c2 = self.children(nd)
            if c1.lo != nd.lo or c1.hi != c2.lo or c2.hi != nd.hi:
                raise MalformedTree(
                    f"children of node {nd.id} do not split [{nd.lo}, {nd.hi}) contiguously"
                )
            if c1.level != nd.level + 1 or c2.level != nd.level + 1:
                raise MalformedTree(f"bad level numbering below node {nd.id}")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "leaf_size": self.leaf_size,
            "levels": self.levels,
            "nodes": [
                {
                    "id": nd.id,
                    "range": [nd.lo, nd.hi],
                    "level": nd.level,
                    "children": list(nd.children) if nd.children else None,
                }
                for nd in self.nodes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _number(shape: "_Shape", n: int, leaf_size: int) -> ClusterTree:
    """Assign level-by-level ids to a nested (lo, hi, left, right) shape."""
    nodes: list[ClusterNode] = []
    queue = [(shape, 0, None)]
    while queue:
        nxt = []
        for (lo, hi, left, right), level, parent in queue:
            nd = ClusterNode(id=len(nodes), lo=lo, hi=hi, level=level, parent=parent)
            nodes.append(nd)
            if left is not None:
                nxt.append((left, level + 1, nd.id))
                nxt.append((right, level + 1, nd.id))
        queue = nxt
    for nd in nodes:
        if nd.parent is not None:
            p = nodes[nd.parent]
            p.children = (nd.id,) if p.children is None else (p.children[0], nd.id)
    tree = ClusterTree(nodes=nodes, n=n, leaf_size=leaf_size)
    for nd in nodes:
        if nd.children is not None and len(nd.children) != 2:
            raise MalformedTree(f"node {nd.id} must have zero or two children")
    tree.validate()
    return tree


_Shape = tuple  # (lo, hi, left_shape | None, right_shape | None)


def build_balanced(n: int, leaf_size: int = DEFAULT_LEAF_SIZE) -> ClusterTree:
    """Halve ranges (ceil/floor) until they hold at most ``leaf_size`` indices."""
    if n < 1 or leaf_size < 1:
        raise ValueError("n and leaf_size must be positive")

    def split(lo: int, hi: int) -> _Shape:
        k = hi - lo
        if k <= leaf_size:
            return (lo, hi, None, None)
        mid = lo + (k + 1) // 2
        return (lo, hi, split(lo, mid), split(mid, hi))

    return _number(split(0, n), n, leaf_size)


Splits = Union[int, Sequence["Splits"]]


def from_splits(splits: Splits) -> ClusterTree:
    """Tree from a nested description of leaf sizes.

    An int is a leaf of that many indices; a pair ``[left, right]`` is an
    internal node.  ``[3, 7]`` is a root of size 10 with leaves 0..2 and
    3..9.  Explicit ranges are accepted too: ``{"range": [lo, hi],
    "children": [...]}``.
    """

    def build(spec, lo: int) -> _Shape:
        if isinstance(spec, dict):
            r_lo, r_hi = spec["range"]
            if r_lo != lo:
                raise MalformedTree(f"range starting at {r_lo} should start at {lo}")
            kids = spec.get("children")
            if not kids:
                if r_hi <= r_lo:
                    raise MalformedTree("empty leaf range")
                return (r_lo, r_hi, None, None)
            if len(kids) != 2:
                raise MalformedTree("internal nodes need exactly two children")
            left = build(kids[0], r_lo)
            right = build(kids[1], left[1])
            if right[1] != r_hi:
                raise MalformedTree(f"children do not cover [{r_lo}, {r_hi})")
            return (r_lo, r_hi, left, right)
        if isinstance(spec, int):
            if spec < 1:
                raise MalformedTree("leaf sizes must be positive")
            return (lo, lo + spec, None, None)
        if len(spec) != 2:
            raise MalformedTree("internal nodes need exactly two children")
        left = build(spec[0], lo)
        right = build(spec[1], left[1])
        return (lo, right[1], left, right)

    shape = build(splits, 0)
    n = shape[1]
    sizes = []

    def leaf_sizes(s: _Shape) -> None:
        if s[2] is None:
            sizes.append(s[1] - s[0])
        else:
            leaf_sizes(s[2])
            leaf_sizes(s[3])

    leaf_sizes(shape)
    return _number(shape, n, max(sizes))
