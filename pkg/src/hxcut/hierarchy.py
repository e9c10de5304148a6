"""Merge trees of nested partitions, and the cuts that live inside them.

A hierarchy is a finite chain of partitions of a base set E, from a finest
leaf partition up to the single class E.  It is stored as a merge tree: one
node per distinct class, each internal node partitioned exactly by its
children.  E is either a pixel grid (the hierarchy then carries a per-pixel
leaf label map) or abstract (leaves are atoms of size 1).

A cut is an antichain of node ids whose supports tile the support of a
summit node, i.e. a partition of that summit picked from tree classes.
Cuts of a node S decompose recursively: either {S} itself, or any
concatenation of one cut per child.  All cut machinery here (enumeration,
counting, unranking, restriction, refinement order) follows that recursion.

Trees are immutable once built; every query is read-only.  Derived lookup
tables are filled lazily and idempotently, so concurrent readers are safe
under the usual CPython memory model.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

# Cut counts saturate here instead of growing without bound.
CUT_COUNT_CAP = 10 ** 18


class CutLimitExceeded(RuntimeError):
    """Raised when an enumeration would produce more cuts than allowed."""


@dataclass(frozen=True)
class NodeRecord:
    id: int
    children: tuple[int, ...]
    parent: int | None
    support_size: int


@dataclass(frozen=True)
class Cut:
    """Antichain of node ids tiling the support of `summit`."""

    summit: int
    members: frozenset[int]

    def __iter__(self):
        return iter(self.members)

    def sorted_members(self) -> tuple[int, ...]:
        return tuple(sorted(self.members))


class Hierarchy:
    """Merge tree over a leaf partition.

    Parameters
    ----------
    children : mapping node id -> sequence of child ids.  Ids referenced as
        children but absent from the mapping are implied leaves.
    root : id of the summit node.
    width, height : grid dimensions when the hierarchy is grid backed.
    leaf_labels : (H, W) integer array of per-pixel leaf ids, or None.
    level_index : optional mapping node id -> nonnegative level, strictly
        increasing towards the root.

    Construction is deliberately lenient: malformed trees can be built and
    then diagnosed with :func:`validate`.  All other operations assume a
    valid tree.
    """

    def __init__(self, children: Mapping[int, Sequence[int]], root: int, *,
                 width: int | None = None, height: int | None = None,
                 leaf_labels: np.ndarray | None = None,
                 level_index: Mapping[int, float] | None = None):
        self._children: dict[int, tuple[int, ...]] = {
            int(n): tuple(int(c) for c in ch) for n, ch in children.items()
        }
        ids = set(self._children)
        for ch in self._children.values():
            ids.update(ch)
        ids.add(int(root))
        for n in ids:
            self._children.setdefault(n, ())
        self.root = int(root)
        self.width = width
        self.height = height
        if leaf_labels is not None:
            leaf_labels = np.asarray(leaf_labels)
            if leaf_labels.ndim == 1 and width and height:
                leaf_labels = leaf_labels.reshape(height, width)
            leaf_labels = leaf_labels.astype(np.int64)
            leaf_labels.setflags(write=False)
        self.leaf_labels = leaf_labels
        self.level_index: dict[int, float] | None = None
        if level_index is not None:
            self.level_index = {int(k): float(v) for k, v in level_index.items()}
        # lazy caches
        self._parent: dict[int, int | None] | None = None
        self._postorder: tuple[int, ...] | None = None
        self._size: dict[int, int] | None = None
        self._depth: dict[int, int] | None = None
        self._counts: dict[int, int] | None = None
        self._leafset: dict[int, frozenset[int]] = {}

    # ------------------------------------------------------------------
    # basic structure
    # ------------------------------------------------------------------

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._children))

    def children(self, node: int) -> tuple[int, ...]:
        return self._children[node]

    def is_leaf(self, node: int) -> bool:
        return not self._children[node]

    def leaves(self) -> tuple[int, ...]:
        return tuple(n for n in self.node_ids if self.is_leaf(n))

    @property
    def is_grid_backed(self) -> bool:
        return self.leaf_labels is not None

    def parent(self, node: int) -> int | None:
        if self._parent is None:
            par: dict[int, int | None] = {n: None for n in self._children}
            for n, ch in self._children.items():
                for c in ch:
                    par[c] = n
            self._parent = par
        return self._parent[node]

    def ancestors(self, node: int, include_self: bool = False) -> Iterator[int]:
        if include_self:
            yield node
        p = self.parent(node)
        while p is not None:
            yield p
            p = self.parent(p)

    def is_ancestor(self, anc: int, node: int) -> bool:
        """Ancestor-or-self test."""
        cur: int | None = node
        while cur is not None:
            if cur == anc:
                return True
            cur = self.parent(cur)
        return False

    def depth(self, node: int) -> int:
        if self._depth is None:
            d = {self.root: 0}
            for n in reversed(self.postorder()):
                for c in self._children[n]:
                    d[c] = d[n] + 1
            self._depth = d
        return self._depth[node]

    def lca(self, a: int, b: int) -> int:
        da, db = self.depth(a), self.depth(b)
        while da > db:
            a = self.parent(a); da -= 1
        while db > da:
            b = self.parent(b); db -= 1
        while a != b:
            a, b = self.parent(a), self.parent(b)
        return a

    def postorder(self, summit: int | None = None) -> tuple[int, ...]:
        """Children-before-parent order of the subtree under `summit`."""
        if summit is None or summit == self.root:
            if self._postorder is None:
                self._postorder = self._compute_postorder(self.root)
            return self._postorder
        return self._compute_postorder(summit)

    def _compute_postorder(self, top: int) -> tuple[int, ...]:
        out: list[int] = []
        stack: list[tuple[int, bool]] = [(top, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                out.append(node)
            else:
                stack.append((node, True))
                for c in reversed(self._children[node]):
                    stack.append((c, False))
        return tuple(out)

    def subtree_nodes(self, summit: int) -> tuple[int, ...]:
        return self.postorder(summit)

    def support_size(self, node: int) -> int:
        if self._size is None:
            leaf_area: dict[int, int] = {}
            if self.leaf_labels is not None:
                vals, counts = np.unique(self.leaf_labels, return_counts=True)
                leaf_area = {int(v): int(c) for v, c in zip(vals, counts)}
            size: dict[int, int] = {}
            for n in self.postorder():
                ch = self._children[n]
                if not ch:
                    size[n] = leaf_area.get(n, 1)
                else:
                    size[n] = sum(size[c] for c in ch)
            self._size = size
        return self._size[node]

    def leaf_set(self, node: int) -> frozenset[int]:
        """Leaves under `node` (singleton for a leaf)."""
        got = self._leafset.get(node)
        if got is None:
            acc: dict[int, list[int]] = {}
            for n in self.postorder(node):
                ch = self._children[n]
                if not ch:
                    leaves = [n]
                else:
                    leaves = []
                    for c in ch:
                        leaves.extend(acc.pop(c))
                acc[n] = leaves
                self._leafset.setdefault(n, frozenset(leaves))
            got = self._leafset[node]
        return got

    def level(self, node: int) -> float:
        if self.level_index is None:
            raise ValueError("hierarchy carries no level index")
        return self.level_index[node]

    def node_record(self, node: int) -> NodeRecord:
        return NodeRecord(node, self._children[node], self.parent(node),
                          self.support_size(node))


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------

def validate(h: Hierarchy) -> list[str]:
    """Structural diagnosis of a hierarchy.

    Returns an empty list when every invariant holds, otherwise one message
    per violation (node ids included).  Never raises on malformed input.
    """
    issues: list[str] = []
    ids = set(h._children)

    if h.root not in ids:
        issues.append(f"root {h.root} is not a node")
        return issues

    parents: dict[int, list[int]] = {n: [] for n in ids}
    for n, ch in h._children.items():
        if len(set(ch)) != len(ch):
            issues.append(f"node {n} lists a duplicated child")
        for c in ch:
            parents[c].append(n)

    for n, ps in parents.items():
        if len(ps) > 1:
            issues.append(f"node {n} has multiple parents {sorted(ps)}")
    if parents[h.root]:
        issues.append(f"root {h.root} has a parent")
    orphans = [n for n in ids if not parents[n] and n != h.root]
    for n in sorted(orphans):
        issues.append(f"node {n} is unreachable from the root (extra root)")

    # reachability walk; double visits reveal overlapping children supports
    seen: set[int] = set()
    overlap = False
    stack = [h.root]
    guard = 0
    limit = 4 * len(ids) + 16
    while stack:
        guard += 1
        if guard > limit:
            issues.append("cycle detected while walking from the root")
            break
        n = stack.pop()
        if n in seen:
            overlap = True
            continue
        seen.add(n)
        stack.extend(h._children[n])
    if overlap:
        issues.append("children supports overlap: children do not partition parent")

    for n in sorted(ids & seen):
        ch = h._children[n]
        if len(ch) == 1:
            issues.append(f"node {n} has a single child (unary chain not merged)")

    if h.leaf_labels is not None:
        lab = h.leaf_labels
        if h.height is not None and h.width is not None and lab.shape != (h.height, h.width):
            issues.append(f"label map shape {lab.shape} does not match {h.height}x{h.width}")
        label_vals = set(int(v) for v in np.unique(lab))
        leaf_ids = {n for n in ids if not h._children[n]}
        for v in sorted(label_vals - leaf_ids):
            issues.append(f"label value {v} is not a leaf node")
        for v in sorted(leaf_ids - label_vals):
            issues.append(f"leaf {v} has no pixels in the label map")

    if h.level_index is not None:
        for n in sorted(ids):
            if n not in h.level_index:
                issues.append(f"node {n} missing from level index")
                continue
            if h.level_index[n] < 0:
                issues.append(f"node {n} has negative level")
        if not issues:
            for n, ch in h._children.items():
                for c in ch:
                    if h.level_index[c] >= h.level_index[n]:
                        issues.append(
                            f"level of node {c} not below its parent {n}")
    return issues


# ----------------------------------------------------------------------
# cuts
# ----------------------------------------------------------------------

def make_cut(h: Hierarchy, summit: int, members: Iterable[int]) -> Cut:
    """Build a cut and check its invariants (antichain tiling the summit)."""
    mem = frozenset(int(m) for m in members)
    if not mem:
        raise ValueError("a cut has at least one member")
    total = 0
    for m in mem:
        if not h.is_ancestor(summit, m):
            raise ValueError(f"member {m} lies outside the subtree of {summit}")
        for anc in h.ancestors(m):
            if anc in mem:
                raise ValueError(f"members {m} and {anc} are nested")
            if anc == summit:
                break
        total += h.support_size(m)
    if total != h.support_size(summit):
        raise ValueError(
            f"members cover {total} of {h.support_size(summit)} atoms of node {summit}")
    return Cut(summit, mem)


def is_valid_cut(h: Hierarchy, cut: Cut) -> bool:
    try:
        make_cut(h, cut.summit, cut.members)
    except ValueError:
        return False
    return True


def horizontal_cut(h: Hierarchy, level: float) -> Cut:
    """Cut of maximal nodes whose level index is <= `level`."""
    if h.level_index is None:
        raise ValueError("horizontal cuts need a level index")
    if level < 0 or level > h.level(h.root):
        raise ValueError(f"level {level} outside [0, {h.level(h.root)}]")
    members: list[int] = []
    stack = [h.root]
    while stack:
        n = stack.pop()
        if h.level(n) <= level:
            members.append(n)
        elif h.is_leaf(n):
            raise ValueError(f"leaf {n} sits above level {level}")
        else:
            stack.extend(h.children(n))
    return make_cut(h, h.root, members)


def concat(h: Hierarchy, parts: Sequence[Cut], summit: int) -> Cut:
    """Concatenate disjoint cuts into one cut of a common ancestor."""
    members: set[int] = set()
    for p in parts:
        if members & p.members:
            raise ValueError("cut supports overlap")
        members |= p.members
    return make_cut(h, summit, members)


def count_cuts(h: Hierarchy, summit: int | None = None) -> int:
    """Number of cuts of a node; 1 for a leaf, saturating at CUT_COUNT_CAP."""
    if h._counts is None:
        counts: dict[int, int] = {}
        for n in h.postorder():
            ch = h.children(n)
            if not ch:
                counts[n] = 1
            else:
                prod = 1
                for c in ch:
                    prod *= counts[c]
                    if prod >= CUT_COUNT_CAP:
                        prod = CUT_COUNT_CAP
                        break
                counts[n] = min(1 + prod, CUT_COUNT_CAP)
        h._counts = counts
    return h._counts[summit if summit is not None else h.root]


def _cut_tuples(h: Hierarchy, node: int) -> Iterator[tuple[int, ...]]:
    yield (node,)
    ch = h.children(node)
    if not ch:
        return
    pools = [list(_cut_tuples(h, c)) for c in ch]
    for combo in product(*pools):
        yield tuple(x for part in combo for x in part)


def enumerate_cuts(h: Hierarchy, summit: int | None = None,
                   limit: int = 1_000_000) -> Iterator[Cut]:
    """Stream every cut of `summit` exactly once.

    The single-class cut {summit} comes first, then the concatenations of
    the children's cuts in lexicographic product order.  Refuses upfront
    when the total count exceeds `limit`.
    """
    top = summit if summit is not None else h.root
    n = count_cuts(h, top)
    if n > limit:
        raise CutLimitExceeded(f"node {top} has {n} cuts, limit is {limit}")
    for t in _cut_tuples(h, top):
        yield Cut(top, frozenset(t))


def cut_by_index(h: Hierarchy, node: int, index: int) -> tuple[int, ...]:
    """Unrank: the `index`-th cut of `node` in enumeration order."""
    n = count_cuts(h, node)
    if not 0 <= index < n:
        raise IndexError(f"cut index {index} out of range for node {node}")
    if index == 0:
        return (node,)
    index -= 1
    ch = h.children(node)
    sizes = [count_cuts(h, c) for c in ch]
    digits: list[int] = []
    for s in reversed(sizes):
        digits.append(index % s)
        index //= s
    digits.reverse()
    out: list[int] = []
    for c, d in zip(ch, digits):
        out.extend(cut_by_index(h, c, d))
    return tuple(out)


def restrict(h: Hierarchy, cut: Cut, node: int) -> Cut:
    """Restriction of a cut to the subtree of `node`.

    Defined when the cut meets that subtree, i.e. when no single member
    strictly contains `node`.
    """
    if node in cut.members:
        return Cut(node, frozenset((node,)))
    for m in cut.members:
        if m != node and h.is_ancestor(m, node):
            raise ValueError(
                f"cut does not meet the subtree of {node}: member {m} strictly contains it")
    inside = [m for m in cut.members if h.is_ancestor(node, m)]
    return make_cut(h, node, inside)


def refinement_le(h: Hierarchy, a: Cut, b: Cut) -> bool:
    """Partition refinement order: a <= b iff every member of a lies under
    some member of b."""
    bm = b.members
    for m in a.members:
        if not any(x in bm for x in h.ancestors(m, include_self=True)):
            return False
    return True


def ultrametric_distance(h: Hierarchy, x: int, y: int) -> float:
    """Level of the lowest common ancestor of two leaves (0 iff equal)."""
    if h.level_index is None:
        raise ValueError("ultrametric distance needs a level index")
    for v in (x, y):
        if v not in h._children or not h.is_leaf(v):
            raise ValueError(f"{v} is not a leaf of this hierarchy")
    if x == y:
        return 0.0
    return h.level(h.lca(x, y))


# ----------------------------------------------------------------------
# canonical form and JSON interchange
# ----------------------------------------------------------------------

def merge_unary_chains(children: Mapping[int, Sequence[int]], root: int
                       ) -> tuple[dict[int, tuple[int, ...]], int]:
    """Collapse chains of single-child nodes.

    A class persisting over several levels appears once; the surviving node
    is the lowest of the chain, so its level index keeps the birth level.
    """
    cmap = {int(n): tuple(int(c) for c in ch) for n, ch in children.items()}

    def resolve(n: int, hop_guard: int) -> int:
        while len(cmap.get(n, ())) == 1:
            n = cmap[n][0]
            hop_guard -= 1
            if hop_guard < 0:  # cyclic chain; leave as is, validate() reports it
                break
        return n

    guard = len(cmap) + len(children) + 8
    new_root = resolve(root, guard)
    out: dict[int, tuple[int, ...]] = {}
    stack = [new_root]
    seen: set[int] = set()
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        kids = tuple(resolve(c, guard) for c in cmap.get(n, ()))
        out[n] = kids
        stack.extend(kids)
    return out, new_root


def parse_hierarchy(obj: Mapping, base_dir: str | None = None,
                    canonicalize: bool = True) -> Hierarchy:
    """Build a hierarchy from its JSON object form.

    Fields: `nodes` ([{id, children}], leaves may be omitted), `root`,
    optional `width`/`height`, optional `leaf_labels` (inline row-major array
    or a path to a label image), optional `level_index` (id -> number).
    """
    children = {int(n["id"]): list(n.get("children", ())) for n in obj["nodes"]}
    root = int(obj["root"])
    width = obj.get("width")
    height = obj.get("height")
    labels = obj.get("leaf_labels")
    if isinstance(labels, str):
        from .imaging import load_label_map  # deferred: imaging depends on this module
        path = labels if base_dir is None else os.path.join(base_dir, labels)
        labels = load_label_map(path)
    elif labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    level = obj.get("level_index")
    if level is not None:
        level = {int(k): float(v) for k, v in level.items()}
    if canonicalize:
        children, root = merge_unary_chains(children, root)
        if level is not None:
            level = {n: v for n, v in level.items() if n in children}
    return Hierarchy(children, root, width=width, height=height,
                     leaf_labels=labels, level_index=level)


def hierarchy_to_obj(h: Hierarchy, labels_path: str | None = None) -> dict:
    nodes = [{"id": n, "children": list(h.children(n))}
             for n in h.node_ids if not h.is_leaf(n)]
    leaf_nodes = [{"id": n, "children": []} for n in h.leaves()]
    obj: dict = {"nodes": sorted(nodes + leaf_nodes, key=lambda d: d["id"]),
                 "root": h.root}
    if h.width is not None:
        obj["width"] = h.width
    if h.height is not None:
        obj["height"] = h.height
    if h.leaf_labels is not None:
        if labels_path is not None:
            obj["leaf_labels"] = labels_path
        else:
            obj["leaf_labels"] = [int(v) for v in h.leaf_labels.ravel()]
            obj.setdefault("width", int(h.leaf_labels.shape[1]))
            obj.setdefault("height", int(h.leaf_labels.shape[0]))
    if h.level_index is not None:
        obj["level_index"] = {str(k): v for k, v in sorted(h.level_index.items())}
    return obj


def load_hierarchy(path: str, canonicalize: bool = True) -> Hierarchy:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return parse_hierarchy(obj, base_dir=os.path.dirname(os.path.abspath(path)),
                           canonicalize=canonicalize)


def save_hierarchy(h: Hierarchy, path: str, labels_path: str | None = None) -> None:
    obj = hierarchy_to_obj(h, labels_path=labels_path)
    if labels_path is not None and h.leaf_labels is not None:
        from .imaging import save_label_map
        save_label_map(h.leaf_labels,
                       os.path.join(os.path.dirname(os.path.abspath(path)), labels_path))
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
