"""Image I/O, region statistics, hierarchy builders and rendering.

Everything here uses 4-connectivity, and the unit of boundary measurement
is the pixel edge.  Edges lying on the image border count for half a unit,
uniformly across the code base, so that boundary lengths are additive over
disjoint unions of boundary-edge sets and exact in halves.

Region statistics are accumulated in integer arithmetic (areas, sums, sums
of squares, per-channel extrema) and merged bottom-up through the tree, so
per-class means and residuals involve a single final division.

Images travel as binary netpbm: P5 (grey) and P6 (RGB) with maxval 255,
plus P5 with maxval 65535 for label maps (big-endian samples).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Iterable, Sequence

import numpy as np

from .hierarchy import Cut, Hierarchy


# ----------------------------------------------------------------------
# planes and netpbm I/O
# ----------------------------------------------------------------------

@dataclass
class ImagePlane:
    """Row-major raster, one (grey) or three (RGB) integer channels."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 2:
            pass
        elif d.ndim == 3 and d.shape[2] == 3:
            pass
        else:
            raise ValueError(f"plane shape {d.shape} is neither (H,W) nor (H,W,3)")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("plane dimensions must be at least 1x1")
        if not np.issubdtype(d.dtype, np.integer):
            raise ValueError("plane samples must be integers")
        self.data = d

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


def _read_netpbm(path: str) -> tuple[bytes, int, int, int, bytes]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 2 or raw[:1] != b"P":
        raise ValueError(f"{path}: not a netpbm file")
    magic = raw[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise ValueError(f"{path}: malformed header token {raw[start:pos]!r}") from None
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    return magic, width, height, maxval, raw[pos:]


def load_image(path: str) -> ImagePlane:
    """Read a binary P5/P6 image with maxval 255."""
    magic, w, h, maxval, payload = _read_netpbm(path)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported magic {magic!r}")
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    if len(payload) < need:
        raise ValueError(f"{path}: truncated payload ({len(payload)} < {need})")
    arr = np.frombuffer(payload[:need], dtype=np.uint8)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return ImagePlane(arr.reshape(shape).copy())


def save_image(plane: ImagePlane, path: str) -> None:
    """Write P5 (grey) or P6 (RGB); 16-bit single-channel planes go to
    P5 with maxval 65535, big-endian."""
    d = plane.data
    if d.ndim == 2 and d.dtype == np.uint8:
        header, body = b"P5", d.tobytes()
        maxval = 255
    elif d.ndim == 2 and d.dtype == np.uint16:
        header, body = b"P5", d.astype(">u2").tobytes()
        maxval = 65535
    elif d.ndim == 3 and d.dtype == np.uint8:
        header, body = b"P6", d.tobytes()
        maxval = 255
    else:
        raise ValueError(f"cannot encode dtype {d.dtype} with {plane.channels} channels")
    with open(path, "wb") as f:
        f.write(header + b"\n" +
                f"{plane.width} {plane.height}\n{maxval}\n".encode("ascii") + body)


def load_label_map(path: str) -> np.ndarray:
    """Read a P5 label map (maxval up to 65535) as an int64 array."""
    magic, w, h, maxval, payload = _read_netpbm(path)
    if magic != b"P5":
        raise ValueError(f"{path}: label maps are P5, got {magic!r}")
    if maxval > 65535:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    wide = maxval > 255
    need = w * h * (2 if wide else 1)
    if len(payload) < need:
        raise ValueError(f"{path}: truncated payload")
    dt = ">u2" if wide else np.uint8
    arr = np.frombuffer(payload[:need], dtype=dt).astype(np.int64)
    return arr.reshape(h, w)


def save_label_map(labels: np.ndarray, path: str) -> None:
    lab = np.asarray(labels)
    if lab.min() < 0 or lab.max() > 65535:
        raise ValueError("label values must fit in 16 bits")
    plane = ImagePlane(lab.astype(np.uint16))
    save_image(plane, path)


# ----------------------------------------------------------------------
# boundary measurement
# ----------------------------------------------------------------------

def boundary_length(labels: np.ndarray, region_id: int) -> float:
    """Unit edges between the region and anything else, border edges half."""
    lab = np.asarray(labels)
    mask = lab == region_id
    if not mask.any():
        raise ValueError(f"unknown region id {region_id}")
    inter = int(np.count_nonzero(mask[:, :-1] != mask[:, 1:])) + \
        int(np.count_nonzero(mask[:-1, :] != mask[1:, :]))
    border = int(mask[0, :].sum()) + int(mask[-1, :].sum()) + \
        int(mask[:, 0].sum()) + int(mask[:, -1].sum())
    return inter + 0.5 * border


def boundary_loops(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """Closed boundary polygons of a pixel set, as unit direction steps.

    Each loop is a list of (dx, dy) unit steps over lattice vertices, region
    kept on the left.  At a checkerboard pinch the walk turns towards the
    region, which keeps every loop simple.
    """
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(x0, y0, x1, y1):
        edges.setdefault((x0, y0), []).append((x1, y1))

    rs, cs = np.nonzero(m)
    for r, c in zip(rs.tolist(), cs.tolist()):
        if not padded[r, c + 1]:       # up neighbour out: top edge, +x
            add(c, r, c + 1, r)
        if not padded[r + 2, c + 1]:   # down: bottom edge, -x
            add(c + 1, r + 1, c, r + 1)
        if not padded[r + 1, c]:       # left: left edge, -y
            add(c, r + 1, c, r)
        if not padded[r + 1, c + 2]:   # right: right edge, +y
            add(c + 1, r, c + 1, r + 1)

    loops: list[list[tuple[int, int]]] = []
    while edges:
        start = min(edges)
        v = start
        nxt = edges[v].pop()
        if not edges[v]:
            del edges[v]
        din = (nxt[0] - v[0], nxt[1] - v[1])
        steps = [din]
        v = nxt
        while v != start:
            outs = edges[v]
            if len(outs) == 1:
                nxt = outs.pop()
            else:
                # pinch: prefer the left turn, hugging the region
                pick = None
                for cand in outs:
                    d = (cand[0] - v[0], cand[1] - v[1])
                    if din[0] * d[1] - din[1] * d[0] > 0:
                        pick = cand
                        break
                if pick is None:
                    pick = outs[0]
                outs.remove(pick)
                nxt = pick
            if not outs:
                del edges[v]
            din = (nxt[0] - v[0], nxt[1] - v[1])
            steps.append(din)
            v = nxt
        loops.append(steps)
    return loops


def region_concavity(mask: np.ndarray) -> float | None:
    """Concavity index of a pixel set: 1 for digitally convex shapes,
    growing by a quarter per concave right-angle turn of the boundary.

    Returns None when the set is not 4-connected or not simply connected.
    """
    m = np.asarray(mask, dtype=bool)
    total = int(m.sum())
    if total == 0:
        raise ValueError("empty region")
    rs, cs = np.nonzero(m)
    seen = np.zeros_like(m)
    q = deque([(int(rs[0]), int(cs[0]))])
    seen[rs[0], cs[0]] = True
    reached = 0
    while q:
        r, c = q.popleft()
        reached += 1
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < m.shape[0] and 0 <= cc < m.shape[1] \
                    and m[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                q.append((rr, cc))
    if reached != total:
        return None
    loops = boundary_loops(m)
    if len(loops) != 1:
        return None
    steps = loops[0]
    turns = []
    for a, b in zip(steps, steps[1:] + steps[:1]):
        turns.append(a[0] * b[1] - a[1] * b[0])
    net = sum(turns)
    if abs(net) != 4:
        raise RuntimeError(f"boundary walk closed with net turning {net}")
    sign = 1 if net > 0 else -1
    concave = sum(1 for t in turns if t == -sign)
    return 1.0 + concave / 4.0


# ----------------------------------------------------------------------
# region statistics
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RegionStats:
    area: int
    sums: tuple[int, ...]
    sumsqs: tuple[int, ...]
    boundary: float
    bbox: tuple[int, int, int, int]  # minr, minc, maxr, maxc
    mins: tuple[int, ...]
    maxs: tuple[int, ...]

    def mean(self) -> tuple[float, ...]:
        return tuple(s / self.area for s in self.sums)

    def fit_residual(self) -> float:
        """Sum of squared deviations from the per-channel mean."""
        return sum(q - s * s / self.area for s, q in zip(self.sums, self.sumsqs))

    def value_range(self) -> int:
        return max(hi - lo for lo, hi in zip(self.mins, self.maxs))

    @staticmethod
    def merge(parts: Sequence["RegionStats"], shared_edges: int = 0) -> "RegionStats":
        area = sum(p.area for p in parts)
        sums = tuple(sum(t) for t in zip(*(p.sums for p in parts)))
        sumsqs = tuple(sum(t) for t in zip(*(p.sumsqs for p in parts)))
        boundary = sum(p.boundary for p in parts) - 2 * shared_edges
        bbox = (min(p.bbox[0] for p in parts), min(p.bbox[1] for p in parts),
                max(p.bbox[2] for p in parts), max(p.bbox[3] for p in parts))
        mins = tuple(min(t) for t in zip(*(p.mins for p in parts)))
        maxs = tuple(max(t) for t in zip(*(p.maxs for p in parts)))
        return RegionStats(area, sums, sumsqs, boundary, bbox, mins, maxs)


class StatsTable:
    """Per-node region statistics of a grid-backed hierarchy."""

    def __init__(self, per_node: dict[int, RegionStats], channels: int):
        self.per_node = per_node
        self.channels = channels

    def __getitem__(self, node: int) -> RegionStats:
        return self.per_node[node]

    def __contains__(self, node: int) -> bool:
        return node in self.per_node

    def fit_cost(self, node: int) -> float:
        return self.per_node[node].fit_residual()

    def boundary(self, node: int) -> float:
        return self.per_node[node].boundary


def compute_stats(h: Hierarchy, plane: ImagePlane) -> StatsTable:
    """One bottom-up pass of exact region statistics.

    Leaf aggregates come from the label map; parents merge their children,
    with the boundary length corrected by the edges shared between
    children (accumulated per lowest common ancestor, so the whole pass is
    linear in nodes plus adjacent-leaf pairs).
    """
    if h.leaf_labels is None:
        raise ValueError("statistics need a grid-backed hierarchy")
    labels = h.leaf_labels
    d = plane.data
    if d.shape[:2] != labels.shape:
        raise ValueError(f"image {d.shape[:2]} does not match label map {labels.shape}")
    chans = d.reshape(*labels.shape, -1)
    nch = chans.shape[2]

    vals, inv = np.unique(labels, return_inverse=True)
    inv = inv.reshape(labels.shape)
    L = len(vals)
    flat = inv.ravel()

    area = np.bincount(flat, minlength=L).astype(np.int64)
    sums = np.empty((L, nch), dtype=np.int64)
    sumsqs = np.empty((L, nch), dtype=np.int64)
    mins = np.empty((L, nch), dtype=np.int64)
    maxs = np.empty((L, nch), dtype=np.int64)
    for k in range(nch):
        ch = chans[:, :, k].astype(np.int64).ravel()
        sums[:, k] = np.bincount(flat, weights=ch, minlength=L).astype(np.int64)
        sumsqs[:, k] = np.bincount(flat, weights=ch * ch, minlength=L).astype(np.int64)
        lo = np.full(L, np.iinfo(np.int64).max)
        hi = np.full(L, np.iinfo(np.int64).min)
        np.minimum.at(lo, flat, ch)
        np.maximum.at(hi, flat, ch)
        mins[:, k], maxs[:, k] = lo, hi

    hgrid, wgrid = labels.shape
    rows = np.repeat(np.arange(hgrid), wgrid)
    cols = np.tile(np.arange(wgrid), hgrid)
    minr = np.full(L, hgrid); np.minimum.at(minr, flat, rows)
    minc = np.full(L, wgrid); np.minimum.at(minc, flat, cols)
    maxr = np.full(L, -1); np.maximum.at(maxr, flat, rows)
    maxc = np.full(L, -1); np.maximum.at(maxc, flat, cols)

    border = np.zeros(L, dtype=np.int64)
    np.add.at(border, inv[0, :], 1)
    np.add.at(border, inv[-1, :], 1)
    np.add.at(border, inv[:, 0], 1)
    np.add.at(border, inv[:, -1], 1)

    edge_cnt = np.zeros(L, dtype=np.int64)
    pair_codes: list[np.ndarray] = []
    for a, b in ((inv[:, :-1], inv[:, 1:]), (inv[:-1, :], inv[1:, :])):
        diff = a != b
        pa, pb = a[diff], b[diff]
        np.add.at(edge_cnt, pa, 1)
        np.add.at(edge_cnt, pb, 1)
        lo = np.minimum(pa, pb).astype(np.int64)
        hi = np.maximum(pa, pb).astype(np.int64)
        pair_codes.append(lo * L + hi)

    lca_bucket: dict[int, int] = {}
    if pair_codes:
        codes = np.concatenate(pair_codes)
        if codes.size:
            uniq, counts = np.unique(codes, return_counts=True)
            for code, cnt in zip(uniq.tolist(), counts.tolist()):
                a_leaf = int(vals[code // L])
                b_leaf = int(vals[code % L])
                anc = h.lca(a_leaf, b_leaf)
                lca_bucket[anc] = lca_bucket.get(anc, 0) + int(cnt)

    per_node: dict[int, RegionStats] = {}
    leaf_pos = {int(v): i for i, v in enumerate(vals)}
    for n in h.postorder():
        ch = h.children(n)
        if not ch:
            i = leaf_pos[n]
            per_node[n] = RegionStats(
                int(area[i]), tuple(sums[i]), tuple(sumsqs[i]),
                float(edge_cnt[i]) + 0.5 * float(border[i]),
                (int(minr[i]), int(minc[i]), int(maxr[i]), int(maxc[i])),
                tuple(mins[i]), tuple(maxs[i]))
        else:
            per_node[n] = RegionStats.merge(
                [per_node[c] for c in ch], shared_edges=lca_bucket.get(n, 0))
    return StatsTable(per_node, nch)


# ----------------------------------------------------------------------
# hierarchy builders
# ----------------------------------------------------------------------

def _merge_cost(area_a, sum_a, area_b, sum_b) -> float:
    w = area_a * area_b / (area_a + area_b)
    d = 0.0
    for sa, sb in zip(sum_a, sum_b):
        diff = sa / area_a - sb / area_b
        d += diff * diff
    return w * d


class _GreedyMerger:
    """Greedy pairwise merging of adjacent regions, lowest cost first,
    ties by lowest (id, id) pair.  Region ids grow as merges happen."""

    def __init__(self, area, sums, adj):
        self.area = area
        self.sums = sums
        self.adj = adj
        self.next_id = max(area) + 1
        self.heap: list[tuple[float, int, int]] = []
        for a, neigh in adj.items():
            for b in neigh:
                if a < b:
                    self._push(a, b)

    def _push(self, a: int, b: int):
        if a > b:
            a, b = b, a
        heappush(self.heap,
                 (_merge_cost(self.area[a], self.sums[a], self.area[b], self.sums[b]),
                  a, b))

    def merge_once(self) -> tuple[int, int, int] | None:
        while self.heap:
            _, a, b = heappop(self.heap)
            if a in self.adj and b in self.adj and b in self.adj[a]:
                new = self.next_id
                self.next_id += 1
                self.area[new] = self.area[a] + self.area[b]
                self.sums[new] = tuple(x + y for x, y in zip(self.sums[a], self.sums[b]))
                neigh = (self.adj[a] | self.adj[b]) - {a, b}
                for x in neigh:
                    self.adj[x].discard(a)
                    self.adj[x].discard(b)
                    self.adj[x].add(new)
                self.adj[new] = neigh
                del self.adj[a], self.adj[b], self.area[a], self.area[b]
                del self.sums[a], self.sums[b]
                for x in sorted(neigh):
                    self._push(new, x)
                return new, a, b
        return None


def _grid_adjacency(labels: np.ndarray) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {int(v): set() for v in np.unique(labels)}
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        for x, y in zip(a[diff].ravel().tolist(), b[diff].ravel().tolist()):
            adj[int(x)].add(int(y))
            adj[int(y)].add(int(x))
    return adj


def build_bpt(image: ImagePlane, target_leaves: int) -> Hierarchy:
    """Binary partition tree by greedy merging of 4-adjacent regions.

    The merge cost is the squared mean-color distance weighted by the
    harmonic mean of the areas.  An optional pre-segmentation first merges
    pixels down to `target_leaves` superpixels, which become the leaves;
    the same criterion then drives the binary merges up to the root.
    Deterministic: cost ties pick the lowest region-id pair.
    """
    if target_leaves < 1:
        raise ValueError("target_leaves must be at least 1")
    hgrid, wgrid = image.height, image.width
    npix = hgrid * wgrid
    chans = image.data.reshape(hgrid, wgrid, -1)

    pixel_ids = np.arange(npix).reshape(hgrid, wgrid)
    if target_leaves < npix:
        area = {i: 1 for i in range(npix)}
        sums = {i: tuple(int(v) for v in chans.reshape(npix, -1)[i])
                for i in range(npix)}
        merger = _GreedyMerger(area, sums, _grid_adjacency(pixel_ids))
        parent_of: dict[int, int] = {}
        regions = npix
        while regions > target_leaves:
            got = merger.merge_once()
            if got is None:
                break
            new, a, b = got
            parent_of[a] = new
            parent_of[b] = new
            regions -= 1

        def find(i: int) -> int:
            while i in parent_of:
                i = parent_of[i]
            return i

        flat = np.fromiter((find(i) for i in range(npix)), dtype=np.int64, count=npix)
        _, dense = np.unique(flat, return_inverse=True)
        order = np.full(dense.max() + 1, -1, dtype=np.int64)
        nxt = 0
        for v in dense.tolist():  # leaf ids in raster order of first pixel
            if order[v] < 0:
                order[v] = nxt
                nxt += 1
        labels = order[dense].reshape(hgrid, wgrid)
    else:
        labels = pixel_ids

    leaf_count = int(labels.max()) + 1
    flat_lab = labels.ravel()
    area = {i: 0 for i in range(leaf_count)}
    acc = np.zeros((leaf_count, chans.shape[2]), dtype=np.int64)
    for k in range(chans.shape[2]):
        acc[:, k] = np.bincount(flat_lab, weights=chans[:, :, k].ravel().astype(np.int64),
                                minlength=leaf_count).astype(np.int64)
    counts = np.bincount(flat_lab, minlength=leaf_count)
    for i in range(leaf_count):
        area[i] = int(counts[i])
    sums = {i: tuple(int(v) for v in acc[i]) for i in range(leaf_count)}

    children: dict[int, list[int]] = {i: [] for i in range(leaf_count)}
    level = {i: 0.0 for i in range(leaf_count)}
    if leaf_count == 1:
        return Hierarchy({0: ()}, 0, width=wgrid, height=hgrid,
                         leaf_labels=labels, level_index=level)

    merger = _GreedyMerger(area, sums, _grid_adjacency(labels))
    root = 0
    step = 0
    while True:
        got = merger.merge_once()
        if got is None:
            break
        new, a, b = got
        step += 1
        children[new] = [a, b]
        level[new] = float(step)
        root = new
    return Hierarchy(children, root, width=wgrid, height=hgrid,
                     leaf_labels=labels, level_index=level)


def build_alpha_tree(image: ImagePlane, alphas: Sequence[float]) -> Hierarchy:
    """Stack of flat-zone partitions for an increasing grid of tolerances.

    Level k classes are the connected components in which 4-adjacent pixels
    differ by at most alphas[k] on every channel.  Classes persisting across
    levels appear once, with the level index of their first apparition.  A
    summit covering the whole grid is appended when the last tolerance
    still leaves several components.
    """
    alphas = [float(a) for a in alphas]
    if not alphas or any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha grid must be non-empty and strictly increasing")
    hgrid, wgrid = image.height, image.width
    chans = image.data.reshape(hgrid, wgrid, -1).astype(np.int64)

    dif_h = np.abs(chans[:, :-1, :] - chans[:, 1:, :]).max(axis=2)
    dif_v = np.abs(chans[:-1, :, :] - chans[1:, :, :]).max(axis=2)
    pix = np.arange(hgrid * wgrid).reshape(hgrid, wgrid)
    edges = []
    for dif, a, b in ((dif_h, pix[:, :-1], pix[:, 1:]),
                      (dif_v, pix[:-1, :], pix[1:, :])):
        edges.append(np.stack([dif.ravel(), a.ravel(), b.ravel()], axis=1))
    all_edges = np.concatenate(edges)

    parent = list(range(hgrid * wgrid))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def zones_at(alpha: float) -> np.ndarray:
        for wgt, a, b in all_edges[all_edges[:, 0] <= alpha].tolist():
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        roots = np.fromiter((find(i) for i in range(hgrid * wgrid)),
                            dtype=np.int64, count=hgrid * wgrid)
        _, dense = np.unique(roots, return_inverse=True)
        # renumber by raster order of first pixel
        order = np.full(int(dense.max()) + 1, -1, dtype=np.int64)
        nxt = 0
        for v in dense.tolist():
            if order[v] < 0:
                order[v] = nxt
                nxt += 1
        return order[dense].reshape(hgrid, wgrid)

    level_zone = [zones_at(a) for a in alphas]

    labels = level_zone[0]
    nleaves = int(labels.max()) + 1
    children: dict[int, list[int]] = {i: [] for i in range(nleaves)}
    level_index = {i: alphas[0] for i in range(nleaves)}
    node_of_zone = np.arange(nleaves)  # current node per current-level zone
    next_id = nleaves
    prev = labels
    for k in range(1, len(alphas)):
        cur = level_zone[k]
        nzones = int(cur.max()) + 1
        groups: dict[int, set[int]] = {z: set() for z in range(nzones)}
        for a, b in zip(cur.ravel().tolist(), prev.ravel().tolist()):
            groups[a].add(int(node_of_zone[b]))
        new_node_of_zone = np.empty(nzones, dtype=np.int64)
        for z in range(nzones):
            members = sorted(groups[z])
            if len(members) == 1:
                new_node_of_zone[z] = members[0]
            else:
                children[next_id] = members
                level_index[next_id] = alphas[k]
                new_node_of_zone[z] = next_id
                next_id += 1
        node_of_zone = new_node_of_zone
        prev = cur

    tops = sorted(set(int(v) for v in node_of_zone))
    if len(tops) > 1:
        children[next_id] = tops
        level_index[next_id] = alphas[-1] + 1.0
        root = next_id
    else:
        root = tops[0]
    return Hierarchy(children, root, width=wgrid, height=hgrid,
                     leaf_labels=labels, level_index=level_index)


# ----------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------

def _leaf_member_index(h: Hierarchy, cut: Cut) -> dict[int, int]:
    idx: dict[int, int] = {}
    for i, m in enumerate(cut.sorted_members()):
        for leaf in h.leaf_set(m):
            idx[leaf] = i
    return idx


def render_cut(h: Hierarchy, cut: Cut, mode: str = "labels",
               image: ImagePlane | None = None) -> ImagePlane:
    """Rasterize a cut: `labels` gives a 16-bit class-index map, `mean`
    paints every class with its mean color (rounded half up)."""
    if h.leaf_labels is None:
        raise ValueError("rendering needs a grid-backed hierarchy")
    members = cut.sorted_members()
    leaf_idx = _leaf_member_index(h, cut)
    vals, inv = np.unique(h.leaf_labels, return_inverse=True)
    lut = np.array([leaf_idx[int(v)] for v in vals], dtype=np.int64)
    class_map = lut[inv].reshape(h.leaf_labels.shape)

    if mode == "labels":
        if len(members) > 65535:
            raise ValueError(f"{len(members)} classes exceed 16-bit labels")
        return ImagePlane(class_map.astype(np.uint16),
                          meta={"classes": len(members)})
    if mode != "mean":
        raise ValueError(f"unknown render mode {mode!r}")
    if image is None:
        raise ValueError("mean rendering needs the source image")
    chans = image.data.reshape(*h.leaf_labels.shape, -1)
    flat = class_map.ravel()
    counts = np.bincount(flat, minlength=len(members)).astype(np.float64)
    out = np.empty_like(chans, dtype=np.uint8)
    for k in range(chans.shape[2]):
        s = np.bincount(flat, weights=chans[:, :, k].ravel(), minlength=len(members))
        mean = np.floor(s / counts + 0.5)
        out[:, :, k] = mean[flat].reshape(h.leaf_labels.shape).astype(np.uint8)
    if image.channels == 1:
        return ImagePlane(out[:, :, 0])
    return ImagePlane(out)


def render_saliency(weights: dict[tuple[int, int], float],
                    labels: np.ndarray) -> ImagePlane:
    """Frontier weights on a doubled grid of size (2H+1) x (2W+1).

    Pixel centers sit at odd coordinate pairs; the edge between two
    4-adjacent pixels is rasterized between them.  Finite weights scale
    affinely so the largest maps to 255; unmerged frontiers saturate at 255.
    """
    hgrid, wgrid = labels.shape
    finite = [w for w in weights.values() if np.isfinite(w)]
    top = max(finite) if finite else 0.0
    scale = 255.0 / top if top > 0 else 0.0

    def shade(a: int, b: int) -> int:
        w = weights[(a, b) if a < b else (b, a)]
        if not np.isfinite(w):
            return 255
        return int(round(w * scale))

    out = np.zeros((2 * hgrid + 1, 2 * wgrid + 1), dtype=np.uint8)
    for r in range(hgrid):
        for c in range(wgrid - 1):
            a, b = int(labels[r, c]), int(labels[r, c + 1])
            if a != b:
                out[2 * r + 1, 2 * c + 2] = shade(a, b)
    for r in range(hgrid - 1):
        for c in range(wgrid):
            a, b = int(labels[r, c]), int(labels[r + 1, c])
            if a != b:
                out[2 * r + 2, 2 * c + 1] = shade(a, b)
    # close contours at lattice corners: each takes the max of its edge cells
    hh, ww = out.shape
    for r in range(0, hh, 2):
        for c in range(0, ww, 2):
            best = 0
            if r > 0:
                best = max(best, out[r - 1, c])
            if r + 1 < hh:
                best = max(best, out[r + 1, c])
            if c > 0:
                best = max(best, out[r, c - 1])
            if c + 1 < ww:
                best = max(best, out[r, c + 1])
            out[r, c] = best
    return ImagePlane(out)


# ----------------------------------------------------------------------
# color decomposition
# ----------------------------------------------------------------------

GREY_AXIS_MAX = 85.0 * np.sqrt(6.0)  # largest chroma module over the RGB cube


def luminance(image: ImagePlane) -> np.ndarray:
    """Per-pixel (r+g+b)/3 as float64."""
    if image.channels == 1:
        return image.data.astype(np.float64)
    return image.data.astype(np.float64).sum(axis=2) / 3.0


def luminance_sum_plane(image: ImagePlane) -> ImagePlane:
    """Integer plane r+g+b (three times the luminance), for exact stats."""
    if image.channels == 1:
        return ImagePlane(image.data.astype(np.int64) * 3,
                          meta={"value_scale": 3.0})
    return ImagePlane(image.data.astype(np.int64).sum(axis=2),
                      meta={"value_scale": 3.0})


def chrominance_module(image: ImagePlane) -> ImagePlane:
    """Module of the projection onto the plane orthogonal to the grey axis.

    The chroma vector is the color minus its orthogonal projection on
    (1,1,1); its module is quantized to 8 bits with the scale factor
    (units per count) stored under meta["chroma_units_per_count"].
    """
    if image.channels != 3:
        raise ValueError("chrominance needs an RGB image")
    rgb = image.data.astype(np.float64)
    mean = rgb.mean(axis=2, keepdims=True)
    chroma = rgb - mean
    mag = np.sqrt((chroma * chroma).sum(axis=2))
    counts = np.round(mag * 255.0 / GREY_AXIS_MAX).astype(np.uint8)
    return ImagePlane(counts, meta={"chroma_units_per_count": GREY_AXIS_MAX / 255.0})
