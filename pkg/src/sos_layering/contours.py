"""Signed contours on the dual lattice, cylinders and field <-> cylinder maps.

Coordinates are doubled so everything stays integral: primal cell (i, j)
sits at (2i, 2j), dual vertices have two odd coordinates, and a dual edge
joins two dual vertices at distance 2.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

Point = tuple[int, int]
Edge = tuple[Point, Point]
Cell = tuple[int, int]

R, U, L, D = (2, 0), (0, 2), (-2, 0), (0, -2)
DIRECTIONS = (R, U, L, D)
# pairs lying on the same side of the slope-one diagonal through a vertex
_LINKED_PARTNER = {R: D, D: R, U: L, L: U}


class ContourError(ValueError):
    pass


def linked(d1: Point, d2: Point) -> bool:
    return _LINKED_PARTNER[d1] == d2


def make_edge(p: Point, q: Point) -> Edge:
    if abs(p[0] - q[0]) + abs(p[1] - q[1]) != 2 or p[0] % 2 == 0 or p[1] % 2 == 0:
        raise ContourError(f"not a dual edge: {p}-{q}")
    return (p, q) if p <= q else (q, p)


def _edge(p: Point, q: Point) -> Edge:
    # unchecked make_edge for endpoints already known to be adjacent dual vertices
    return (p, q) if p <= q else (q, p)


def edge_cells(e: Edge) -> tuple[Cell, Cell]:
    """The two primal cells separated by a dual edge (primal coordinates)."""
    (x0, y0), (x1, y1) = e
    if y0 == y1:
        cx = (x0 + x1) // 4
        return (cx, (y0 - 1) // 2), (cx, (y0 + 1) // 2)
    cy = (y0 + y1) // 4
    return ((x0 - 1) // 2, cy), ((x0 + 1) // 2, cy)


def corner_cells(v: Point) -> tuple[Cell, ...]:
    x, y = v
    return tuple(((x + sx) // 2, (y + sy) // 2) for sx in (-1, 1) for sy in (-1, 1))


def _adjacency(edges: Sequence[Edge]) -> dict[Point, list[Point]]:
    nbrs: dict[Point, list[Point]] = {}
    for p, q in edges:
        nbrs.setdefault(p, []).append(q)
        nbrs.setdefault(q, []).append(p)
    for v, ns in nbrs.items():
        if len(ns) not in (2, 4):
            raise ContourError(f"dual vertex {v} has degree {len(ns)}")
    return nbrs


def split_trails(edge_set: Iterable[Edge]) -> list[list[Point]]:
    """Decompose a closed edge set into trails using the linked rule.

    Each trail is returned as its closed vertex sequence (first vertex not
    repeated), starting at the smallest edge and leaving its smaller end.
    """
    edges = sorted(set(edge_set))
    nbrs = _adjacency(edges)
    seen: set[Edge] = set()
    trails = []
    for e in edges:
        if e in seen:
            continue
        start, nxt = e
        verts = [start]
        cur, w = start, nxt
        while True:
            seen.add((cur, w) if cur <= w else (w, cur))
            ns = nbrs[w]
            if len(ns) == 2:
                out = ns[1] if ns[0] == cur else ns[0]
            else:
                dx, dy = _LINKED_PARTNER[cur[0] - w[0], cur[1] - w[1]]
                out = (w[0] + dx, w[1] + dy)
            if w == start and out == nxt:
                break
            verts.append(w)
            cur, w = w, out
        trails.append(verts)
    return trails


class Contour:
    """A signed closed trail of dual edges.

    Equality and hashing use the edge set plus the sign; the stored trail is
    the canonical traversal, so two equal contours also print identically.
    """

    __slots__ = ("trail", "sign", "edge_set", "__dict__")

    def __init__(self, trail: Sequence[Point], sign: int, _checked: bool = True):
        if sign not in (1, -1):
            raise ContourError("sign must be +1 or -1")
        self.trail = t = tuple(trail)
        self.sign = sign
        mk = make_edge if _checked else _edge
        self.edge_set = frozenset(mk(t[i - 1], t[i]) for i in range(len(t)))

    @classmethod
    def from_edges(cls, edges: Iterable[Edge], sign: int) -> "Contour":
        edges = [make_edge(*e) for e in edges]
        if len(set(edges)) != len(edges):
            raise ContourError("repeated edge")
        if not edges:
            raise ContourError("empty contour")
        trails = split_trails(edges)
        if len(trails) != 1:
            raise ContourError(f"edge set splits into {len(trails)} trails")
        return cls(trails[0], sign)

    @classmethod
    def from_sequence(cls, edges: Sequence[Edge], sign: int) -> "Contour":
        """Build from an ordered cyclic edge list, checking the sequence rules."""
        edges = [make_edge(*e) for e in edges]
        n = len(edges)
        if n < 4:
            raise ContourError("a contour has at least four edges")
        for i in range(n):
            if not set(edges[i - 1]) & set(edges[i]):
                raise ContourError("consecutive edges do not share an endpoint")
        return cls.from_edges(edges, sign)

    def __eq__(self, other):
        return isinstance(other, Contour) and self.sign == other.sign and self.edge_set == other.edge_set

    def __hash__(self):
        return hash((self.edge_set, self.sign))

    def __lt__(self, other):
        return self.key < other.key

    def __repr__(self):
        return f"Contour({'+' if self.sign > 0 else '-'}, len={self.length}, {self.trail[:4]}...)"

    @cached_property
    def key(self):
        return (self.length, tuple(sorted(self.edge_set)), -self.sign)

    @property
    def length(self) -> int:
        return len(self.trail)

    @cached_property
    def edges(self) -> tuple[Edge, ...]:
        t = self.trail
        return tuple(_edge(t[i], t[(i + 1) % len(t)]) for i in range(len(t)))

    @cached_property
    def bbox(self) -> tuple[int, int, int, int]:
        xs = [x for x, _ in self.trail]
        ys = [y for _, y in self.trail]
        return min(xs), max(xs), min(ys), max(ys)

    @cached_property
    def vertices(self) -> frozenset[Point]:
        return frozenset(self.trail)

    @cached_property
    def interior(self) -> frozenset[Cell]:
        rows: dict[int, list[int]] = {}
        for (x0, y0), (x1, y1) in self.edge_set:
            if x0 == x1:
                rows.setdefault((y0 + 1) // 2, []).append(x0)
        cells = []
        for j, xs in rows.items():
            xs.sort()
            for a, b in zip(xs[::2], xs[1::2]):
                cells.extend((i, j) for i in range((a + 1) // 2, (b + 1) // 2))
        return frozenset(cells)

    @cached_property
    def _delta(self) -> frozenset[Cell]:
        cells = set()
        t = self.trail
        n = len(t)
        for i in range(n):
            (x, y), (ax, ay), (bx, by) = t[i], t[i - 1], t[(i + 1) % n]
            # the two cells beside edge t[i] -> t[i+1]
            if y == by:
                cx = (x + bx) // 4
                cells.add((cx, (y - 1) // 2))
                cells.add((cx, (y + 1) // 2))
            else:
                cy = (y + by) // 4
                cells.add(((x - 1) // 2, cy))
                cells.add(((x + 1) // 2, cy))
            if _LINKED_PARTNER[ax - x, ay - y] != (bx - x, by - y):
                i0, j0 = (x - 1) // 2, (y - 1) // 2
                cells.update(((i0, j0), (i0 + 1, j0), (i0, j0 + 1), (i0 + 1, j0 + 1)))
        return frozenset(cells)

    @cached_property
    def inner_nbhd(self) -> frozenset[Cell]:
        return self._delta & self.interior

    @cached_property
    def outer_nbhd(self) -> frozenset[Cell]:
        return self._delta - self.interior

    @cached_property
    def diameter(self) -> float:
        pts = np.array(sorted(self.vertices), dtype=float) / 2.0
        d = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def translate(self, dx: int, dy: int) -> "Contour":
        """Shift by (dx, dy) primal units, carrying cached geometry along."""
        tx, ty = 2 * dx, 2 * dy
        c = Contour(tuple((x + tx, y + ty) for x, y in self.trail), self.sign)
        for name in ("interior", "inner_nbhd", "outer_nbhd"):
            if name in self.__dict__:
                c.__dict__[name] = frozenset((i + dx, j + dy) for i, j in self.__dict__[name])
        if "diameter" in self.__dict__:
            c.__dict__["diameter"] = self.diameter
        return c

    def flipped(self) -> "Contour":
        c = Contour.__new__(Contour)
        c.trail, c.sign, c.edge_set = self.trail, -self.sign, self.edge_set
        c.__dict__.update(self.__dict__)
        return c

    def normalized(self) -> tuple["Contour", tuple[int, int]]:
        """Translate so the interior's bounding box starts at cell (0, 0)."""
        mx = min(x for x, _ in self.trail)
        my = min(y for _, y in self.trail)
        dx, dy = -(mx + 1) // 2, -(my + 1) // 2
        return self.translate(dx, dy), (-dx, -dy)


def canonicalize(contour_or_edges, sign: int | None = None) -> Contour:
    """Deterministic representative: canonical traversal of the edge set."""
    if isinstance(contour_or_edges, Contour):
        return Contour.from_edges(contour_or_edges.edge_set, contour_or_edges.sign)
    if sign is None:
        raise ContourError("sign required")
    return Contour.from_sequence(list(contour_or_edges), sign)


def interior_of(edges: Sequence[Edge]) -> frozenset[Cell]:
    return Contour.from_sequence(edges, 1).interior


def neighborhoods(c: Contour) -> tuple[frozenset[Cell], frozenset[Cell]]:
    return c.inner_nbhd, c.outer_nbhd


def is_compatible(a: Contour, b: Contour) -> bool:
    if a.edge_set == b.edge_set:
        return False
    ia, ib = a.interior, b.interior
    if ia.isdisjoint(ib):
        if a.sign == b.sign and not _far_apart(a, b):
            return ib.isdisjoint(a.outer_nbhd) and ia.isdisjoint(b.outer_nbhd)
        return True
    if ib <= ia:
        outer, inner = a, b
    elif ia <= ib:
        outer, inner = b, a
    else:
        return False
    if outer.sign != inner.sign:
        return inner.interior.isdisjoint(outer.inner_nbhd)
    return True


def _far_apart(a: Contour, b: Contour) -> bool:
    # neighbourhood cells lie within one step of the trail, so dual bounding
    # boxes more than 2 apart cannot interact
    (ax0, ax1, ay0, ay1), (bx0, bx1, by0, by1) = a.bbox, b.bbox
    return ax0 > bx1 + 2 or bx0 > ax1 + 2 or ay0 > by1 + 2 or by0 > ay1 + 2


def is_externally_compatible(a: Contour, b: Contour) -> bool:
    return a.interior.isdisjoint(b.interior) and is_compatible(a, b)


def touches(a: Contour, b: Contour) -> bool:
    """Cheap necessary condition for incompatibility."""
    return not (a.interior.isdisjoint(b._delta) and b.interior.isdisjoint(a._delta))


# --- enumeration -----------------------------------------------------------

def _anchored_edge_sets(anchor: Point, max_len: int) -> set[frozenset[Edge]]:
    """Edge sets of every closed contour trail through `anchor` of length <= max_len."""
    found: set[frozenset[Edge]] = set()
    used: set[Edge] = set()
    first_pair: dict[Point, tuple[Point, Point]] = {}
    visits: dict[Point, int] = {}
    ax, ay = anchor

    def dist(v):
        return (abs(v[0] - ax) + abs(v[1] - ay)) // 2

    def step(cur: Point, back: Point, length: int, d0: Point, edges: list):
        if cur == anchor:
            if visits[anchor] == 1:
                # close with a plain (2-valent) anchor
                found.add(frozenset(edges))
                # or pass through, making the anchor 4-valent
                out = _LINKED_PARTNER[back]
                if d0 not in (back, out):
                    _go(cur, out, length, d0, edges, back)
            else:
                if linked(back, d0):
                    found.add(frozenset(edges))
            return
        k = visits.get(cur, 0)
        if k == 0:
            for d in DIRECTIONS:
                if d != back:
                    _go(cur, d, length, d0, edges, back)
        elif k == 1:
            p, q = first_pair[cur]
            if linked(p, q):
                _go(cur, _LINKED_PARTNER[back], length, d0, edges, back)

    def _go(cur, d, length, d0, edges, back):
        nxt = (cur[0] + d[0], cur[1] + d[1])
        e = make_edge(cur, nxt)
        if e in used:
            return
        rem = max_len - length - 1
        if dist(nxt) > rem:
            return
        used.add(e)
        edges.append(e)
        newly = cur not in visits
        visits[cur] = visits.get(cur, 0) + 1
        if newly:
            first_pair[cur] = (back, d)
        step(nxt, (-d[0], -d[1]), length + 1, d0, edges)
        visits[cur] -= 1
        if newly:
            del visits[cur]
            del first_pair[cur]
        edges.pop()
        used.discard(e)

    for d0 in DIRECTIONS:
        nxt = (ax + d0[0], ay + d0[1])
        e = make_edge(anchor, nxt)
        used.add(e)
        visits[anchor] = 1
        first_pair[anchor] = (None, d0)
        step(nxt, (-d0[0], -d0[1]), 1, d0, [e])
        used.discard(e)
        del visits[anchor]
        del first_pair[anchor]
    return found


@lru_cache(maxsize=None)
def contour_shapes(max_len: int) -> tuple[Contour, ...]:
    """All positive contours with length <= max_len up to translation,
    normalized so the interior bounding box starts at cell (0, 0)."""
    shapes = {}
    for es in _anchored_edge_sets((1, 1), max_len):
        c, _ = Contour.from_edges(es, 1).normalized()
        shapes[c.edge_set] = c
    return tuple(sorted(shapes.values()))


def anchored_contours(anchor: Point, max_len: int) -> list[Contour]:
    """Signed contours through a dual vertex, sorted."""
    if max_len < 4 or max_len % 2:
        raise ContourError("max_len must be an even integer >= 4")
    out = []
    for es in _anchored_edge_sets(anchor, max_len):
        c = Contour.from_edges(es, 1)
        out.extend((c, c.flipped()))
    return sorted(out)


def enumerate_contours(window: tuple[int, int], max_len: int, anchor: Point | None = None) -> list[Contour]:
    """Signed contours with interior inside the W x H cell window [0,W) x [0,H)."""
    if max_len < 4 or max_len % 2:
        raise ContourError("max_len must be an even integer >= 4")
    w, h = window

    def inside(c):
        return all(0 <= i < w and 0 <= j < h for i, j in c.interior)

    if anchor is not None:
        return [c for c in anchored_contours(anchor, max_len) if inside(c)]
    out = []
    for s in contour_shapes(max_len):
        bw = max(i for i, _ in s.interior) + 1
        bh = max(j for _, j in s.interior) + 1
        for dx in range(w - bw + 1):
            for dy in range(h - bh + 1):
                c = s.translate(dx, dy)
                out.extend((c, c.flipped()))
    return sorted(out)


def anchored_counts(max_len: int, anchor: Point = (1, 1)) -> dict[int, int]:
    counts: dict[int, int] = {}
    for es in _anchored_edge_sets(anchor, max_len):
        counts[len(es)] = counts.get(len(es), 0) + 2
    return dict(sorted(counts.items()))


# --- cylinders and fields --------------------------------------------------

@dataclass(frozen=True)
class Cylinder:
    contour: Contour
    intensity: int

    def __post_init__(self):
        if self.intensity < 1:
            raise ContourError("intensity must be >= 1")


@dataclass
class HeightField:
    """Nonnegative heights on a finite cell set, boundary held at `level`."""

    heights: dict[Cell, int]
    level: int = 0

    def __post_init__(self):
        if self.level < 0 or any(v < 0 for v in self.heights.values()):
            raise ContourError("heights and boundary level must be nonnegative")

    @classmethod
    def from_array(cls, arr, level=0):
        rows = np.asarray(arr).tolist()
        return cls({(i, j): int(v) for i, row in enumerate(rows) for j, v in enumerate(row)}, level)

    @property
    def domain(self) -> frozenset[Cell]:
        return frozenset(self.heights)

    def value(self, c: Cell) -> int:
        return self.heights.get(c, self.level)

    def energy(self) -> int:
        """Sum of |grad| over bonds with at least one end in the domain."""
        tot = 0
        hs, lev = self.heights, self.level
        for (i, j), v in hs.items():
            tot += abs(v - hs.get((i + 1, j), lev)) + abs(v - hs.get((i, j + 1), lev))
            if (i - 1, j) not in hs:
                tot += abs(v - lev)
            if (i, j - 1) not in hs:
                tot += abs(v - lev)
        return tot


def level_edges(field: HeightField, h: int) -> set[Edge]:
    """Dual edges separating {phi >= h} from {phi < h}."""
    out = set()
    hs, lev = field.heights, field.level
    for (i, j), v in hs.items():
        up = v >= h
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (i + di, j + dj)
            w = hs.get(nb)
            if w is None:
                w = lev
            elif di < 0 or dj < 0:
                continue
            if (w >= h) != up:
                x, y = 2 * i + di, 2 * j + dj
                out.add(((x, y - 1), (x, y + 1)) if di else ((x - 1, y), (x + 1, y)))
    return out


def _all_level_edges(field: HeightField) -> dict[int, list[Edge]]:
    """level_edges for every h at once: a bond between values v < w
    carries an edge at each h in (v, w]."""
    out: dict[int, list[Edge]] = {}
    hs, lev = field.heights, field.level
    for (i, j), v in hs.items():
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            w = hs.get((i + di, j + dj))
            if w is None:
                w = lev
            elif di < 0 or dj < 0:
                continue
            if v == w:
                continue
            x, y = 2 * i + di, 2 * j + dj
            e = ((x, y - 1), (x, y + 1)) if di else ((x - 1, y), (x + 1, y))
            for h in range(min(v, w) + 1, max(v, w) + 1):
                out.setdefault(h, []).append(e)
    return out


def extract_cylinders(field: HeightField) -> set[Cylinder]:
    counts: dict[Contour, int] = {}
    for h, es in sorted(_all_level_edges(field).items()):
        for trail in split_trails(es):
            # a trail starts at its lowest leftmost vertex going up, so the
            # cell to the right of that first edge is inside
            x, y = trail[0]
            sign = 1 if field.value(((x + 1) // 2, (y + 1) // 2)) >= h else -1
            c = Contour(trail, sign, _checked=False)
            counts[c] = counts.get(c, 0) + 1
    return {Cylinder(c, k) for c, k in counts.items()}


def field_from_cylinders(cyls: Iterable[Cylinder], domain: Iterable[Cell], level: int,
                         check: bool = True) -> HeightField:
    cyls = list(cyls)
    dom = frozenset(domain)
    if check:
        for a, b in combinations(cyls, 2):
            if not is_compatible(a.contour, b.contour):
                raise ContourError("incompatible cylinders")
    heights = {c: level for c in dom}
    for cy in cyls:
        if not cy.contour.interior <= dom:
            raise ContourError("cylinder interior leaves the domain")
        for c in cy.contour.interior:
            heights[c] += cy.contour.sign * cy.intensity
    return HeightField(heights, level)


def box(w: int, h: int) -> frozenset[Cell]:
    return frozenset((i, j) for i in range(w) for j in range(h))


# --- collections and clusters ---------------------------------------------

class ContourCollection:
    KINDS = ("general", "compatible", "externally-compatible", "cluster")

    def __init__(self, contours: Iterable[Contour], kind: str = "general"):
        self.contours = frozenset(contours)
        if kind not in self.KINDS:
            raise ContourError(f"unknown kind {kind}")
        self.kind = kind
        pairs = list(combinations(self.contours, 2))
        if kind == "compatible" and not all(is_compatible(a, b) for a, b in pairs):
            raise ContourError("collection is not compatible")
        if kind == "externally-compatible" and not all(is_externally_compatible(a, b) for a, b in pairs):
            raise ContourError("collection is not externally compatible")
        if kind == "cluster" and not is_cluster(self.contours):
            raise ContourError("collection is not connected under incompatibility")

    def __len__(self):
        return len(self.contours)

    def __iter__(self):
        return iter(sorted(self.contours))

    @property
    def total_length(self) -> int:
        return sum(c.length for c in self.contours)

    @property
    def sites(self) -> int:
        """Number of dual points visited by the collection."""
        return len(frozenset().union(*(c.vertices for c in self.contours)))


def is_cluster(contours) -> bool:
    cs = list(contours)
    if not cs:
        return False
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(len(cs)):
            if j not in seen and not is_compatible(cs[i], cs[j]):
                seen.add(j)
                stack.append(j)
    return len(seen) == len(cs)


def incompatibility_graph(pool: Sequence[Contour]) -> list[list[int]]:
    """Adjacency lists of the incompatibility graph, using a cell index to
    restrict candidate pairs to contours that touch."""
    by_interior: dict[Cell, list[int]] = {}
    for idx, c in enumerate(pool):
        for cell in c.interior:
            by_interior.setdefault(cell, []).append(idx)
    adj: list[set[int]] = [set() for _ in pool]
    for i, c in enumerate(pool):
        cand = set()
        for cell in c._delta:
            cand.update(by_interior.get(cell, ()))
        for j in cand:
            if j != i and not is_compatible(c, pool[j]):
                adj[i].add(j)
                adj[j].add(i)
    return [sorted(s) for s in adj]


def grow_clusters(adj: Sequence[Sequence[int]], lengths: Sequence[int], roots: Iterable[int],
                  max_total: int, excluded_roots_before: bool = True):
    """Connected vertex sets containing a root, with total length <= max_total.

    A set is produced once, from its smallest root; roots smaller than the
    current one are forbidden so no set repeats.
    """
    roots = sorted(roots)
    for r in roots:
        if lengths[r] > max_total:
            continue
        forbidden = set(x for x in roots if x < r) if excluded_roots_before else set()
        forbidden.add(r)
        yield from _extend([r], lengths[r], [x for x in adj[r] if x not in forbidden],
                           forbidden, adj, lengths, max_total)


def _extend(current, total, candidates, forbidden, adj, lengths, max_total):
    yield tuple(current)
    cand = list(candidates)
    forbidden = set(forbidden)
    while cand:
        v = cand.pop()
        forbidden.add(v)
        if total + lengths[v] > max_total:
            continue
        cur_set = set(current)
        new_cand = [x for x in cand]
        in_cand = set(new_cand)
        for x in adj[v]:
            if x not in forbidden and x not in cur_set and x not in in_cand:
                new_cand.append(x)
                in_cand.add(x)
        current.append(v)
        yield from _extend(current, total + lengths[v], new_cand, forbidden, adj, lengths, max_total)
        current.pop()


def enumerate_clusters(pool: Sequence[Contour], max_total_len: int, anchor: Point) -> list[ContourCollection]:
    pool = list(pool)
    adj = incompatibility_graph(pool)
    lengths = [c.length for c in pool]
    roots = [i for i, c in enumerate(pool) if anchor in c.vertices]
    return [ContourCollection((pool[i] for i in s), "cluster") for s in grow_clusters(adj, lengths, roots, max_total_len)]


def serialize(c: Contour) -> str:
    parts = [f"{a[0]},{a[1]}-{b[0]},{b[1]}" for a, b in c.edges]
    return ("+" if c.sign > 0 else "-") + ";" + ";".join(parts)


def parse_contour(text: str) -> Contour:
    text = text.strip()
    try:
        head, *rest = text.split(";")
        sign = {"+": 1, "-": -1, "1": 1, "-1": -1, "+1": 1}[head]
        edges = []
        for part in rest:
            a, b = part.split("-") if part.count("-") == 1 else _split_edge(part)
            edges.append((tuple(map(int, a.split(","))), tuple(map(int, b.split(",")))))
    except (KeyError, ValueError) as exc:
        raise ContourError(f"cannot parse contour: {text!r}") from exc
    return Contour.from_sequence(edges, sign)


def _split_edge(part: str):
    # negative coordinates contain '-' too: split at the '-' following a digit
    for k in range(1, len(part)):
        if part[k] == "-" and part[k - 1].isdigit():
            return part[:k], part[k + 1:]
    raise ValueError(part)
