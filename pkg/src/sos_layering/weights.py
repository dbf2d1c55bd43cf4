"""Contour weights above the wall, stability, Kotecky-Preiss sums, cluster
weights and free-energy densities of the contour gas."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import mpmath
import numpy as np

from .contours import Contour, contour_shapes, is_compatible, is_cluster
from .exact import ModelParams, default_hmax, lattice_sum, restricted_poly, wetting_point

CLUSTER_CAP = 8


# --- single contour weights --------------------------------------------------

@dataclass(frozen=True)
class WeightPoly:
    """w(u) = e^{-beta L} A(x) / B(x), x = e^{h_w + u}, both stored as scaled
    coefficient arrays."""

    length: int
    sign: int
    level: int
    beta: float
    log_a: float
    coef_a: np.ndarray
    log_b: float
    coef_b: np.ndarray

    def log_weight(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.sign < 0 and self.level == 0:
            return np.full(u.shape, -np.inf)
        lx = wetting_point(self.beta) + u
        return -self.beta * self.length + _log_poly(self.log_a, self.coef_a, lx) - _log_poly(self.log_b, self.coef_b, lx)

    def dlog_weight(self, u) -> np.ndarray:
        """d/du log w: mean zero count under A minus that under B."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.sign < 0 and self.level == 0:
            return np.zeros(u.shape)
        lx = wetting_point(self.beta) + u
        return _mean_power(self.coef_a, lx) - _mean_power(self.coef_b, lx)


def _log_poly(log_scale: float, coeffs: np.ndarray, lx: np.ndarray) -> np.ndarray:
    k = np.nonzero(coeffs > 0)[0]
    if len(k) == 0:
        return np.full(lx.shape, -np.inf)
    terms = np.log(coeffs[k])[None, :] + k[None, :] * lx[:, None]
    m = terms.max(axis=1)
    return log_scale + m + np.log(np.exp(terms - m[:, None]).sum(axis=1))


def _mean_power(coeffs: np.ndarray, lx: np.ndarray) -> np.ndarray:
    k = np.nonzero(coeffs > 0)[0]
    if len(k) == 0:
        return np.zeros(lx.shape)
    terms = np.log(coeffs[k])[None, :] + k[None, :] * lx[:, None]
    p = np.exp(terms - terms.max(axis=1)[:, None])
    return (p * k[None, :]).sum(axis=1) / p.sum(axis=1)


@lru_cache(maxsize=100000)
def _weight_poly_cached(edges, sign, level, beta, hmax) -> WeightPoly:
    c = Contour.from_edges(edges, sign)
    if sign < 0 and level == 0:
        z = np.zeros(1)
        return WeightPoly(c.length, sign, level, beta, -math.inf, z, 0.0, np.ones(1))
    la, ca = restricted_poly(c, level + sign, beta, hmax)
    lb, cb = restricted_poly(c, level, beta, hmax, barred=True)
    return WeightPoly(c.length, sign, level, beta, la, ca, lb, cb)


def weight_poly(contour: Contour, level: int, beta: float, hmax: int | None = None) -> WeightPoly:
    if level < 0:
        raise ValueError("level must be nonnegative")
    cn, _ = contour.normalized()
    if hmax is None:
        hmax = default_hmax(level + 1, beta, len(contour.interior))
    return _weight_poly_cached(cn.edge_set, contour.sign, level, beta, hmax)


def contour_weight(contour: Contour, level: int, params: ModelParams, hmax: int | None = None) -> float:
    """log w^u_n of a contour (-inf for weight zero)."""
    return float(weight_poly(contour, level, params.beta, hmax).log_weight(params.u)[0])


def stability_cap(contour_or_length, beta: float) -> float:
    L = contour_or_length if isinstance(contour_or_length, int) else contour_or_length.length
    return -(beta - 1) * L


def truncated_weight(contour: Contour, level: int, params: ModelParams, hmax: int | None = None) -> float:
    """log of min(e^{-(beta-1)L}, w^u_n)."""
    return min(stability_cap(contour, params.beta), contour_weight(contour, level, params, hmax))


def is_stable(contour: Contour, level: int, params: ModelParams, hmax: int | None = None) -> bool:
    return contour_weight(contour, level, params, hmax) <= stability_cap(contour, params.beta)


def sos_log_weight(length: int, beta: float) -> float:
    """log 1/(e^{beta L} - 1)."""
    return -beta * length - math.log1p(-math.exp(-beta * length))


def u_minus(n: int, beta: float) -> float:
    return math.inf if n == 0 else math.exp(-2 * beta) ** (n + 2) / 200


def u_plus(n: int, beta: float) -> float:
    return math.inf if n == 0 else 200 * math.exp(-2 * beta) ** (n + 2)


# --- contour-gas partition functions inside a contour ------------------------

def sos_contour_partition(gamma: Contour, beta: float, window: int | None = None) -> float:
    """log Z[gamma, w_beta]: pure-SOS contour gas on the interior of gamma,
    keeping only contours compatible with gamma.

    In height language (gamma positive) these are the zero-boundary fields
    that stay >= 0 on the inner neighbourhood, minus those containing gamma
    itself, i.e. e^{-beta L} times the fields that are >= 0 on all of it.
    A negative gamma gives the same value by the symmetry phi -> -phi.
    """
    cells = sorted(gamma.interior)
    k = window if window is not None else default_hmax(0, beta, len(cells))
    full = np.arange(2 * k + 1)
    upper = full[k:]
    inner = gamma.inner_nbhd
    log_a = lattice_sum({c: upper if c in inner else full for c in cells}, k, beta)
    log_b = lattice_sum({c: upper for c in cells}, k, beta)
    return log_a + math.log1p(-math.exp(log_b - beta * gamma.length - log_a))


def polymer_partition(contours: Sequence[Contour], log_weight: Callable[[Contour], float]) -> float:
    """log of the sum over pairwise compatible subsets of `contours` of the
    product of weights, by direct recursion over independent sets."""
    pool = list(contours)
    w = [math.exp(log_weight(c)) for c in pool]
    bad = [{j for j in range(len(pool)) if j != i and not is_compatible(pool[i], pool[j])}
           for i in range(len(pool))]

    def total(i, banned):
        # subsets of pool[i:] avoiding `banned`
        if i == len(pool):
            return 1.0
        skip = total(i + 1, banned)
        if i in banned:
            return skip
        return skip + w[i] * total(i + 1, banned | bad[i])

    return math.log(total(0, frozenset()))


# --- Kotecky-Preiss ----------------------------------------------------------

@dataclass
class KPResult:
    lhs: float
    tail: float
    passed: bool
    by_length: dict


def kp_check(log_weight: Callable[[Contour], float], beta: float, max_len: int,
             anchor=(1, 1)) -> KPResult:
    """sum over contours through the anchor of e^{(beta-4)L} w, plus a tail
    bounded with count <= 3^k and w <= e^{-(beta-1)k}."""
    from .contours import anchored_contours
    by_len: dict[int, float] = {}
    for c in anchored_contours(anchor, max_len):
        lw = log_weight(c)
        if lw == -math.inf:
            continue
        by_len[c.length] = by_len.get(c.length, 0.0) + math.exp((beta - 4) * c.length + lw)
    ratio = 3 * math.exp(-3.0)
    tail = ratio ** (max_len + 2) / (1 - ratio ** 2)
    lhs = math.fsum(by_len.values())
    return KPResult(lhs, tail, lhs + tail <= 1.0, dict(sorted(by_len.items())))


# --- cluster weights ---------------------------------------------------------

def _check_size(k):
    if k > CLUSTER_CAP:
        raise ValueError(f"cluster of {k} contours exceeds the cap of {CLUSTER_CAP}")


def _independent_masks(k: int, adj: Sequence[int]) -> np.ndarray:
    ind = np.ones(1 << k, dtype=bool)
    for mask in range(1, 1 << k):
        low = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << low)
        ind[mask] = ind[rest] and not (adj[low] & rest)
    return ind


def cluster_wt_mobius(weights: Sequence[float], adj: Sequence[int], dps: int = 50):
    """Modified weight as the alternating subset sum of log Z[B], in mpmath."""
    k = len(weights)
    _check_size(k)
    ind = _independent_masks(k, adj)
    with mpmath.workdps(dps):
        w = [mpmath.mpf(x) for x in weights]
        prod = [mpmath.mpf(1)] * (1 << k)
        for mask in range(1, 1 << k):
            low = (mask & -mask).bit_length() - 1
            prod[mask] = prod[mask & ~(1 << low)] * w[low]
        zsub = [mpmath.mpf(0)] * (1 << k)
        for mask in range(1 << k):
            if ind[mask]:
                zsub[mask] = prod[mask]
        # zeta transform: Z[B] = sum over independent I subset of B
        for i in range(k):
            for mask in range(1 << k):
                if mask >> i & 1:
                    zsub[mask] += zsub[mask ^ (1 << i)]
        total = mpmath.mpf(0)
        for mask in range(1 << k):
            sgn = -1 if (k - bin(mask).count("1")) % 2 else 1
            total += sgn * mpmath.log(zsub[mask])
        return total


_CANCEL_LIMIT = 1e3


def _connected(k: int, adj: Sequence[int]) -> bool:
    seen, frontier = 1, 1
    while frontier:
        nxt = 0
        for i in range(k):
            if frontier >> i & 1:
                nxt |= adj[i]
        frontier = nxt & ~seen
        seen |= nxt
    return seen == (1 << k) - 1


def cluster_wt(weights: Sequence[float], adj: Sequence[int]) -> float:
    """Same quantity in double precision, rewritten to avoid cancellation.

    For two or more contours the log(1 + w) pieces cancel exactly, leaving
    sum_B (-1)^{|C-B|} log1p(-D_B / P_B) with D_B the weight of dependent
    subsets of B and P_B = prod (1 + w); every D_B is a positive sum.
    """
    k = len(weights)
    _check_size(k)
    if k == 1:
        return math.log1p(weights[0])
    if k == 2:
        w1, w2 = weights
        if not adj[0] & 2:
            return 0.0
        return math.log1p(-w1 * w2 / ((1 + w1) * (1 + w2)))
    if not _connected(k, adj):
        return 0.0
    ind = _independent_masks(k, adj)
    n = 1 << k
    prod = np.ones(n)
    for mask in range(1, n):
        low = (mask & -mask).bit_length() - 1
        prod[mask] = prod[mask & ~(1 << low)] * weights[low]
    dep = np.where(ind, 0.0, prod)
    one_plus = np.ones(n)
    for mask in range(1, n):
        low = (mask & -mask).bit_length() - 1
        one_plus[mask] = one_plus[mask & ~(1 << low)] * (1 + weights[low])
    for i in range(k):
        bit = 1 << i
        idx = np.arange(n)
        sel = idx[(idx & bit) != 0]
        dep[sel] += dep[sel ^ bit]
    total = 0.0
    terms = []
    for mask in range(n):
        if dep[mask] == 0.0:
            continue
        sgn = -1.0 if (k - bin(mask).count("1")) % 2 else 1.0
        terms.append(sgn * math.log1p(-dep[mask] / one_plus[mask]))
    total = math.fsum(terms)
    # the alternating sum can still cancel when large and tiny weights mix
    spread = math.fsum(abs(t) for t in terms)
    if spread > _CANCEL_LIMIT * abs(total):
        digits = 25 + int(math.log10(spread / abs(total))) if total else 40
        total = float(cluster_wt_mobius(weights, adj, dps=min(digits, 200)))
    return total


def cluster_wt_derivative(weights: Sequence[float], dlog: Sequence[float], adj: Sequence[int]) -> float:
    """d w^T along a direction where log w_i moves at rate dlog[i].

    Uses d log Z[B] / d log w_i = w_i Z[B - N(i)] / Z[B], with N(i) the
    closed incompatibility neighbourhood of i.
    """
    k = len(weights)
    _check_size(k)
    if k == 1:
        return weights[0] * dlog[0] / (1 + weights[0])
    if k == 2:
        if not adj[0] & 2:
            return 0.0
        w1, w2 = weights
        z = 1 + w1 + w2
        return -w1 * w2 * (dlog[0] / ((1 + w1) * z) + dlog[1] / ((1 + w2) * z))
    if not _connected(k, adj):
        return 0.0
    ind = _independent_masks(k, adj)
    n = 1 << k
    prod = np.ones(n)
    for mask in range(1, n):
        low = (mask & -mask).bit_length() - 1
        prod[mask] = prod[mask & ~(1 << low)] * weights[low]
    z = np.where(ind, prod, 0.0)
    idx = np.arange(n)
    for i in range(k):
        sel = idx[(idx & (1 << i)) != 0]
        z[sel] += z[sel ^ (1 << i)]
    terms = []
    for mask in range(1, n):
        sgn = -1.0 if (k - bin(mask).count("1")) % 2 else 1.0
        for i in range(k):
            if mask >> i & 1 and dlog[i] != 0.0:
                rest = mask & ~(adj[i] | (1 << i))
                terms.append(sgn * dlog[i] * weights[i] * z[rest] / z[mask])
    return math.fsum(terms)


def adjacency_of(contours: Sequence[Contour]) -> list[int]:
    k = len(contours)
    adj = [0] * k
    for i in range(k):
        for j in range(i + 1, k):
            if not is_compatible(contours[i], contours[j]):
                adj[i] |= 1 << j
                adj[j] |= 1 << i
    return adj


@dataclass
class ClusterTerm:
    contours: tuple
    wT: object
    L: int
    sites: int


def cluster_term(contours: Sequence[Contour], log_weight: Callable[[Contour], float],
                 dps: int = 50) -> ClusterTerm:
    cs = tuple(sorted(contours))
    _check_size(len(cs))
    if not is_cluster(cs):
        wt = mpmath.mpf(0)
    else:
        ws = [math.exp(log_weight(c)) for c in cs]
        wt = cluster_wt_mobius(ws, adjacency_of(cs), dps)
    sites = len(frozenset().union(*(c.vertices for c in cs)))
    return ClusterTerm(cs, wt, sum(c.length for c in cs), sites)


# --- cluster geometry --------------------------------------------------------

@dataclass(frozen=True)
class ClusterType:
    members: tuple[int, ...]
    adj: tuple[int, ...]
    length: int
    count: int


class ClusterExpansion:
    """All clusters through an anchor with total length <= lmax, grouped by
    translation class and then by (member shapes, incompatibility graph).

    `shapes` lists signed shapes (normalized); weights are supplied as an
    array indexed like `shapes`.
    """

    def __init__(self, lmax: int, anchor=(1, 1)):
        if lmax < 4 or lmax % 2:
            raise ValueError("lmax must be an even integer >= 4")
        self.lmax = lmax
        self.anchor = anchor
        base = contour_shapes(lmax)
        self.shapes: list[Contour] = []
        for s in base:
            self.shapes.extend((s, s.flipped()))
        self.lengths = np.array([s.length for s in self.shapes])
        self.signs = np.array([s.sign for s in self.shapes])
        self._offsets = self._incompatibility_offsets()
        self.types, self.anchored_count, self.class_count = self._enumerate()

    def _incompatibility_offsets(self):
        """offsets[(a, b)] = translations t with shape b + t incompatible with shape a."""
        lm = self.lmax
        out: dict[tuple[int, int], frozenset] = {}
        shapes = self.shapes
        for a, sa in enumerate(shapes):
            for b, sb in enumerate(shapes):
                if sa.length + sb.length > lm:
                    continue
                if (b, a) in out:
                    out[a, b] = frozenset((-x, -y) for x, y in out[b, a])
                    continue
                cand = {(c[0] - d[0], c[1] - d[1]) for c in sa._delta for d in sb.interior}
                cand |= {(c[0] - d[0], c[1] - d[1]) for c in sa.interior for d in sb._delta}
                good = [t for t in cand if not is_compatible(sa, sb.translate(*t))]
                out[a, b] = frozenset(good)
        return out

    def _enumerate(self):
        ax, ay = self.anchor
        shapes = self.shapes
        lm = self.lmax
        nshape = len(shapes)
        verts = [tuple(s.vertices) for s in shapes]
        by_a: list[list[tuple[int, tuple]]] = [[] for _ in range(nshape)]
        for (a, b), offs in self._offsets.items():
            if offs:
                by_a[a].append((b, tuple(offs)))
        roots = []
        for sid, s in enumerate(shapes):
            for vx, vy in s.vertices:
                roots.append((sid, (ax - vx) // 2, (ay - vy) // 2))
        roots = sorted(set(roots))
        root_rank = {r: i for i, r in enumerate(roots)}
        lengths = [int(v) for v in self.lengths]
        nverts = [len(set(v)) for v in verts]

        def neighbours(node, budget):
            sid, px, py = node
            for b, offs in by_a[sid]:
                if lengths[b] <= budget:
                    for tx, ty in offs:
                        yield (b, px + tx, py + ty)

        classes: dict[tuple, float] = {}
        anchored = 0
        for ri, root in enumerate(roots):
            if lengths[root[0]] > lm:
                continue
            for members in _grow(root, lm, lengths, neighbours, root_rank, ri):
                anchored += 1
                if len(members) == 1:
                    classes[((root[0], 0, 0),)] = classes.get(((root[0], 0, 0),), 0.0) + 1.0 / nverts[root[0]]
                    continue
                pts = set()
                for sid, px, py in members:
                    pts.update((x + 2 * px, y + 2 * py) for x, y in verts[sid])
                ms = sorted(members, key=lambda m: (m[1], m[2], m[0]))
                ox, oy = ms[0][1], ms[0][2]
                key = tuple((sid, px - ox, py - oy) for sid, px, py in ms)
                classes[key] = classes.get(key, 0.0) + 1.0 / len(pts)
        types: dict[tuple, int] = {}
        for key, mult in classes.items():
            if abs(mult - 1.0) > 1e-9:
                raise RuntimeError(f"translation class weight {mult} != 1 for {key}")
            k = len(key)
            adj = [0] * k
            for i in range(k):
                for j in range(i + 1, k):
                    si, xi, yi = key[i]
                    sj, xj, yj = key[j]
                    if (xj - xi, yj - yi) in self._offsets.get((si, sj), ()):
                        adj[i] |= 1 << j
                        adj[j] |= 1 << i
            # canonical order within the type: by shape id, keeping adjacency consistent
            order = sorted(range(k), key=lambda i: (key[i][0], bin(adj[i]).count("1")))
            pos = {old: new for new, old in enumerate(order)}
            nadj = [0] * k
            for i in range(k):
                for j in range(k):
                    if adj[i] >> j & 1:
                        nadj[pos[i]] |= 1 << pos[j]
            tkey = (tuple(key[i][0] for i in order), tuple(nadj))
            types[tkey] = types.get(tkey, 0) + 1
        out = []
        for (members, adj), cnt in sorted(types.items()):
            out.append(ClusterType(members, adj, int(sum(lengths[m] for m in members)), cnt))
        return out, anchored, len(classes)

    # --- evaluation ---

    def shells(self, log_w: np.ndarray) -> dict[int, float]:
        """Contribution of each total length to f(w)."""
        w = np.exp(log_w)
        acc: dict[int, list[float]] = {}
        for t in self.types:
            ws = [w[m] for m in t.members]
            if any(x == 0.0 for x in ws):
                continue
            acc.setdefault(t.length, []).append(t.count * cluster_wt(ws, t.adj))
        return {L: math.fsum(v) for L, v in sorted(acc.items())}

    def shell_differences(self, log_w1: np.ndarray, log_w2: np.ndarray) -> dict[int, float]:
        """Per-shell sum of count * (w^T under w1 - w^T under w2), type by type."""
        w1, w2 = np.exp(log_w1), np.exp(log_w2)
        acc: dict[int, list[float]] = {}
        for t in self.types:
            a = [w1[m] for m in t.members]
            b = [w2[m] for m in t.members]
            ta = 0.0 if any(x == 0.0 for x in a) else cluster_wt(a, t.adj)
            tb = 0.0 if any(x == 0.0 for x in b) else cluster_wt(b, t.adj)
            if ta != tb:
                acc.setdefault(t.length, []).append(t.count * (ta - tb))
        return {L: math.fsum(v) for L, v in sorted(acc.items())}

    def difference_noise(self, log_w1: np.ndarray, log_w2: np.ndarray) -> float:
        """Rounding-error scale of shell_differences: a few ulps of every
        cluster weight that enters either side."""
        w1, w2 = np.exp(log_w1), np.exp(log_w2)
        tot = 0.0
        for t in self.types:
            a = [w1[m] for m in t.members]
            b = [w2[m] for m in t.members]
            if a == b:
                continue
            scale = 0.0
            for ws in (a, b):
                if all(x > 0.0 for x in ws):
                    scale += math.prod(ws) if len(ws) > 1 else ws[0]
            tot += t.count * len(t.members) * scale
        # a log-weight near -L beta carries an absolute error of ~ L beta ulps
        finite = np.concatenate([log_w1[np.isfinite(log_w1)], log_w2[np.isfinite(log_w2)]])
        lw_scale = 1.0 + (np.abs(finite).max() if len(finite) else 0.0)
        return 8 * np.finfo(float).eps * lw_scale * tot

    def derivative(self, log_w: np.ndarray, dlog_w: np.ndarray) -> float:
        """d f / d(parameter) given log-weights and their derivatives."""
        w = np.exp(log_w)
        terms = []
        for t in self.types:
            ws = [w[m] for m in t.members]
            if any(x == 0.0 for x in ws):
                continue
            ds = [dlog_w[m] for m in t.members]
            if not any(ds):
                continue
            terms.append(t.count * cluster_wt_derivative(ws, ds, t.adj))
        return math.fsum(terms)

    def wall_dlog_weights(self, level: int, beta: float, u: float, truncated: bool = True) -> np.ndarray:
        """d/du of wall_log_weights; zero where the stability cap is active."""
        d = np.array([weight_poly(s, level, beta).dlog_weight(u)[0] for s in self.shapes])
        if truncated:
            lw = np.array([weight_poly(s, level, beta).log_weight(u)[0] for s in self.shapes])
            d = np.where(lw > -(beta - 1) * self.lengths, 0.0, d)
        return d

    def sos_log_weights(self, beta: float) -> np.ndarray:
        return np.array([sos_log_weight(int(L), beta) for L in self.lengths])

    def wall_log_weights(self, level: int, beta: float, u: float, truncated: bool = True) -> np.ndarray:
        lw = np.array([weight_poly(s, level, beta).log_weight(u)[0] for s in self.shapes])
        if truncated:
            lw = np.minimum(lw, -(beta - 1) * self.lengths)
        return lw


_EXPANSIONS: dict[tuple, ClusterExpansion] = {}


def get_expansion(lmax: int, anchor=(1, 1)) -> ClusterExpansion:
    key = (lmax, tuple(anchor))
    if key not in _EXPANSIONS:
        _EXPANSIONS[key] = ClusterExpansion(lmax, anchor)
    return _EXPANSIONS[key]


def _grow(root, lmax, lengths, neighbours, root_rank, rank):
    """Connected sets containing `root`, total length <= lmax.

    Nodes whose rank in `root_rank` is <= `rank` are excluded, so each set is
    produced from its lowest-ranked anchored member only.
    """
    def banned(x):
        return root_rank.get(x, rank + 1) <= rank

    def extend(current, total, cand, forbidden):
        yield list(current)
        cand = list(cand)
        forbidden = set(forbidden)
        while cand:
            v = cand.pop()
            forbidden.add(v)
            nt = total + lengths[v[0]]
            if nt > lmax:
                continue
            cur = set(current)
            seen = set(cand)
            new_cand = list(cand)
            for x in neighbours(v, lmax - nt):
                if x not in forbidden and x not in cur and x not in seen and not banned(x):
                    new_cand.append(x)
                    seen.add(x)
            current.append(v)
            yield from extend(current, nt, new_cand, forbidden)
            current.pop()

    start = [n for n in neighbours(root, lmax - lengths[root[0]]) if not banned(n) and n != root]
    yield from extend([root], lengths[root[0]], list(dict.fromkeys(start)), {root})


# --- free energies -----------------------------------------------------------

@dataclass
class FreeEnergyValue:
    value: float
    trunc_error: float
    lmax: int
    label: str
    rigorous: bool = False
    shells: dict | None = None


def tail_estimate(shells: dict[int, float], beta: float, lmax: int) -> tuple[float, bool]:
    """Rigorous template when beta > 5, else last shell times a ratio fitted on the last three."""
    if beta > 5:
        return 8 * math.exp(-(beta - 5) * (lmax + 2)), True
    vals = [abs(shells.get(L, 0.0)) for L in range(4, lmax + 1, 2)]
    vals = [v for v in vals if v > 0]
    if not vals:
        return 0.0, False
    last = vals[-3:]
    if len(last) >= 2:
        ratios = [b / a for a, b in zip(last, last[1:]) if a > 0]
        r = max(ratios) if ratios else 0.5
    else:
        r = 0.5
    r = min(r, 0.9)
    return vals[-1] * r / (1 - r), False


def free_energy_density(log_w: np.ndarray, expansion: ClusterExpansion, beta: float,
                        label: str = "full-with-weights-w") -> FreeEnergyValue:
    sh = expansion.shells(log_w)
    with mpmath.workdps(40):
        val = mpmath.fsum(mpmath.mpf(v) for v in sh.values())
    err, rig = tail_estimate(sh, beta, expansion.lmax)
    return FreeEnergyValue(float(val), err, expansion.lmax, label, rig, sh)


def sos_free_energy(beta: float, lmax: int) -> FreeEnergyValue:
    ex = get_expansion(lmax)
    return free_energy_density(ex.sos_log_weights(beta), ex, beta, "pure-SOS")


def level_free_energy(n: int, beta: float, u: float, lmax: int, truncated: bool = True,
                      expansion: ClusterExpansion | None = None):
    """Free energy of the level-n contour gas including the e^h per site that
    the level-0 representation leaves outside the weights; returned as
    (mp value, shells)."""
    ex = expansion or get_expansion(lmax)
    sh = ex.shells(ex.wall_log_weights(n, beta, u, truncated))
    with mpmath.workdps(40):
        val = mpmath.fsum(mpmath.mpf(v) for v in sh.values())
        if n == 0:
            val += mpmath.mpf(wetting_point(beta)) + mpmath.mpf(u)
    return val, sh


def truncated_free_energy(n: int, beta: float, u: float, lmax: int, truncated: bool = True) -> FreeEnergyValue:
    """f-bar at level n: level free energy minus the pure-SOS one at the same lmax."""
    ex = get_expansion(lmax)
    diff = ex.shell_differences(ex.wall_log_weights(n, beta, u, truncated), ex.sos_log_weights(beta))
    with mpmath.workdps(40):
        val = mpmath.fsum(mpmath.mpf(v) for v in diff.values())
        if n == 0:
            val += mpmath.mpf(wetting_point(beta)) + mpmath.mpf(u)
    err, rig = tail_estimate(diff, beta, lmax)
    return FreeEnergyValue(float(val), err, lmax, f"truncated-level-{n}" if truncated else f"level-{n}", rig, diff)


def level_gap(n: int, beta: float, u: float, lmax: int, expansion: ClusterExpansion | None = None):
    """Delta_n(u) = fbar^tr_{n-1} - fbar^tr_n, computed type by type.

    Returns (mp value, shells of the difference)."""
    ex = expansion or get_expansion(lmax)
    lw_lo = ex.wall_log_weights(n - 1, beta, u, True)
    lw_hi = ex.wall_log_weights(n, beta, u, True)
    diff = ex.shell_differences(lw_lo, lw_hi)
    with mpmath.workdps(40):
        val = mpmath.fsum(mpmath.mpf(v) for v in diff.values())
        if n == 1:
            val += mpmath.mpf(wetting_point(beta)) + mpmath.mpf(u)
    return val, diff
