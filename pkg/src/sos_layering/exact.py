"""Height-truncated exact sums for the SOS model above a hard wall.

Every sum runs a site-by-site transfer over the bounding box of the domain,
padded by one frozen cell on each side.  Cells carry an explicit list of
allowed heights, which is how boundary levels, the wall, and the sign
constraints on contour neighbourhoods are all expressed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Iterable, Mapping, Sequence

import mpmath
import numpy as np

from .contours import Cell, Contour, box

TAIL_DIGITS = 12


@dataclass(frozen=True)
class ModelParams:
    beta: float
    u: float = 0.0
    n: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.n < 0:
            raise ValueError("boundary level must be nonnegative")

    @property
    def J(self) -> float:
        return math.exp(-2 * self.beta)

    @property
    def h(self) -> float:
        return wetting_point(self.beta) + self.u

    @classmethod
    def from_h(cls, beta: float, h: float, n: int = 0) -> "ModelParams":
        return cls(beta, h - wetting_point(beta), n)


@lru_cache(maxsize=256)
def wetting_point(beta: float) -> float:
    """log(e^{4b} / (e^{4b} - 1)), correctly rounded to double."""
    with mpmath.workdps(40):
        return float(-mpmath.log1p(-mpmath.exp(-4 * mpmath.mpf(beta))))


@dataclass
class ExactResult:
    log_value: float
    tail_bound: float
    meta: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def default_hmax(n: int, beta: float, ncells: int) -> int:
    """Smallest cutoff whose geometric tail 2|A|e^{-4b(H-n)} is below 1e-12, and at least n+4."""
    k = math.ceil((math.log(2 * ncells) + TAIL_DIGITS * math.log(10)) / (4 * beta))
    return n + max(4, k)


def tail_bound(n: int, beta: float, ncells: int, hmax: int) -> float:
    return 2 * ncells * math.exp(-4 * beta * (hmax - n))


# --- transfer engine ---------------------------------------------------------

def lattice_sum(allowed: Mapping[Cell, Sequence[int]], outside: int, beta: float,
                reward: float | None = None, poly: bool = False):
    """Sum of exp(-beta * sum |grad|) over fields on the cells of `allowed`.

    Cells outside the mapping are frozen at `outside`.  Each domain cell at
    height 0 contributes a factor `reward` (=e^h); with `poly=True` the zero
    count is kept as a polynomial variable instead and the result is
    (log_scale, coeffs) with Z(x) = exp(log_scale) * sum_k coeffs[k] x^k.
    Otherwise returns log Z.
    """
    cells = list(allowed)
    if not cells:
        return (0.0, np.ones(1)) if poly else 0.0
    xs = [c[0] for c in cells]
    ys = [c[1] for c in cells]
    x0, y0 = min(xs) - 1, min(ys) - 1
    nx, ny = max(xs) - x0 + 2, max(ys) - y0 + 2
    # sweep along the longer side so the frontier is the shorter one
    if nx < ny:
        rows, cols = ny, nx
        pos = lambda r, c: (x0 + c, y0 + r)
    else:
        rows, cols = nx, ny
        pos = lambda r, c: (x0 + r, y0 + c)
    fixed = np.array([outside])
    grid = [[np.asarray(allowed.get(pos(r, c), fixed), dtype=np.int64) for c in range(cols)]
            for r in range(rows)]
    dom = [[pos(r, c) in allowed for c in range(cols)] for r in range(rows)]
    npoly = len(cells) + 1 if poly else 1
    state = np.ones((npoly,) + (1,) * cols)
    if poly:
        state[1:] = 0.0
    frontier = [grid[0][c] for c in range(cols)]
    log_scale = 0.0
    for r in range(1, rows):
        for c in range(cols):
            vals = grid[r][c]
            top = frontier[0]
            m_top = np.exp(-beta * np.abs(top[:, None] - vals[None, :]))
            state = np.tensordot(state, m_top, axes=([1], [0]))
            if c > 0:
                left = frontier[-1]
                m_left = np.exp(-beta * np.abs(left[:, None] - vals[None, :]))
                shape = [1] * state.ndim
                shape[cols - 1] = len(left)
                shape[-1] = len(vals)
                state = state * m_left.reshape(shape)
            if dom[r][c] and vals[0] == 0:
                if poly:
                    z = state[..., 0].copy()
                    state[..., 0] = 0.0
                    state[1:, ..., 0] = z[:-1]
                elif reward is not None:
                    state[..., 0] *= reward
            frontier = frontier[1:] + [vals]
            s = state.max()
            if s <= 0:
                return (-math.inf, np.zeros(npoly)) if poly else -math.inf
            state /= s
            log_scale += math.log(s)
    if poly:
        coeffs = state.reshape(npoly, -1).sum(axis=1)
        return log_scale, coeffs
    return log_scale + math.log(state.sum())


def poly_log_eval(log_scale: float, coeffs: np.ndarray, log_x: float) -> float:
    """log of exp(log_scale) * sum_k coeffs[k] e^{k log_x}, evaluated stably."""
    nz = np.nonzero(coeffs > 0)[0]
    if len(nz) == 0:
        return -math.inf
    terms = np.log(coeffs[nz]) + nz * log_x
    m = terms.max()
    return log_scale + m + math.log(np.exp(terms - m).sum())


# --- partition functions -----------------------------------------------------

def _as_cells(domain) -> list[Cell]:
    if isinstance(domain, Contour):
        return sorted(domain.interior)
    if isinstance(domain, tuple) and len(domain) == 2 and all(isinstance(v, int) for v in domain):
        return sorted(box(*domain))
    return sorted(domain)


def check_simply_connected(cells: Iterable[Cell]):
    cells = set(cells)
    if not cells:
        raise ValueError("empty domain")
    # connected under nearest neighbours
    start = next(iter(cells))
    seen, stack = {start}, [start]
    while stack:
        i, j = stack.pop()
        for nb in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1), (i + 1, j + 1), (i - 1, j - 1)):
            if nb in cells and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if seen != cells:
        raise ValueError("domain is not connected")
    # complement inside the padded box must reach the border
    xs = [c[0] for c in cells]
    ys = [c[1] for c in cells]
    bx = range(min(xs) - 1, max(xs) + 2)
    by = range(min(ys) - 1, max(ys) + 2)
    comp = {(i, j) for i in bx for j in by} - cells
    start = (bx[0], by[0])
    seen, stack = {start}, [start]
    while stack:
        i, j = stack.pop()
        for nb in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1), (i + 1, j + 1), (i - 1, j - 1)):
            if nb in comp and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if seen != comp:
        raise ValueError("domain has a hole")


def wall_partition(domain, params: ModelParams, hmax: int | None = None,
                   forced: Mapping[Cell, Sequence[int]] | None = None) -> ExactResult:
    """log Z^{n,h} on the domain with heights in [0, hmax]."""
    cells = _as_cells(domain)
    check_simply_connected(cells)
    n = params.n
    if hmax is None:
        hmax = default_hmax(n, params.beta, len(cells))
    if hmax < n + 4:
        raise ValueError(f"hmax={hmax} below n+4")
    rng = np.arange(hmax + 1)
    allowed = {c: rng for c in cells}
    if forced:
        for c, vals in forced.items():
            allowed[c] = np.asarray([v for v in vals if 0 <= v <= hmax], dtype=np.int64)
    lz = lattice_sum(allowed, n, params.beta, reward=math.exp(params.h))
    return ExactResult(lz, tail_bound(n, params.beta, len(cells), hmax),
                       {"hmax": hmax, "cells": len(cells), "beta": params.beta, "u": params.u, "n": n})


def free_partition(domain, beta: float, window: int | None = None,
                   forced: Mapping[Cell, Sequence[int]] | None = None) -> ExactResult:
    """No-wall SOS sum with boundary 0, realised as boundary level K with
    heights in [0, 2K] and no reward; `forced` values are relative to 0."""
    cells = _as_cells(domain)
    check_simply_connected(cells)
    k = window if window is not None else default_hmax(0, beta, len(cells))
    rng = np.arange(2 * k + 1)
    allowed = {c: rng for c in cells}
    if forced:
        for c, vals in forced.items():
            allowed[c] = np.asarray([v + k for v in vals if -k <= v <= k], dtype=np.int64)
    lz = lattice_sum(allowed, k, beta)
    return ExactResult(lz, 2 * tail_bound(0, beta, len(cells), k), {"window": k, "cells": len(cells), "beta": beta})


def sos_partition(domain, beta: float, window: int | None = None) -> ExactResult:
    return free_partition(domain, beta, window)


# --- contour-restricted sums -------------------------------------------------

def _restricted_allowed(contour: Contour, m: int, hmax: int, sign: int):
    rng = np.arange(hmax + 1)
    allowed = {}
    for c in contour.interior:
        if c in contour.inner_nbhd:
            allowed[c] = rng[rng >= m] if sign > 0 else rng[rng <= m]
        else:
            allowed[c] = rng
    return allowed


@lru_cache(maxsize=200000)
def _restricted_poly(edges: frozenset, sign: int, constraint_level: int, boundary: int,
                     beta: float, hmax: int):
    c = Contour.from_edges(edges, sign)
    allowed = _restricted_allowed(c, constraint_level, hmax, sign)
    if any(len(v) == 0 for v in allowed.values()):
        return -math.inf, np.zeros(len(allowed) + 1)
    return lattice_sum(allowed, boundary, beta, poly=True)


def restricted_poly(contour: Contour, m: int, beta: float, hmax: int, barred: bool = False):
    """Polynomial in x = e^h for z_m (or the barred version) of a contour.

    Returned as (log_scale, coeffs).  Translation does not change the sum,
    so the contour is normalized before the cached call.
    """
    cn, _ = contour.normalized()
    s = contour.sign
    npoly = len(contour.interior) + 1
    if m < 0:
        return -math.inf, np.zeros(npoly)
    ls_a, ca = _restricted_poly(cn.edge_set, s, m, m, beta, hmax)
    if not barred:
        return ls_a, ca
    if m + s < 0:
        return ls_a, ca
    ls_b, cb = _restricted_poly(cn.edge_set, s, m + s, m, beta, hmax)
    if ls_b == -math.inf:
        return ls_a, ca
    diff = ca - cb * math.exp(ls_b - ls_a)
    diff[diff < 0] = 0.0
    return ls_a, diff


def restricted_z(contour: Contour, m: int, params: ModelParams, hmax: int | None = None,
                 barred: bool = False) -> ExactResult:
    ncells = len(contour.interior)
    if hmax is None:
        hmax = default_hmax(max(m, 0), params.beta, ncells)
    if m >= 0 and hmax < m + 4:
        raise ValueError("hmax below m+4")
    ls, co = restricted_poly(contour, m, params.beta, hmax, barred)
    lv = poly_log_eval(ls, co, params.h) if ls > -math.inf else -math.inf
    return ExactResult(lv, tail_bound(max(m, 0), params.beta, ncells, hmax),
                       {"hmax": hmax, "level": m, "barred": barred})


# --- derived quantities ------------------------------------------------------

def hbar(cells: Iterable[Cell], beta: float, hmax: int | None = None) -> ExactResult:
    """log Z^+ - |cells| h_w for the wall measure without reward; summed over
    nearest-neighbour components."""
    cells = sorted(set(cells))
    if not cells:
        raise ValueError("empty set")
    total = 0.0
    tb = 0.0
    for comp in _components(cells):
        hm = hmax if hmax is not None else default_hmax(0, beta, len(comp))
        lz = lattice_sum({c: np.arange(hm + 1) for c in comp}, 0, beta)
        total += lz - len(comp) * wetting_point(beta)
        tb += tail_bound(0, beta, len(comp), hm)
    return ExactResult(total, tb, {"cells": len(cells)})


def _components(cells):
    left = set(cells)
    comps = []
    while left:
        start = left.pop()
        comp, stack = [start], [start]
        while stack:
            i, j = stack.pop()
            for nb in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if nb in left:
                    left.remove(nb)
                    comp.append(nb)
                    stack.append(nb)
        comps.append(sorted(comp))
    return comps


def peak_probability(domain, sites: Sequence[Cell], n: int, beta: float, window: int | None = None) -> float:
    """P[min over sites of phi >= n] for the no-wall measure with boundary 0."""
    if n <= 0:
        return 1.0
    cells = _as_cells(domain)
    if window is None:
        window = n + default_hmax(0, beta, len(cells))
    z = free_partition(cells, beta, window)
    zn = free_partition(cells, beta, window, forced={s: range(n, window + 1) for s in sites})
    return math.exp(zn.log_value - z.log_value)


def site_marginal(domain, params: ModelParams, site: Cell, hmax: int | None = None) -> np.ndarray:
    """Distribution of phi(site) under the wall measure."""
    cells = _as_cells(domain)
    if hmax is None:
        hmax = default_hmax(params.n, params.beta, len(cells))
    z = wall_partition(cells, params, hmax).log_value
    return np.array([math.exp(wall_partition(cells, params, hmax, forced={site: [k]}).log_value - z)
                     for k in range(hmax + 1)])


def contact_expectation(domain, params: ModelParams, sites: Sequence[Cell], hmax: int | None = None) -> float:
    """E[prod over sites of 1{phi = 0}]."""
    cells = _as_cells(domain)
    if hmax is None:
        hmax = default_hmax(params.n, params.beta, len(cells))
    z = wall_partition(cells, params, hmax).log_value
    if not sites:
        return 1.0
    zf = wall_partition(cells, params, hmax, forced={s: [0] for s in sites}).log_value
    return math.exp(zf - z)


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for p in _set_partitions(rest):
        yield [[first]] + p
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1:]


def ursell(domain, params: ModelParams, sites: Sequence[Cell], hmax: int | None = None) -> float:
    """Truncated correlation of the contact indicators at up to three sites."""
    sites = list(sites)
    if not 1 <= len(sites) <= 3:
        raise ValueError("ursell supports 1 to 3 sites")
    if len(set(sites)) != len(sites):
        raise ValueError("sites must be distinct")
    cache = {}

    def mom(block):
        key = tuple(sorted(block))
        if key not in cache:
            cache[key] = contact_expectation(domain, params, key, hmax)
        return cache[key]

    total = 0.0
    for part in _set_partitions(sites):
        k = len(part)
        coef = (-1) ** (k - 1) * math.factorial(k - 1)
        total += coef * math.prod(mom(b) for b in part)
    return total


def brute_force_log_z(cells: Sequence[Cell], params: ModelParams, hmax: int) -> float:
    """Direct sum over [0, hmax]^cells; independent of the transfer code."""
    cells = list(cells)
    cs = set(cells)
    idx = {c: k for k, c in enumerate(cells)}
    inner = [(idx[a], idx[(a[0] + dx, a[1] + dy)]) for a in cells for dx, dy in ((1, 0), (0, 1))
             if (a[0] + dx, a[1] + dy) in cs]
    outer_count = np.array([sum((c[0] + dx, c[1] + dy) not in cs for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)))
                            for c in cells])
    n = params.n
    hs = np.arange(hmax + 1)
    # enumerate the first cell explicitly, the rest vectorized
    grids = np.array(list(product(hs, repeat=len(cells) - 1)), dtype=np.int64).reshape(-1, len(cells) - 1)
    acc = []
    for v in hs:
        phi = np.concatenate([np.full((grids.shape[0], 1), v), grids], axis=1)
        e = np.zeros(phi.shape[0])
        for a, b in inner:
            e += np.abs(phi[:, a] - phi[:, b])
        e += (np.abs(phi - n) * outer_count).sum(axis=1)
        logw = -params.beta * e + params.h * (phi == 0).sum(axis=1)
        m = logw.max()
        acc.append(m + math.log(np.exp(logw - m).sum()))
    acc = np.array(acc)
    m = acc.max()
    return float(m + math.log(np.exp(acc - m).sum()))
