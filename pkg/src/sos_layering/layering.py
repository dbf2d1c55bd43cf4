"""Layering points: crossings of consecutive truncated free energies, the
asymptotic constants alpha_1, alpha_2 and the piecewise-affine envelope."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import mpmath
import numpy as np

from .exact import lattice_sum, wetting_point
from .weights import ClusterExpansion, get_expansion, tail_estimate, u_minus, u_plus

DEFAULT_BETA = 2.5
DEFAULT_LMAX = 14


# --- alpha_1, alpha_2 --------------------------------------------------------

@dataclass
class AsymptoticConstants:
    alpha1: float
    alpha1_err: float
    alpha2: float
    alpha2_err: float
    beta: float
    n_used: int
    per_level: list = field(default_factory=list)


def _box_peaks(beta: float, size: int, n: int, margin: int) -> tuple[float, float]:
    """(P[phi(c) >= n], P[phi(c), phi(c+e1) >= n]) in a size x size box with
    zero boundary, heights restricted to [-margin, n + margin]."""
    lo, hi = -margin, n + margin
    full = np.arange(hi - lo + 1)
    c = (size // 2, size // 2)
    nb = (c[0] + 1, c[1])
    allowed = {(i, j): full for i in range(size) for j in range(size)}
    z = lattice_sum(allowed, -lo, beta)
    high = np.arange(n - lo, hi - lo + 1)
    one = dict(allowed)
    one[c] = high
    two = dict(one)
    two[nb] = high
    return math.exp(lattice_sum(one, -lo, beta) - z), math.exp(lattice_sum(two, -lo, beta) - z)


def _richardson(values: list[float], q: float) -> tuple[float, float]:
    """Limit of a(n) = a + c q^n from the last two terms; error = size of the correction."""
    if len(values) == 1:
        return values[0], abs(values[0]) * q
    a, b = values[-2], values[-1]
    lim = (b - q * a) / (1 - q)
    return lim, abs(lim - b)


def estimate_alphas(beta: float, max_n: int = 2, boxes=(5, 9), margin: int = 1) -> AsymptoticConstants:
    """alpha_1 = lim e^{4 beta n} P[phi(0) >= n], alpha_2 = lim e^{6 beta n}
    P[phi(0), phi(e1) >= n] for the no-wall measure, from exact box sums.

    The error bar combines the Richardson correction over n, the change
    between the two box sizes, and the change from widening the height
    window on the small box.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    J = math.exp(-2 * beta)
    per_level = []
    a1 = {b: [] for b in boxes}
    a2 = {b: [] for b in boxes}
    wide_gap1 = wide_gap2 = 0.0
    for n in range(1, max_n + 1):
        row = {"n": n}
        for b in boxes:
            p1, p2 = _box_peaks(beta, b, n, margin)
            a1[b].append(math.exp(4 * beta * n) * p1)
            a2[b].append(math.exp(6 * beta * n) * p2)
            row[f"alpha1_box{b}"] = a1[b][-1]
            row[f"alpha2_box{b}"] = a2[b][-1]
        p1w, p2w = _box_peaks(beta, boxes[0], n, margin + 2)
        wide_gap1 = max(wide_gap1, abs(math.exp(4 * beta * n) * p1w - a1[boxes[0]][-1]))
        wide_gap2 = max(wide_gap2, abs(math.exp(6 * beta * n) * p2w - a2[boxes[0]][-1]))
        per_level.append(row)
    big, small = boxes[-1], boxes[0]
    l1, r1 = _richardson(a1[big], J)
    l2, r2 = _richardson(a2[big], J)
    s1, _ = _richardson(a1[small], J)
    s2, _ = _richardson(a2[small], J)
    e1 = r1 + abs(l1 - s1) + wide_gap1
    e2 = r2 + abs(l2 - s2) + wide_gap2
    return AsymptoticConstants(l1, e1, l2, e2, beta, max_n, per_level)


def asymptotic_u(n: int, beta: float, alphas: AsymptoticConstants) -> float:
    """Angular point u_n = 2 alpha_2 J^{n+2} / (alpha_1 (1 + J))."""
    J = math.exp(-2 * beta)
    return 2 * alphas.alpha2 * J ** (n + 2) / (alphas.alpha1 * (1 + J))


def envelope_terms(beta: float, u: float, alphas: AsymptoticConstants, n_cap: int = 60) -> np.ndarray:
    J = math.exp(-2 * beta)
    c = 2 * alphas.alpha2 * (J ** 3 - J ** 4) / (1 - J ** 3)
    n = np.arange(n_cap + 1)
    return alphas.alpha1 * J ** (2 * n) * u - c * J ** (3 * n)


def envelope_F(beta: float, u: float, alphas: AsymptoticConstants, n_cap: int = 60) -> tuple[float, int]:
    """max over levels of the affine pieces; returns (value, smallest maximizing level)."""
    if u < 0:
        raise ValueError("u must be nonnegative")
    t = envelope_terms(beta, u, alphas, n_cap)
    k = int(np.argmax(t))
    return float(t[k]), k


# --- crossings ---------------------------------------------------------------

def _wall_log_weights(ex: ClusterExpansion, level: int, beta: float, u: float) -> np.ndarray:
    return ex.wall_log_weights(level, beta, u, True)


def gap(n: int, beta: float, u: float, ex: ClusterExpansion) -> tuple[float, float]:
    """(Delta_n(u), truncation error) with Delta_n = fbar^tr_{n-1} - fbar^tr_n."""
    lw_lo = _wall_log_weights(ex, n - 1, beta, u)
    lw_hi = _wall_log_weights(ex, n, beta, u)
    diff = ex.shell_differences(lw_lo, lw_hi)
    with mpmath.workdps(40):
        val = mpmath.fsum(mpmath.mpf(v) for v in diff.values())
        if n == 1:
            val += mpmath.mpf(wetting_point(beta)) + mpmath.mpf(u)
    err, _ = tail_estimate(diff, beta, ex.lmax)
    return float(val), err + ex.difference_noise(lw_lo, lw_hi)


def level_slope(n: int, beta: float, u: float, ex: ClusterExpansion) -> float:
    """d fbar^tr_n / du from the u-derivatives of the contour weights."""
    d = ex.derivative(_wall_log_weights(ex, n, beta, u), ex.wall_dlog_weights(n, beta, u))
    return d + 1.0 if n == 0 else d


def level_slope_fd(n: int, beta: float, u: float, ex: ClusterExpansion, rel_step: float = 1e-2) -> float:
    """Centered finite difference of fbar^tr_n in u, differenced type by type."""
    du = rel_step * u
    diff = ex.shell_differences(_wall_log_weights(ex, n, beta, u + du), _wall_log_weights(ex, n, beta, u - du))
    with mpmath.workdps(40):
        val = mpmath.fsum(mpmath.mpf(v) for v in diff.values()) / (2 * du)
        if n == 0:
            val += 1
    return float(val)


@dataclass
class LayeringReport:
    n: int
    beta: float
    lmax: int
    u_minus: float
    u_plus: float
    status: str
    u_star: float | None = None
    bracket: tuple | None = None
    sign_changes: list = field(default_factory=list)
    slope_left: float | None = None
    slope_right: float | None = None
    u_asymptotic: float | None = None
    ratio_to_asymptotic: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["bracket"] is not None:
            d["bracket"] = list(d["bracket"])
        return d


def locate_u_star(n: int, beta: float = DEFAULT_BETA, lmax: int = DEFAULT_LMAX,
                  grid_points: int = 17, alphas: AsymptoticConstants | None = None,
                  rel_tol: float = 1e-3, max_iter: int = 40) -> LayeringReport:
    """Scan Delta_n on a geometric grid over [u-_n, u+_n], then bisect the
    smallest resolved sign change.

    A sign change counts only between neighbouring grid points whose
    |Delta_n| both exceed their error estimates (series tail plus rounding);
    if there is none the report is "unresolved".
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ex = get_expansion(lmax)
    J = math.exp(-2 * beta)
    lo_u, hi_u = u_minus(n, beta), u_plus(n, beta)
    us = np.geomspace(lo_u, hi_u, grid_points)
    scan = [(float(u),) + gap(n, beta, float(u), ex) for u in us]
    rep = LayeringReport(n, beta, lmax, lo_u, hi_u, "unresolved")
    rep.diagnostics["scan"] = [{"u": u, "gap": g, "error": e} for u, g, e in scan]
    for (ua, ga, ea), (ub, gb, eb) in zip(scan, scan[1:]):
        if abs(ga) > ea and abs(gb) > eb and (ga < 0) != (gb < 0):
            rep.sign_changes.append((ua, ub))
    rep.diagnostics["max_error"] = max(e for _, _, e in scan)
    rep.diagnostics["unresolved_points"] = sum(abs(g) <= e for _, g, e in scan)
    if not rep.sign_changes:
        return rep
    a, b = rep.sign_changes[0]
    ga = gap(n, beta, a, ex)[0]
    width = rel_tol * J ** (n + 2)
    it = 0
    while b - a > width and it < max_iter:
        m = 0.5 * (a + b)
        gm, em = gap(n, beta, m, ex)
        it += 1
        if abs(gm) <= em:
            rep.diagnostics["stopped_on_noise"] = m
            break
        if (gm < 0) == (ga < 0):
            a, ga = m, gm
        else:
            b = m
    rep.status = "resolved"
    rep.bracket = (a, b)
    rep.u_star = 0.5 * (a + b)
    rep.diagnostics["bisection_steps"] = it
    rep.slope_left = level_slope(n, beta, rep.u_star, ex)
    rep.slope_right = level_slope(n - 1, beta, rep.u_star, ex)
    if alphas is not None:
        rep.u_asymptotic = asymptotic_u(n, beta, alphas)
        rep.ratio_to_asymptotic = rep.u_star / rep.u_asymptotic
    return rep


def derivative_scan(n: int, beta: float = DEFAULT_BETA, lmax: int = DEFAULT_LMAX,
                    grid=None, interval: tuple | None = None, points: int = 5,
                    guard: float = 0.05) -> list[dict]:
    """Slopes of fbar^tr_n on a grid inside the interval where level n is active.

    Without `interval` the range is (u*_{n+1}, u*_n), with u*_0 replaced by
    10 J^2.  Points within a relative distance `guard` of an end are skipped
    and flagged.
    """
    ex = get_expansion(lmax)
    J = math.exp(-2 * beta)
    if interval is None:
        lo = locate_u_star(n + 1, beta, lmax).u_star
        hi = 10 * J ** 2 if n == 0 else locate_u_star(n, beta, lmax).u_star
        if lo is None or hi is None:
            raise RuntimeError("interval endpoints unresolved")
        interval = (lo, hi)
    lo, hi = interval
    if grid is None:
        grid = np.geomspace(lo, hi, points + 2)[1:-1]
    out = []
    for u in grid:
        u = float(u)
        near = min(abs(u - lo) / lo, abs(u - hi) / hi) < guard
        if near:
            out.append({"u": u, "slope": None, "scaled": None, "in_bracket": None, "flagged": True})
            continue
        s = level_slope(n, beta, u, ex)
        scaled = s / J ** (2 * n)
        out.append({"u": u, "slope": s, "scaled": scaled, "in_bracket": 0.1 <= scaled <= 10.0, "flagged": False})
    return out


def layering_table(beta: float = DEFAULT_BETA, n_max: int = 2, lmax: int = DEFAULT_LMAX,
                   alphas: AsymptoticConstants | None = None) -> list[dict]:
    if alphas is None:
        alphas = estimate_alphas(beta, max(2, n_max))
    rows = []
    for n in range(1, n_max + 1):
        r = locate_u_star(n, beta, lmax, alphas=alphas)
        rows.append({"n": n, "u_minus": r.u_minus, "u_star": r.u_star, "u_plus": r.u_plus,
                     "ratio_to_asymptotic": r.ratio_to_asymptotic, "status": r.status})
    return rows
