"""Heat-bath Monte Carlo for the SOS field above a hard wall with a reward
e^h per contact, plus observables, level-set percolation and coupled
(sandwich) chains."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.spatial.distance import pdist

from .exact import ModelParams

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

STREAM_SITE = 0
STREAM_ORDER = 1

# (1,1)-diagonal star structure for arrays indexed [x, y]
STAR = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
NEAREST = ndimage.generate_binary_structure(2, 1)


# --- counter-based random numbers --------------------------------------------

@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def uniform(seed, sweep, index, stream):
    """U[0,1) determined by (seed, sweep, index, stream) alone."""
    z = _mix(np.uint64(seed) + _GOLDEN * np.uint64(stream + 1))
    z = _mix(z + _GOLDEN * np.uint64(sweep + 1))
    z = _mix(z + _GOLDEN * np.uint64(index + 1))
    return (z >> _S11) * (1.0 / 9007199254740992.0)


# --- single-site conditional -------------------------------------------------

@njit(cache=True)
def _segments(a, beta, h):
    """Piecewise-geometric decomposition of k -> exp(-beta sum|k - a_i| + h 1{k=0}).

    Returns (start, length, log_w0, log_r) arrays; length -1 marks the
    unbounded last segment.  `a` must be sorted.
    """
    start = np.empty(6, np.int64)
    length = np.empty(6, np.int64)
    lw0 = np.empty(6)
    lr = np.empty(6)
    e0 = 0.0
    for i in range(4):
        e0 += a[i]
    start[0] = 0
    length[0] = 1
    lw0[0] = -beta * e0 + h
    lr[0] = 0.0
    m = 1
    lo = 1
    i = 0
    while i < 4 and a[i] <= 0:
        i += 1
    for _ in range(5):
        below = 0
        e_lo = 0.0
        for q in range(4):
            if a[q] < lo:
                below += 1
            e_lo += abs(lo - a[q])
        start[m] = lo
        lw0[m] = -beta * e_lo
        lr[m] = -beta * (2 * below - 4)
        if i >= 4:
            length[m] = -1
            m += 1
            break
        length[m] = a[i] - lo + 1
        m += 1
        lo = a[i] + 1
        while i < 4 and a[i] < lo:
            i += 1
    return start[:m], length[:m], lw0[:m], lr[:m]


@njit(cache=True)
def _segment_log_mass(length, lw0, lr):
    if length < 0:
        return lw0 - math.log(-math.expm1(lr))
    if lr == 0.0:
        return lw0 + math.log(length)
    # sum_{m<L} r^m = (1 - r^L) / (1 - r)
    if lr < 0.0:
        return lw0 + math.log(-math.expm1(lr * length)) - math.log(-math.expm1(lr))
    return lw0 + lr * (length - 1) + math.log(-math.expm1(-lr * length)) - math.log(-math.expm1(-lr))


@njit(cache=True)
def _draw(a, beta, h, u):
    """Inverse-CDF draw of the conditional height from one uniform."""
    start, length, lw0, lr = _segments(a, beta, h)
    m = len(start)
    lm = np.empty(m)
    top = -np.inf
    for j in range(m):
        lm[j] = _segment_log_mass(length[j], lw0[j], lr[j])
        if lm[j] > top:
            top = lm[j]
    mass = np.empty(m)
    total = 0.0
    for j in range(m):
        mass[j] = math.exp(lm[j] - top)
        total += mass[j]
    t = u * total
    for j in range(m):
        if t < mass[j] or j == m - 1:
            if length[j] == 1:
                return start[j]
            w0 = math.exp(lw0[j] - top)
            r = lr[j]
            if r == 0.0:
                k = int(t / w0)
            else:
                # smallest k with w0 (1 - e^{r(k+1)}) / (1 - e^r) > t
                x = t * (-math.expm1(r)) / w0
                if x >= 1.0 and r < 0.0:
                    k = length[j] - 1 if length[j] > 0 else 0
                else:
                    k = int(math.ceil(math.log1p(-x) / r)) - 1
                    if k < 0:
                        k = 0
            if length[j] > 0 and k > length[j] - 1:
                k = length[j] - 1
            return start[j] + k
        t -= mass[j]
    return start[m - 1]


def conditional_pmf(neighbours, beta: float, h: float, kmax: int) -> np.ndarray:
    """P(k), k = 0..kmax, of the single-site conditional as the sampler sees
    it (segment masses, not a direct normalisation)."""
    a = np.sort(np.asarray(neighbours, dtype=np.int64))
    start, length, lw0, lr = _segments(a, beta, h)
    lm = np.array([_segment_log_mass(L, w, r) for L, w, r in zip(length, lw0, lr)])
    top = lm.max()
    total = np.exp(lm - top).sum()
    out = np.zeros(kmax + 1)
    for s, L, w, r in zip(start, length, lw0, lr):
        end = kmax if L < 0 else min(kmax, s + L - 1)
        for k in range(s, end + 1):
            out[k] = math.exp(w + r * (k - s) - top) / total
    return out


def heat_bath_site(phi: np.ndarray, site, params: ModelParams, rand: float) -> int:
    """Resample phi[site] (array with collar) from the uniform `rand`; returns the new value."""
    i, j = site
    a = np.sort(np.array([phi[i - 1, j], phi[i + 1, j], phi[i, j - 1], phi[i, j + 1]], dtype=np.int64))
    phi[i, j] = _draw(a, params.beta, params.h, rand)
    return int(phi[i, j])


# --- sweeps ------------------------------------------------------------------

@njit(cache=True)
def _sweep(phi, beta, h, seed, sweep, order):
    nx = phi.shape[0] - 2
    ny = phi.shape[1] - 2
    n = nx * ny
    for s in range(n):
        order[s] = s
    if sweep % 2 == 1:
        for s in range(n - 1, 0, -1):
            j = int(uniform(seed, sweep, s, STREAM_ORDER) * (s + 1))
            t = order[s]
            order[s] = order[j]
            order[j] = t
    a = np.empty(4, np.int64)
    for idx in range(n):
        s = order[idx]
        x = s // ny + 1
        y = s % ny + 1
        a[0] = phi[x - 1, y]
        a[1] = phi[x + 1, y]
        a[2] = phi[x, y - 1]
        a[3] = phi[x, y + 1]
        a.sort()
        phi[x, y] = _draw(a, beta, h, uniform(seed, sweep, s, STREAM_SITE))


@njit(cache=True)
def _run(phi, beta, h, seed, first_sweep, nsweeps, cx, cy, contact, mean_h, centre, hist):
    nx = phi.shape[0] - 2
    ny = phi.shape[1] - 2
    order = np.empty(nx * ny, np.int64)
    top = len(hist) - 1
    for t in range(nsweeps):
        _sweep(phi, beta, h, seed, first_sweep + t, order)
        zeros = 0
        tot = 0
        for x in range(1, nx + 1):
            for y in range(1, ny + 1):
                v = phi[x, y]
                tot += v
                if v == 0:
                    zeros += 1
                hist[min(v, top)] += 1
        contact[t] = zeros / (nx * ny)
        mean_h[t] = tot / (nx * ny)
        centre[t] = phi[cx, cy]


@njit(cache=True)
def _run_pair(lo, hi, beta, h, seed, first_sweep, nsweeps, dominated, gap, contact_lo, contact_hi):
    nx = lo.shape[0] - 2
    ny = lo.shape[1] - 2
    order = np.empty(nx * ny, np.int64)
    for t in range(nsweeps):
        _sweep(lo, beta, h, seed, first_sweep + t, order)
        _sweep(hi, beta, h, seed, first_sweep + t, order)
        dom = 0
        g = 0
        zl = 0
        zh = 0
        for x in range(1, nx + 1):
            for y in range(1, ny + 1):
                if lo[x, y] <= hi[x, y]:
                    dom += 1
                g += hi[x, y] - lo[x, y]
                if lo[x, y] == 0:
                    zl += 1
                if hi[x, y] == 0:
                    zh += 1
        dominated[t] = dom / (nx * ny)
        gap[t] = g / (nx * ny)
        contact_lo[t] = zl / (nx * ny)
        contact_hi[t] = zh / (nx * ny)


# --- state and statistics ----------------------------------------------------

@dataclass
class ChainState:
    phi: np.ndarray          # (W+2) x (H+2), collar frozen at the boundary level
    params: ModelParams
    seed: int
    sweep: int = 0

    @property
    def field(self) -> np.ndarray:
        return self.phi[1:-1, 1:-1]

    @classmethod
    def flat(cls, size, params: ModelParams, seed: int, init: int | None = None) -> "ChainState":
        w, h = size
        phi = np.full((w + 2, h + 2), params.n, dtype=np.int64)
        phi[1:-1, 1:-1] = params.n if init is None else init
        return cls(phi, params, seed)


def integrated_autocorr_time(x: np.ndarray, c: float = 6.0) -> float:
    """tau_int with the automatic window M >= c tau (Sokal)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return 0.5
    y = x - x.mean()
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 0.5
    for m in range(1, n):
        tau += acf[m]
        if m >= c * tau:
            break
    return max(tau, 0.5)


@dataclass
class ObservableSeries:
    name: str
    samples: np.ndarray
    sweeps: np.ndarray
    n_batches: int = 20
    batch_means: np.ndarray = field(init=False)
    mean: float = field(init=False)
    stderr_batch: float = field(init=False)
    tau_int: float = field(init=False)
    stderr: float = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        nb = self.n_batches
        if len(x) < nb:
            raise ValueError(f"need at least {nb} samples for {nb} batches")
        usable = len(x) - len(x) % nb
        self.batch_means = x[:usable].reshape(nb, -1).mean(axis=1)
        self.mean = float(x.mean())
        self.stderr_batch = float(self.batch_means.std(ddof=1) / math.sqrt(nb))
        self.tau_int = integrated_autocorr_time(x)
        self.stderr = float(math.sqrt(2 * self.tau_int * x.var() / len(x)))


@dataclass
class ChainResult:
    series: dict
    state: ChainState
    burn_in: int
    histogram: np.ndarray
    percolation: list = field(default_factory=list)


def _burn_in(contact: np.ndarray, requested: int | None) -> int:
    if requested is not None:
        return requested
    half = contact[len(contact) // 2:]
    tau = integrated_autocorr_time(half)
    return int(min(len(contact) // 2, max(100, math.ceil(10 * tau))))


def run_chain(size, params: ModelParams, sweeps: int, seed: int,
              observables=("contact", "height", "center"), burn_in: int | None = None,
              state: ChainState | None = None, percolation_every: int | None = None,
              hist_max: int = 64) -> ChainResult:
    """Run `sweeps` heat-bath sweeps; alternate sweeps are raster and random order.

    The default burn-in is ten integrated autocorrelation times of the
    contact fraction, measured on the second half of the run.  With
    `percolation_every`, level-set statistics are taken every that many
    sweeps after burn-in.
    """
    if state is None:
        state = ChainState.flat(size, params, seed)
    w, h = state.field.shape
    cx, cy = w // 2 + 1, h // 2 + 1
    contact = np.empty(sweeps)
    mean_h = np.empty(sweeps)
    centre = np.empty(sweeps, dtype=np.int64)
    hist = np.zeros(hist_max + 1, dtype=np.int64)
    perc = []
    first = state.sweep

    def advance(done, step):
        _run(state.phi, params.beta, params.h, seed, first + done, step, cx, cy,
             contact[done:done + step], mean_h[done:done + step], centre[done:done + step], hist)

    if percolation_every:
        burn = burn_in if burn_in is not None else min(sweeps // 2, 1000)
        advance(0, burn)
        done = burn
        while done < sweeps:
            step = min(percolation_every, sweeps - done)
            advance(done, step)
            done += step
            perc.append(level_percolation(state.field, params.n))
    else:
        _run(state.phi, params.beta, params.h, seed, first, sweeps, cx, cy, contact, mean_h, centre, hist)
        burn = _burn_in(contact, burn_in)
    state.sweep = first + sweeps
    idx = np.arange(first, first + sweeps)
    series = {}
    keep = slice(burn, None)
    raw = {"contact": contact, "height": mean_h}
    for name in observables:
        if name in raw:
            series[name] = ObservableSeries(name, raw[name][keep], idx[keep])
        elif name == "center":
            for k in range(1, 4):
                series[f"center_ge_{k}"] = ObservableSeries(f"center_ge_{k}", (centre[keep] >= k).astype(float), idx[keep])
        elif name not in ("histogram", "percolation"):
            raise ValueError(f"unknown observable {name!r}")
    return ChainResult(series, state, burn, hist, perc)


def contact_fraction(x) -> float:
    """|phi^{-1}(0)| / |domain| for a field, or the mean of a contact series."""
    if isinstance(x, ObservableSeries):
        return x.mean
    if isinstance(x, ChainState):
        x = x.field
    x = np.asarray(x)
    return float(np.count_nonzero(x == 0) / x.size)


# --- level-set percolation ---------------------------------------------------

def _diameter(coords: np.ndarray) -> float:
    if len(coords) < 2:
        return 0.0
    if len(coords) > 4000:
        span = coords.max(axis=0) - coords.min(axis=0)
        return float(math.hypot(*span))
    return float(pdist(coords).max())


def level_percolation(field: np.ndarray, level: int) -> dict:
    """Components of phi = level (nearest-neighbour) and of phi > level,
    phi < level (star connectivity with the (1,1) diagonal).

    The field is indexed [x, y]; crossing means one level component touches
    all four sides.
    """
    f = np.asarray(field)
    on = f == level
    lab, k = ndimage.label(on, structure=NEAREST)
    largest = 0
    crossing_lr = crossing_tb = crossing = False
    if k:
        sizes = np.bincount(lab.ravel())[1:]
        largest = int(sizes.max())
        left, right = set(lab[0, :]) - {0}, set(lab[-1, :]) - {0}
        bottom, top = set(lab[:, 0]) - {0}, set(lab[:, -1]) - {0}
        lr = left & right
        tb = bottom & top
        crossing_lr = bool(lr)
        crossing_tb = bool(tb)
        crossing = bool(lr & tb)
    off_diam = 0.0
    off_mass = 0
    off_largest = 0
    for mask in (f > level, f < level):
        lab2, k2 = ndimage.label(mask, structure=STAR)
        off_mass += int(mask.sum())
        if not k2:
            continue
        sizes = np.bincount(lab2.ravel())[1:]
        off_largest = max(off_largest, int(sizes.max()))
        for sl, comp in zip(ndimage.find_objects(lab2), range(1, k2 + 1)):
            coords = np.argwhere(lab2[sl] == comp)
            off_diam = max(off_diam, _diameter(coords))
    return {"level": level, "largest_fraction": largest / f.size, "crossing": crossing,
            "crossing_lr": crossing_lr, "crossing_tb": crossing_tb,
            "off_level_mass": off_mass / f.size, "off_level_largest": off_largest,
            "max_off_level_diameter": off_diam}


# --- coupled chains ----------------------------------------------------------

@dataclass
class SandwichResult:
    dominated: np.ndarray
    gap: np.ndarray
    contact_low: np.ndarray
    contact_high: np.ndarray
    low: ChainState
    high: ChainState

    @property
    def always_dominated(self) -> bool:
        return bool(np.all(self.dominated == 1.0))


def sandwich_run(size, params: ModelParams, sweeps: int, seed: int,
                 low=(0, 0), high=None) -> SandwichResult:
    """Two chains driven by the same uniforms: `low` and `high` are
    (boundary level, initial height).  The default high chain starts flat at
    the boundary level of `params`."""
    if high is None:
        high = (params.n, params.n)
    lo_state = ChainState.flat(size, ModelParams(params.beta, params.u, low[0]), seed, low[1])
    hi_state = ChainState.flat(size, ModelParams(params.beta, params.u, high[0]), seed, high[1])
    dom = np.empty(sweeps)
    gap = np.empty(sweeps)
    cl = np.empty(sweeps)
    ch = np.empty(sweeps)
    _run_pair(lo_state.phi, hi_state.phi, params.beta, params.h, seed, 0, sweeps, dom, gap, cl, ch)
    lo_state.sweep = hi_state.sweep = sweeps
    return SandwichResult(dom, gap, cl, ch, lo_state, hi_state)


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(state: ChainState, path) -> None:
    p = state.params
    lines = [f"# beta={p.beta!r}", f"# u={p.u!r}", f"# level={p.n}", f"# seed={state.seed}",
             f"# sweep={state.sweep}", f"# size={state.field.shape[0]}x{state.field.shape[1]}"]
    lines += [" ".join(str(int(v)) for v in row) for row in state.field]
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path) -> ChainState:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, v = line[1:].strip().split("=", 1)
                meta[k] = v
            else:
                rows.append([int(v) for v in line.split()])
    params = ModelParams(float(meta["beta"]), float(meta["u"]), int(meta["level"]))
    w, h = (int(v) for v in meta["size"].split("x"))
    fld = np.array(rows, dtype=np.int64)
    if fld.shape != (w, h):
        raise ValueError(f"checkpoint field has shape {fld.shape}, header says {w}x{h}")
    state = ChainState.flat((w, h), params, int(meta["seed"]))
    state.phi[1:-1, 1:-1] = fld
    state.sweep = int(meta["sweep"])
    return state


def mid_interval_u(n: int, beta: float, alpha1: float = 1.0, alpha2: float = 1.0) -> float:
    """Geometric mean of the angular points u_{n+1} and u_n, where level n is
    expected to be active."""
    J = math.exp(-2 * beta)
    c = 2 * alpha2 / (alpha1 * (1 + J))
    if n == 0:
        return c * J ** 3 * 10
    return c * J ** (n + 2.5)
