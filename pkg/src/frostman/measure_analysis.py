"""Ball masses, Frostman-type ball profiles, dimension estimates and related
diagnostics for stage measures.

Balls are axis-parallel cubes B(c, r) = c + [-r, r]^d.  A stage measure spreads
each atom's weight uniformly over its cell, so ball masses are exact sums of
per-axis interval overlaps.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .cantor_core import CantorTree, StageMeasure, stage_measure
from .random_cantor import ancestors, descendant_count_array

OCTAVE_DENSITY = 8


def slow_growth_phi(R, t):
    """Phi_R(t) = exp(R sqrt(ln t)) for t >= 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise ValueError("slow_growth_phi needs t >= 1")
    if np.any(np.asarray(R) < 0):
        raise ValueError("slow_growth_phi needs R >= 0")
    out = np.exp(R * np.sqrt(np.log(t)))
    return float(out) if out.ndim == 0 else out


def log2_radius_grid(log2_lo: float, log2_hi: float, per_octave: int = OCTAVE_DENSITY) -> np.ndarray:
    n = int(round((log2_hi - log2_lo) * per_octave))
    return np.linspace(log2_lo, log2_hi, n + 1)


# ----------------------------------------------------------------------------
# ball masses


def _uniform(measure: StageMeasure) -> bool:
    w = measure.weights
    return w.size > 0 and bool(np.all(w == w[0]))


def _ball_mass_1d(measure: StageMeasure, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    # everything in cell units: cube i is [x_i, x_i + 1]
    scale = float(measure.M) * measure.cell
    xs = measure.coords[:, 0].astype(float) / scale
    unit = float(measure.M) / scale
    lo = (centers - radii) * unit
    hi = (centers + radii) * unit
    n = xs.size
    uniform = _uniform(measure)
    if not uniform:
        cw = np.concatenate([[0.0], np.cumsum(measure.weights)])
    i_lo = np.searchsorted(xs, lo, side="left")
    j = np.searchsorted(xs, hi - 1.0, side="right")
    full = np.maximum(j - i_lo, 0)
    if uniform:
        mass = full * measure.weights[0]
    else:
        mass = np.where(j > i_lo, cw[np.maximum(j, i_lo)] - cw[i_lo], 0.0)
    # cube straddling the left edge
    left = i_lo - 1
    ok = left >= 0
    xl = xs[np.clip(left, 0, n - 1)]
    ov = np.where(ok, np.minimum(xl + 1.0, hi) - np.maximum(xl, lo), 0.0)
    wl = measure.weights[np.clip(left, 0, n - 1)]
    mass = mass + np.where(ov > 0, ov, 0.0) * wl
    # cube straddling the right edge (starts inside the ball, ends beyond)
    ok = (j < n) & (j >= i_lo)
    xr = xs[np.clip(j, 0, n - 1)]
    ov = np.where(ok & (xr < hi), hi - xr, 0.0)
    mass = mass + np.minimum(ov, 1.0) * measure.weights[np.clip(j, 0, n - 1)]
    return mass


def _ball_mass_nd(measure: StageMeasure, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    a = measure.anchors
    cell = measure.cell
    out = np.empty(len(radii))
    for q in range(len(radii)):
        lo = centers[q] - radii[q]
        hi = centers[q] + radii[q]
        # offsets relative to each anchor, so tiny cells do not vanish in a + cell
        ov = np.clip((np.minimum(hi - a, cell) - np.maximum(lo - a, 0.0)) / cell, 0.0, 1.0)
        out[q] = np.sum(measure.weights * np.prod(ov, axis=1))
    return out


def ball_mass(measure: StageMeasure, center, radius):
    """Exact mass of the closed l-infinity ball(s) B(center, radius).

    ``center`` may be a single d-vector or an array of them (broadcast against
    ``radius``).  Returns a float for a single query.
    """
    c = np.asarray(center, dtype=float)
    r = np.asarray(radius, dtype=float)
    single = c.ndim <= 1 and r.ndim == 0
    d = measure.d
    c = c.reshape(-1, d)
    r = np.broadcast_to(r, (max(c.shape[0], r.size),)).astype(float)
    c = np.broadcast_to(c, (r.size, d))
    if np.any(r <= 0):
        raise ValueError("radius must be positive")
    if d == 1:
        # sorted needles keep the binary searches cache friendly
        order = np.argsort(c[:, 0] - r, kind="stable")
        m = np.empty(r.size)
        m[order] = _ball_mass_1d(measure, c[order, 0], r[order])
    else:
        m = _ball_mass_nd(measure, c, r)
    m = np.clip(m, 0.0, 1.0 if measure.weights.sum() <= 1 + 1e-12 else None)
    return float(m[0]) if single else m


# ----------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class BallProfile:
    direction: str
    alpha: float
    R: float
    center_id: np.ndarray
    log2_r: np.ndarray
    mass: np.ndarray
    ratio: np.ndarray
    below_resolution: np.ndarray

    def extreme_by_radius(self):
        """(log2 r values, per-radius sup or inf of the ratio)."""
        ok = ~self.below_resolution
        radii = np.unique(self.log2_r[ok])
        pick = np.max if self.direction == "upper" else np.min
        vals = np.array([pick(self.ratio[ok & (self.log2_r == lr)]) for lr in radii])
        return radii, vals

    @property
    def extreme(self) -> float:
        _, v = self.extreme_by_radius()
        return float(v.max() if self.direction == "upper" else v.min())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["center_id", "log2_r", "mass", "ratio"])
        for row in zip(self.center_id, self.log2_r, self.mass, self.ratio):
            w.writerow([int(row[0])] + [f"{x:.17g}" for x in row[1:]])
        return buf.getvalue()


def _log2_ratio(mass, log2_r, alpha, R, direction):
    s = np.sqrt(np.maximum(-log2_r * math.log(2), 0.0))
    with np.errstate(divide="ignore"):
        lm = np.log2(mass)
    if direction == "upper":
        return lm - alpha * log2_r - R * s / math.log(2)
    return lm - alpha * log2_r + R * s / math.log(2)


def scale_index(tree: CantorTree, log2_r: float) -> int:
    """Stage l with delta_{l+1} < r <= delta_l (0 when r > delta_1)."""
    ld = tree.schedule.log2_delta
    l = 0
    while l < len(ld) and ld[l] >= log2_r:
        l += 1
    return l


def candidate_centers(tree: CantorTree, log2_r: float, n_random: int = 32,
                      rng: np.random.Generator | None = None, cap: int = 100_000) -> np.ndarray:
    """Centers where the sup of a radius-r ball mass is likely attained.

    Anchors of the stage-l* cubes (l* matched to r) plus balls whose left or
    right edge is flush with a stage-(l*+1) cube, plus uniform random points.
    Candidate sets above ``cap`` are thinned deterministically by ``rng``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    sched = tree.schedule
    K = tree.depth
    r = 2.0**log2_r
    l = scale_index(tree, log2_r)
    pts = []
    for stage, shifts in ((l, (0.0,)), (min(l + 1, K), (r, -r))):
        if stage < 1:
            continue
        cub = tree.cubes(stage)
        M = float(sched.M(stage))
        a = cub.astype(float) / M
        if a.shape[0] > cap:
            a = a[rng.choice(a.shape[0], cap, replace=False)]
        for s in shifts:
            if s == 0.0:
                pts.append(a)
            elif s > 0:
                pts.append(a + r)
            else:
                pts.append(a + 1.0 / M - r)
    pts.append(rng.random((n_random, sched.d)))
    return np.vstack(pts)


def upper_ball_profile(measure: StageMeasure, centers, log2_radii, alpha: float,
                       R: float = 0.0, tree: CantorTree | None = None,
                       n_random: int = 32, seed: int = 0,
                       candidate_cap: int = 100_000) -> BallProfile:
    """Ratios mass / (r^alpha Phi_R(1/r)) over a centers x radii plan.

    ``centers`` is an array of points, or None to use ``candidate_centers`` of
    ``tree`` (which must then be given) separately for every radius.
    """
    rng = np.random.default_rng(seed)
    ids, lrs, masses, flags = [], [], [], []
    for lr in np.asarray(log2_radii, dtype=float):
        if centers is None:
            C = candidate_centers(tree, lr, n_random=n_random, rng=rng, cap=candidate_cap)
        else:
            C = np.asarray(centers, dtype=float).reshape(-1, measure.d)
        m = ball_mass(measure, C, np.full(C.shape[0], 2.0**lr))
        ids.append(np.arange(C.shape[0]))
        lrs.append(np.full(C.shape[0], lr))
        masses.append(np.atleast_1d(m))
        flags.append(np.full(C.shape[0], lr < measure.cell_log2_size))
    ids, lrs, masses, flags = map(np.concatenate, (ids, lrs, masses, flags))
    ratio = 2.0 ** _log2_ratio(masses, lrs, alpha, R, "upper")
    return BallProfile("upper", alpha, R, ids, lrs, masses, ratio, flags)


@dataclass(frozen=True)
class LowerProfile(BallProfile):
    floor_mass: np.ndarray = None
    floor_ratio: np.ndarray = None


def lower_ball_profile(measure: StageMeasure, v0, log2_radii, alpha: float, R: float = 0.0,
                       tree: CantorTree | None = None) -> LowerProfile:
    """Ratios mass * Phi_R(1/r) / r^alpha at a fixed center v0 in the support.

    When ``tree`` is given, the guaranteed floor is also reported: the mass of
    the stage-(l*+2) cube containing v0, which lies inside the ball.
    """
    v0 = np.asarray(v0, dtype=float).reshape(measure.d)
    cell = measure.cell
    a = measure.anchors
    inside = np.all((a <= v0 + 1e-15) & (v0 <= a + cell + 1e-15), axis=1)
    if not inside.any():
        raise ValueError("v0 is not within the finest selected cubes")
    lrs = np.asarray(log2_radii, dtype=float)
    mass = np.atleast_1d(ball_mass(measure, np.tile(v0, (lrs.size, 1)), 2.0**lrs))
    ratio = 2.0 ** _log2_ratio(mass, lrs, alpha, R, "lower")
    floor_mass = np.full(lrs.size, np.nan)
    if tree is not None:
        K = tree.depth
        sched = tree.schedule
        for i, lr in enumerate(lrs):
            stage = scale_index(tree, lr) + 2
            if stage > K:
                continue
            coord = np.floor(v0 * sched.M(stage)).astype(np.int64)
            coord = np.minimum(coord, sched.M(stage) - 1)
            anc = ancestors(tree.cubes(K), sched, K, stage)
            hit = np.all(anc == coord, axis=1)
            floor_mass[i] = measure.weights[hit].sum()
    floor_ratio = 2.0 ** _log2_ratio(floor_mass, lrs, alpha, R, "lower")
    return LowerProfile("lower", alpha, R, np.zeros(lrs.size, dtype=int), lrs, mass, ratio,
                        lrs < measure.cell_log2_size, floor_mass, floor_ratio)


def window_extremes(log2_r, values, windows, direction: str) -> np.ndarray:
    """Sup (upper) or inf (lower) of per-radius values inside each log2 window."""
    pick = np.max if direction == "upper" else np.min
    out = []
    for lo, hi in windows:
        sel = (log2_r >= lo - 1e-12) & (log2_r <= hi + 1e-12)
        out.append(pick(values[sel]))
    return np.array(out)


def decade_windows(log2_hi: float, n_decades: int = 3):
    """Consecutive one-decade windows (in log2 units) going down from r = 2^log2_hi."""
    dec = math.log2(10.0)
    return [(log2_hi - (i + 1) * dec, log2_hi - i * dec) for i in range(n_decades)]


def fit_slow_growth_R(log2_r, values, direction: str, alpha_shift: float = 0.0,
                      R_max: float = 20.0) -> float:
    """R >= 0 minimizing the log-range of values corrected by Phi_R.

    ``values`` are ratios computed with R = 0; the correction divides (upper)
    or multiplies (lower) by Phi_R(1/r).  The objective is convex in R.
    """
    lv = np.log(np.asarray(values, dtype=float))
    s = np.sqrt(-np.asarray(log2_r, dtype=float) * math.log(2))
    sign = -1.0 if direction == "upper" else 1.0

    def spread(R):
        x = lv + sign * R * s
        return x.max() - x.min()

    res = optimize.minimize_scalar(spread, bounds=(0.0, R_max), method="bounded",
                                   options={"xatol": 1e-8})
    return float(res.x) if spread(res.x) < spread(0.0) else 0.0


# ----------------------------------------------------------------------------
# dimension and weak-* diagnostics


@dataclass(frozen=True)
class DimensionEstimate:
    k: np.ndarray
    upper_seq: np.ndarray
    lower_seq: np.ndarray
    estimate: float
    lower_estimate: float
    residual: float
    target: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "upper_seq", "lower_seq"])
        for k, u, l in zip(self.k, self.upper_seq, self.lower_seq):
            w.writerow([int(k), f"{u:.17g}", f"{l:.17g}"])
        return buf.getvalue()


def _extrapolate(k, y):
    A = np.column_stack([np.ones_like(k, dtype=float), 1.0 / k])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0]), float(np.max(np.abs(A @ coef - y)))


def dimension_estimate(tree_or_schedule, counts=None, k_min: int = 2) -> DimensionEstimate:
    """Covering-number sequences and their least-squares limit in 1/k.

    upper_seq_k = log P_k / (-log delta_k); lower_seq_k =
    log(P_k / N_k^d) / (-log delta_{k-1}) (undefined, reported NaN, at k = 1).
    The estimate extrapolates upper_seq over k >= k_min linearly in 1/k.
    Accepts a tree or a schedule plus counts.
    """
    if isinstance(tree_or_schedule, CantorTree):
        sched = tree_or_schedule.schedule
        counts = tree_or_schedule.P
    else:
        sched = tree_or_schedule
    counts = np.asarray(counts, dtype=float)
    if np.any(counts <= 0):
        raise ValueError("dimension estimate needs a non-extinct tree")
    K = counts.size
    k = np.arange(1, K + 1)
    l2d = np.asarray(sched.log2_delta[:K])
    upper = np.log2(counts) / -l2d
    lower = np.full(K, np.nan)
    for i in range(1, K):
        lower[i] = (math.log2(counts[i]) - sched.d * math.log2(sched.Nk[i])) / -l2d[i - 1]
    sel = k >= k_min
    if sel.sum() >= 2:
        est, res = _extrapolate(k[sel], upper[sel])
        lsel = sel & ~np.isnan(lower)
        lest = _extrapolate(k[lsel], lower[lsel])[0] if lsel.sum() >= 2 else float("nan")
    else:
        est, res, lest = float(upper[-1]), 0.0, float(lower[-1])
    return DimensionEstimate(k, upper, lower, est, lest, res, sched.target_dimension())


def weak_star_gap(tree: CantorTree, k: int, k_prime: int) -> float:
    """sum over stage-k cubes Q of |mu_{k'}(Q) - mu_k(Q)|."""
    if not 1 <= k <= k_prime <= tree.depth:
        raise ValueError("need 1 <= k <= k' <= depth")
    Pk, Pkp = tree.P[k - 1], tree.P[k_prime - 1]
    if Pk == 0 or Pkp == 0:
        raise ValueError("weak_star_gap on an extinct stage")
    if k == k_prime:
        return 0.0
    q = descendant_count_array(tree, k, k_prime)
    # exact rational terms |q P_k - P_k'| / (P_k P_k'), summed as integers
    num = int(np.abs(q.astype(np.int64) * Pk - Pkp).sum(dtype=np.int64))
    return num / (Pk * Pkp)


def mass_distribution_measure(tree: CantorTree, k: int | None = None) -> StageMeasure:
    """Stage-k measure that splits mass equally among selected children.

    Parents without selected children lose their mass, so the total may be
    below one.  Atoms are the stage-k cubes with positive weight.
    """
    k = tree.depth if k is None else k
    if tree.extinct:
        raise ValueError("mass distribution on an extinct tree")
    w = np.full(tree.P[0], 1.0 / tree.P[0])
    for j in range(2, k + 1):
        par = tree.parents(j)
        nchild = np.bincount(par, minlength=tree.P[j - 2])
        w = w[par] / nchild[par]
    base = stage_measure(tree, k)
    return StageMeasure(k, base.cell_log2_size, base.coords, base.M, w)
