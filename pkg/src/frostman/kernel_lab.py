"""Kernel sums A(u, lam; p) = int <lam (u - v)>^{-p(n-1)/4} dmu(v) and their
decay in lam.

``frak_A`` is the exact atom sum.  Supremum scans over many centers use
``ShellEvaluator``, which groups the atoms around each center into dyadic
distance shells 2^-j-1 < |u - v| <= 2^-j (the decomposition behind the decay
estimate) and each shell into equal-width bins represented by their exact mass
centroid, so one precomputation serves every (lam, p) pair.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .cantor_core import StageMeasure
from .measure_analysis import ball_mass


class ResolutionError(ValueError):
    """A requested frequency or degree exceeds what the stage measure resolves."""


def japanese_bracket(x):
    """<x> = sqrt(1 + |x|^2)."""
    out = np.hypot(1.0, np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def bracket_power(x, s):
    """<x>^{-s}, computed as exp(-s/2 log1p(x^2)) to stay accurate for small x."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * s * np.log1p(x * x))


def kernel_exponent(p: float, n: int) -> float:
    return p * (n - 1) / 4.0


def critical_p_star(alpha: float, n: int) -> float:
    """p* = 4 alpha / (n - 1)."""
    return 4.0 * alpha / (n - 1)


def beta_target(p: float, n: int, alpha: float) -> float:
    """Decay exponent p(n-1)/4 below p*, alpha above (continuous at p*)."""
    if p <= 0 or n < 2 or alpha <= 0:
        raise ValueError("need p > 0, n >= 2, alpha > 0")
    return min(p * (n - 1) / 4.0, alpha)


def max_log2_lambda(measure: StageMeasure) -> float:
    """Largest admissible log2 lam: lam * delta_K <= 2^-4."""
    return -measure.cell_log2_size - 4.0


def _check_lambda(measure: StageMeasure, lam) -> None:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam < 1):
        raise ValueError("lam must be >= 1")
    if np.any(np.log2(lam) > max_log2_lambda(measure) + 1e-9):
        raise ResolutionError(
            f"lam = 2^{np.log2(lam).max():.2f} exceeds the resolution cap "
            f"2^{max_log2_lambda(measure):.2f} of the stage measure"
        )


def frak_A(measure: StageMeasure, u, lam: float, p: float, n: int,
           check_resolution: bool = True) -> float:
    """Exact kernel sum over the atoms (Euclidean distances, fsum reduction)."""
    if check_resolution:
        _check_lambda(measure, lam)
    u = np.asarray(u, dtype=float).reshape(measure.d)
    dist = np.sqrt(np.sum((measure.anchors - u) ** 2, axis=1))
    vals = measure.weights * bracket_power(lam * dist, kernel_exponent(p, n))
    return math.fsum(vals.tolist())


@dataclass(frozen=True)
class ShellTerm:
    j: int
    lo: float
    hi: float
    mass: float
    contribution: float
    bound: float


def shell_decomposition(measure: StageMeasure, u, lam: float, p: float, n: int):
    """Split the exact kernel sum at u over dyadic distance shells.

    Shell j collects atoms with 2^-j-1 < |u - v| <= 2^-j for j < j0 =
    floor(log2 lam); the last shell is |u - v| <= 2^-j0.  Returns the shell
    terms and the exact total; ``bound`` is the shell mass times the kernel at
    the shell's inner radius, whose sum dominates the total.
    """
    u = np.asarray(u, dtype=float).reshape(measure.d)
    s = kernel_exponent(p, n)
    dist = np.sqrt(np.sum((measure.anchors - u) ** 2, axis=1))
    vals = measure.weights * bracket_power(lam * dist, s)
    total = math.fsum(vals.tolist())
    j0 = int(math.floor(math.log2(lam)))
    j_min = -int(math.ceil(0.5 * math.log2(measure.d))) - 1
    pos = dist > 0
    j = np.full(dist.shape, j0, dtype=np.int64)
    jj = np.floor(-np.log2(dist[pos])).astype(np.int64)
    # repair rounding so that 2^-j-1 < dist <= 2^-j holds exactly
    jj = np.where(2.0**-jj < dist[pos], jj - 1, jj)
    jj = np.where(2.0 ** -(jj + 1) >= dist[pos], jj + 1, jj)
    j[pos] = np.minimum(jj, j0)
    terms = []
    for jj in range(j_min, j0 + 1):
        sel = j == jj
        lo = 0.0 if jj == j0 else 2.0 ** -(jj + 1)
        hi = 2.0**-jj
        mass = math.fsum(measure.weights[sel].tolist())
        contrib = math.fsum(vals[sel].tolist())
        bound = mass * float(bracket_power(lam * lo, s))
        terms.append(ShellTerm(jj, lo, hi, mass, contrib, bound))
    return terms, total


def near_field_floor(measure: StageMeasure, u, lam: float, p: float, n: int) -> float:
    """mu(B(u, 1/lam)) * 2^{-p(n-1)/8}, a lower bound for the kernel sum.

    The ball mass comes from the cell-spread l-infinity query, shrunk so every
    contributing cell has its atom inside the Euclidean 1/lam ball.
    """
    r = (1.0 / lam) / math.sqrt(measure.d) - measure.cell
    if r <= 0:
        return 0.0
    return ball_mass(measure, u, r) * 2.0 ** (-kernel_exponent(p, n) / 2)


# ----------------------------------------------------------------------------
# shell evaluator


class ShellEvaluator:
    """Binned dyadic-shell representation of a 1-D measure around fixed centers.

    Centers are snapped to the measure's coordinate grid.  For uniform weights
    bin centroids are exact (integer prefix sums taken modulo 2^64); otherwise
    bins are placed at their weighted centroid in floating point.
    """

    def __init__(self, measure: StageMeasure, centers, bins_per_shell: int = 32):
        if measure.d != 1:
            raise NotImplementedError("shell evaluator is one-dimensional")
        self.measure = measure
        M = measure.M
        cu = np.rint(np.asarray(centers, dtype=float).reshape(-1) * M).astype(np.int64)
        self.center_coords = cu
        self.centers = cu / M
        x = measure.coords[:, 0]
        w = measure.weights
        uniform = bool(np.all(w == w[0]))
        cw = np.concatenate([[0.0], np.cumsum(w)])
        with np.errstate(over="ignore"):
            cx = np.concatenate([np.zeros(1, np.uint64), np.cumsum(x.astype(np.uint64))])
        cwx = np.concatenate([[0.0], np.cumsum(w * (x.astype(float) / M))])
        # grid units: one unit = 1/M
        cell_units = measure.cell * M
        J = int(math.ceil(-math.log2(measure.cell))) + 2
        rho = 2.0 ** -(J + 1) * M  # core radius in grid units (< a quarter cell)
        B = bins_per_shell
        levels = np.arange(0, J + 1)
        t = np.arange(B + 1) / B
        # distance edges per level in grid units, shape (L, B+1)
        edges = (2.0 ** -(levels[:, None] + 1)) * (1.0 + t[None, :]) * M
        dist_list, mass_list = [], []
        for side in (+1, -1):
            pos = cu[:, None, None] + side * edges[None, :, :]
            if side > 0:
                idx = np.searchsorted(x, pos.ravel(), side="right").reshape(pos.shape)
                a, b = idx[:, :, :-1], idx[:, :, 1:]
            else:
                idx = np.searchsorted(x, pos.ravel(), side="left").reshape(pos.shape)
                a, b = idx[:, :, 1:], idx[:, :, :-1]
            cnt = b - a
            mass = cw[b] - cw[a]
            if uniform:
                with np.errstate(over="ignore"):
                    sx = (cx[b] - cx[a]) - cnt.astype(np.uint64) * cu[:, None, None].astype(np.uint64)
                off = sx.view(np.int64).astype(float) / np.maximum(cnt, 1)
                dist = np.abs(off) / M
                mass = cnt * w[0]
            else:
                cen = (cwx[b] - cwx[a]) / np.where(mass > 0, mass, 1.0)
                dist = np.abs(cen - self.centers[:, None, None])
            dist_list.append(dist.reshape(len(cu), -1))
            mass_list.append(mass.reshape(len(cu), -1))
        lo = np.searchsorted(x, cu - rho, side="left")
        hi = np.searchsorted(x, cu + rho, side="right")
        core = cw[hi] - cw[lo]
        dist = np.hstack(dist_list)
        mass = np.hstack(mass_list)
        keep = mass.max(axis=0) > 0
        self.dist = dist[:, keep]
        self.mass = mass[:, keep]
        self.core = core
        self.cell_units = cell_units

    def values(self, lam: float, p: float, n: int) -> np.ndarray:
        s = kernel_exponent(p, n)
        k = bracket_power(lam * self.dist, s)
        return self.core + np.sum(self.mass * k, axis=1)


def candidate_centers(measure: StageMeasure, log2_lambdas, per_scale: int = 16,
                      n_random: int = 10, seed: int = 0) -> np.ndarray:
    """Atoms sitting in the heaviest windows of width ~1/lam, pooled over lam.

    For each lam the line is cut into bins of width 2^-ceil(log2 lam); the
    ``per_scale`` heaviest pairs of adjacent bins contribute the atom nearest
    their mass centroid.  ``n_random`` uniform points (times d) are appended.
    """
    x = measure.anchors[:, 0]
    w = measure.weights
    out = []
    for ll in np.asarray(log2_lambdas, dtype=float):
        width = 2.0 ** -math.ceil(ll)
        b = np.floor(x / width).astype(np.int64)
        ub, start = np.unique(b, return_index=True)
        mass = np.add.reduceat(w, start)
        mx = np.add.reduceat(w * x, start)
        nxt = np.searchsorted(ub, ub + 1)
        has = nxt < ub.size
        has[has] = ub[nxt[has]] == ub[has] + 1
        pair_mass = mass + np.where(has, mass[np.minimum(nxt, ub.size - 1)], 0.0)
        pair_mx = mx + np.where(has, mx[np.minimum(nxt, ub.size - 1)], 0.0)
        top = np.argsort(-pair_mass, kind="stable")[:per_scale]
        cen = pair_mx[top] / pair_mass[top]
        i = np.clip(np.searchsorted(x, cen), 1, x.size - 1)
        nearest = np.where(np.abs(x[i] - cen) < np.abs(x[i - 1] - cen), x[i], x[i - 1])
        out.append(nearest)
    rng = np.random.default_rng(seed)
    out.append(rng.random(n_random * measure.d))
    return np.unique(np.concatenate(out))


def sup_frak_A(measure: StageMeasure, lam: float, p: float, n: int, centers=None,
               n_random: int = 10, seed: int = 0) -> float:
    """max over centers of the kernel sum.

    Default centers: every atom plus ``n_random`` * d uniform points when the
    measure has at most 2048 atoms (exact sums); otherwise the pooled heavy
    windows of ``candidate_centers`` evaluated with ``ShellEvaluator``.
    """
    _check_lambda(measure, lam)
    if centers is not None:
        C = np.asarray(centers, dtype=float).reshape(-1, measure.d)
        return max(frak_A(measure, c, lam, p, n) for c in C)
    if measure.size <= 2048 or measure.d != 1:
        rng = np.random.default_rng(seed)
        C = np.vstack([measure.anchors, rng.random((n_random * measure.d, measure.d))])
        return max(frak_A(measure, c, lam, p, n) for c in C)
    C = candidate_centers(measure, [math.log2(lam)], n_random=n_random, seed=seed)
    return float(ShellEvaluator(measure, C).values(lam, p, n).max())


# ----------------------------------------------------------------------------
# fits


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares slope of log2 values against log2 of the scale variable."""

    log2_x: np.ndarray
    log2_y: np.ndarray
    slope: float
    intercept: float
    max_residual: float
    target: float
    tolerance: float
    meta: dict = field(default_factory=dict)

    @property
    def deviation(self) -> float:
        return abs(self.slope - self.target)

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance

    def to_csv(self, header=True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["p", "n", "alpha", "log2_lambda", "log2_sup", "slope", "target", "residual"])
        res = self.log2_y - (self.intercept + self.slope * self.log2_x)
        for lx, ly, r in zip(self.log2_x, self.log2_y, res):
            w.writerow([f"{self.meta.get('p', float('nan')):.17g}", self.meta.get("n", ""),
                        f"{self.meta.get('alpha', float('nan')):.17g}", f"{lx:.17g}",
                        f"{ly:.17g}", f"{self.slope:.17g}", f"{self.target:.17g}", f"{r:.17g}"])
        return buf.getvalue()


def loglog_fit(log2_x, log2_y, target: float, tolerance: float = 0.1, meta=None,
               min_points: int = 5, min_octaves: float = 4.0) -> ExponentFit:
    log2_x = np.asarray(log2_x, dtype=float)
    log2_y = np.asarray(log2_y, dtype=float)
    if log2_x.size < min_points or np.ptp(log2_x) < min_octaves:
        raise ValueError(
            f"degenerate grid: need >= {min_points} points spanning >= {min_octaves} octaves"
        )
    A = np.column_stack([np.ones_like(log2_x), log2_x])
    coef, *_ = np.linalg.lstsq(A, log2_y, rcond=None)
    res = log2_y - A @ coef
    return ExponentFit(log2_x, log2_y, float(coef[1]), float(coef[0]),
                       float(np.abs(res).max()), float(target), float(tolerance), dict(meta or {}))


def fit_decay_exponent(measure: StageMeasure, p: float, n: int, alpha: float, log2_lambdas,
                       tolerance: float = 0.1, centers=None, evaluator: ShellEvaluator | None = None,
                       log_correct: bool | None = None) -> ExponentFit:
    """Fit log sup A against log lam and compare the slope with -beta_p.

    At p = p* one factor log lam is divided out before fitting (pass
    ``log_correct`` to force the choice).
    """
    ll = np.asarray(log2_lambdas, dtype=float)
    _check_lambda(measure, 2.0**ll)
    if log_correct is None:
        log_correct = math.isclose(p, critical_p_star(alpha, n), rel_tol=1e-12)
    if evaluator is None and centers is None and measure.size > 2048 and measure.d == 1:
        evaluator = ShellEvaluator(measure, candidate_centers(measure, ll))
    sups = []
    for x in ll:
        lam = 2.0**x
        if evaluator is not None:
            v = float(evaluator.values(lam, p, n).max())
        else:
            v = sup_frak_A(measure, lam, p, n, centers=centers)
        if log_correct:
            v /= math.log(lam)
        sups.append(math.log2(v))
    meta = {"p": p, "n": n, "alpha": alpha, "log_corrected": log_correct}
    return loglog_fit(ll, sups, -beta_target(p, n, alpha), tolerance, meta)
