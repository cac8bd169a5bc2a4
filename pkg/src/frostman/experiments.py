"""Experiment drivers shared by the command line and the acceptance tests.

Each driver returns a result object carrying its gates (name, value,
threshold, verdict) and enough data to write the CSV reports.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import measure_analysis as ma
from . import random_cantor as rc
from . import schur_young as sy
from . import sphere_restriction as sr
from .cantor_core import CantorTree, ScaleSchedule, build_schedule, full_schedule, full_tree, stage_measure
from .kernel_lab import ShellEvaluator, candidate_centers, fit_decay_exponent, shell_decomposition


@dataclass
class Gate:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.6g} (limit {self.threshold:.6g}) {self.detail}".rstrip()

    def to_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "threshold": float(self.threshold),
                "passed": bool(self.passed), "detail": self.detail}


@dataclass
class Result:
    gates: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)

    def add(self, name, value, threshold, ok, detail="") -> Gate:
        g = Gate(name, float(value), float(threshold), bool(ok), detail)
        self.gates.append(g)
        return g


def worker_count() -> int:
    env = os.environ.get("FROSTMAN_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def pmap(fn, items):
    """Order-preserving map over a bounded thread pool."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def grow_ensemble(schedule: ScaleSchedule, seeds, pin_origin=False) -> list:
    return pmap(lambda s: rc.grow_conditioned(rc.GrowthConfig(schedule, int(s), pin_origin)), seeds)


def chain_ensemble(schedule: ScaleSchedule, seeds, pin_origin=False) -> np.ndarray:
    """One conditioned count chain per seed, stacked as (seeds, K)."""
    return np.vstack([rc.count_chain(schedule, 1, int(s), pin_origin) for s in seeds])


def ensemble_counts(ensemble) -> np.ndarray:
    if isinstance(ensemble, np.ndarray):
        return ensemble
    return np.array([t.P for t in ensemble], dtype=np.int64)


# ---------------------------------------------------------------- dimension and counts

def dimension_check(schedule: ScaleSchedule, ensemble, tol: float = 0.10, label="") -> Result:
    counts = ensemble_counts(ensemble)
    ests = [ma.dimension_estimate(schedule, c) for c in counts]
    mean = float(np.mean([e.estimate for e in ests]))
    target = schedule.target_dimension()
    res = Result(data={"estimates": ests, "mean": mean, "target": target})
    res.add(f"dimension{label}", abs(mean - target), tol, abs(mean - target) <= tol,
            f"mean estimate {mean:.4f}, target {target:.4f}")
    return res


def count_check(schedule: ScaleSchedule, ensemble, ratio_cap: float = 8.0, z_cap: float = 4.0,
                label="") -> Result:
    counts = ensemble_counts(ensemble)
    reports = [rc.count_statistics(schedule, c) for c in counts]
    summ = rc.ensemble_summary(reports)
    z = rc.conditional_mean_zscores(schedule, counts)
    res = Result(data={"reports": reports, "summary": summ, "z": z})
    w = summ["worst_two_sided"]
    res.add(f"count_ratio{label}", w, ratio_cap, w <= ratio_cap, "max over seeds, k of max(P/R, R/P)")
    zm = float(np.abs(z).max())
    res.add(f"conditional_mean{label}", zm, z_cap, zm <= z_cap, "max |z| over stages")
    return res


def weak_star_check(trees, k_small=2, k_large=4, factor=0.5) -> Result:
    K = trees[0].depth
    g_small = np.array([ma.weak_star_gap(t, k_small, K) for t in trees])
    g_large = np.array([ma.weak_star_gap(t, k_large, K) for t in trees])
    ms, ml = float(np.median(g_small)), float(np.median(g_large))
    res = Result(data={"gaps_small": g_small, "gaps_large": g_large})
    res.add("weak_star_halving", ml / ms, factor, ml < factor * ms,
            f"median gap k={k_large}: {ml:.4f}, k={k_small}: {ms:.4f}")
    return res


def extinction_check(schedule: ScaleSchedule, trials=10_000, seed=0, n_sigma=3.0) -> Result:
    rep = rc.extinction_probability(schedule, trials, seed)
    bound = rep.partial_sum + n_sigma * rep.sigma
    res = Result(data={"report": rep})
    res.add("extinction", rep.probability, bound, rep.probability <= bound,
            f"partial sum {rep.partial_sum:.4g}, sigma {rep.sigma:.3g}")
    return res


# ---------------------------------------------------------------- ball conditions

def default_ball_windows(schedule: ScaleSchedule, n_decades: int = 3):
    """Three one-decade windows centered (in log r) between the finest scale and 1."""
    mid = schedule.log2_delta[-1] / 2
    top = mid + n_decades * math.log2(10) / 2
    return ma.decade_windows(top, n_decades)


def _window_variation(log2_r, values, windows, direction, fit_R=True):
    R = ma.fit_slow_growth_R(log2_r, values, direction) if fit_R else 0.0
    s = np.sqrt(-np.asarray(log2_r) * math.log(2))
    corr = values * np.exp((-R if direction == "upper" else R) * s)
    w = ma.window_extremes(log2_r, corr, windows, direction)
    return float(w.max() / w.min()), R, w


def ball_check(trees, alpha: float, seeds=None, windows=None, per_octave: int = 8, candidate_cap: int = 20_000,
               upper_cap: float = 4.0, lower_cap: float = 8.0) -> Result:
    """Upper sup and lower (origin) inf of the ball ratios per decade window, per tree."""
    windows = default_ball_windows(trees[0].schedule) if windows is None else windows
    lo = min(w[0] for w in windows)
    hi = max(w[1] for w in windows)
    lr = ma.log2_radius_grid(lo, hi, per_octave)

    def one(item):
        seed, tree = item
        mu = stage_measure(tree, tree.depth)
        up = ma.upper_ball_profile(mu, None, lr, alpha, tree=tree, seed=seed,
                                   candidate_cap=candidate_cap)
        low = ma.lower_ball_profile(mu, np.zeros(tree.schedule.d), lr, alpha, tree=tree)
        r, v = up.extreme_by_radius()
        uvar, uR, uw = _window_variation(r, v, windows, "upper")
        lvar, lR, lw = _window_variation(lr, low.ratio, windows, "lower")
        return {"seed": seed, "upper": up, "lower": low, "upper_var": uvar, "upper_R": uR,
                "upper_windows": uw, "lower_var": lvar, "lower_R": lR, "lower_windows": lw}

    seeds = range(len(trees)) if seeds is None else seeds
    rows = pmap(one, list(zip(seeds, trees)))
    res = Result(data={"rows": rows, "windows": windows, "log2_r": lr})
    uv = max(r["upper_var"] for r in rows)
    lv = max(r["lower_var"] for r in rows)
    lmin = min(float(r["lower_windows"].min()) for r in rows)
    res.add("ball_upper_variation", uv, upper_cap, uv <= upper_cap,
            "worst seed, sup per decade window after the Phi_R correction")
    res.add("ball_lower_variation", lv, lower_cap, lv <= lower_cap and lmin > 0,
            f"worst seed, inf per decade window at the origin; smallest floor {lmin:.3g}")
    return res


# ---------------------------------------------------------------- kernels

def kernel_check(measures, n: int = 2, alpha: float = 0.5, ps=(0.5, 1.0, 2.0, 4.0, 8.0),
                 log2_lambdas=None, tol: float = 0.10, recon_tol: float = 1e-9,
                 shell_probe_lambda: float = 2.0**20) -> Result:
    """Decay-slope fits of sup frak_A on every measure, plus a shell reconstruction probe."""
    ll = np.arange(4.0, 39.0, 2.0) if log2_lambdas is None else np.asarray(log2_lambdas, float)

    def one(mu):
        ev = ShellEvaluator(mu, candidate_centers(mu, ll))
        return [fit_decay_exponent(mu, p, n, alpha, ll, tol, evaluator=ev) for p in ps]

    fits = pmap(one, measures)
    res = Result(data={"fits": fits, "log2_lambdas": ll})
    for j, p in enumerate(ps):
        devs = [f[j].deviation for f in fits]
        worst = int(np.argmax(devs))
        f = fits[worst][j]
        tag = " (log-corrected)" if f.meta.get("log_corrected") else ""
        res.add(f"kernel_slope_p={p:g}", max(devs), tol, max(devs) <= tol,
                f"worst slope {f.slope:.4f} vs {f.target:.4f}{tag}")
    mu = measures[0]
    rng = np.random.default_rng(0)
    errs = []
    for u in (np.zeros(mu.d), mu.anchors[rng.integers(mu.size)], rng.random(mu.d)):
        for p in ps:
            terms, total = shell_decomposition(mu, u, shell_probe_lambda, p, n)
            direct = math.fsum(t.contribution for t in terms)
            errs.append(abs(direct - total) / abs(total))
    err = max(errs)
    res.add("shell_reconstruction", err, recon_tol, err <= recon_tol, "relative, worst probe")
    return res


# ---------------------------------------------------------------- Young

def young_check(instances=1000, trials=1000, seed=0, climb_steps=200, tol=1e-9,
                brute_instances=1000, brute_max=64, app_measure=None) -> Result:
    rng = np.random.default_rng(seed)
    reports = []
    insts = [sy.random_instance(rng) for _ in range(instances - 1)]
    if app_measure is None:
        pts = rng.random((48, 1))
        w = np.full(48, 1.0 / 48)
    else:
        pts, w = app_measure
    insts.append(sy.application_instance(pts, w, 64.0, 4.0, 2))
    for i, inst in enumerate(insts):
        reports.append(sy.verify_young_inequality(inst, trials, seed + i, climb_steps, tol))
    worst = max(r.max_ratio for r in reports)
    fails = sum(r.verdict != "PASS" for r in reports)
    res = Result(data={"reports": reports})
    res.add("young_violations", fails, 0, fails == 0, f"max ratio {worst:.17g}")
    gaps = []
    for _ in range(brute_instances):
        inst = sy.random_instance(rng, max_size=brute_max, triple=(1, 2, 2))
        A, B = sy.schur_bounds(inst)
        gaps.append(sy.brute_operator_norm_2_2(inst) - math.sqrt(A * B))
    g = max(gaps)
    res.add("schur_2_2_bound", g, tol, g <= tol, "max of brute norm minus sqrt(A1 B1)")
    return res


# ---------------------------------------------------------------- sphere

def cantor_arc(tree: CantorTree, length: float = 1.0, placement: str = "meridian") -> sr.ArcMeasure:
    return sr.ArcMeasure(stage_measure(tree, tree.depth), length, placement)


def lebesgue_arc(depth: int = 16, length: float = 1.0, placement: str = "meridian") -> sr.ArcMeasure:
    tree = full_tree(full_schedule(2, 1, depth))
    return sr.ArcMeasure(stage_measure(tree, depth), length, placement)


def sphere_check(cantor_arc_measure: sr.ArcMeasure, epsilon: float = 0.5, p: float = 8.0,
                 degrees=None, tol: float = 0.10, hw_tol: float = 0.05, hw_arc=None,
                 l2_degrees=(1, 16, 128, 1024), l2_tol: float = 1e-8) -> Result:
    degrees = sr.degree_grid(16, 512, 2) if degrees is None else degrees
    row = sr.exponent_table(2, 1, epsilon, p)
    kap, vth, tht = float(row.kappa), float(row.vartheta), float(row.theta)
    res = Result()
    zf = sr.fit_restriction_exponent("zonal", cantor_arc_measure, p, degrees, tht, tol)
    res.add("sphere_zonal_sandwich", zf.slope, vth + tol, kap - tol <= zf.slope <= vth + tol,
            f"slope {zf.slope:.4f} in [{kap - tol:.4f}, {vth + tol:.4f}]")
    res.add("sphere_zonal_theta", zf.deviation, tol, zf.passed,
            f"slope {zf.slope:.4f} vs {tht:.4f}")
    hw_arc = lebesgue_arc(16, 1.0, "equator") if hw_arc is None else hw_arc
    hw_deg = sr.degree_grid(16, 2048, 2)
    hf = sr.fit_restriction_exponent("highest_weight", hw_arc, p, hw_deg, 0.25, hw_tol)
    res.add("sphere_highest_weight", hf.deviation, hw_tol, hf.passed, f"slope {hf.slope:.4f} vs 0.25")
    err = max(abs(sr.zonal_l2_norm(l) - 1) for l in l2_degrees)
    res.add("sphere_zonal_l2", err, l2_tol, err <= l2_tol, "quadrature of |Y_l|^2")
    res.data = {"zonal": zf, "highest_weight": hf}
    return res


# ---------------------------------------------------------------- exponent identities

def exponent_identity_check(n_values=(2, 3), eps_values=(0, 0.5), grid_points=100) -> Result:
    """Exact continuity at every kink and kappa = theta beyond max(2, p*)."""
    from fractions import Fraction

    bad = []
    checked = 0
    for n in n_values:
        for d in range(1, n + 1):
            for eps in eps_values:
                e = Fraction(eps).limit_denominator(1000)
                alpha = d * (1 - e)
                p0 = 4 * alpha / (n - 1)
                kinks = [Fraction(2 * (n + 1), n - 1), Fraction(2 * n, n - 1), p0]
                for pk in kinks:
                    if pk < 2:
                        continue
                    ik, h = 1 / pk, Fraction(1, 1000)
                    at = lambda fn, x: fn(1 / x)
                    for name, fn in (("sogge", lambda p: sr.sogge_delta(n, p)),
                                     ("bgt", lambda p: sr.bgt_delta(n, d, p)),
                                     ("theta", lambda p: sr.theta(n, d, e, p)),
                                     ("vartheta", lambda p: sr.vartheta(n, alpha, p))):
                        # each piece is affine in 1/p: extrapolate both sides to the kink
                        checked += 1
                        mid = at(fn, ik)
                        right = 2 * at(fn, ik + h) - at(fn, ik + 2 * h)
                        ok = right == mid
                        if ik - 2 * h > 0:
                            left = 2 * at(fn, ik - h) - at(fn, ik - 2 * h)
                            ok = ok and left == mid
                        if not ok:
                            bad.append((n, d, eps, name, pk))
                start = max(Fraction(2), p0)
                for i in range(grid_points):
                    p = start + Fraction(i, 4)
                    checked += 1
                    if sr.kappa(n, alpha, p) != sr.theta(n, d, e, p):
                        bad.append((n, d, eps, "kappa=theta", p))
    res = Result(data={"violations": bad, "checked": checked})
    res.add("exponent_identities", len(bad), 0, not bad, f"{checked} exact checks")
    return res


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


__all__ = [name for name in dir() if not name.startswith("_")]
