"""Seeded random growth of Cantor trees and their count statistics.

Every child cube is kept independently with probability p_k.  Instead of one
Bernoulli draw per child, each parent walks through its children with
geometric gaps; the gap uniforms come from a stateless hash of
(master seed, rejection round, stage, parent coordinates, gap ordinal), so the
sampled tree does not depend on traversal order, batching or worker count.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .cantor_core import (
    CantorTree,
    ScaleSchedule,
    _freeze,
    _sort_rows,
    child_offsets,
    row_keys,
)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class ExtinctionError(RuntimeError):
    def __init__(self, rounds: int):
        super().__init__(f"all {rounds} growth rounds went extinct before stage K")
        self.extinct_rounds = rounds


def _mix(x):
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * _M1
        x = x ^ (x >> np.uint64(27))
        x = x * _M2
        return x ^ (x >> np.uint64(31))


def _absorb(h, v):
    with np.errstate(over="ignore"):
        return _mix(h + _GOLDEN + np.asarray(v).astype(np.uint64))


def stream_key(master_seed: int, round_: int, k: int) -> np.uint64:
    h = _mix(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF))
    h = _absorb(h, round_)
    return _absorb(h, k)


def hashed_uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniforms in (0,1) from (key, counter) pairs, broadcasting."""
    h = _absorb(keys, counters)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class GrowthConfig:
    schedule: ScaleSchedule
    master_seed: int
    pin_origin: bool = False
    max_rejections: int = 1000

    def __post_init__(self):
        if self.max_rejections < 1:
            raise ValueError("max_rejections must be >= 1")


def _parent_keys(base: np.uint64, parents: np.ndarray) -> np.ndarray:
    h = np.full(parents.shape[0], base, dtype=np.uint64)
    for a in range(parents.shape[1]):
        h = _absorb(h, parents[:, a])
    return h


def sample_children(parents: np.ndarray, n_children: int, p: float, key: np.uint64):
    """Selected (parent row, child ordinal) pairs with iid Bernoulli(p) bits."""
    m = parents.shape[0]
    if m == 0 or p <= 0.0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if p >= 1.0:
        pi = np.repeat(np.arange(m), n_children)
        ci = np.tile(np.arange(n_children), m)
        return pi, ci
    pkeys = _parent_keys(key, parents)
    log_q = math.log1p(-p)
    mean = n_children * p
    batch = int(min(n_children, mean + 6.0 * math.sqrt(mean) + 16)) + 1
    pos = np.full(m, -1, dtype=np.int64)
    active = np.arange(m)
    ordinal = 0
    out_p, out_c = [], []
    while active.size:
        j = np.arange(ordinal, ordinal + batch, dtype=np.uint64)
        u = hashed_uniforms(pkeys[active][:, None], j[None, :])
        gaps = np.minimum(np.floor(np.log(u) / log_q), n_children).astype(np.int64)
        cum = pos[active][:, None] + np.cumsum(gaps + 1, axis=1)
        hit = cum < n_children
        r, c = np.nonzero(hit)
        out_p.append(active[r])
        out_c.append(cum[r, c])
        pos[active] = cum[:, -1]
        active = active[pos[active] < n_children]
        ordinal += batch
    return np.concatenate(out_p), np.concatenate(out_c)


def _grow_once(schedule: ScaleSchedule, seed: int, round_: int, pin: bool):
    d = schedule.d
    parents = np.zeros((1, d), dtype=np.int64)
    stages = []
    for k in range(1, schedule.K + 1):
        n = schedule.Nk[k - 1]
        nc = n**d
        pi, ci = sample_children(parents, nc, schedule.p[k - 1], stream_key(seed, round_, k))
        if d == 1:
            offs = ci[:, None]
        else:
            offs = np.stack(np.unravel_index(ci, (n,) * d), axis=1)
        children = parents[pi] * n + offs
        if d == 1:
            children = np.sort(children[:, 0], kind="stable")[:, None]
        else:
            children = _sort_rows(children)
        if pin and not (children.shape[0] and np.all(children[0] == 0)):
            children = np.vstack([np.zeros((1, d), dtype=np.int64), children])
        children = _freeze(children)
        stages.append(children)
        if children.shape[0] == 0:
            return stages, False
        parents = children
    return stages, True


def grow(schedule: ScaleSchedule, seed: int, round_: int = 0, pin_origin: bool = False) -> CantorTree:
    """One unconditioned realization (may be extinct; extinct stages stay empty)."""
    stages, _ = _grow_once(schedule, seed, round_, pin_origin)
    while len(stages) < schedule.K:
        stages.append(_freeze(np.zeros((0, schedule.d), dtype=np.int64)))
    return CantorTree(schedule, tuple(stages), pin_origin)


def grow_conditioned(config: GrowthConfig) -> CantorTree:
    """Tree conditioned on survival through stage K, by rejection of whole rounds."""
    for round_ in range(config.max_rejections):
        stages, alive = _grow_once(config.schedule, config.master_seed, round_, config.pin_origin)
        if alive:
            return CantorTree(config.schedule, tuple(stages), config.pin_origin)
    raise ExtinctionError(config.max_rejections)


# ----------------------------------------------------------------------------
# count-only chains


def count_chain(schedule: ScaleSchedule, trials: int, seed: int, pin_origin: bool = False,
                conditioned: bool = True, max_rounds: int = 1000) -> np.ndarray:
    """Stage counts (trials, K) drawn from the exact law of the count process.

    Given P_{k-1}, the count P_k is Binomial(P_{k-1} N_k^d, p_k): the sum of the
    independent child bits.  This lets deep schedules whose trees are too large
    to materialize still be studied through their counts.  With ``conditioned``
    extinct rows are redrawn until every row survives through stage K.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = np.zeros((trials, schedule.K), dtype=np.int64)
    todo = np.arange(trials)
    for _ in range(max_rounds):
        P = np.ones(todo.size, dtype=np.int64)
        for k in range(1, schedule.K + 1):
            n = P * schedule.children_per_cube(k)
            if pin_origin:
                P = 1 + rng.binomial(n - 1, schedule.p[k - 1])
            else:
                P = rng.binomial(n, schedule.p[k - 1])
            out[todo, k - 1] = P
        if not conditioned:
            return out
        todo = todo[out[todo, -1] == 0]
        if todo.size == 0:
            return out
    raise ExtinctionError(max_rounds)


@dataclass(frozen=True)
class ExtinctionReport:
    probability: float
    ci_low: float
    ci_high: float
    sigma: float
    trials: int
    extinct: int
    partial_sum: float


def extinction_probability(schedule: ScaleSchedule, trials: int, seed: int) -> ExtinctionReport:
    """Fraction of unconditioned runs dead by stage K, with a 95% interval.

    ``partial_sum`` is sum_k (1 - p_k)^(N_k^d), the union bound on extinction.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    P = count_chain(schedule, trials, seed, conditioned=False)
    dead = int(np.sum(P[:, -1] == 0))
    ci = stats.binomtest(dead, trials).proportion_ci(0.95, method="wilson")
    phat = dead / trials
    return ExtinctionReport(
        probability=phat,
        ci_low=float(ci.low),
        ci_high=float(ci.high),
        sigma=math.sqrt(max(phat * (1 - phat), 1.0 / trials) / trials),
        trials=trials,
        extinct=dead,
        partial_sum=schedule.diagnostics["extinction_partial_sum"],
    )


# ----------------------------------------------------------------------------
# count statistics

BERNSTEIN_B = 5.0


@dataclass(frozen=True)
class StageCount:
    k: int
    P: int
    Pbar: float
    log2_R: float
    ratio: float
    eta: float
    t: float
    flag: bool


@dataclass(frozen=True)
class CountReport:
    records: tuple

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.records])

    @property
    def flags(self) -> np.ndarray:
        return np.array([r.flag for r in self.records])


def count_statistics(tree_or_schedule, counts=None) -> CountReport:
    """Per-stage P_k, Pbar_k = N_k^{d(1-eps_k)} P_{k-1}, R_k and the t_k gate.

    Accepts a tree, or a schedule plus an explicit count sequence.
    """
    if isinstance(tree_or_schedule, CantorTree):
        sched = tree_or_schedule.schedule
        counts = tree_or_schedule.P
    else:
        sched = tree_or_schedule
    counts = [int(c) for c in counts]
    if any(c == 0 for c in counts):
        raise ValueError("count statistics need a non-extinct tree")
    recs = []
    prev = 1
    for k, P in enumerate(counts, start=1):
        nk = sched.Nk[k - 1]
        pbar = float(nk) ** (sched.d * (1 - sched.eps[k - 1])) * prev
        log2_R = sched.log2_R[k - 1]
        lg = math.log(k + 1)
        t = BERNSTEIN_B * math.sqrt(lg) * math.sqrt(max(pbar, lg))
        recs.append(StageCount(
            k=k, P=P, Pbar=pbar, log2_R=log2_R,
            ratio=2.0 ** (math.log2(P) - log2_R),
            eta=(P - pbar) / pbar, t=t, flag=abs(P - pbar) > t,
        ))
        prev = P
    return CountReport(tuple(recs))


def ensemble_summary(reports) -> dict:
    """Mean / max / min of P_k/R_k per stage and the worst two-sided ratio."""
    R = np.array([r.ratios for r in reports])
    two_sided = np.maximum(R, 1.0 / R)
    return {
        "mean_ratio": R.mean(axis=0).tolist(),
        "max_ratio": R.max(axis=0).tolist(),
        "min_ratio": R.min(axis=0).tolist(),
        "worst_two_sided": float(two_sided.max()),
        "flag_rate": float(np.mean([r.flags for r in reports])),
    }


def conditional_mean_zscores(schedule: ScaleSchedule, counts: np.ndarray) -> np.ndarray:
    """Per-stage z-score of sum_seeds (P_k - p_k N_k^d P_{k-1}) against its sd.

    Under the unconditioned law the increments are centered given the previous
    stage, so each z is approximately standard normal.
    """
    counts = np.asarray(counts, dtype=float)
    prev = np.hstack([np.ones((counts.shape[0], 1)), counts[:, :-1]])
    z = []
    for k in range(1, schedule.K + 1):
        n = prev[:, k - 1] * schedule.children_per_cube(k)
        p = schedule.p[k - 1]
        resid = counts[:, k - 1] - n * p
        z.append(resid.sum() / math.sqrt(max((n * p * (1 - p)).sum(), 1e-300)))
    return np.array(z)


def variance_ratios(schedule: ScaleSchedule, counts: np.ndarray) -> np.ndarray:
    """Sample variance of standardized increments per stage (target 1).

    Rows whose previous stage is extinct carry no increment and are skipped.
    """
    counts = np.asarray(counts, dtype=float)
    prev = np.hstack([np.ones((counts.shape[0], 1)), counts[:, :-1]])
    out = []
    for k in range(1, schedule.K + 1):
        n = prev[:, k - 1] * schedule.children_per_cube(k)
        p = schedule.p[k - 1]
        live = n > 0
        sd = np.sqrt(n[live] * p * (1 - p))
        out.append(np.var((counts[live, k - 1] - n[live] * p) / sd, ddof=1))
    return np.array(out)


def counts_csv(rows) -> str:
    """CSV text for (seed, CountReport) pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "k", "P_k", "Pbar_k", "log2_R_k", "ratio", "t_k_flag"])
    for seed, rep in rows:
        for r in rep.records:
            w.writerow([seed, r.k, r.P, f"{r.Pbar:.17g}", f"{r.log2_R:.17g}",
                        f"{r.ratio:.17g}", int(r.flag)])
    return buf.getvalue()


# ----------------------------------------------------------------------------
# descendants


def ancestors(coords: np.ndarray, schedule: ScaleSchedule, k_from: int, k_to: int) -> np.ndarray:
    """Stage-k_to coordinates of the ancestors of stage-k_from cubes."""
    factor = math.prod(schedule.Nk[k_to:k_from])
    return coords // factor


def descendant_count_array(tree: CantorTree, r: int, l: int) -> np.ndarray:
    """q_l[i_r] for every stage-r cube, in stage-r order."""
    anc = ancestors(tree.cubes(l), tree.schedule, l, r)
    base = tree.schedule.M(r)
    kr = row_keys(tree.cubes(r), base)
    ka = row_keys(anc, base)
    pos = np.searchsorted(kr, ka)
    return np.bincount(pos, minlength=kr.shape[0])


@dataclass(frozen=True)
class DescendantReport:
    r: int
    l: int
    counts: np.ndarray
    cap_unit: float
    max_count: int
    min_count: int
    max_ratio: float
    min_ratio_alive: float
    origin_count: int | None


def descendant_counts(tree: CantorTree, r: int, l: int) -> DescendantReport:
    """Descendant counts against the unit (delta_r/delta_l)^d prod_{m=r+1..l} p_m."""
    if not 1 <= r < l <= tree.depth:
        raise ValueError("need 1 <= r < l <= depth")
    sched = tree.schedule
    q = descendant_count_array(tree, r, l)
    log2_unit = sched.d * (sched.log2_delta[r - 1] - sched.log2_delta[l - 1])
    log2_unit += sum(math.log2(sched.p[m - 1]) for m in range(r + 1, l + 1))
    unit = 2.0**log2_unit
    alive = q[q > 0]
    origin = None
    cubes = tree.cubes(r)
    if cubes.shape[0] and np.all(cubes[0] == 0):
        origin = int(q[0])
    return DescendantReport(
        r=r, l=l, counts=q, cap_unit=unit,
        max_count=int(q.max()), min_count=int(q.min()),
        max_ratio=float(q.max() / unit),
        min_ratio_alive=float(alive.min() / unit) if alive.size else 0.0,
        origin_count=origin,
    )


def surviving_branch(tree: CantorTree) -> np.ndarray:
    """Anchor of the digit-lexicographically smallest deepest cube."""
    if tree.depth == 0 or tree.extinct:
        raise ValueError("surviving_branch needs a non-extinct tree")
    sched = tree.schedule
    K = tree.depth
    cubes = tree.cubes(K)
    if sched.d == 1:
        best = cubes[0]
    else:
        cols = []
        for j in range(1, K + 1):
            anc = ancestors(cubes, sched, K, j) % sched.Nk[j - 1]
            cols.extend(anc[:, a] for a in range(sched.d))
        best = cubes[np.lexsort(cols[::-1])[0]]
    M = sched.M(K)
    return np.array([int(c) / M for c in best])
