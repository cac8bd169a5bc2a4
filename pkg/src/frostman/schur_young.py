"""Generalized Young (Schur test) inequality for integral operators against a
finite atomic measure tau:

    ||T f||_{L^r(tau)} <= A_s^{1 - s/r} B_s^{s/r} ||f||_{L^q(tau)},
    1 + 1/r = 1/s + 1/q,

with A_s the largest row s-norm and B_s the largest column s-norm of the
kernel against tau.  Exponents may be ``math.inf``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

INF = math.inf


def _rational(x) -> Fraction:
    """Exact value of ints and Fractions; floats are read as the nearest
    rational with denominator <= 10^6 (so 8/3 typed as a float stays 8/3)."""
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    return Fraction(x).limit_denominator(10**6)


def _recip(x) -> Fraction:
    if x == INF:
        return Fraction(0)
    return 1 / _rational(x)


def _inv(x: float) -> float:
    return 0.0 if x == INF else 1.0 / x


@dataclass(frozen=True)
class TripleCheck:
    ok: bool
    reason: str
    holder: tuple  # reciprocals of (r, sr/(r-s), qr/(r-q))

    def __bool__(self):
        return self.ok


def check_exponent_triple(s, q, r) -> TripleCheck:
    """Exact rational check of 1 + 1/r = 1/s + 1/q plus the derived Hoelder
    triple (r, sr/(r-s), qr/(r-q)), whose reciprocals must lie in [0, 1].
    """
    for name, v in (("s", s), ("q", q), ("r", r)):
        if not (v == INF or v >= 1):
            return TripleCheck(False, f"{name} = {v} outside [1, inf]", ())
    rs, rq, rr = _recip(s), _recip(q), _recip(r)
    if 1 + rr != rs + rq:
        return TripleCheck(False, f"1 + 1/r = {float(1 + rr)} != 1/s + 1/q = {float(rs + rq)}", ())
    holder = (rr, rs - rr, rq - rr)
    if any(h < 0 or h > 1 for h in holder):
        return TripleCheck(False, "derived Hoelder exponents leave [1, inf]", holder)
    return TripleCheck(True, "ok", holder)


@dataclass(frozen=True)
class SchurInstance:
    """Atoms ``points`` with weights ``weights`` and kernel values ``kernel``.

    ``kernel[i, j] = K(x_i, y_j)`` on the support.  Build from a callable with
    ``SchurInstance.from_function``.
    """

    points: np.ndarray
    weights: np.ndarray
    kernel: np.ndarray
    s: float
    q: float
    r: float

    @classmethod
    def from_function(cls, points, weights, K: Callable, s, q, r) -> "SchurInstance":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        Kmat = np.asarray(K(pts[:, None, :], pts[None, :, :]), dtype=float)
        return cls(pts, np.asarray(weights, dtype=float), Kmat, s, q, r)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if self.kernel.shape != (w.size, w.size):
            raise ValueError("kernel must be square over the support")

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.points, self.weights, self.kernel):
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        h.update(repr((float(self.s), float(self.q), float(self.r))).encode())
        return h.hexdigest()[:16]

    def scaled(self, kernel_factor: float = 1.0, measure_factor: float = 1.0) -> "SchurInstance":
        return SchurInstance(self.points, self.weights * measure_factor,
                             self.kernel * kernel_factor, self.s, self.q, self.r)


def schur_bounds(inst: SchurInstance):
    """(A_s, B_s): sup over rows / columns of the kernel's L^s(tau) norms."""
    K = inst.kernel
    bad = np.argwhere(~np.isfinite(K))
    if bad.size:
        i, j = bad[0]
        raise ValueError(f"non-finite kernel value at pair ({i}, {j})")
    absK = np.abs(K)
    if inst.s == INF:
        return float(absK.max()), float(absK.max())
    w = inst.weights
    Ks = absK**inst.s
    A = float(np.max(Ks @ w) ** (1.0 / inst.s))
    B = float(np.max(w @ Ks) ** (1.0 / inst.s))
    return A, B


def apply_operator(inst: SchurInstance, f) -> np.ndarray:
    """Tf(x_i) = sum_j K(x_i, y_j) f(y_j) tau_j (rows of f are independent)."""
    f = np.asarray(f, dtype=float)
    return (f * inst.weights) @ inst.kernel.T


def lp_norm(g, weights, p) -> np.ndarray:
    """L^p(tau) norms along the last axis (p = inf gives the max modulus)."""
    a = np.abs(np.asarray(g, dtype=float))
    if p == INF:
        return a.max(axis=-1)
    # scale out the max for stability with large exponents
    m = a.max(axis=-1, keepdims=True)
    m = np.where(m > 0, m, 1.0)
    return m[..., 0] * np.sum(weights * (a / m) ** p, axis=-1) ** (1.0 / p)


def young_constant(inst: SchurInstance) -> float:
    A, B = schur_bounds(inst)
    # s = inf forces q = 1 and r = inf, where the exponent s/r tends to 1
    t = 1.0 if inst.s == INF else inst.s * _inv(inst.r)
    return A ** (1.0 - t) * B**t


def young_ratios(inst: SchurInstance, F: np.ndarray, constant: float | None = None) -> np.ndarray:
    c = young_constant(inst) if constant is None else constant
    if not math.isfinite(c):
        raise ValueError("Young constant is not finite")
    lhs = lp_norm(apply_operator(inst, F), inst.weights, inst.r)
    rhs = c * lp_norm(F, inst.weights, inst.q)
    return np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)


def random_test_functions(m: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Signed test functions: Gaussian rows, two-sided Pareto rows and sparse spikes."""
    F = np.empty((trials, m))
    kind = np.arange(trials) % 3
    g = kind == 0
    F[g] = rng.standard_normal((g.sum(), m))
    h = kind == 1
    F[h] = rng.choice([-1.0, 1.0], (h.sum(), m)) * (rng.pareto(1.2, (h.sum(), m)) + 1.0)
    sp = kind == 2
    mask = rng.random((sp.sum(), m)) < 2.0 / max(m, 2)
    F[sp] = np.where(mask, rng.standard_normal((sp.sum(), m)), 0.0)
    F[sp, 0] += (~mask.any(axis=1)).astype(float)
    return F


def hill_climb(inst: SchurInstance, f: np.ndarray, steps: int, rng: np.random.Generator,
               constant: float) -> tuple:
    """Coordinate ascent on the Young ratio from ``f``; returns (ratio, f)."""
    f = f.copy()
    best = float(young_ratios(inst, f[None, :], constant)[0])
    m = f.size
    scale = np.abs(f).max() or 1.0
    for step in range(steps):
        i = step % m if step < 2 * m else int(rng.integers(m))
        cands = np.repeat(f[None, :], 6, axis=0)
        cands[:, i] = [f[i] * 2.0, f[i] * 0.5, -f[i], 0.0,
                       f[i] + scale * rng.standard_normal(), f[i] + scale]
        vals = young_ratios(inst, cands, constant)
        k = int(np.argmax(vals))
        if vals[k] > best and np.any(cands[k] != 0):
            best, f = float(vals[k]), cands[k]
    return best, f


@dataclass(frozen=True)
class YoungReport:
    instance_hash: str
    s: float
    q: float
    r: float
    A_s: float
    B_s: float
    max_ratio: float
    trials: int
    verdict: str

    def to_json(self) -> str:
        def enc(x):
            return "inf" if x == INF else x
        d = {k: enc(v) for k, v in self.__dict__.items()}
        return json.dumps(d, sort_keys=False)


def verify_young_inequality(inst: SchurInstance, trials: int = 1000, seed: int = 0,
                            climb_steps: int = 200, tol: float = 1e-9) -> YoungReport:
    """Max Young ratio over random test functions plus a hill-climb from the best."""
    chk = check_exponent_triple(inst.s, inst.q, inst.r)
    if not chk:
        raise ValueError(f"invalid exponent triple: {chk.reason}")
    rng = np.random.default_rng(seed)
    A, B = schur_bounds(inst)
    c = young_constant(inst)
    F = random_test_functions(inst.weights.size, trials, rng)
    ratios = young_ratios(inst, F, c)
    best = float(ratios.max())
    if climb_steps:
        climbed, _ = hill_climb(inst, F[int(np.argmax(ratios))], climb_steps, rng, c)
        best = max(best, climbed)
    verdict = "PASS" if best <= 1.0 + tol else "FAIL"
    return YoungReport(inst.digest(), inst.s, inst.q, inst.r, A, B, best, trials, verdict)


class ConvergenceError(RuntimeError):
    pass


def brute_operator_norm_2_2(inst: SchurInstance, tol: float = 1e-10,
                            max_iter: int = 100_000) -> float:
    """Largest singular value of K_ij sqrt(tau_i tau_j), the exact L^2 -> L^2 norm.

    Power iteration on W^T W from a positive start vector; the Rayleigh
    estimate approaches the norm from below.
    """
    m = inst.weights.size
    if m > 512:
        raise ValueError("brute-force norm limited to 512 support points")
    sq = np.sqrt(inst.weights)
    W = inst.kernel * sq[:, None] * sq[None, :]
    G = W.T @ W
    v = np.full(m, 1.0 / math.sqrt(m)) + 1e-3 * np.cos(np.arange(m))
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = G @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new = math.sqrt(float(v @ w))
        v = w / nrm
        if abs(new - est) <= tol * max(new, 1e-300):
            return new
        est = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def bracket_kernel(lam: float, exponent: float):
    """K(x, y) = <lam |x - y|>^{-exponent} as a callable on broadcast points."""
    def K(x, y):
        dist = np.sqrt(np.sum((x - y) ** 2, axis=-1))
        return (1.0 + (lam * dist) ** 2) ** (-exponent / 2.0)
    return K


def application_instance(points, weights, lam: float, p: float, n: int) -> SchurInstance:
    """K = <lam(u - v)>^{-(n-1)/2}, s = p/2, q = p', r = p (needs p >= 2)."""
    if p < 2:
        raise ValueError("the application instance needs p >= 2")
    q = INF if p == 1 else (1.0 if p == INF else p / (p - 1.0))
    s = INF if p == INF else p / 2.0
    return SchurInstance.from_function(points, weights, bracket_kernel(lam, (n - 1) / 2.0), s, q, p)


def random_triple(rng: np.random.Generator):
    """Admissible (s, q, r) built from small rationals, including infinities."""
    u = rng.random()
    if u < 0.2:
        inv_s = Fraction(1)
    elif u < 0.35:
        inv_s = Fraction(0)
    else:
        inv_s = Fraction(8, 8 + int(rng.integers(1, 40)))
    # 1/q in [1 - 1/s, 1] keeps 1/r = 1/s + 1/q - 1 in [0, 1]
    lo = 1 - inv_s
    inv_q = lo + (1 - lo) * Fraction(int(rng.integers(0, 17)), 16)
    inv_r = inv_s + inv_q - 1

    def back(x):
        return INF if x == 0 else float(1 / x)

    return back(inv_s), back(inv_q), back(inv_r)


def random_instance(rng: np.random.Generator, max_size: int = 32, triple=None) -> SchurInstance:
    """Random support, positive weights, kernel family and admissible triple."""
    m = int(rng.integers(2, max_size + 1))
    d = int(rng.integers(1, 3))
    pts = rng.random((m, d))
    w = rng.exponential(1.0, m) * 10.0 ** rng.uniform(-1, 1)
    fam = int(rng.integers(4))
    if fam == 0:
        K = bracket_kernel(10.0 ** rng.uniform(0, 3), rng.uniform(0.1, 3.0))(pts[:, None], pts[None])
    elif fam == 1:
        K = np.exp(-np.sum((pts[:, None] - pts[None]) ** 2, axis=-1) * 10.0 ** rng.uniform(0, 3))
    elif fam == 2:
        K = rng.random((m, m))
    else:
        K = rng.standard_normal((m, m))
    s, q, r = random_triple(rng) if triple is None else triple
    return SchurInstance(pts, w, K, s, q, r)
