"""Model eigenfunctions on the 2-sphere restricted to Cantor arcs, and exponent formulas.

Zonal harmonics concentrate at the pole and highest-weight harmonics along the
equator. Their L^p norms against a Cantor measure pushed onto a great-circle arc
are fitted against the predicted growth exponents. ``exponent_table`` evaluates
every exponent formula in exact rational arithmetic.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import integrate

from .cantor_core import StageMeasure
from .kernel_lab import ExponentFit, ResolutionError, loglog_fit

FAMILIES = ("zonal", "highest_weight")
RESOLUTION_GATE = 2.0 ** -4


def _as_unit_interval(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("Legendre argument outside [-1, 1]")
    return x


def legendre_table(degrees, x) -> np.ndarray:
    """P_l(x) for every l in ``degrees`` via one pass of the upward recurrence.

    Returns an array of shape (len(degrees),) + x.shape.
    """
    degrees = [int(l) for l in degrees]
    if any(l < 0 for l in degrees):
        raise ValueError("degree must be >= 0")
    x = _as_unit_interval(x)
    out = np.empty((len(degrees),) + x.shape)
    want = {}
    for i, l in enumerate(degrees):
        want.setdefault(l, []).append(i)
    lmax = max(degrees, default=0)
    prev, cur = np.ones_like(x), x.copy()
    for i in want.get(0, []):
        out[i] = prev
    for i in want.get(1, []):
        out[i] = cur
    for k in range(1, lmax):
        prev, cur = cur, ((2 * k + 1) * x * cur - k * prev) / (k + 1)
        for i in want.get(k + 1, []):
            out[i] = cur
    return out


def legendre_P(l: int, x):
    """Legendre polynomial of degree ``l`` at ``x`` in [-1, 1]."""
    val = legendre_table([l], x)[0]
    return float(val) if val.ndim == 0 else val


def zonal_norm_const(l: int) -> float:
    return math.sqrt((2 * l + 1) / (4 * math.pi))


def zonal_value(l: int, theta):
    """L2-normalized zonal harmonic of degree ``l`` at polar angle ``theta``."""
    return zonal_norm_const(l) * legendre_P(l, np.clip(np.cos(theta), -1.0, 1.0))


@lru_cache(maxsize=None)
def highest_weight_const(l: int) -> float:
    """c_l with 2*pi * int_0^pi c_l^2 sin^(2l+1) = 1, by adaptive quadrature."""
    if l < 0:
        raise ValueError("degree must be >= 0")
    # the integrand is even about pi/2; integrate half and let quad see the peak
    half, _ = integrate.quad(lambda t: math.sin(t) ** (2 * l + 1), 0.0, math.pi / 2,
                             epsabs=0.0, epsrel=1e-13, limit=500)
    return 1.0 / math.sqrt(4 * math.pi * half)


def highest_weight_wallis(l: int) -> float:
    """Closed form of the same constant, used as an independent check."""
    log_c2 = (math.lgamma(2 * l + 2) - math.log(4 * math.pi) - l * math.log(4)
              - 2 * math.lgamma(l + 1))
    return math.exp(0.5 * log_c2)


def highest_weight_value(l: int, theta):
    """Modulus of the L2-normalized highest-weight harmonic, c_l sin(theta)^l."""
    s = np.abs(np.sin(np.asarray(theta, dtype=float)))
    val = highest_weight_const(int(l)) * s ** int(l)
    return float(val) if np.ndim(val) == 0 else val


def zonal_l2_norm(l: int) -> float:
    """Squared L2(S^2) norm of the zonal harmonic by Gauss-Legendre quadrature."""
    x, w = np.polynomial.legendre.leggauss(l + 1)
    vals = legendre_table([l], x)[0]
    return float(2 * math.pi * zonal_norm_const(l) ** 2 * np.dot(w, vals * vals))


@dataclass(frozen=True)
class ArcMeasure:
    """A one-dimensional stage measure carried onto a great-circle arc of length ``length``.

    ``placement="meridian"`` runs from the north pole down a meridian, so atom v sits
    at polar angle length*v. ``placement="equator"`` runs along the equator.
    """

    base: StageMeasure
    length: float = 1.0
    placement: str = "meridian"

    def __post_init__(self):
        if self.base.d != 1:
            raise ValueError("arc measures need a one-dimensional base")
        if not 0 < self.length <= math.pi:
            raise ValueError("arc length must lie in (0, pi]")
        if self.placement not in ("meridian", "equator"):
            raise ValueError(f"unknown placement {self.placement!r}")

    @property
    def weights(self) -> np.ndarray:
        return self.base.weights

    @property
    def arc_param(self) -> np.ndarray:
        return self.length * self.base.anchors[:, 0]

    @property
    def polar_angles(self) -> np.ndarray:
        if self.placement == "meridian":
            return self.arc_param
        return np.full(self.base.size, math.pi / 2)

    @property
    def resolution(self) -> float:
        return self.base.cell * self.length


def family_values(kind: str, degrees, arc: ArcMeasure) -> np.ndarray:
    """|phi_l| at every atom for each degree; shape (len(degrees), atoms)."""
    theta = arc.polar_angles
    degrees = [int(l) for l in degrees]
    if kind == "zonal":
        # atoms on the equator share one polar angle; evaluate once
        uniq, inv = np.unique(theta, return_inverse=True)
        tab = legendre_table(degrees, np.clip(np.cos(uniq), -1.0, 1.0))
        consts = np.array([zonal_norm_const(l) for l in degrees])[:, None]
        return np.abs(consts * tab)[:, inv]
    if kind == "highest_weight":
        return np.array([highest_weight_value(l, theta) for l in degrees]).reshape(len(degrees), -1)
    raise ValueError(f"unknown harmonic family {kind!r}")


def _lp(vals: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    if math.isinf(p):
        return vals.max(axis=-1)
    # scale by the max to keep large p finite
    m = vals.max(axis=-1, keepdims=True)
    m = np.where(m > 0, m, 1.0)
    return m[..., 0] * (((vals / m) ** p) @ w) ** (1.0 / p)


def restriction_norm(kind: str, l: int, arc: ArcMeasure, p: float) -> float:
    """L^p(arc measure) norm of the degree-``l`` member of ``kind``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(_lp(family_values(kind, [l], arc), arc.weights, p)[0])


def restriction_norms(kind: str, degrees, arc: ArcMeasure, p: float) -> np.ndarray:
    return _lp(family_values(kind, degrees, arc), arc.weights, p)


def degree_grid(lo: int, hi: int, per_octave: int = 2) -> list:
    """Log-spaced distinct integer degrees between ``lo`` and ``hi``."""
    n = int(round(math.log2(hi / lo) * per_octave))
    vals = np.rint(lo * 2.0 ** (np.arange(n + 1) / per_octave)).astype(int)
    return sorted(set(int(v) for v in vals))


def check_resolution(arc: ArcMeasure, degrees) -> None:
    worst = max(degrees) * arc.resolution
    if worst > RESOLUTION_GATE:
        raise ResolutionError(
            f"degree {max(degrees)} times arc resolution {arc.resolution:.3g} = {worst:.3g} "
            f"exceeds {RESOLUTION_GATE}"
        )


def fit_restriction_exponent(kind: str, arc: ArcMeasure, p: float, degrees, target: float,
                             tolerance: float = 0.1) -> ExponentFit:
    """Slope of log restriction norm against log degree."""
    degrees = [int(l) for l in degrees]
    check_resolution(arc, degrees)
    norms = restriction_norms(kind, degrees, arc, p)
    return loglog_fit(np.log2(degrees), np.log2(norms), target, tolerance,
                      meta={"p": float(p), "n": 2, "alpha": float("nan"), "family": kind})


# ---------------------------------------------------------------- exponent formulas

def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10 ** 9)
    return Fraction(x)


def _inv_p(p) -> Fraction:
    """1/p as a rational, 0 for infinity."""
    if isinstance(p, str) and p.strip().lower() in ("inf", "infinity"):
        return Fraction(0)
    if isinstance(p, float) and math.isinf(p):
        return Fraction(0)
    p = _frac(p)
    if p <= 0:
        raise ValueError("p must be positive")
    return 1 / p


def _side(ip: Fraction, threshold) -> str:
    """Regime of p relative to a threshold, compared via reciprocals."""
    if threshold is None:
        return "high"
    it = 1 / Fraction(threshold)
    if ip == it:
        return "kink"
    return "low" if ip > it else "high"


def sogge_delta(n: int, p) -> Fraction:
    """Eigenfunction growth exponent on an n-manifold."""
    ip = _inv_p(p)
    pc = Fraction(2 * (n + 1), n - 1)
    if ip >= 1 / pc:
        return Fraction(n - 1, 4) - Fraction(n - 1, 2) * ip
    return Fraction(n - 1, 2) - n * ip


def bgt_delta(n: int, d: int, p) -> Fraction:
    """Restriction exponent for smooth d-dimensional submanifolds (d = n gives Sogge)."""
    ip = _inv_p(p)
    if d == n:
        return sogge_delta(n, p)
    if d == n - 1:
        if ip >= 1 / Fraction(2 * n, n - 1):
            return Fraction(n - 1, 4) - Fraction(n - 2, 2) * ip
        return Fraction(n - 1, 2) - (n - 1) * ip
    return Fraction(n - 1, 2) - d * ip


def p_star(n: int, alpha) -> Fraction:
    return 4 * _frac(alpha) / (n - 1)


def vartheta(n: int, alpha, p) -> Fraction:
    """Upper exponent for a measure with ball growth alpha.

    Written as (n-1)/2 - beta_p/p with beta_p = min(p(n-1)/4, alpha); this equals
    (n-1)/4 up to max(2, p*) and (n-1)/2 - alpha/p beyond, and stays single-valued
    at p = 2 when p* < 2.
    """
    ip = _inv_p(p)
    alpha = _frac(alpha)
    if ip == 0:
        return Fraction(n - 1, 2)
    beta = min(Fraction(n - 1, 4) / ip, alpha)
    return Fraction(n - 1, 2) - beta * ip


def theta(n: int, d: int, epsilon, p) -> Fraction:
    """Exponent for the constructed Cantor measure, with growth d(1 - epsilon)."""
    return vartheta(n, d * (1 - _frac(epsilon)), p)


def kappa(n: int, alpha, p) -> Fraction:
    """Lower exponent alpha(2/p* - 1/p)."""
    alpha = _frac(alpha)
    return alpha * (2 / p_star(n, alpha) - _inv_p(p))


@dataclass(frozen=True)
class ExponentRow:
    n: int
    d: int
    epsilon: Fraction
    p: object
    sogge: Fraction
    bgt: Fraction
    theta: Fraction
    vartheta: Fraction
    kappa: Fraction
    p0: Fraction
    p_star: Fraction
    branches: dict

    @property
    def branch_labels(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.branches.items())

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("sogge", "bgt", "theta", "vartheta", "kappa", "p0", "p_star")}


def exponent_table(n: int, d: int, epsilon, p, alpha=None) -> ExponentRow:
    """All exponents at one (n, d, epsilon, p).

    ``alpha`` defaults to d(1 - epsilon) and feeds vartheta, kappa and p*.
    """
    if n < 2 or not 1 <= d <= n:
        raise ValueError("need n >= 2 and 1 <= d <= n")
    eps = _frac(epsilon)
    if not 0 <= eps < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    ip = _inv_p(p)
    if ip > Fraction(1, 2):
        raise ValueError("p must be >= 2")
    a = d * (1 - eps) if alpha is None else _frac(alpha)
    p0 = 4 * d * (1 - eps) / (n - 1)
    ps = p_star(n, a)
    branches = {"sogge": _side(ip, Fraction(2 * (n + 1), n - 1))}
    if d == n:
        branches["bgt"] = "sogge"
    elif d == n - 1:
        branches["bgt"] = _side(ip, Fraction(2 * n, n - 1))
    else:
        branches["bgt"] = "log" if (d == n - 2 and ip == Fraction(1, 2)) else "linear"
    branches["theta"] = _side(ip, max(Fraction(2), p0))
    branches["vartheta"] = _side(ip, max(Fraction(2), ps))
    return ExponentRow(n, d, eps, p, sogge_delta(n, p), bgt_delta(n, d, p), theta(n, d, eps, p),
                       vartheta(n, a, p), kappa(n, a, p), p0, ps, branches)


TABLE_COLUMNS = ("n", "d", "epsilon", "p", "sogge", "bgt", "theta", "vartheta", "kappa",
                 "p0", "p_star", "branch_labels")


def _fmt_p(p) -> str:
    ip = _inv_p(p)
    return "inf" if ip == 0 else f"{float(1 / ip):.17g}"


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        f = r.as_floats()
        w.writerow([r.n, r.d, f"{float(r.epsilon):.17g}", _fmt_p(r.p)]
                   + [f"{f[k]:.17g}" for k in TABLE_COLUMNS[4:11]] + [r.branch_labels])
    return buf.getvalue()
