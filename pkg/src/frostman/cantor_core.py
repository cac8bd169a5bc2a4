"""Deterministic machinery for product-type Cantor constructions.

A stage-k cube is stored by its per-axis integer coordinates ``c`` so that the
cube is ``c / M_k + [0, 1/M_k]^d`` with ``M_k = N_1 ... N_k``.  The coordinate
of an axis is exactly the mixed-radix number formed by the (zero based) digits
of that axis, so parent/child arithmetic is a single integer division or
multiply-add.  Scale quantities that underflow doubles are kept as log2 values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

PRESETS = ("dim1", "dim-epsilon", "custom")

# one signed 64-bit word per axis; coordinates are < M_K <= 2**63
MAX_LOG2_M = 63


class ScheduleError(ValueError):
    pass


class TreeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleSchedule:
    """Construction parameters for stages k = 1..K.

    ``Nk``, ``log2_delta``, ``eps``, ``p`` and ``log2_R`` are tuples indexed by
    k - 1.  ``p_override`` marks schedules whose selection probabilities were
    replaced (for instance by 1 to build full trees) and therefore skip the
    p_k <= 1/2 gate.
    """

    preset: str
    N: int
    d: int
    K: int
    gamma: float
    epsilon: float
    Nk: tuple
    log2_delta: tuple
    eps: tuple
    p: tuple
    log2_R: tuple
    p_override: bool = False
    diagnostics: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def shape_param(self) -> float:
        return self.gamma if self.preset == "dim1" else self.epsilon

    def M(self, k: int) -> int:
        """Exact inverse side length M_k = N_1 ... N_k (M_0 = 1)."""
        return math.prod(self.Nk[:k])

    def delta(self, k: int) -> float:
        return 2.0 ** self.log2_delta[k - 1] if k > 0 else 1.0

    def children_per_cube(self, k: int) -> int:
        return self.Nk[k - 1] ** self.d

    def target_dimension(self) -> float:
        if self.preset == "dim1":
            return float(self.d)
        return self.d * (1.0 - self.epsilon)

    def with_probabilities(self, p) -> "ScaleSchedule":
        """Copy of the schedule with selection probabilities replaced.

        ``p`` is a scalar or a length-K sequence.  R_k is left at its nominal
        value so count statistics still compare against the preset law.
        """
        if np.isscalar(p):
            p = [float(p)] * self.K
        p = tuple(float(x) for x in p)
        if len(p) != self.K or any(not 0.0 <= x <= 1.0 for x in p):
            raise ScheduleError("override probabilities must be K values in [0, 1]")
        return replace(self, p=p, p_override=True)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "N": self.N if self.preset != "custom" else list(self.Nk),
            "d": self.d,
            "K": self.K,
            "shape_param": self.shape_param,
        }


def _diagnostics(Nk, eps, p, log2_delta, log2_R, d) -> dict:
    K = len(Nk)
    ks = np.arange(1, K + 1)
    Nd = np.array([float(n) ** d for n in Nk])
    p = np.asarray(p)
    eps = np.asarray(eps)
    with np.errstate(divide="ignore"):
        extinction_terms = np.exp(Nd * np.log1p(-np.minimum(p, 1.0)))
    decay = np.array([float(n) ** (-d * (1 - e) / 2) for n, e in zip(Nk, eps)])
    abs_log_delta = -np.asarray(log2_delta) * math.log(2)
    third = [
        float(np.sum(ks[kp:] * abs_log_delta[kp - 1] * decay[kp:]))
        for kp in range(1, K + 1)
    ]
    R_half = 2.0 ** (np.asarray(log2_R) / 2)
    msum = []
    for k in range(1, K):
        tail = sum((k + m) / R_half[k + m - 1] for m in range(1, K - k + 1))
        msum.append(float(abs_log_delta[k - 1] * R_half[k - 1] * tail))
    return {
        "extinction_partial_sum": float(extinction_terms.sum()),
        "extinction_terms": extinction_terms.tolist(),
        "log_weighted_sum": float(np.sum(np.log(ks) * decay)),
        "tail_sums": third,
        "weak_star_sequence": msum,
    }


def _finish(preset, N, d, K, gamma, epsilon, Nk, eps, check_p=True) -> ScaleSchedule:
    Nk = tuple(int(n) for n in Nk)
    eps = tuple(float(e) for e in eps)
    if any(n < 2 for n in Nk):
        raise ScheduleError("every N_k must be at least 2")
    log2_M = np.cumsum([math.log2(n) for n in Nk])
    if log2_M[-1] > MAX_LOG2_M + 1e-12:
        raise ScheduleError(
            f"log2 M_K = {log2_M[-1]:.3f} exceeds {MAX_LOG2_M}: stage-K coordinates "
            "are not representable in one 64-bit word per axis"
        )
    log2_delta = tuple(float(-x) for x in log2_M)
    p = tuple(float(n) ** (-d * e) for n, e in zip(Nk, eps))
    if check_p:
        for k, pk in enumerate(p, start=1):
            if pk > 0.5 + 1e-12:
                raise ScheduleError(f"selection probability p_{k} = {pk:.6g} > 1/2")
    log2_R = tuple(
        float(x)
        for x in np.cumsum([d * (1 - e) * math.log2(n) for n, e in zip(Nk, eps)])
    )
    sched = ScaleSchedule(
        preset=preset, N=N, d=d, K=K, gamma=gamma, epsilon=epsilon, Nk=Nk,
        log2_delta=log2_delta, eps=eps, p=p, log2_R=log2_R,
    )
    object.__setattr__(sched, "diagnostics", _diagnostics(Nk, eps, p, log2_delta, log2_R, d))
    return sched


def build_schedule(preset: str, N: int, shape_param: float, d: int, K: int) -> ScaleSchedule:
    """Build one of the two reference schedules with N_k = N^k.

    ``dim1`` uses eps_k = shape_param / k (shape_param plays gamma), and
    ``dim-epsilon`` uses eps_k = shape_param for every k.
    """
    if preset not in ("dim1", "dim-epsilon"):
        raise ScheduleError(f"unknown preset {preset!r}")
    if int(N) != N or N < 2:
        raise ScheduleError("N must be an integer >= 2")
    if int(K) != K or K < 1:
        raise ScheduleError("K must be an integer >= 1")
    if int(d) != d or d < 1:
        raise ScheduleError("d must be an integer >= 1")
    if not 0.0 < shape_param < 1.0:
        raise ScheduleError("shape parameter must lie in (0, 1)")
    N, d, K = int(N), int(d), int(K)
    Nk = [N**k for k in range(1, K + 1)]
    if preset == "dim1":
        eps = [shape_param / k for k in range(1, K + 1)]
        return _finish(preset, N, d, K, float(shape_param), 0.0, Nk, eps)
    eps = [shape_param] * K
    return _finish(preset, N, d, K, 0.0, float(shape_param), Nk, eps)


def custom_schedule(Nk: Sequence[int], d: int = 1, eps: Sequence[float] | float = 0.0,
                    check_p: bool = False) -> ScaleSchedule:
    """Schedule with arbitrary bases N_k (used for hand-built examples)."""
    Nk = list(Nk)
    if np.isscalar(eps):
        eps = [float(eps)] * len(Nk)
    return _finish("custom", int(Nk[0]), int(d), len(Nk), 0.0, float(eps[0]),
                   Nk, eps, check_p=check_p)


def full_schedule(N: int, d: int, K: int) -> ScaleSchedule:
    """N_k = N for every k with p_k = 1: the dyadic-style Lebesgue grid."""
    return custom_schedule([N] * K, d=d).with_probabilities(1.0)


def schedule_from_dict(obj: Mapping) -> ScaleSchedule:
    preset = obj["preset"]
    if preset == "custom":
        return custom_schedule(obj["N"], d=obj["d"], eps=obj.get("shape_param", 0.0))
    return build_schedule(preset, obj["N"], obj["shape_param"], obj["d"], obj["K"])


# ----------------------------------------------------------------------------
# cube indices


@dataclass(frozen=True)
class CubeIndex:
    """Digits (i_1, ..., i_k); each digit is a d-tuple with entries in 1..N_j."""

    digits: tuple

    @property
    def stage(self) -> int:
        return len(self.digits)

    @classmethod
    def from_digits(cls, digits) -> "CubeIndex":
        out = []
        for dig in digits:
            out.append(tuple(int(x) for x in np.atleast_1d(dig)))
        return cls(tuple(out))


def encode(index: CubeIndex, schedule: ScaleSchedule) -> tuple:
    """Per-axis mixed-radix coordinates of a cube (zero based)."""
    if index.stage > schedule.K:
        raise ScheduleError("index deeper than schedule")
    coords = [0] * schedule.d
    for j, dig in enumerate(index.digits):
        n = schedule.Nk[j]
        if len(dig) != schedule.d:
            raise ScheduleError(f"digit {j + 1} has wrong dimension")
        for a, x in enumerate(dig):
            if not 1 <= x <= n:
                raise ScheduleError(f"digit {j + 1} coordinate {x} outside 1..{n}")
            coords[a] = coords[a] * n + (x - 1)
    return tuple(coords)


def decode(coords: Sequence[int], k: int, schedule: ScaleSchedule) -> CubeIndex:
    coords = [int(c) for c in coords]
    digits = []
    for j in range(k, 0, -1):
        n = schedule.Nk[j - 1]
        digits.append(tuple(c % n + 1 for c in coords))
        coords = [c // n for c in coords]
    if any(coords):
        raise ScheduleError("coordinates out of range for stage")
    return CubeIndex(tuple(reversed(digits)))


def anchor(index: CubeIndex, schedule: ScaleSchedule) -> np.ndarray:
    """Lower-left corner sum_j (digit_j - 1) / (N_1 ... N_j) of the cube."""
    coords = encode(index, schedule)
    M = schedule.M(index.stage)
    return np.array([c / M for c in coords], dtype=float)


def anchor_fraction(index: CubeIndex, schedule: ScaleSchedule):
    """Exact rational anchor as a tuple of ``fractions.Fraction``."""
    from fractions import Fraction

    M = schedule.M(index.stage)
    return tuple(Fraction(c, M) for c in encode(index, schedule))


# ----------------------------------------------------------------------------
# trees


def _sort_rows(a: np.ndarray) -> np.ndarray:
    if a.shape[0] <= 1:
        return a
    if a.shape[1] == 1:
        return np.sort(a, axis=0)
    order = np.lexsort(a.T[::-1])
    return a[order]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.flags.writeable = False
    return a


def row_keys(a: np.ndarray, base: int) -> np.ndarray:
    """Collapse (P, d) coordinates to one sortable key when base**d fits."""
    if a.shape[1] == 1:
        return a[:, 0]
    key = np.zeros(a.shape[0], dtype=object if base ** a.shape[1] >= 2**63 else np.int64)
    for col in range(a.shape[1]):
        key = key * base + a[:, col]
    return key


def member_mask(rows: np.ndarray, table: np.ndarray, base: int) -> np.ndarray:
    """Boolean mask: which ``rows`` appear in the sorted coordinate ``table``."""
    if table.shape[0] == 0:
        return np.zeros(rows.shape[0], dtype=bool)
    kr = row_keys(rows, base)
    kt = row_keys(table, base)
    pos = np.searchsorted(kt, kr)
    pos = np.minimum(pos, len(kt) - 1)
    return kt[pos] == kr


@dataclass(frozen=True)
class CantorTree:
    """Selected cubes at stages 1..depth as sorted (P_k, d) coordinate arrays."""

    schedule: ScaleSchedule
    stages: tuple
    pinned_origin: bool = False

    @property
    def depth(self) -> int:
        return len(self.stages)

    @property
    def P(self) -> tuple:
        return tuple(int(s.shape[0]) for s in self.stages)

    @property
    def extinct(self) -> bool:
        return any(n == 0 for n in self.P)

    def cubes(self, k: int) -> np.ndarray:
        return self.stages[k - 1]

    def parents(self, k: int) -> np.ndarray:
        """Row positions in stage k-1 of the parents of the stage-k cubes."""
        child = self.stages[k - 1]
        if k == 1:
            return np.zeros(child.shape[0], dtype=np.int64)
        par = child // self.schedule.Nk[k - 1]
        base = self.schedule.M(k - 1)
        return np.searchsorted(row_keys(self.stages[k - 2], base), row_keys(par, base))

    def log2_volume(self, k: int) -> float:
        """log2 |E_k| = log2 P_k + d log2 delta_k."""
        return math.log2(self.P[k - 1]) + self.schedule.d * self.schedule.log2_delta[k - 1]


def empty_tree(schedule: ScaleSchedule, pinned_origin: bool = False) -> CantorTree:
    return CantorTree(schedule, (), pinned_origin)


def child_offsets(n: int, d: int) -> np.ndarray:
    """All digit offsets of a cube's children, axis 0 most significant."""
    grids = np.indices((n,) * d).reshape(d, -1).T
    return grids.astype(np.int64)


def refine_stage(tree: CantorTree, k: int, selection) -> CantorTree:
    """Append stage k: keep children of surviving parents whose bit is 1.

    ``selection`` is either an array of shape (P_{k-1}, N_k^d) whose rows follow
    the stage-(k-1) order and whose columns enumerate child digits with axis 0
    most significant, or a mapping from ``CubeIndex`` (or stage-k coordinate
    tuples) to bits.  Bits of children with a dead parent are ignored.
    """
    sched = tree.schedule
    if k != tree.depth + 1:
        raise ScheduleError(f"cannot refine stage {k}: tree has depth {tree.depth}")
    if k > sched.K:
        raise ScheduleError("stage beyond schedule K")
    n, d = sched.Nk[k - 1], sched.d
    parents = tree.stages[-1] if k > 1 else np.zeros((1, d), dtype=np.int64)
    offsets = child_offsets(n, d)
    if isinstance(selection, Mapping):
        wanted = []
        for key, bit in selection.items():
            if not bit:
                continue
            if isinstance(key, CubeIndex):
                if key.stage != k:
                    raise ScheduleError("selection index at wrong stage")
                key = encode(key, sched)
            wanted.append(tuple(int(c) for c in key))
        cand = np.array(wanted, dtype=np.int64).reshape(-1, d)
        par = cand // n
        keep = member_mask(par, _sort_rows(parents), sched.M(k - 1))
        children = cand[keep]
    else:
        bits = np.asarray(selection).astype(bool)
        if bits.shape != (parents.shape[0], offsets.shape[0]):
            raise ScheduleError(
                f"selection shape {bits.shape} != {(parents.shape[0], offsets.shape[0])}"
            )
        pi, ci = np.nonzero(bits)
        children = parents[pi] * n + offsets[ci]
    children = _freeze(_sort_rows(np.unique(children, axis=0) if len(children) else children))
    return CantorTree(sched, tree.stages + (children,), tree.pinned_origin)


def full_tree(schedule: ScaleSchedule, depth: int | None = None) -> CantorTree:
    """Tree in which every child is selected up to ``depth`` (default K)."""
    depth = schedule.K if depth is None else depth
    tree = empty_tree(schedule, pinned_origin=True)
    for k in range(1, depth + 1):
        shape = (max(tree.P[-1], 1) if k > 1 else 1, schedule.children_per_cube(k))
        tree = refine_stage(tree, k, np.ones(shape, dtype=bool))
    return tree


def tree_from_coordinates(schedule: ScaleSchedule, stages, pinned_origin: bool = False) -> CantorTree:
    """Validated tree from explicit per-stage coordinate lists."""
    if len(stages) == 0:
        raise TreeFormatError("no stages")
    if len(stages) > schedule.K:
        raise TreeFormatError("more stages than the schedule allows")
    out = []
    for k, rows in enumerate(stages, start=1):
        a = np.array(rows, dtype=np.int64).reshape(-1, schedule.d)
        M = schedule.M(k)
        if a.size and (a.min() < 0 or a.max() >= M):
            raise TreeFormatError(f"coordinate out of range at stage {k}")
        a = _sort_rows(a)
        if a.shape[0] > 1:
            keys = row_keys(a, M)
            if np.any(keys[1:] == keys[:-1]):
                raise TreeFormatError(f"duplicate cube at stage {k}")
        if k > 1:
            par = a // schedule.Nk[k - 1]
            if not np.all(member_mask(par, out[-1], schedule.M(k - 1))):
                raise TreeFormatError(f"orphan cube at stage {k}")
        out.append(_freeze(a))
    tree = CantorTree(schedule, tuple(out), pinned_origin)
    if pinned_origin and not all(
        s.shape[0] and np.all(s[0] == 0) for s in tree.stages
    ):
        raise TreeFormatError("pinned tree lacks the origin branch")
    return tree


# ----------------------------------------------------------------------------
# stage measures


@dataclass(frozen=True)
class StageMeasure:
    """Atoms at cube anchors; ``coords / M`` are the exact anchors.

    ``weights`` are uniform (1/P_k) for stage measures and arbitrary for the
    mass-distribution comparison measure.  ``cell`` is the side length delta_k.
    """

    stage: int
    cell_log2_size: float
    coords: np.ndarray
    M: int
    weights: np.ndarray

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    @property
    def cell(self) -> float:
        return 2.0 ** self.cell_log2_size

    @property
    def anchors(self) -> np.ndarray:
        return self.coords.astype(float) / float(self.M)

    @property
    def centers(self) -> np.ndarray:
        return (self.coords.astype(float) + 0.5) / float(self.M)

    @property
    def size(self) -> int:
        return self.coords.shape[0]


def stage_measure(tree: CantorTree, k: int) -> StageMeasure:
    """Normalized indicator of E_k: every selected cube carries mass 1/P_k."""
    if k < 1 or k > tree.depth:
        raise ScheduleError(f"stage {k} not present (depth {tree.depth})")
    P = tree.P[k - 1]
    if P == 0:
        raise ZeroDivisionError(f"stage {k} is extinct: zero mass cannot be normalized")
    w = np.full(P, 1.0 / P)
    return StageMeasure(k, tree.schedule.log2_delta[k - 1], tree.stages[k - 1],
                        tree.schedule.M(k), w)


def point_measure(points, weights=None, cell_log2_size: float = -60.0) -> StageMeasure:
    """Atomic measure at arbitrary points in [0,1]^d (for tests and examples).

    Points are stored on a 2^-52 grid so they remain exact dyadic rationals.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    M = 2**52
    coords = np.round(pts * M).astype(np.int64)
    if weights is None:
        weights = np.full(len(pts), 1.0 / len(pts))
    return StageMeasure(0, cell_log2_size, coords, M, np.asarray(weights, dtype=float))


# ----------------------------------------------------------------------------
# serialization


def serialize_tree(tree: CantorTree) -> bytes:
    """JSON bytes: schedule header, pin flag, then per-stage coordinate strings.

    Each stage is a list of cubes; a cube is a list of base-10 strings, one per
    axis.  Strings keep 64-bit coordinates exact in any JSON reader.
    """
    stages = [[[str(int(c)) for c in row] for row in s] for s in tree.stages]
    doc = {
        "schedule": tree.schedule.to_dict(),
        "pinned_origin": bool(tree.pinned_origin),
        "stages": stages,
    }
    if tree.schedule.p_override:
        doc["p_override"] = list(tree.schedule.p)
    return json.dumps(doc, separators=(",", ":")).encode()


def deserialize_tree(data: bytes | str) -> CantorTree:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise TreeFormatError(f"malformed tree stream at offset {exc.pos}: {exc.msg}") from exc
    try:
        sched = schedule_from_dict(doc["schedule"])
        pinned = bool(doc["pinned_origin"])
        raw = doc["stages"]
    except (KeyError, TypeError) as exc:
        raise TreeFormatError(f"missing field {exc}") from exc
    if "p_override" in doc:
        sched = sched.with_probabilities(doc["p_override"])
    if not raw:
        raise TreeFormatError("no stages")
    stages = []
    for k, s in enumerate(raw, start=1):
        try:
            rows = [[int(c, 10) for c in row] for row in s]
        except (TypeError, ValueError) as exc:
            raise TreeFormatError(f"bad coordinate at stage {k}: {exc}") from exc
        if any(len(r) != sched.d for r in rows):
            raise TreeFormatError(f"wrong axis count at stage {k}")
        stages.append(rows)
    return tree_from_coordinates(sched, stages, pinned)
