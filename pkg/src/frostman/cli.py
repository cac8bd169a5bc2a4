"""Command-line front end.

Every command accepts ``--config FILE`` (flat ``key=value`` lines, ``#`` comments)
whose entries act as defaults for the command's options; explicit flags win.
Artifacts go to ``--out``; a ``manifest.json`` records the resolved
configuration, its hash, seeds, library versions, wall time and gate verdicts.

Exit codes: 0 all gates passed, 1 a gate failed, 2 configuration error,
3 resolution-gate violation.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__
from . import experiments as ex
from . import measure_analysis as ma
from . import random_cantor as rc
from . import sphere_restriction as sr
from .cantor_core import ScheduleError, build_schedule, custom_schedule, serialize_tree, stage_measure
from .kernel_lab import ResolutionError

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_RESOLUTION = 0, 1, 2, 3
# options that do not change the computed artifacts
NON_SEMANTIC = {"out", "config", "full_profile"}


# ---------------------------------------------------------------- parsing helpers

def read_config(path) -> dict:
    """Parse a flat key=value file. Keys are normalized to option names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.BadParameter(f"line {lineno}: expected key=value, got {raw!r}",
                                     param_hint="--config")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = val
    return out


def _config_callback(ctx, param, value):
    if value is None:
        return value
    cfg = read_config(value)
    known = {p.name for p in ctx.command.params}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise click.BadParameter(f"unknown keys {unknown}", param_hint="--config")
    flags = {p.name: p for p in ctx.command.params}
    dm = {}
    for k, v in cfg.items():
        if isinstance(flags[k], click.Option) and flags[k].is_flag:
            dm[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            dm[k] = v
    ctx.default_map = {**(ctx.default_map or {}), **dm}
    return value


config_option = click.option("--config", type=click.Path(exists=True, dir_okay=False),
                             callback=_config_callback, is_eager=True, expose_value=True,
                             help="key=value file supplying option defaults.")


def parse_number(text: str) -> float:
    """Float, 'inf', or a power written as 'b^e'."""
    t = str(text).strip()
    if t.lower() in ("inf", "infinity"):
        return math.inf
    if "^" in t:
        b, e = t.split("^", 1)
        return float(b) ** float(e)
    return float(t)


def parse_seeds(text) -> list:
    """'0..9' (inclusive), '1,4,7', or a single integer."""
    t = str(text).strip()
    try:
        if ".." in t:
            a, b = t.split("..", 1)
            seeds = list(range(int(a), int(b) + 1))
        else:
            seeds = [int(s) for s in t.split(",") if s.strip()]
    except ValueError as err:
        raise click.BadParameter(f"cannot parse seeds {text!r}") from err
    if not seeds:
        raise click.BadParameter("seed list is empty", param_hint="--seeds")
    if any(s < 0 for s in seeds):
        raise click.BadParameter("seeds must be non-negative", param_hint="--seeds")
    return seeds


def parse_log2_grid(text) -> np.ndarray:
    """'start:stop:points_per_octave' as log2 values, or a comma list of values."""
    t = str(text).strip()
    try:
        if ":" in t:
            a, b, ppo = t.split(":")
            lo, hi, ppo = math.log2(parse_number(a)), math.log2(parse_number(b)), float(ppo)
            if not ppo > 0 or not hi > lo:
                raise ValueError
            n = int(math.floor((hi - lo) * ppo + 1e-9))
            return lo + np.arange(n + 1) / ppo
        vals = [math.log2(parse_number(v)) for v in t.split(",") if v.strip()]
        if len(vals) < 2:
            raise ValueError
        return np.array(vals)
    except ValueError as err:
        raise click.BadParameter(
            f"grid {text!r} must be start:stop:points_per_octave with start < stop and "
            "positive density, or a list of at least two values") from err


def parse_list(text, conv=float) -> list:
    try:
        return [conv(v) for v in str(text).split(",") if v.strip()]
    except ValueError as err:
        raise click.BadParameter(f"cannot parse list {text!r}") from err


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    path.write_text(buf.getvalue())


SCHEDULE_KEYS = {"preset", "N", "eps", "gamma", "Nk", "d", "K"}


def semantic_config(params: dict, schedule=None, **parsed) -> dict:
    """The fields that determine the artifacts, in resolved form.

    Raw schedule options are replaced by the schedule they build and textual
    seeds and grids by their parsed values, so equivalent spellings hash alike.
    """
    sem = {k: v for k, v in params.items() if k not in NON_SEMANTIC}
    if schedule is not None:
        for k in SCHEDULE_KEYS:
            sem.pop(k, None)
        sem["schedule"] = schedule.to_dict()
    for k, v in parsed.items():
        sem[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
    return sem


def config_hash(semantic: dict) -> str:
    blob = json.dumps(semantic, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- orchestration

class Run:
    """Collects gates and writes the manifest on exit."""

    def __init__(self, command: str, params: dict, semantic: dict | None = None):
        self.command = command
        self.params = params
        self.semantic = semantic_config(params) if semantic is None else semantic
        self.out = Path(params["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.gates = []
        self.seeds = []
        self.t0 = time.perf_counter()

    def add(self, result: ex.Result):
        self.gates.extend(result.gates)
        for g in result.gates:
            click.echo(g.line())

    def finish(self, code: int | None = None, error: str | None = None) -> int:
        if code is None:
            code = EXIT_OK if all(g.passed for g in self.gates) else EXIT_GATE
        manifest = {
            "command": self.command,
            "config": {k: v for k, v in sorted(self.params.items())},
            "config_hash": config_hash(self.semantic),
            "seeds": self.seeds,
            "versions": {"frostman": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "click": _click_version()},
            "gates": [g.to_dict() for g in self.gates],
            "exit_code": code,
            "error": error,
            "wall_time_s": time.perf_counter() - self.t0,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
        return code


def _click_version() -> str:
    from importlib.metadata import version
    return version("click")


def run_command(command: str, params: dict, body, semantic: dict | None = None) -> None:
    run = Run(command, params, semantic)
    try:
        body(run)
    except ResolutionError as err:
        click.echo(f"resolution gate: {err}", err=True)
        sys.exit(run.finish(EXIT_RESOLUTION, str(err)))
    except (ScheduleError, ValueError) as err:
        click.echo(f"configuration error: {err}", err=True)
        sys.exit(run.finish(EXIT_CONFIG, str(err)))
    sys.exit(run.finish())


def schedule_options(f):
    opts = [
        click.option("--preset", type=click.Choice(["dim1", "dim-epsilon", "custom"]),
                     default="dim-epsilon", show_default=True),
        click.option("--N", "N", type=int, default=4, show_default=True, help="Base branching."),
        click.option("--eps", type=str, default="0.5", show_default=True,
                     help="Shape parameter for dim-epsilon; comma list per stage for custom."),
        click.option("--gamma", type=float, default=1 / 3, show_default=True,
                     help="Shape parameter for dim1."),
        click.option("--Nk", "Nk", type=str, default=None, help="Comma list of N_k (custom preset)."),
        click.option("--d", type=int, default=1, show_default=True),
        click.option("--K", "K", type=int, default=6, show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def make_schedule(p: dict):
    if p["preset"] == "custom":
        if not p["Nk"]:
            raise click.BadParameter("custom preset needs --Nk", param_hint="--Nk")
        Nk = parse_list(p["Nk"], int)
        eps = parse_list(p["eps"])
        return custom_schedule(Nk, p["d"], eps if len(eps) > 1 else eps[0], check_p=True)
    shape = p["gamma"] if p["preset"] == "dim1" else float(p["eps"])
    try:
        return build_schedule(p["preset"], p["N"], shape, p["d"], p["K"])
    except ScheduleError as err:
        raise click.BadParameter(str(err)) from err


def common(f):
    f = click.option("--out", type=click.Path(file_okay=False), default="frostman_out",
                     show_default=True)(f)
    return config_option(f)


@click.group()
@click.version_option(__version__)
def main():
    """Random Cantor measures, ball conditions, kernel sums and restriction exponents."""


# ---------------------------------------------------------------- generate

@main.command()
@schedule_options
@click.option("--seeds", default="0..9", show_default=True)
@click.option("--pin-origin", is_flag=True)
@common
def generate(**params):
    """Grow conditioned trees, save them as JSON, and write the counts CSV."""
    sched = make_schedule(params)
    seeds = parse_seeds(params["seeds"])

    def body(run):
        run.seeds = seeds
        tdir = run.out / "trees"
        tdir.mkdir(exist_ok=True)
        trees = ex.grow_ensemble(sched, seeds, params["pin_origin"])
        for s, t in zip(seeds, trees):
            (tdir / f"tree_seed{s}.json").write_bytes(serialize_tree(t))
        (run.out / "counts.csv").write_text(
            rc.counts_csv([(s, rc.count_statistics(t)) for s, t in zip(seeds, trees)]))
        click.echo(f"wrote {len(trees)} trees to {tdir}")

    run_command("generate", params, body, semantic_config(params, sched, seeds=seeds))


# ---------------------------------------------------------------- dimension

@main.command()
@schedule_options
@click.option("--seeds", default="0..49", show_default=True)
@click.option("--counts-only", is_flag=True,
              help="Sample stage counts from their exact chain instead of growing trees.")
@click.option("--tol", type=float, default=0.10, show_default=True)
@click.option("--ratio-cap", type=float, default=8.0, show_default=True)
@click.option("--weak-star", is_flag=True, help="Also run the weak-* halving gate (trees only).")
@common
def dimension(**params):
    """Dimension estimates, count concentration and conditional-mean checks."""
    sched = make_schedule(params)
    seeds = parse_seeds(params["seeds"])

    def body(run):
        run.seeds = seeds
        if params["counts_only"]:
            ens = ex.chain_ensemble(sched, seeds)
        else:
            ens = ex.grow_ensemble(sched, seeds)
        dim = ex.dimension_check(sched, ens, params["tol"])
        cnt = ex.count_check(sched, ens, params["ratio_cap"])
        run.add(dim)
        run.add(cnt)
        write_csv(run.out / "dimension.csv",
                  ["seed", "estimate", "lower_estimate", "residual", "target"],
                  [(s, e.estimate, e.lower_estimate, e.residual, e.target)
                   for s, e in zip(seeds, dim.data["estimates"])])
        (run.out / "counts.csv").write_text(rc.counts_csv(list(zip(seeds, cnt.data["reports"]))))
        if params["weak_star"]:
            if params["counts_only"]:
                raise ValueError("the weak-* gate needs trees; drop --counts-only")
            ws = ex.weak_star_check(ens)
            run.add(ws)
            write_csv(run.out / "weak_star.csv", ["seed", "gap_k2", "gap_k4"],
                      zip(seeds, ws.data["gaps_small"], ws.data["gaps_large"]))

    run_command("dimension", params, body, semantic_config(params, sched, seeds=seeds))


# ---------------------------------------------------------------- ballcheck

@main.command()
@schedule_options
@click.option("--seeds", default="0..19", show_default=True)
@click.option("--alpha", type=float, default=None, help="Ball exponent (default: target dimension).")
@click.option("--window-top", type=float, default=None,
              help="log2 of the largest radius (default: centered between finest scale and 1).")
@click.option("--decades", type=int, default=3, show_default=True)
@click.option("--per-octave", type=int, default=8, show_default=True)
@click.option("--candidate-cap", type=int, default=20000, show_default=True)
@click.option("--full-profile", is_flag=True, help="Also write every (center, radius) ratio.")
@common
def ballcheck(**params):
    """Upper and lower ball-growth profiles on origin-pinned trees."""
    sched = make_schedule(params)
    seeds = parse_seeds(params["seeds"])
    alpha = sched.target_dimension() if params["alpha"] is None else params["alpha"]

    def body(run):
        run.seeds = seeds
        if params["decades"] < 1:
            raise ValueError("need at least one decade")
        wins = (ex.default_ball_windows(sched, params["decades"]) if params["window_top"] is None
                else ma.decade_windows(params["window_top"], params["decades"]))
        if min(w[0] for w in wins) < sched.log2_delta[-1]:
            raise ResolutionError("ball windows reach below the finest cube size")
        trees = ex.grow_ensemble(sched, seeds, pin_origin=True)
        res = ex.ball_check(trees, alpha, seeds, wins, params["per_octave"], params["candidate_cap"])
        run.add(res)
        up_rows, low_rows, win_rows = [], [], []
        for row in res.data["rows"]:
            r, v = row["upper"].extreme_by_radius()
            up_rows += [(row["seed"], a, b) for a, b in zip(r, v)]
            lo = row["lower"]
            low_rows += [(row["seed"], a, m, q, fq) for a, m, q, fq in
                         zip(lo.log2_r, lo.mass, lo.ratio, lo.floor_ratio)]
            for i, (a, b) in enumerate(wins):
                win_rows.append((row["seed"], i, a, b, row["upper_windows"][i], row["upper_R"],
                                 row["lower_windows"][i], row["lower_R"]))
            if params["full_profile"]:
                (run.out / f"ball_upper_seed{row['seed']}.csv").write_text(row["upper"].to_csv())
        write_csv(run.out / "ball_upper.csv", ["seed", "log2_r", "sup_ratio"], up_rows)
        write_csv(run.out / "ball_lower.csv", ["seed", "log2_r", "mass", "ratio", "floor_ratio"],
                  low_rows)
        write_csv(run.out / "ball_windows.csv",
                  ["seed", "window", "log2_lo", "log2_hi", "upper_sup", "upper_R", "lower_inf",
                   "lower_R"], win_rows)

    run_command("ballcheck", params, body,
                semantic_config(params, sched, seeds=seeds, alpha=alpha))


# ---------------------------------------------------------------- kernel

@main.command()
@schedule_options
@click.option("--seeds", default="0..19", show_default=True)
@click.option("--n", "n_dim", type=int, default=2, show_default=True, help="Manifold dimension.")
@click.option("--alpha", type=float, default=None, help="Ball exponent (default: target dimension).")
@click.option("--p", "p_list", default="0.5,1,2,4,8", show_default=True)
@click.option("--lambdas", default="2^4:2^38:0.5", show_default=True,
              help="start:stop:points_per_octave")
@click.option("--tol", type=float, default=0.10, show_default=True)
@common
def kernel(**params):
    """Decay exponents of the kernel sums on origin-pinned measures."""
    sched = make_schedule(params)
    seeds = parse_seeds(params["seeds"])
    alpha = sched.target_dimension() if params["alpha"] is None else params["alpha"]
    ps = parse_list(params["p_list"])
    ll = parse_log2_grid(params["lambdas"])

    def body(run):
        run.seeds = seeds
        trees = ex.grow_ensemble(sched, seeds, pin_origin=True)
        measures = [stage_measure(t, t.depth) for t in trees]
        res = ex.kernel_check(measures, params["n_dim"], alpha, ps, ll, params["tol"])
        run.add(res)
        for s, fits in zip(seeds, res.data["fits"]):
            text = "".join(f.to_csv(header=(i == 0)) for i, f in enumerate(fits))
            (run.out / f"kernel_fit_seed{s}.csv").write_text(text)

    run_command("kernel", params, body,
                semantic_config(params, sched, seeds=seeds, alpha=alpha, p_list=ps, lambdas=ll))


# ---------------------------------------------------------------- schur

@main.command()
@click.option("--instances", type=int, default=1000, show_default=True)
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--climb-steps", type=int, default=200, show_default=True)
@click.option("--brute-instances", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=1e-9, show_default=True)
@common
def schur(**params):
    """Randomized verification of the generalized Young inequality."""
    def body(run):
        run.seeds = [params["seed"]]
        if params["instances"] < 1:
            raise ValueError("need at least one instance")
        res = ex.young_check(params["instances"], params["trials"], params["seed"],
                             params["climb_steps"], params["tol"], params["brute_instances"])
        run.add(res)
        (run.out / "young.jsonl").write_text(
            "".join(r.to_json() + "\n" for r in res.data["reports"]))

    run_command("schur", params, body)


# ---------------------------------------------------------------- sphere

@main.command()
@click.option("--family", type=click.Choice(sr.FAMILIES), default="zonal", show_default=True)
@click.option("--arc", "arc_kind", type=click.Choice(["cantor", "lebesgue"]), default="cantor",
              show_default=True)
@click.option("--placement", type=click.Choice(["meridian", "equator"]), default="meridian",
              show_default=True)
@click.option("--length", type=float, default=1.0, show_default=True)
@click.option("--eps", type=float, default=0.5, show_default=True)
@click.option("--N", "N", type=int, default=4, show_default=True)
@click.option("--K", "K", type=int, default=6, show_default=True)
@click.option("--lebesgue-depth", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--p", "p", type=str, default="8", show_default=True)
@click.option("--degrees", default="16:512:2", show_default=True,
              help="start:stop:points_per_octave")
@click.option("--tol", type=float, default=0.10, show_default=True)
@common
def sphere(**params):
    """Restriction-norm growth of spherical harmonics on an arc measure."""
    ll = parse_log2_grid(params["degrees"])
    degrees = sorted(set(int(round(2.0**x)) for x in ll))
    p = parse_number(params["p"])

    def body(run):
        if params["arc_kind"] == "cantor":
            sched = build_schedule("dim-epsilon", params["N"], params["eps"], 1, params["K"])
            tree = rc.grow_conditioned(rc.GrowthConfig(sched, params["seed"], pin_origin=True))
            arc = ex.cantor_arc(tree, params["length"], params["placement"])
            alpha = sched.target_dimension()
            run.seeds = [params["seed"]]
        else:
            arc = ex.lebesgue_arc(params["lebesgue_depth"], params["length"], params["placement"])
            alpha = 1.0
        if params["family"] == "highest_weight" and params["placement"] == "equator":
            target = 0.25
        else:
            target = float(sr.vartheta(2, alpha, p))
        fit = sr.fit_restriction_exponent(params["family"], arc, p, degrees, target, params["tol"])
        fit.meta["alpha"] = alpha
        res = ex.Result()
        res.add(f"sphere_{params['family']}_slope", fit.deviation, fit.tolerance, fit.passed,
                f"slope {fit.slope:.4f} vs {target:.4f}")
        run.add(res)
        (run.out / "sphere_fit.csv").write_text(fit.to_csv())

    run_command("sphere", params, body,
                semantic_config(params, degrees=degrees, p=fmt(p)))


# ---------------------------------------------------------------- exponents

@main.command()
@click.option("--n", "n_dim", type=str, default="2", show_default=True, help="Comma list of n.")
@click.option("--d", "d_list", type=str, default="1", show_default=True, help="Comma list of d.")
@click.option("--eps", "eps_list", type=str, default="0,0.5", show_default=True)
@click.option("--p", "p_list", type=str, default="2,4,6,8,inf", show_default=True)
@common
def exponents(**params):
    """Exponent table in exact rational arithmetic, written as CSV."""
    def body(run):
        rows = []
        for n in parse_list(params["n_dim"], int):
            for d in parse_list(params["d_list"], int):
                for e in parse_list(params["eps_list"], str):
                    for p in parse_list(params["p_list"], str):
                        pv = "inf" if p.strip().lower() in ("inf", "infinity") else \
                            sr._frac(parse_number(p))
                        rows.append(sr.exponent_table(n, d, sr._frac(float(e)), pv))
        text = sr.table_csv(rows)
        (run.out / "exponents.csv").write_text(text)
        click.echo(text, nl=False)

    sem = semantic_config(params, n_dim=parse_list(params["n_dim"], int),
                          d_list=parse_list(params["d_list"], int),
                          eps_list=parse_list(params["eps_list"]),
                          p_list=[fmt(parse_number(p)) for p in parse_list(params["p_list"], str)])
    run_command("exponents", params, body, sem)


if __name__ == "__main__":
    main()
