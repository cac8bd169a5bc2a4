import csv
import io
import json

import pytest
from click.testing import CliRunner

from frostman.cli import main, parse_log2_grid, parse_number, parse_seeds
from frostman.cantor_core import deserialize_tree


@pytest.fixture
def runner():
    return CliRunner()


def _manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_parsers():
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("5, 2") == [5, 2]
    assert parse_number("2^10") == 1024.0
    assert parse_number("inf") == float("inf")
    g = parse_log2_grid("2^4:2^6:2")
    assert g.tolist() == [4.0, 4.5, 5.0, 5.5, 6.0]


def test_exponents_table(runner, tmp_path):
    res = runner.invoke(main, ["exponents", "--n", "2", "--d", "1", "--eps", "0.5",
                               "--p", "2,4,6,8,inf", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(io.StringIO((tmp_path / "exponents.csv").read_text())))
    assert [r["p"] for r in rows] == ["2", "4", "6", "8", "inf"]
    p8 = rows[3]
    assert float(p8["theta"]) == 0.4375 and float(p8["kappa"]) == 0.4375
    assert float(rows[2]["sogge"]) == pytest.approx(1 / 6)


def test_generate_is_deterministic(runner, tmp_path):
    args = ["generate", "--preset", "dim-epsilon", "--N", "4", "--eps", "0.5", "--d", "1",
            "--K", "4", "--seeds", "0..2", "--pin-origin"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert runner.invoke(main, args + ["--out", str(a)]).exit_code == 0
    assert runner.invoke(main, args + ["--out", str(b)]).exit_code == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert len([f for f in files if f.parts[0] == "trees"]) == 3
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    t = deserialize_tree((a / "trees" / "tree_seed1.json").read_bytes())
    assert t.pinned_origin and t.depth == 4
    assert _manifest(a)["config_hash"] == _manifest(b)["config_hash"]
    assert _manifest(a)["seeds"] == [0, 1, 2]


def test_config_file_and_hash(runner, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\npreset = dim-epsilon\nK = 3\nseeds = 0..1\npin-origin = true\n")
    a = tmp_path / "a"
    assert runner.invoke(main, ["generate", "--config", str(cfg), "--out", str(a)]).exit_code == 0
    b = tmp_path / "b"
    res = runner.invoke(main, ["generate", "--K", "3", "--seeds", "0,1", "--pin-origin", "--out", str(b)])
    assert res.exit_code == 0
    assert _manifest(a)["config_hash"] == _manifest(b)["config_hash"]
    c = tmp_path / "c"
    runner.invoke(main, ["generate", "--K", "3", "--seeds", "0,2", "--pin-origin", "--out", str(c)])
    assert _manifest(c)["config_hash"] != _manifest(a)["config_hash"]


def test_equivalent_spellings_hash_alike(runner, tmp_path):
    h = []
    for i, eps in enumerate(("0,0.5", "0.0,0.50")):
        out = tmp_path / str(i)
        runner.invoke(main, ["exponents", "--eps", eps, "--out", str(out)])
        h.append(_manifest(out)["config_hash"])
    assert h[0] == h[1]


def test_config_errors(runner, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    assert runner.invoke(main, ["generate", "--config", str(cfg), "--out", str(tmp_path)]).exit_code == 2
    res = runner.invoke(main, ["generate", "--K", "30", "--out", str(tmp_path)])
    assert res.exit_code == 2
    res = runner.invoke(main, ["generate", "--seeds", "3..1", "--out", str(tmp_path)])
    assert res.exit_code == 2
    res = runner.invoke(main, ["kernel", "--lambdas", "2^8:2^4:1", "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_resolution_exit_code(runner, tmp_path):
    res = runner.invoke(main, ["sphere", "--K", "2", "--out", str(tmp_path)])
    assert res.exit_code == 3
    assert _manifest(tmp_path)["exit_code"] == 3


def test_sphere_lebesgue_highest_weight(runner, tmp_path):
    res = runner.invoke(main, ["sphere", "--family", "highest_weight", "--arc", "lebesgue",
                               "--placement", "equator", "--degrees", "16:2048:2", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert "PASS" in res.output
    assert (tmp_path / "sphere_fit.csv").exists()


def test_dimension_counts_only(runner, tmp_path):
    res = runner.invoke(main, ["dimension", "--K", "5", "--seeds", "0..19", "--counts-only",
                               "--out", str(tmp_path)])
    assert res.exit_code in (0, 1)
    assert (tmp_path / "dimension.csv").exists() and (tmp_path / "counts.csv").exists()
    gates = _manifest(tmp_path)["gates"]
    assert gates and all("passed" in g for g in gates)


def test_schur_small(runner, tmp_path):
    res = runner.invoke(main, ["schur", "--instances", "5", "--trials", "50", "--climb-steps", "10",
                               "--brute-instances", "5", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "young.jsonl").read_text().splitlines()
    assert all(json.loads(l)["verdict"] == "PASS" for l in lines)
