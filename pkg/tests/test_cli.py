import json
import os

import pytest

from campanato_t1 import cli
from campanato_t1.errors import ReflectionFailure


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(tmp_path, command, cfg, *extra, out="out"):
    o = tmp_path / out
    code = cli.main([command, "--config", write_cfg(tmp_path, cfg), "--out", str(o), *extra])
    verdict = json.loads((o / "verdict.json").read_text()) if (o / "verdict.json").exists() else None
    return code, verdict, o


def test_whitney_square(tmp_path):
    code, v, o = run(tmp_path, "whitney", {"domain": {"type": "square"}, "params": {"min_level": -6}})
    assert code == 0 and v["violations"] == 0 and v["pass"]
    cov = json.loads((o / "covering.json").read_text())
    assert len(cov["cubes"]) > 0


def test_self_intersecting_polygon_exits_2(tmp_path, capsys):
    cfg = {"domain": {"type": "polygon", "vertices": [[0, 0], [1, 1], [1, 0], [0, 1]]}}
    code, v, o = run(tmp_path, "whitney", cfg)
    assert code == 2 and v is None
    assert "error" in capsys.readouterr().err


def test_dry_run_writes_nothing(tmp_path, capsys):
    o = tmp_path / "dry"
    code = cli.main(["t1check", "--out", str(o), "--dry-run"])
    assert code == 0
    assert not o.exists()
    plan = json.loads(capsys.readouterr().out)
    assert plan["command"] == "t1check" and plan["seed"] == 0


@pytest.mark.parametrize("command", ["whitney", "seminorm"])
def test_reruns_are_byte_identical(tmp_path, command):
    cfg = {"domain": {"type": "notched_square"}, "field": {"type": "coordinate", "axis": 0},
           "params": {"min_level": -6, "n_random": 100, "whitney_level": -4}}
    run(tmp_path, command, cfg, "--seed", "7", out="a")
    run(tmp_path, command, cfg, "--seed", "7", "--threads", "2", out="b")
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_cancellation_ball(tmp_path):
    code, v, o = run(tmp_path, "cancellation", {"domain": {"type": "ball"}})
    assert code == 0 and v["max_abs"] <= 1e-4 and v["pass"]
    lines = (o / "cancellation.csv").read_text().splitlines()
    assert len(lines) == 2 + 50


def test_t1check_ball(tmp_path):
    cfg = {"domain": {"type": "ball"}, "modulus": {"family": "constant"},
           "params": {"grid_n": 64, "n_random": 100}}
    code, v, o = run(tmp_path, "t1check", cfg)
    assert code == 0 and v["pass"] and v["sup_ratio"] < 1e-8
    assert (o / "profile.csv").exists()


def test_seminorm_constant_field(tmp_path):
    cfg = {"field": {"type": "constant", "value": 4.0}, "params": {"n_random": 100, "threshold": 0.0}}
    code, v, _ = run(tmp_path, "seminorm", cfg)
    assert code == 0 and v["sup_ratio"] == 0.0


def test_threshold_failure_exits_1(tmp_path):
    cfg = {"field": {"type": "coordinate"}, "params": {"n_random": 50, "threshold": 1e-3}}
    code, v, _ = run(tmp_path, "seminorm", cfg)
    assert code == 1 and not v["pass"]


def test_csv_schema_header(tmp_path):
    cfg = {"domain": {"type": "square"}, "params": {"points": [[0.5, 0.5], [0.3, 0.4]]}}
    code, _, o = run(tmp_path, "tchi", cfg)
    lines = (o / "tchi.csv").read_text().splitlines()
    assert code == 0
    assert lines[0] == "#schema_version=1"
    assert lines[1] == "x,y,tchi"
    assert len(lines) == 4


def test_extend_agrees_on_domain(tmp_path):
    cfg = {"domain": {"type": "notched_square"}, "field": {"type": "coordinate"},
           "params": {"min_level": -6, "grid_n": 24}}
    code, v, _ = run(tmp_path, "extend", cfg)
    assert code == 0 and v["max_deviation_on_D"] == 0.0


def test_bad_config_values(tmp_path):
    assert cli.main(["whitney", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert cli.main(["whitney", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert cli.main(["tchi", "--tol", "0", "--out", str(tmp_path)]) == 2
    cfg = {"kernel": {"name": "nope"}}
    code, _, _ = run(tmp_path, "tchi", cfg)
    assert code == 2


def test_error_exit_codes(tmp_path, monkeypatch):
    def boom(cfg):
        def go(out):
            raise ReflectionFailure("no candidate")
        return {"command": "whitney"}, go

    monkeypatch.setitem(cli.COMMANDS, "whitney", boom)
    assert cli.main(["whitney", "--out", str(tmp_path)]) == 5
