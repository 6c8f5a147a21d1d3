import json
from dataclasses import replace

import pytest

from clasp.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from clasp.harness import validate_report
from clasp.reasoner import StubServer
from clasp.scene import write_scene
from conftest import single


def test_run_generated_writes_valid_report(tmp_path, capsys):
    report = tmp_path / "r.json"
    trace = tmp_path / "t.jsonl"
    code = main(["run", "--gen-count", "1", "--reasoner", "oracle", "--seed", "7", "--report", str(report),
                 "--trace", str(trace)])
    assert code in (EXIT_OK, EXIT_FAIL)
    doc = json.loads(report.read_text())
    validate_report(doc)
    assert code == (EXIT_OK if doc["outcomes"]["Placed"] == 1 else EXIT_FAIL)
    assert "pick_success_rate" in json.loads(capsys.readouterr().out)
    assert main(["eval", str(report)]) == EXIT_OK
    assert main(["eval", str(trace)]) == EXIT_OK
    assert main(["validate", str(report)]) == EXIT_OK
    assert main(["validate", str(trace)]) == EXIT_OK


def test_run_scene_file_and_config_replay(tmp_path):
    scene = tmp_path / "s.json"
    write_scene(single("cuboid"), scene)
    r1, r2 = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["run", "--scene", str(scene), "--report", str(r1)]) == EXIT_OK
    echo = tmp_path / "cfg.json"
    echo.write_text(json.dumps(json.loads(r1.read_text())["config_echo"]))
    assert main(["run", "--config", str(echo), "--report", str(r2)]) == EXIT_OK
    assert r1.read_text() == r2.read_text()
    assert main(["validate", str(scene)]) == EXIT_OK


def test_run_target_failure_exits_one(tmp_path):
    # a scene without a blocks zone cannot be completed
    bad = single("cuboid")
    bad = replace(bad, zones=tuple(z for z in bad.zones if z.category != "blocks"))
    scene = tmp_path / "s.json"
    write_scene(bad, scene)
    assert main(["run", "--scene", str(scene), "--attempts", "1"]) == EXIT_FAIL


def test_run_remote_against_stub(tmp_path):
    scene = tmp_path / "s.json"
    write_scene(single("cuboid"), scene)
    with StubServer() as srv:
        assert main(["run", "--scene", str(scene), "--reasoner", "remote", "--endpoint", srv.url]) == EXIT_OK
        assert srv.requests


def test_bench_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["bench", "--seed", "7", "--report", str(a)]) == EXIT_OK
    assert main(["bench", "--seed", "7", "--report", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_gen_data_and_validate(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert main(["gen-data", "--count", "3", "--seed", "1", "--out", str(out)]) == EXIT_OK
    manifest = json.loads(capsys.readouterr().out)
    assert manifest["count"] == 3
    assert main(["validate", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["templates"].append({"tau": "t", "grasp": None, "y": 1})
    out.write_text(json.dumps(rec) + "\n")
    assert main(["validate", str(out)]) == EXIT_FAIL
    assert "positive template without grasp" in capsys.readouterr().err


def test_invalid_scene_is_reported(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text('{"objects": [{"label": "unicorn"}]}')
    assert main(["validate", str(p)]) == EXIT_FAIL
    assert "invalid" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["run", "--bogus"],
    ["run"],
    ["run", "--gen-count", "0"],
    ["run", "--gen-count", "1", "--attempts", "4"],
    ["run", "--scene", "/nonexistent.json"],
    ["gen-data", "--count", "1", "--out", "x.jsonl", "--neg-ratio", "2"],
    ["eval", "/nonexistent.json"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_two(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert capsys.readouterr().err
