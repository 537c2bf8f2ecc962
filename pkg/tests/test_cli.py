import json

import pytest
from click.testing import CliRunner

from reppath.cli import main
from reppath.events import load_trace


@pytest.fixture
def runner():
    return CliRunner()


def _simulate(runner, out, *extra):
    res = runner.invoke(main, ["simulate", "jobs", "--out", str(out), "--count", "wordcount=4",
                               "--count", "grep=0", *extra])
    assert res.exit_code == 0, res.output
    return out


def test_simulate_writes_three_files(runner, tmp_path):
    out = _simulate(runner, tmp_path / "a")
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "trace.reptrace",
                                                     "truth.jsonl"]
    m = json.loads((out / "manifest.json").read_text())
    assert m["event_count"] == len(load_trace(out / "trace.reptrace"))


def test_simulate_is_byte_stable(runner, tmp_path):
    a = _simulate(runner, tmp_path / "a", "--seed", "3")
    b = _simulate(runner, tmp_path / "b", "--seed", "3")
    for name in ("trace.reptrace", "truth.jsonl", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_rejects_bad_input(runner, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("requests: []\n")
    assert runner.invoke(main, ["simulate", str(bad), "--out", str(tmp_path / "x")]).exit_code == 2
    assert runner.invoke(main, ["simulate", "jobs", "--out", str(tmp_path / "x"),
                                "--fault", "melt:all"]).exit_code == 2
    assert runner.invoke(main, ["simulate", "jobs", "--out", str(tmp_path / "x"),
                                "--count", "nosuch=3"]).exit_code == 2


def test_pipeline_exit_codes(runner, tmp_path):
    train = _simulate(runner, tmp_path / "train")
    fsa = tmp_path / "fsa"
    res = runner.invoke(main, ["train", "--trace", str(train / "trace.reptrace"),
                               "--type", "wordcount", "--paths", "4", "--out-dir", str(fsa)])
    assert res.exit_code == 0, res.output
    assert (fsa / "wordcount.core.fsa").exists() and (fsa / "wordcount.full.fsa").exists()

    clean = runner.invoke(main, ["detect", "--fsa-dir", str(fsa),
                                 "--trace", str(train / "trace.reptrace")])
    assert clean.exit_code == 0, clean.output
    assert "anomalies=0" in clean.output

    crashed = _simulate(runner, tmp_path / "crash", "--seed", "12",
                        "--fault", "component_crash:nodemanager")
    res = runner.invoke(main, ["detect", "--fsa-dir", str(fsa),
                               "--trace", str(crashed / "trace.reptrace")])
    assert res.exit_code == 1
    assert "kind=functional" in res.output


def test_detect_skips_malformed_lines(runner, tmp_path):
    train = _simulate(runner, tmp_path / "train")
    fsa = tmp_path / "fsa"
    runner.invoke(main, ["train", "--trace", str(train / "trace.reptrace"),
                         "--type", "wordcount", "--out-dir", str(fsa)])
    trace = tmp_path / "mixed.reptrace"
    trace.write_text((train / "trace.reptrace").read_text() + "{broken\n")
    res = runner.invoke(main, ["detect", "--fsa-dir", str(fsa), "--trace", str(trace)])
    assert res.exit_code == 0
    assert "skipped malformed" in res.output and "malformed_lines=1" in res.output


def test_train_needs_enough_paths(runner, tmp_path):
    train = _simulate(runner, tmp_path / "train")
    res = runner.invoke(main, ["train", "--trace", str(train / "trace.reptrace"), "--type",
                               "wordcount", "--paths", "50", "--out-dir", str(tmp_path / "f")])
    assert res.exit_code == 2


def test_detect_needs_models(runner, tmp_path):
    train = _simulate(runner, tmp_path / "train")
    (tmp_path / "empty").mkdir()
    res = runner.invoke(main, ["detect", "--fsa-dir", str(tmp_path / "empty"),
                               "--trace", str(train / "trace.reptrace")])
    assert res.exit_code == 2


def test_link_reports_fragments(runner, tmp_path):
    train = _simulate(runner, tmp_path / "t")
    res = runner.invoke(main, ["link", "--trace", str(train / "trace.reptrace"),
                               "--out", str(tmp_path / "g.txt")])
    assert res.exit_code == 0
    assert "requests=4" in res.output and "removed_fraction=" in res.output
    text = (tmp_path / "g.txt").read_text()
    assert text.startswith("# reppath graph v1") and "\ntree " in text


def test_overhead_command(runner, tmp_path):
    train = _simulate(runner, tmp_path / "t")
    res = runner.invoke(main, ["overhead", "--trace", str(train / "trace.reptrace"), "--json"])
    assert res.exit_code == 0
    data = json.loads(res.output)
    agg = data["aggregate"]
    assert agg["overhead"] == pytest.approx(28 / agg["mean_payload"])


def test_overhead_without_sends(runner, tmp_path):
    p = tmp_path / "t.reptrace"
    p.write_text('{"event_id":"n1:1","call":"malloc","category":"other",'
                 '"thread":"t","process":"p","node":"n1","ts":0,"ctx":"c"}\n')
    assert runner.invoke(main, ["overhead", "--trace", str(p)]).exit_code == 2


def test_evaluate_small(runner, tmp_path):
    out = tmp_path / "r.json"
    res = runner.invoke(main, ["evaluate", "jobs", "--variants", "FSA,eFSA", "--no-perf",
                               "--json", str(out)])
    assert res.exit_code == 0, res.output
    assert "precision" in res.output
    data = json.loads(out.read_text())
    assert {r["variant"] for r in data["functional"]} == {"FSA", "eFSA"}


def test_evaluate_rejects_unknown_variant(runner):
    assert runner.invoke(main, ["evaluate", "jobs", "--variants", "FSA-zero"]).exit_code == 2
