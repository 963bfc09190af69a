import json
import subprocess
import sys

import numpy as np
import pytest

from badgepp import data_io
from badgepp.cli import run
from badgepp.model import Dataset, Event, ModelConfig, ModelParams, dataset_log_likelihood


def _run(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    common = ["--seed", "4"]
    assert run(["simulate", "--preset", "desk", "--events-per-user", "60", "--out", str(d / "events.jsonl"),
                "--params-out", str(d / "true.json"), "--badges-out", str(d / "badges.json")] + common) == 0
    assert run(["split", "--events", str(d / "events.jsonl"), "--out", str(d / "train.jsonl")] + common) == 0
    assert run(["fit", "--events", str(d / "train.jsonl"), "--badges", str(d / "badges.json"),
                "--max-iters", "30", "--out", str(d / "fitted.json")] + common) == 0
    return d


def test_pipeline_outputs(pipeline, capsys):
    d = pipeline
    for name in ("events.jsonl", "true.json", "badges.json", "train.jsonl", "fitted.json", "fitted.json.trace.csv"):
        assert (d / name).exists(), name
    man = json.loads((d / "fitted.json.manifest.json").read_text())
    assert man["command"] == "fit" and man["seed"] == 4 and man["outputs"]["params"].endswith("fitted.json")
    fitted = json.loads((d / "fitted.json").read_text())
    trace = fitted["extra"]["lower_bound_trace"]
    assert np.all(np.diff(trace) >= -1e-8)

    code, out, _ = _run(capsys, "evaluate", "--params", d / "fitted.json", "--events", d / "train.jsonl",
                        "--samples", "20", "--out", d / "eval.json", "--csv", d / "eval.csv", "--seed", "1")
    assert code == 0
    report = json.loads((d / "eval.json").read_text())
    assert set(report["reports"]) == {"model", "poisson", "hawkes", "popular", "recent"}
    assert (d / "eval.csv").read_text().startswith("method,metric,k,value")

    code, _, _ = _run(capsys, "recover", "--true", d / "true.json", "--fitted", d / "fitted.json",
                      "--out", d / "rec.json", "--seed", "0")
    assert code == 0 and "temporal" in json.loads((d / "rec.json").read_text())

    code, _, _ = _run(capsys, "residuals", "--params", d / "fitted.json", "--events", d / "events.jsonl",
                      "--out", d / "qq.csv", "--seed", "0")
    assert code == 0 and (d / "qq.csv.json").exists()

    code, out, _ = _run(capsys, "predict", "--params", d / "fitted.json", "--events", d / "events.jsonl",
                        "--user", "0", "--kind", "a", "--samples", "50", "--top-k", "3", "--out", d / "pred.json",
                        "--seed", "0")
    assert code == 0
    pred = json.loads((d / "pred.json").read_text())
    assert pred["expected_next_time"] > pred["t_now"] and len(pred["ranking"]) <= 3


def test_evaluate_reports_exact_loglik_on_toy_log(tmp_path, capsys):
    ds = Dataset([Event.question(1.0, 0, 0), Event.answer(2.0, 0, 0)], 4.0, 1, 1)
    P = ModelParams(np.array([0.5]), np.array([0.2]), np.array([0.0]), np.array([0.0]),
                    np.array([[1.0]]), np.array([[1.0]]))
    cfg = ModelConfig()
    data_io.save_events(ds, tmp_path / "e.jsonl")
    data_io.save_params(P, cfg, tmp_path / "p.json")
    code, out, _ = _run(capsys, "evaluate", "--params", tmp_path / "p.json", "--events", tmp_path / "e.jsonl",
                        "--out", tmp_path / "r.json", "--seed", "0")
    assert code == 0
    ll = json.loads((tmp_path / "r.json").read_text())["log_likelihood"]
    # closed form: log 0.5 - 2 + log(0.2 + e^-1) - 0.8 - (1 - e^-3)
    expected = np.log(0.5) - 2 + np.log(0.2 + np.exp(-1)) - 0.8 - (1 - np.exp(-3))
    assert ll == pytest.approx(expected, rel=1e-12)
    assert ll == pytest.approx(dataset_log_likelihood(ds, P, cfg), rel=1e-12)


def test_reruns_are_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        run(["simulate", "--preset", "desk", "--events-per-user", "30", "--out", str(d / "e.jsonl"),
             "--badges-out", str(d / "b.json"), "--seed", "9"])
        run(["fit", "--events", str(d / "e.jsonl"), "--badges", str(d / "b.json"), "--max-iters", "5",
             "--out", str(d / "f.json"), "--seed", "9"])
        man = json.loads((d / "f.json.manifest.json").read_text())
        man.pop("wall_time")
        for key in ("inputs", "outputs"):
            man[key] = {k: v.replace(str(d), "") for k, v in man[key].items()}
        man["argv"] = [a.replace(str(d), "") for a in man["argv"]]
        outs.append(((d / "e.jsonl").read_bytes(), (d / "f.json").read_bytes(), man))
    capsys.readouterr()
    assert outs[0] == outs[1]


def test_errors_exit_with_code_one(tmp_path, capsys):
    code, _, err = _run(capsys, "fit", "--events", tmp_path / "missing.jsonl", "--badges", tmp_path / "b.json",
                        "--out", tmp_path / "f.json", "--seed", "0")
    assert code == 1
    assert "error" in json.loads(err.strip().splitlines()[-1])
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format": "badgepp-events", "version": 7}\n')
    code, _, err = _run(capsys, "split", "--events", bad, "--out", tmp_path / "s.jsonl", "--seed", "0")
    assert code == 1


def test_usage_errors_exit_with_code_two(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["fit", "--events", "x"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "badgepp.cli", "simulate", "--events-per-user", "10",
                          "--out", str(tmp_path / "e.jsonl"), "--seed", "1"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["events"] > 0
