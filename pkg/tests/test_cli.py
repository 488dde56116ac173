import csv
import json

import numpy as np
import pytest

from ikd import cli, losses, reporting
from ikd.trainer import HISTORY_FIELDS

SMALL = ["--n-per-class", "10", "--epochs", "2"]


def _train(tmp_path, name, *extra):
    out = tmp_path / name
    code = cli.main(["train", "--out", str(out), *SMALL, *extra])
    return code, out


def _json_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_train_writes_run_directory(tmp_path, capsys):
    code, out = _train(tmp_path, "run")
    assert code == 0
    for name in ("manifest.json", "history.jsonl", "feedback.jsonl", "metrics.json", "student.json", "teacher.json"):
        assert (out / name).exists(), name
    lines = _json_lines(out / "history.jsonl")
    header, records = lines[0], lines[1:]
    assert header["schema"] == reporting.HISTORY_SCHEMA and header["mode"] == "ikd"
    assert len(records) == 2 * header["steps_per_epoch"]
    assert list(records[0]) == list(HISTORY_FIELDS)
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"train_acc", "test_acc", "final_losses"} <= set(metrics)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["train_config"]["alpha"] == 0.05 and manifest["duration_s"] is not None
    assert json.loads(capsys.readouterr().out)["mode"] == "ikd"


def test_train_is_deterministic(tmp_path):
    _, a = _train(tmp_path, "a", "--seed", "3")
    _, b = _train(tmp_path, "b", "--seed", "3")
    for name in ("history.jsonl", "feedback.jsonl", "metrics.json", "student.json", "teacher.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_ft_warns_about_teacher_flags(tmp_path, caplog):
    code, out = _train(tmp_path, "ft", "--mode", "ft", "--beta", "0.3", "--gamma", "0.1")
    assert code == 0
    text = caplog.text
    assert "--beta is ignored" in text and "--gamma is ignored" in text
    assert not (out / "teacher.json").exists()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("IKD_OUT_DIR", str(tmp_path / "env"))
    assert cli.main(["train", "--mode", "ft", *SMALL]) == 0
    assert (tmp_path / "env" / "history.jsonl").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--mode", "bogus"],
        ["train", "--lambda", "1.5"],
        ["train", "--data", "moons"],
        ["train", "--exam-pairing", "course", "--exam-batch", "3"],
        ["train", "--alpha", "notanumber"],
        ["train", "--student-arch", "mlp", "--student-hidden", "64"],
    ],
)
def test_usage_errors_exit_2(tmp_path, argv):
    assert cli.main([*argv, "--out", str(tmp_path / "x")]) == 2


def test_missing_out_is_usage_error(monkeypatch):
    monkeypatch.delenv("IKD_OUT_DIR", raising=False)
    assert cli.main(["train"]) == 2


def test_bad_csv_is_runtime_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("f0,label\n1.0,0\nxx,1\n")
    assert cli.main(["train", "--data", f"csv:{bad}", "--out", str(tmp_path / "o")]) == 1


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "kd", "alpha": 0.2, "epochs": 1, "n_per_class": 10, "course-batch": 5}))
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--alpha", "0.1", "--out", str(out)]) == 0
    tc = json.loads((out / "manifest.json").read_text())["train_config"]
    assert (tc["mode"], tc["alpha"], tc["epochs"], tc["course_batch"]) == ("kd", 0.1, 1, 5)


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_csv_data_round_trip(tmp_path):
    p = tmp_path / "d.csv"
    rng = np.random.default_rng(0)
    rows = "\n".join(f"{a},{b},{int(a > 0)}" for a, b in rng.standard_normal((30, 2)))
    p.write_text("f0,f1,label\n" + rows + "\n")
    assert cli.main(["train", "--data", f"csv:{p}", "--epochs", "1", "--out", str(tmp_path / "o")]) == 0


def test_compare_one_seed(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--seeds", "1", *SMALL, "--out", str(out)]) == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0] == f"# schema={reporting.COMPARE_SCHEMA}"
    rows = list(csv.DictReader(lines[1:]))
    data = [r for r in rows if r["seed"] != "mean"]
    summary = [r for r in rows if r["seed"] == "mean"]
    assert len(data) == 3 and len(summary) == 3
    for s in summary:
        match = [d for d in data if d["mode"] == s["mode"]]
        assert float(s["test_acc"]) == float(match[0]["test_acc"]) and float(s["test_acc_std"]) == 0.0
    summary_json = json.loads((out / "compare_summary.json").read_text())
    assert "holds" in summary_json
    assert "ikd>=kd-0.5pt" in capsys.readouterr().out


def test_compare_means_are_arithmetic_means(tmp_path):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--seeds", "3", "--jobs", "2", *SMALL, "--out", str(out)]) == 0
    rows = reporting.read_compare_csv(out / "compare.csv")
    for mode in ("ft", "kd", "ikd"):
        accs = [float(r["test_acc"]) for r in rows if r["mode"] == mode and r["seed"] != "mean"]
        mean = next(float(r["test_acc"]) for r in rows if r["mode"] == mode and r["seed"] == "mean")
        assert len(accs) == 3
        assert abs(mean - sum(accs) / 3) <= 1e-12
    assert sorted(p.name for p in (out / "runs").iterdir())[:3] == ["ft_seed0", "ft_seed1", "ft_seed2"]


def test_analyze_entropy_kd_constant(tmp_path):
    _, out = _train(tmp_path, "kd", "--mode", "kd", "--epochs", "3")
    assert cli.main(["analyze-entropy", str(out / "history.jsonl")]) == 0
    lines = (out / "entropy.csv").read_text().splitlines()
    assert lines[0] == f"# schema={reporting.ENTROPY_SCHEMA}"
    assert lines[1] == "dataset,epoch_1,epoch_2,epoch_3"
    values = [float(v) for v in lines[2].split(",")[1:]]
    assert max(values) - min(values) < 1e-12


def test_analyze_entropy_empty_history(tmp_path):
    empty = tmp_path / "history.jsonl"
    empty.write_text("")
    assert cli.main(["analyze-entropy", str(empty)]) == 2
    assert cli.main(["analyze-entropy", str(tmp_path / "missing.jsonl")]) == 2


def test_analyze_feedback(tmp_path, capsys):
    _, out = _train(tmp_path, "ikd")
    capsys.readouterr()
    assert cli.main(["analyze-feedback", str(out / "history.jsonl")]) == 0
    summary = json.loads(capsys.readouterr().out)
    for key in ("frac_target_nonpositive", "frac_nontarget_nonnegative", "range_ratio", "decays"):
        assert key in summary
    lines = (out / "feedback_scatter.csv").read_text().splitlines()
    assert lines[0] == f"# schema={reporting.SCATTER_SCHEMA}"
    assert lines[1] == "teacher_prob,fb,is_target,step"


def test_analyze_feedback_refuses_ft(tmp_path):
    _, out = _train(tmp_path, "ft", "--mode", "ft")
    assert cli.main(["analyze-feedback", str(out / "history.jsonl")]) == 2


def test_gradcheck_default_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["eps"] == 1e-5


def test_gradcheck_catches_sign_flip(monkeypatch, capsys):
    real = losses._kl_backward

    def flipped(*args):
        d_t, d_s = real(*args)
        return d_t, -d_s

    monkeypatch.setattr(losses, "_kl_backward", flipped)
    assert cli.main(["gradcheck", "--instances", "5"]) == 1
    report = json.loads(capsys.readouterr().out)
    failed = {c["name"] for c in report["checks"] if not c["passed"]}
    assert "fd:l_kd" in failed


def test_gradcheck_coarse_eps_is_worse_but_bounded(capsys):
    cli.main(["gradcheck", "--instances", "10"])
    fine = json.loads(capsys.readouterr().out)
    cli.main(["gradcheck", "--instances", "10", "--eps", "1e-3", "--tol", "1e-2"])
    coarse = json.loads(capsys.readouterr().out)
    err = lambda rep: max(c["max_rel_err"] for c in rep["checks"] if c["name"].startswith("fd:"))
    assert err(fine) < err(coarse) < 1e-2
    assert coarse["passed"] and coarse["eps"] == 1e-3
