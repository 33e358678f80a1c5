"""End-to-end CLI runs, in process via cli.main(argv).

Everything here goes through the real argument parser and exercises the
documented exit codes: 0 ok, 1 usage, 2 data, 3 numeric.
"""

from __future__ import annotations

import filecmp
import json

import pytest

from sasv import cli
from sasv.checkpoint import load_checkpoint
from sasv.metrics import load_scores


def _run(argv):
    try:
        return cli.main(argv)
    except SystemExit as exc:  # argparse rejects usage with its own exit
        return int(exc.code)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth run plus one short training run, shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    args = ["synth", "--out", str(data), "--seed", "7", "--speakers", "8",
            "--utts", "3", "--spoofs", "3", "--sv-dim", "6", "--cm-dim", "5"]
    assert _run(args) == 0
    train_args = [
        "train",
        "--sv-emb", str(data / "sv_embeddings.tsv"),
        "--cm-emb", str(data / "cm_embeddings.tsv"),
        "--train-protocol", str(data / "train_protocol.tsv"),
        "--dev-protocol", str(data / "dev_protocol.tsv"),
        "--epochs", "2", "--out", str(run),
    ]
    assert _run(train_args) == 0
    return {"root": root, "data": data, "run": run,
            "model": run / "model.ckpt"}


def test_synth_outputs_and_sidecar(workspace):
    data = workspace["data"]
    for name in ("sv_embeddings.tsv", "cm_embeddings.tsv", "train_protocol.tsv",
                 "dev_protocol.tsv", "eval_protocol.tsv", "run_config.json"):
        assert (data / name).exists(), name
    sidecar = json.loads((data / "run_config.json").read_text())
    assert sidecar["command"] == "synth"
    assert sidecar["config"]["seed"] == 7
    assert sidecar["config"]["speakers"] == 8


def test_synth_is_deterministic(workspace, tmp_path):
    args = ["synth", "--out", str(tmp_path / "again"), "--seed", "7",
            "--speakers", "8", "--utts", "3", "--spoofs", "3",
            "--sv-dim", "6", "--cm-dim", "5"]
    assert _run(args) == 0
    for name in ("sv_embeddings.tsv", "cm_embeddings.tsv", "eval_protocol.tsv"):
        assert filecmp.cmp(workspace["data"] / name, tmp_path / "again" / name,
                           shallow=False), name


def test_train_artifacts(workspace):
    run = workspace["run"]
    assert (run / "model.ckpt").exists()
    assert (run / "history.csv").exists()
    ckpt = load_checkpoint(str(run / "model.ckpt"))
    assert ckpt.kind == "integration"
    assert ckpt.meta["mode"] == "concat"
    assert ckpt.meta["train"]["epochs"] == 2
    history = (run / "history.csv").read_text().splitlines()
    assert len(history) == 3  # header + one row per epoch


def test_eval_writes_scores_and_report(workspace, tmp_path, capsys):
    data, model = workspace["data"], workspace["model"]
    out = tmp_path / "eval"
    args = ["eval", "--model", str(model),
            "--sv-emb", str(data / "sv_embeddings.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--eval-protocol", str(data / "eval_protocol.tsv"),
            "--out", str(out)]
    assert _run(args) == 0
    assert (out / "scores.csv").exists()
    assert (out / "eer_report.csv").exists()
    printed = capsys.readouterr().out
    assert "SASV-EER" in printed and "SV-EER" in printed
    records = load_scores(str(out / "scores.csv"))
    eval_lines = [ln for ln in (data / "eval_protocol.tsv").read_text().splitlines()
                  if ln.strip()]
    assert len(records) == len(eval_lines)


def test_eval_protocol_alias(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    base = ["eval", "--model", str(model),
            "--sv-emb", str(data / "sv_embeddings.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv")]
    assert _run(base + ["--eval-protocol", str(data / "eval_protocol.tsv"),
                        "--out", str(out_a)]) == 0
    assert _run(base + ["--protocol", str(data / "eval_protocol.tsv"),
                        "--out", str(out_b)]) == 0
    assert filecmp.cmp(out_a / "scores.csv", out_b / "scores.csv", shallow=False)


def test_eval_rereport_from_scores_matches(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    first = tmp_path / "first"
    again = tmp_path / "again"
    assert _run(["eval", "--model", str(model),
                 "--sv-emb", str(data / "sv_embeddings.tsv"),
                 "--cm-emb", str(data / "cm_embeddings.tsv"),
                 "--eval-protocol", str(data / "eval_protocol.tsv"),
                 "--out", str(first)]) == 0
    assert _run(["eval", "--scores", str(first / "scores.csv"),
                 "--out", str(again)]) == 0
    # the exported CSV carries full precision, so the report reproduces exactly
    assert filecmp.cmp(first / "eer_report.csv", again / "eer_report.csv",
                       shallow=False)


def test_score_matches_eval_scores(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    out_eval = tmp_path / "ev"
    out_score = tmp_path / "sc"
    common = ["--model", str(model),
              "--sv-emb", str(data / "sv_embeddings.tsv"),
              "--cm-emb", str(data / "cm_embeddings.tsv"),
              "--eval-protocol", str(data / "eval_protocol.tsv")]
    assert _run(["eval"] + common + ["--out", str(out_eval)]) == 0
    assert _run(["score"] + common + ["--out", str(out_score)]) == 0
    assert filecmp.cmp(out_eval / "scores.csv", out_score / "scores.csv",
                       shallow=False)


def test_threads_do_not_change_scores(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    out1 = tmp_path / "t1"
    out4 = tmp_path / "t4"
    common = ["score", "--model", str(model),
              "--sv-emb", str(data / "sv_embeddings.tsv"),
              "--cm-emb", str(data / "cm_embeddings.tsv"),
              "--eval-protocol", str(data / "eval_protocol.tsv")]
    assert _run(common + ["--threads", "1", "--out", str(out1)]) == 0
    assert _run(common + ["--threads", "4", "--out", str(out4)]) == 0
    assert filecmp.cmp(out1 / "scores.csv", out4 / "scores.csv", shallow=False)


def test_baseline_with_cm_model(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    out = tmp_path / "bl"
    args = ["baseline", "--kind", "sum",
            "--sv-emb", str(data / "sv_embeddings.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--cm-model", str(model),
            "--eval-protocol", str(data / "eval_protocol.tsv"),
            "--out", str(out)]
    assert _run(args) == 0
    assert (out / "scores.csv").exists()
    assert (out / "eer_report.csv").exists()


def test_baseline_with_score_table_and_fitting(workspace, tmp_path):
    data = workspace["data"]
    # hand a constant CM table covering every test utterance
    utts = set()
    for proto in ("dev_protocol.tsv", "eval_protocol.tsv"):
        for line in (data / proto).read_text().splitlines():
            if line.strip():
                utts.add(line.split("\t")[1])
    table = tmp_path / "cm_scores.tsv"
    table.write_text("".join(f"{u}\t{0.5 if '_U' in u else -0.5}\n"
                             for u in sorted(utts)))
    out = tmp_path / "casc"
    args = ["baseline", "--kind", "cascade",
            "--sv-emb", str(data / "sv_embeddings.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--cm-scores", str(table),
            "--dev-protocol", str(data / "dev_protocol.tsv"),
            "--eval-protocol", str(data / "eval_protocol.tsv"),
            "--out", str(out)]
    assert _run(args) == 0
    ckpt = load_checkpoint(str(out / "baseline.ckpt"))
    assert ckpt.kind == "cascade"

    missing_dev = ["baseline", "--kind", "logreg",
                   "--sv-emb", str(data / "sv_embeddings.tsv"),
                   "--cm-emb", str(data / "cm_embeddings.tsv"),
                   "--cm-scores", str(table),
                   "--eval-protocol", str(data / "eval_protocol.tsv"),
                   "--out", str(tmp_path / "nope")]
    assert _run(missing_dev) == 1  # fitting without --dev-protocol is usage


def test_gradcheck_runs_and_reports(tmp_path, capsys):
    out = tmp_path / "gc"
    assert _run(["gradcheck", "--seeds", "1", "--coords", "4",
                 "--out", str(out)]) == 0
    report = (out / "gradcheck_report.csv").read_text().splitlines()
    assert report[0] == "component,max_rel_err"
    assert len(report) == 6  # five audited components
    assert "composite" in capsys.readouterr().out


def test_usage_errors_exit_1(workspace, tmp_path):
    assert _run(["not-a-command"]) == 1
    assert _run([]) == 1
    assert _run(["synth"]) == 1  # --out is required
    data, model = workspace["data"], workspace["model"]
    args = ["score", "--model", str(model),
            "--sv-emb", str(data / "sv_embeddings.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--eval-protocol", str(data / "eval_protocol.tsv"),
            "--threads", "0", "--out", str(tmp_path / "x")]
    assert _run(args) == 1


def test_data_errors_exit_2(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    # missing embedding file is a data problem, not a crash
    args = ["eval", "--model", str(model),
            "--sv-emb", str(tmp_path / "nonexistent.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--eval-protocol", str(data / "eval_protocol.tsv"),
            "--out", str(tmp_path / "x")]
    assert _run(args) == 2
    # malformed protocol line
    bad = tmp_path / "bad_protocol.tsv"
    bad.write_text("e1\tt1\tgenuine\n")
    args = ["eval", "--model", str(model),
            "--sv-emb", str(data / "sv_embeddings.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--eval-protocol", str(bad), "--out", str(tmp_path / "y")]
    assert _run(args) == 2


def test_normalization_contradiction_exits_2(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    args = ["eval", "--model", str(model),
            "--sv-emb", str(data / "sv_embeddings.tsv"),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--eval-protocol", str(data / "eval_protocol.tsv"),
            "--normalize-embeddings", "on",  # checkpoint was trained with off
            "--out", str(tmp_path / "x")]
    assert _run(args) == 2


def test_numeric_errors_exit_3(workspace, tmp_path):
    data, model = workspace["data"], workspace["model"]
    # a zero-norm enrollment embedding defeats the cosine
    first_eval = (data / "eval_protocol.tsv").read_text().splitlines()[0]
    victim = first_eval.split("\t")[0]
    rewritten = []
    for line in (data / "sv_embeddings.tsv").read_text().splitlines():
        utt_id, payload = line.split("\t")
        if utt_id == victim:
            payload = " ".join("0.0" for _ in payload.split())
        rewritten.append(f"{utt_id}\t{payload}")
    broken = tmp_path / "broken_sv.tsv"
    broken.write_text("\n".join(rewritten) + "\n")
    args = ["eval", "--model", str(model),
            "--sv-emb", str(broken),
            "--cm-emb", str(data / "cm_embeddings.tsv"),
            "--eval-protocol", str(data / "eval_protocol.tsv"),
            "--out", str(tmp_path / "x")]
    assert _run(args) == 3


def test_bad_log_level_exits_1(workspace, monkeypatch, tmp_path):
    monkeypatch.setenv("SASV_LOG", "chatty")
    assert _run(["synth", "--out", str(tmp_path / "x")]) == 1
    monkeypatch.delenv("SASV_LOG")


def test_run_config_written_for_every_command(workspace):
    for key in ("data", "run"):
        sidecar = workspace[key] / "run_config.json"
        payload = json.loads(sidecar.read_text())
        assert {"command", "config"} <= set(payload)
        assert payload["config"]["out"] == str(workspace[key])
