import io
import json

import pandas as pd
import pytest
from rich.console import Console

from conftest import write_lines
from config import FILE_PATHS, STATS_SETTINGS, validate_config
from corpus import write_pairs
from control import UptakeController, UsageError, dispatch


def run(*argv):
    """Run a command line quietly; return (exit code, rendered console text)."""
    buffer = io.StringIO()
    code = dispatch(["--quiet", *argv], console=Console(file=buffer, width=120))
    return code, buffer.getvalue()


def read_manifest(path):
    with open(f"{path}.manifest.json", encoding="utf-8") as f:
        return json.load(f)


# --- Exit codes ---

def test_usage_errors_exit_1(tmp_path):
    assert run("extract", "--bogus")[0] == 1
    assert run()[0] == 1
    assert run("extract", "--out", str(tmp_path / "p.jsonl"))[0] == 1
    assert run("--preset", "nope", "selftest")[0] == 1
    assert run("--seed", "-1", "selftest")[0] == 1


def test_help_exits_0():
    assert dispatch(["--help"]) == 0


def test_missing_and_malformed_inputs_exit_2(tmp_path):
    out = str(tmp_path / "pairs.jsonl")
    assert run("extract", "--in", str(tmp_path / "absent.jsonl"), "--out", out)[0] == 2
    bad = write_lines(tmp_path / "t.jsonl", ['{"transcript_id": "a", "turn": 0, "role": "parent", "text": "hi"}'])
    assert run("extract", "--in", bad, "--out", out)[0] == 2


def test_os_errors_exit_2(tmp_path, transcript_file):
    assert run("extract", "--in", str(tmp_path), "--out", str(tmp_path / "pairs.jsonl"))[0] == 2
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory", encoding="utf-8")
    assert run("extract", "--in", transcript_file, "--out", str(blocker / "pairs.jsonl"))[0] == 2


def test_invalid_configuration_exits_1(monkeypatch):
    monkeypatch.setitem(STATS_SETTINGS, "confidence_level", 1.5)
    assert validate_config() == (False, ["STATS_SETTINGS['confidence_level'] must lie in (0, 1)"])
    assert run("selftest")[0] == 1


def test_unknown_metric_exits_2(tmp_path, small_pairs):
    pairs_path = str(tmp_path / "pairs.jsonl")
    write_pairs(pairs_path, small_pairs)
    assert run("score", "--pairs", pairs_path, "--metrics", "rouge", "--out", str(tmp_path / "s.csv"))[0] == 2
    assert run("score", "--pairs", pairs_path, "--metrics", "glove_align", "--out", str(tmp_path / "s.csv"))[0] == 2


def test_selftest_passes(tmp_path):
    report = tmp_path / "selftest.json"
    code, output = run("selftest", "--out", str(report))
    assert code == 0
    assert json.loads(report.read_text(encoding="utf-8"))["passed"] is True
    assert "metric oracles" in output


# --- Corpus commands ---

def test_extract_writes_pairs_and_manifest(tmp_path, transcript_file):
    out = str(tmp_path / "pairs.jsonl")
    assert run("--seed", "3", "extract", "--in", transcript_file, "--out", out, "--min-pairs", "1")[0] == 0
    with open(out, encoding="utf-8") as f:
        assert [json.loads(line)["id"] for line in f] == ["t1_1", "t2_0"]
    manifest = read_manifest(out)
    assert manifest["command"] == "extract"
    assert manifest["seed"] == 3
    assert manifest["input_paths"] == [transcript_file]
    assert manifest["output_paths"] == [out]
    assert len(manifest["config_hash"]) == 64


def test_config_hash_ignores_outputs_but_not_settings(tmp_path, transcript_file):
    outs = [str(tmp_path / name) for name in ("a.jsonl", "b.jsonl", "c.jsonl")]
    run("extract", "--in", transcript_file, "--out", outs[0], "--min-pairs", "1")
    run("--jobs", "2", "extract", "--in", transcript_file, "--out", outs[1], "--min-pairs", "1")
    run("extract", "--in", transcript_file, "--out", outs[2], "--min-pairs", "1", "--min-s-tokens", "1")
    hashes = [read_manifest(out)["config_hash"] for out in outs]
    assert hashes[0] == hashes[1]
    assert hashes[0] != hashes[2]


def test_annotations_and_agreement(tmp_path, annotation_file):
    gold, z, summary = (str(tmp_path / name) for name in ("gold.csv", "z.csv", "agreement.json"))
    assert run("annotate-agg", "--in", annotation_file, "--out", gold, "--z-out", z)[0] == 0
    assert pd.read_csv(gold)["pair_id"].tolist() == ["p1", "p2", "p3"]

    code, output = run("eval-agreement", "--z", z, "--annotations", annotation_file, "--out", summary)
    assert code == 0
    with open(summary, encoding="utf-8") as f:
        result = json.load(f)
    assert result["n_raters"] == 3
    assert result["fleiss_items"] == 3
    assert -1.0 <= result["leave_out_agreement"] <= 1.0
    assert "Fleiss" in output


# --- Settings resolution ---

def test_preset_and_config_file_defaults_lose_to_flags(tmp_path):
    controller = UptakeController(Console(file=io.StringIO()))
    assert controller.parse(["eval-corr"]).iterations == 1000
    assert controller.parse(["--preset", "test_mode", "eval-corr"]).iterations == 50
    assert controller.parse(["--preset", "test_mode", "eval-corr", "--iterations", "7"]).iterations == 7

    config = tmp_path / "run.json"
    config.write_text(json.dumps({"seed": 11, "iterations": 20, "in": "ignored.jsonl",
                                  "eval-corr": {"level": 0.9}}), encoding="utf-8")
    args = controller.parse(["--preset", "test_mode", "--config", str(config), "eval-corr"])
    assert (args.seed, args.iterations, args.level) == (11, 20, 0.9)
    args = controller.parse(["--config", str(config), "--seed", "4", "eval-corr", "--level", "0.8"])
    assert (args.seed, args.level) == (4, 0.8)
    assert controller.parse(["--config", str(config), "nuc-train"]).input == "ignored.jsonl"


def test_require_names_the_flag():
    controller = UptakeController(Console(file=io.StringIO()))
    args = controller.parse(["nuc-train"])
    with pytest.raises(UsageError, match="--in, --out"):
        controller.require(args, "input", "out")


def test_user_presets_save_list_delete(tmp_path, monkeypatch):
    monkeypatch.setitem(FILE_PATHS, "presets", str(tmp_path / "presets.json"))
    settings = tmp_path / "nightly.json"
    settings.write_text(json.dumps({"iterations": 9, "level": 0.8}), encoding="utf-8")

    assert run("presets", "save", "nightly", "--settings", str(settings))[0] == 0
    args = UptakeController(Console(file=io.StringIO())).parse(["--preset", "nightly", "eval-corr"])
    assert (args.iterations, args.level) == (9, 0.8)
    code, output = run("presets", "list")
    assert code == 0
    assert "nightly" in output and "standard" in output

    assert run("presets", "save", "standard", "--settings", str(settings))[0] == 2
    assert run("presets", "save")[0] == 1
    assert run("presets", "save", "other")[0] == 1

    assert run("presets", "delete", "nightly")[0] == 0
    assert run("--preset", "nightly", "eval-corr")[0] == 1
    assert run("presets", "delete", "nightly")[0] == 2


def test_preset_settings_must_be_scalars(tmp_path, monkeypatch):
    monkeypatch.setitem(FILE_PATHS, "presets", str(tmp_path / "presets.json"))
    settings = tmp_path / "nested.json"
    settings.write_text(json.dumps({"eval-corr": {"level": 0.8}}), encoding="utf-8")
    assert run("presets", "save", "nested", "--settings", str(settings))[0] == 2
    assert not (tmp_path / "presets.json").exists()


# --- Scoring and the NUC pipeline ---

def test_scores_identical_across_job_counts(tmp_path, small_pairs):
    pairs_path = str(tmp_path / "pairs.jsonl")
    write_pairs(pairs_path, small_pairs)
    one, four = str(tmp_path / "one.csv"), str(tmp_path / "four.csv")
    assert run("--jobs", "1", "score", "--pairs", pairs_path, "--out", one)[0] == 0
    assert run("--jobs", "4", "score", "--pairs", pairs_path, "--out", four)[0] == 0
    with open(one, "rb") as a, open(four, "rb") as b:
        assert a.read() == b.read()
    assert pd.read_csv(one).columns.tolist() == ["pair_id", "lcs", "pct_s_in_t", "pct_t_in_s", "jaccard", "bleu"]
    assert read_manifest(one)["config_hash"] == read_manifest(four)["config_hash"]


def test_synthetic_pipeline(tmp_path):
    path = {name: str(tmp_path / name) for name in
            ("pairs.jsonl", "alpha.csv", "nuc.jsonl", "params.json", "nuc.csv", "scores.csv", "corr.csv")}
    preset = ("--preset", "test_mode")

    assert run(*preset, "synth", "--out", path["pairs.jsonl"], "--alpha-out", path["alpha.csv"])[0] == 0
    assert len(pd.read_csv(path["alpha.csv"])) == 200

    assert run(*preset, "nuc-build", "--pairs", path["pairs.jsonl"], "--out", path["nuc.jsonl"])[0] == 0
    with open(path["nuc.jsonl"], encoding="utf-8") as f:
        assert sum(1 for _ in f) == 800

    assert run(*preset, "nuc-train", "--in", path["nuc.jsonl"], "--out", path["params.json"],
               "--holdout", "0.2")[0] == 0
    with open(path["params.json"], encoding="utf-8") as f:
        metadata = json.load(f)["metadata"]
    assert metadata["hyperparameters"]["epochs"] == 3
    assert metadata["holdout"]["n_examples"] == 160

    assert run(*preset, "nuc-score", "--pairs", path["pairs.jsonl"], "--params", path["params.json"],
               "--out", path["nuc.csv"])[0] == 0
    assert pd.read_csv(path["nuc.csv"]).columns.tolist() == ["pair_id", "nuc_prob", "pjsd"]

    assert run(*preset, "score", "--pairs", path["pairs.jsonl"], "--metrics", "pct_s_in_t,nuc_prob,pjsd",
               "--params", path["params.json"], "--external", path["nuc.csv"], "--out", path["scores.csv"])[0] == 0

    code, output = run(*preset, "eval-corr", "--scores", path["scores.csv"], "--labels", path["alpha.csv"],
                       "--out", path["corr.csv"])
    assert code == 0
    corr = pd.read_csv(path["corr.csv"]).set_index("metric")
    assert corr.index.tolist() == ["pct_s_in_t", "nuc_prob", "pjsd"]
    assert corr.loc["pct_s_in_t", "rho"] > 0.8
    with open(f"{path['corr.csv']}.summary.json", encoding="utf-8") as f:
        assert json.load(f)["iterations"] == 50
    assert "Spearman" in output
