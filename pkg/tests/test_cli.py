"""End-to-end tests for the command-line pipeline.

Runs every subcommand in-process through ``main(argv)`` on a deliberately tiny
corpus/model so the whole module stays fast, then checks exit codes, artifact
layout, byte-level determinism, and manifest-driven reruns. One subprocess
test exercises the installed ``mtod`` console script.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from mtod.cli import main

# Small enough to train in seconds, big enough to exercise every code path
# (multi-turn dialogues, ambiguous turns, subword merges).
SYNTH_ARGS = ["--seed", "5", "--dialogues", "6", "--scenes", "3",
              "--min-turns", "1", "--max-turns", "2",
              "--min-objects", "4", "--max-objects", "5"]
PREPROCESS_ARGS = ["--merges", "40"]
TRAIN_ARGS = ["--seed", "0", "--layers", "1", "--heads", "2", "--d-model", "16",
              "--d-ff", "32", "--max-positions", "256", "--dropout", "0.0",
              "--batch-size", "8", "--epochs", "2"]
INFER_ARGS = ["--max-new", "24"]


def run(argv: list[str]) -> int:
    return main(argv)


def tree(root: Path, exclude: frozenset[str] = frozenset({"manifest.json"})) -> dict[str, str]:
    """Relative path -> sha256 of contents, for whole-directory comparisons.

    manifest.json is excluded by default because it embeds the --out path,
    which legitimately differs between two otherwise identical runs.
    """
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name not in exclude:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            out[str(path.relative_to(root))] = digest
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth -> preprocess -> train -> infer -> evaluate -> salience once."""
    base = tmp_path_factory.mktemp("pipeline")
    corpus = base / "corpus"
    data = base / "data"
    run_dir = base / "run"
    infer_dir = base / "infer"
    eval_dir = base / "eval"
    sal_dir = base / "salience"

    assert run(["synth", "--out", str(corpus)] + SYNTH_ARGS) == 0
    assert run(["preprocess", "--corpus", str(corpus), "--out", str(data)]
               + PREPROCESS_ARGS) == 0
    assert run(["train", "--data", str(data), "--out", str(run_dir)] + TRAIN_ARGS) == 0
    assert run(["infer", "--checkpoint", str(run_dir / "model.ckpt"),
                "--corpus", str(corpus), "--out", str(infer_dir)] + INFER_ARGS) == 0
    assert run(["evaluate", "--predictions", str(infer_dir / "predictions.jsonl"),
                "--corpus", str(corpus), "--out", str(eval_dir)]) == 0

    prompt = base / "prompt.txt"
    prompt.write_text("<SCENE> INV_0@TOP:LEFT INV_1@MIDDLE:CENTER </SCENE>\n",
                      encoding="utf-8")
    assert run(["salience", "--checkpoint", str(run_dir / "model.ckpt"),
                "--prompt-file", str(prompt), "--target-pos", "2",
                "--out", str(sal_dir)]) == 0

    return {"base": base, "corpus": corpus, "data": data, "run": run_dir,
            "infer": infer_dir, "eval": eval_dir, "salience": sal_dir,
            "prompt": prompt}


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert run(["--help"]) == 0
        assert "synth" in capsys.readouterr().out

    def test_no_subcommand_is_usage_error(self):
        assert run([]) == 1

    def test_unknown_flag_is_usage_error(self):
        assert run(["synth", "--seed", "1", "--out", "x", "--bogus"]) == 1

    def test_missing_corpus_is_data_error(self, tmp_path, capsys):
        code = run(["preprocess", "--corpus", str(tmp_path / "nope"),
                    "--out", str(tmp_path / "out")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_corrupt_checkpoint_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        code = run(["infer", "--checkpoint", str(bad),
                    "--corpus", str(tmp_path), "--out", str(tmp_path / "out")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_oversized_sequences_are_runtime_error(self, pipeline, tmp_path):
        # max-positions far below the dataset's sequence lengths -> ModelError -> 3
        code = run(["train", "--data", str(pipeline["data"]),
                    "--out", str(tmp_path / "out"),
                    "--seed", "0", "--max-positions", "8", "--epochs", "1"])
        assert code == 3

    def test_invalid_synth_config_is_data_error(self, tmp_path):
        code = run(["synth", "--seed", "1", "--out", str(tmp_path / "out"),
                    "--disambiguation-rate", "2.0"])
        assert code == 2


class TestArtifacts:
    def test_corpus_layout(self, pipeline):
        corpus = pipeline["corpus"]
        assert (corpus / "catalogue.json").is_file()
        assert (corpus / "dialogues.json").is_file()
        assert sorted(p.name for p in (corpus / "scenes").glob("*.json"))
        assert json.loads((corpus / "manifest.json").read_text())["subcommand"] == "synth"

    def test_manifest_fields(self, pipeline):
        manifest = json.loads((pipeline["corpus"] / "manifest.json").read_text())
        assert set(manifest) == {"subcommand", "config", "config_hash", "seed", "versions"}
        assert manifest["seed"] == 5
        assert set(manifest["versions"]) == {"package", "python", "torch", "numpy"}
        assert len(manifest["config_hash"]) == 64

    def test_preprocess_layout(self, pipeline):
        data = pipeline["data"]
        assert (data / "vocab.json").is_file()
        full = (data / "full.jsonl").read_text(encoding="utf-8").splitlines()
        disamb = (data / "disambiguation.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(full) > len(disamb) > 0
        record = json.loads(full[0])
        assert {"ids", "scene_prefix_len", "dialogue_id", "turn"} == set(record)

    def test_train_layout(self, pipeline):
        run_dir = pipeline["run"]
        assert (run_dir / "model.ckpt").is_file()
        log_lines = (run_dir / "train_log.jsonl").read_text().splitlines()
        assert len(log_lines) == 2  # one entry per epoch
        entry = json.loads(log_lines[0])
        assert entry["epoch"] == 1 and entry["mean_loss"] > 0

    def test_infer_layout(self, pipeline):
        lines = (pipeline["infer"] / "predictions.jsonl").read_text().splitlines()
        corpus_turns = sum(
            len(d["turns"])
            for d in json.loads((pipeline["corpus"] / "dialogues.json").read_text()))
        assert len(lines) == corpus_turns

    def test_evaluate_layout(self, pipeline, capsys):
        report = json.loads((pipeline["eval"] / "report.json").read_text())
        expected = {"disambiguation_accuracy", "intent_f1", "slot_f1",
                    "request_slot_f1", "object_f1", "joint_accuracy",
                    "bleu4", "bleu_mode", "bleu_ngram_counts"}
        assert set(report) == expected
        tsv = (pipeline["eval"] / "report.tsv").read_text().splitlines()
        assert tsv[0] == "metric\tvalue\tnumerator\tdenominator"

    def test_salience_layout(self, pipeline):
        sal = pipeline["salience"]
        payload = json.loads((sal / "salience.json").read_text())
        assert payload["target_position"] == 2
        assert len(payload["scores"]) == 2
        assert abs(sum(payload["scores"]) - 1.0) < 1e-6
        assert "<html" in (sal / "salience.html").read_text().lower()
        assert (sal / "salience.txt").read_text().strip()


class TestDeterminism:
    def test_synth_reproduces_bytes(self, pipeline, tmp_path):
        again = tmp_path / "corpus2"
        assert run(["synth", "--out", str(again)] + SYNTH_ARGS) == 0
        assert tree(pipeline["corpus"]) == tree(again)

    def test_preprocess_reproduces_bytes(self, pipeline, tmp_path):
        again = tmp_path / "data2"
        assert run(["preprocess", "--corpus", str(pipeline["corpus"]),
                    "--out", str(again)] + PREPROCESS_ARGS) == 0
        assert tree(pipeline["data"]) == tree(again)

    def test_train_reproduces_bytes(self, pipeline, tmp_path):
        again = tmp_path / "run2"
        assert run(["train", "--data", str(pipeline["data"]),
                    "--out", str(again)] + TRAIN_ARGS) == 0
        assert ((again / "model.ckpt").read_bytes()
                == (pipeline["run"] / "model.ckpt").read_bytes())
        assert ((again / "train_log.jsonl").read_bytes()
                == (pipeline["run"] / "train_log.jsonl").read_bytes())

    def test_infer_reproduces_bytes(self, pipeline, tmp_path):
        again = tmp_path / "infer2"
        assert run(["infer", "--checkpoint", str(pipeline["run"] / "model.ckpt"),
                    "--corpus", str(pipeline["corpus"]),
                    "--out", str(again)] + INFER_ARGS) == 0
        assert ((again / "predictions.jsonl").read_bytes()
                == (pipeline["infer"] / "predictions.jsonl").read_bytes())

    def test_evaluate_reproduces_bytes(self, pipeline, tmp_path, capsys):
        again = tmp_path / "eval2"
        assert run(["evaluate",
                    "--predictions", str(pipeline["infer"] / "predictions.jsonl"),
                    "--corpus", str(pipeline["corpus"]), "--out", str(again)]) == 0
        assert tree(pipeline["eval"]) == tree(again)

    def test_salience_reproduces_bytes(self, pipeline, tmp_path):
        again = tmp_path / "salience2"
        assert run(["salience", "--checkpoint", str(pipeline["run"] / "model.ckpt"),
                    "--prompt-file", str(pipeline["prompt"]), "--target-pos", "2",
                    "--out", str(again)]) == 0
        assert tree(pipeline["salience"]) == tree(again)


class TestRerun:
    def test_rerun_synth_from_manifest(self, pipeline, tmp_path):
        again = tmp_path / "replay"
        assert run(["rerun", "--manifest", str(pipeline["corpus"] / "manifest.json"),
                    "--out", str(again)]) == 0
        assert tree(pipeline["corpus"]) == tree(again)

    def test_rerun_infer_from_manifest(self, pipeline, tmp_path):
        again = tmp_path / "replay"
        assert run(["rerun", "--manifest", str(pipeline["infer"] / "manifest.json"),
                    "--out", str(again)]) == 0
        assert ((again / "predictions.jsonl").read_bytes()
                == (pipeline["infer"] / "predictions.jsonl").read_bytes())

    def test_rerun_rejects_bad_manifest(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"subcommand": "rerun", "config": {}}))
        assert run(["rerun", "--manifest", str(manifest)]) == 2

    def test_rerun_missing_manifest(self, tmp_path):
        assert run(["rerun", "--manifest", str(tmp_path / "absent.json")]) == 2


class TestOracleEvaluate:
    def test_oracle_belief_scores_joint_one(self, pipeline, tmp_path, capsys):
        infer_dir = tmp_path / "oracle"
        assert run(["infer", "--checkpoint", str(pipeline["run"] / "model.ckpt"),
                    "--corpus", str(pipeline["corpus"]), "--out", str(infer_dir),
                    "--oracle-belief", "--oracle-action"] + INFER_ARGS) == 0
        eval_dir = tmp_path / "oracle_eval"
        assert run(["evaluate", "--predictions", str(infer_dir / "predictions.jsonl"),
                    "--corpus", str(pipeline["corpus"]), "--out", str(eval_dir)]) == 0
        report = json.loads((eval_dir / "report.json").read_text())
        assert report["joint_accuracy"]["value"] == 1.0
        assert report["intent_f1"]["f1"] == 1.0
        assert report["object_f1"]["f1"] == 1.0


def test_console_script_help():
    result = subprocess.run([sys.executable, "-m", "mtod", "--help"],
                            capture_output=True, text=True, timeout=120)
    assert result.returncode == 0
    assert "synth" in result.stdout
