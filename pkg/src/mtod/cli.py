"""Command-line pipeline: synth -> preprocess -> train -> infer -> evaluate,
plus salience analysis and manifest-driven reruns.

Every subcommand writes its outputs under --out together with a
``manifest.json`` recording the resolved configuration, a config hash, the
seed, and library versions; ``mtod rerun --manifest <path>`` replays any run.
Exit codes: 0 success, 1 usage, 2 data problem, 3 runtime failure. Set
MTOD_LOG=info (or debug) for progress on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy
import torch

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import CorpusError, load_corpus, save_corpus
from .delocalize import DelocalizeError
from .metrics import MetricsError, report_to_dict, report_to_tsv
from .model import (ModelConfig, ModelError, OptimizerConfig, train)
from .salience import SalienceError, input_x_gradient, render_heatmap
from .serialize import ContextSpec, SerializeError, read_dataset, serialize_corpus, write_dataset
from .synth import SynthConfig, SynthError, generate_synthetic
from .tasks import (END_TO_END, TASK_SPECIFIC, TaskMode, TasksError, evaluate_predictions,
                    read_predictions, run_benchmark, write_predictions)
from .vocab import VocabError, build_vocab, decode, encode, load_vocab, save_vocab

log = logging.getLogger("mtod")

_DATA_ERRORS = (CorpusError, SynthError, VocabError, SerializeError, DelocalizeError,
                CheckpointError, TasksError, MetricsError, SalienceError,
                FileNotFoundError, NotADirectoryError, IsADirectoryError,
                PermissionError, json.JSONDecodeError)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_config(args) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    return {k: str(v) if isinstance(v, Path) else v for k, v in config.items()}


def _write_manifest(out: Path, command: str, args) -> None:
    config = _manifest_config(args)
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    manifest = {
        "subcommand": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": config.get("seed"),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "torch": torch.__version__,
            "numpy": numpy.__version__,
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_synth(args) -> None:
    config = SynthConfig(
        catalogue_size=args.catalogue_size,
        scenes_count=args.scenes,
        objects_per_scene=(args.min_objects, args.max_objects),
        dialogues_count=args.dialogues,
        turns_per_dialogue=(args.min_turns, args.max_turns),
        disambiguation_rate=args.disambiguation_rate,
    )
    corpus = generate_synthetic(config, args.seed)
    out = _out_dir(args)
    save_corpus(corpus, out)
    _write_manifest(out, "synth", args)
    log.info("synth: %d dialogues over %d scenes -> %s",
             len(corpus.dialogues), len(corpus.scenes), out)


def cmd_preprocess(args) -> None:
    corpus = load_corpus(args.corpus)
    vocab = build_vocab(corpus, args.merges)
    spec = ContextSpec(window_n=args.window_n, max_len=args.max_len)
    out = _out_dir(args)
    save_vocab(vocab, out / "vocab.json")
    write_dataset(serialize_corpus(corpus, spec, vocab, variant="full"),
                  out / "full.jsonl")
    write_dataset(serialize_corpus(corpus, spec, vocab, variant="disambiguation"),
                  out / "disambiguation.jsonl")
    _write_manifest(out, "preprocess", args)
    log.info("preprocess: vocab size %d -> %s", len(vocab), out)


def cmd_train(args) -> None:
    data = Path(args.data)
    vocab = load_vocab(data / "vocab.json")
    sequences = read_dataset(data / f"{args.variant}.jsonl")
    model_config = ModelConfig(
        vocab_size=len(vocab), n_layers=args.layers, n_heads=args.heads,
        d_model=args.d_model, d_ff=args.d_ff, max_positions=args.max_positions,
        dropout_rate=args.dropout, seed=args.seed)
    opt_config = OptimizerConfig(
        learning_rate=args.lr, epsilon=args.eps, weight_decay=args.weight_decay,
        beta1=args.beta1, beta2=args.beta2, batch_size=args.batch_size,
        epochs=args.epochs, grad_clip=args.grad_clip)
    out = _out_dir(args)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        def on_epoch(entry: dict) -> None:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            log.info("epoch %d: mean loss %.6f", entry["epoch"], entry["mean_loss"])
        model, _ = train(sequences, model_config, opt_config, vocab.pad_id,
                         progress=on_epoch)
    save_checkpoint(model, vocab, out / "model.ckpt")
    _write_manifest(out, "train", args)
    log.info("train: %d sequences, %d epochs -> %s", len(sequences), args.epochs, out)


def cmd_infer(args) -> None:
    model, vocab = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    spec = ContextSpec(window_n=args.window_n, max_len=args.max_len)
    mode = TaskMode(
        disambiguation=TASK_SPECIFIC if args.disambiguation == "task_specific" else END_TO_END,
        oracle_belief=args.oracle_belief, oracle_action=args.oracle_action,
        self_conditioned=args.self_conditioned, max_new=args.max_new)
    disambiguation_model = None
    if args.disambiguation_checkpoint:
        disambiguation_model, _ = load_checkpoint(args.disambiguation_checkpoint)
    records, _ = run_benchmark(model, corpus, spec, vocab, mode,
                               disambiguation_model=disambiguation_model)
    out = _out_dir(args)
    write_predictions(records, out / "predictions.jsonl")
    _write_manifest(out, "infer", args)
    log.info("infer: %d turns -> %s", len(records), out)


def cmd_evaluate(args) -> None:
    records = read_predictions(args.predictions)
    corpus = load_corpus(args.corpus)
    report = evaluate_predictions(records, corpus, pooled_bleu=args.pooled_bleu)
    out = _out_dir(args)
    payload = json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    (out / "report.json").write_text(payload, encoding="utf-8")
    (out / "report.tsv").write_text(report_to_tsv(report), encoding="utf-8")
    _write_manifest(out, "evaluate", args)
    sys.stdout.write(report_to_tsv(report) if args.format == "tsv" else payload)


def cmd_salience(args) -> None:
    model, vocab = load_checkpoint(args.checkpoint)
    text = Path(args.prompt_file).read_text(encoding="utf-8").rstrip("\n")
    ids = encode(text, vocab)
    if len(ids) < 2:
        raise SalienceError(f"prompt encodes to {len(ids)} ids; need at least 2")
    smap = input_x_gradient(model, ids, args.target_pos,
                            use_probability=args.probability_target)
    tokens = [vocab.surface(i) for i in ids[:args.target_pos]]
    out = _out_dir(args)
    (out / "salience.json").write_text(json.dumps({
        "prompt_ids": ids,
        "target_position": smap.target_position,
        "target_token_id": smap.target_token,
        "target_token": vocab.surface(smap.target_token),
        "scores": list(smap.scores),
        "degenerate": smap.degenerate,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    render_heatmap(smap, tokens, out / "salience.html", out / "salience.txt")
    _write_manifest(out, "salience", args)
    log.info("salience: target %d (%s) -> %s",
             smap.target_position, decode([smap.target_token], vocab), out)


def cmd_rerun(args) -> None:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    command = manifest["subcommand"]
    if command not in _HANDLERS or command == "rerun":
        raise TasksError(f"manifest names unknown subcommand {command!r}")
    replay = argparse.Namespace(**manifest["config"])
    if args.out is not None:
        replay.out = args.out
    _HANDLERS[command](replay)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtod",
        description="Multimodal task-oriented dialogue toolkit: synthetic corpora, "
                    "scene-token serialization, transformer training, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dialogues", type=int, default=200)
    p.add_argument("--scenes", type=int, default=40)
    p.add_argument("--catalogue-size", type=int, default=30)
    p.add_argument("--min-turns", type=int, default=2)
    p.add_argument("--max-turns", type=int, default=4)
    p.add_argument("--min-objects", type=int, default=4)
    p.add_argument("--max-objects", type=int, default=8)
    p.add_argument("--disambiguation-rate", type=float, default=0.25)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="build vocab and serialized datasets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merges", type=int, default=500)
    p.add_argument("--window-n", type=int, default=2)
    p.add_argument("--max-len", type=int, default=512)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a serialized dataset")
    p.add_argument("--data", required=True, help="preprocess output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--variant", choices=("full", "disambiguation"), default="full")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--d-ff", type=int, default=512)
    p.add_argument("--max-positions", type=int, default=512)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--grad-clip", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run the benchmark cascade over a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-n", type=int, default=2)
    p.add_argument("--max-len", type=int, default=512)
    p.add_argument("--max-new", type=int, default=128)
    p.add_argument("--oracle-belief", action="store_true")
    p.add_argument("--oracle-action", action="store_true")
    p.add_argument("--self-conditioned", action="store_true",
                   help="condition on the model's own past responses instead of gold history")
    p.add_argument("--disambiguation", choices=("end_to_end", "task_specific"),
                   default="end_to_end")
    p.add_argument("--disambiguation-checkpoint", default=None,
                   help="model trained with the <YES>/<NO> objective")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score a prediction table against gold")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.add_argument("--pooled-bleu", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("salience", help="input-x-gradient attribution for a prompt")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt-file", required=True)
    p.add_argument("--target-pos", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probability-target", action="store_true",
                   help="attribute the softmax probability instead of the logit")
    p.set_defaults(func=cmd_salience)

    p = sub.add_parser("rerun", help="replay a subcommand from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="override the recorded output directory")
    p.set_defaults(func=cmd_rerun)
    return parser


_HANDLERS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "salience": cmd_salience,
}


def main(argv=None) -> int:
    level = os.environ.get("MTOD_LOG", "warning").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage/help
        return 0 if exc.code in (0, None) else 1
    try:
        args.func(args)
        return 0
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything unplanned is a runtime failure
        log.exception("unhandled failure")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
