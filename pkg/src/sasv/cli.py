"""Command-line interface.

Subcommands: synth, train, eval, score, baseline, gradcheck. Exit codes:
0 success, 1 usage, 2 data validation, 3 numeric failure. Every run writes
its resolved configuration to <out>/run_config.json; outputs only ever land
under --out. The SASV_LOG env var (error|warn|info|debug) sets verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import baselines, gradcheck, metrics, synthgen, training
from .checkpoint import load_checkpoint, save_checkpoint
from .core import DataError, NumericError, load_embeddings, load_protocol
from .loss import OneClassSoftmaxConfig
from .model import InputMode, IntegrationModel, score_protocol
from .synthgen import SynthConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse defaults to exit code 2 on bad usage; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _write_sidecar(out_dir: str, command: str, args: argparse.Namespace) -> None:
    os.makedirs(out_dir, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    payload = {"command": command, "config": config}
    with open(os.path.join(out_dir, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_on_off(value: str | None) -> bool | None:
    if value is None:
        return None
    return value == "on"


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise UsageError(message)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_speakers=args.speakers,
        utts_per_speaker=args.utts,
        spoofs_per_speaker=args.spoofs,
        sv_dim=args.sv_dim,
        cm_dim=args.cm_dim,
        sv_noise=args.sv_noise,
        spoof_sv_offset=args.spoof_sv_offset,
        cm_separation=args.cm_separation,
        cm_noise=args.cm_noise,
        seed=args.seed,
    )
    ds = synthgen.generate(cfg)
    paths = synthgen.write_dataset(ds, args.out)
    _write_sidecar(args.out, "synth", args)
    info = synthgen.describe(ds)
    for split in synthgen.SPLIT_NAMES:
        stats = info["splits"][split]
        print(f"{split}: {stats['speakers']} speakers, "
              f"{stats['target']} target / {stats['nontarget']} nontarget / "
              f"{stats['spoof']} spoof trials")
    print(f"wrote {', '.join(sorted(paths.values()))}")
    return EXIT_OK


def _load_stores(sv_path: str, cm_path: str, normalize: bool):
    sv = load_embeddings(sv_path, "sv", normalize=normalize)
    cm = load_embeddings(cm_path, "cm", normalize=normalize)
    return sv, cm


def cmd_train(args) -> int:
    normalize = args.normalize_embeddings == "on"
    sv_store, cm_store = _load_stores(args.sv_emb, args.cm_emb, normalize)
    train_protocol = load_protocol(args.train_protocol, "train")
    dev_protocol = load_protocol(args.dev_protocol, "dev")
    cfg = training.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
        seed=args.seed,
    )
    loss_cfg = OneClassSoftmaxConfig(
        scale=args.loss_scale, margin_real=args.margin_real,
        margin_fake=args.margin_fake,
    )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    model = IntegrationModel(
        InputMode.parse(args.mode), sv_store.dimension, cm_store.dimension,
        rng, normalize_embeddings=normalize,
    )
    result = training.train(model, sv_store, cm_store, train_protocol,
                            dev_protocol, cfg, loss_cfg)
    os.makedirs(args.out, exist_ok=True)
    ckpt = training.model_to_checkpoint(result.model, cfg, loss_cfg,
                                        result.best_epoch, result.best_dev_sasv_eer)
    save_checkpoint(ckpt, os.path.join(args.out, "model.ckpt"))
    training.write_history(result.history, os.path.join(args.out, "history.csv"))
    _write_sidecar(args.out, "train", args)
    print(f"best epoch {result.best_epoch}, "
          f"dev SASV-EER {100.0 * result.best_dev_sasv_eer:.2f}%")
    return EXIT_OK


def _load_model_and_stores(args):
    ckpt = load_checkpoint(args.model)
    model = training.model_from_checkpoint(ckpt)
    requested = _parse_on_off(args.normalize_embeddings)
    if requested is not None and requested != model.normalize_embeddings:
        raise DataError(
            "--normalize-embeddings contradicts the checkpoint, which was trained "
            f"with normalization {'on' if model.normalize_embeddings else 'off'}"
        )
    sv_store, cm_store = _load_stores(args.sv_emb, args.cm_emb,
                                      model.normalize_embeddings)
    return model, sv_store, cm_store


def cmd_eval(args) -> int:
    if args.scores:
        records = metrics.load_scores(args.scores)
        os.makedirs(args.out, exist_ok=True)
    else:
        _require(args.model and args.sv_emb and args.cm_emb and args.eval_protocol,
                 "eval needs either --scores or all of --model, --sv-emb, "
                 "--cm-emb and --eval-protocol")
        model, sv_store, cm_store = _load_model_and_stores(args)
        protocol = load_protocol(args.eval_protocol, "eval")
        records = score_protocol(model, protocol, sv_store, cm_store,
                                 threads=args.threads)
        os.makedirs(args.out, exist_ok=True)
        metrics.export_scores(records, os.path.join(args.out, "scores.csv"))
    report = metrics.sasv_report(records, args.score_field)
    metrics.write_eer_report(report, os.path.join(args.out, "eer_report.csv"))
    _write_sidecar(args.out, "eval", args)
    print(metrics.format_eer_report(report))
    return EXIT_OK


def cmd_score(args) -> int:
    model, sv_store, cm_store = _load_model_and_stores(args)
    protocol = load_protocol(args.eval_protocol, "eval")
    records = score_protocol(model, protocol, sv_store, cm_store,
                             threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    metrics.export_scores(records, os.path.join(args.out, "scores.csv"))
    _write_sidecar(args.out, "score", args)
    print(f"scored {len(records)} trials")
    return EXIT_OK


def cmd_baseline(args) -> int:
    needs_dev = args.kind in ("cascade", "logreg")
    _require(not needs_dev or args.dev_protocol,
             f"baseline --kind {args.kind} needs --dev-protocol for fitting")
    if args.cm_model:
        ckpt = load_checkpoint(args.cm_model)
        cm_model = training.model_from_checkpoint(ckpt)
        sv_store, cm_store = _load_stores(args.sv_emb, args.cm_emb,
                                          cm_model.normalize_embeddings)
        source = baselines.CmScoreSource.from_model(cm_model, sv_store, cm_store)
    else:
        normalize = args.normalize_embeddings == "on"
        sv_store, _ = _load_stores(args.sv_emb, args.cm_emb, normalize)
        source = baselines.CmScoreSource.from_table(
            baselines.load_cm_scores(args.cm_scores))
    eval_protocol = load_protocol(args.eval_protocol, "eval")
    eval_sv = baselines.sv_scores_for(eval_protocol, sv_store)
    eval_cm = source.scores_for(eval_protocol)

    fitted = None
    os.makedirs(args.out, exist_ok=True)
    if needs_dev:
        dev_protocol = load_protocol(args.dev_protocol, "dev")
        dev_sv = baselines.sv_scores_for(dev_protocol, sv_store)
        dev_cm = source.scores_for(dev_protocol)
        dev_labels = [t.label for t in dev_protocol.trials]
        if args.kind == "cascade":
            fitted = baselines.fit_cascade(dev_sv, dev_cm, dev_labels)
            save_checkpoint(baselines.cascade_to_checkpoint(fitted),
                            os.path.join(args.out, "baseline.ckpt"))
            print(f"fitted cascade threshold {fitted:.6f}")
        else:
            fitted = baselines.fit_logreg(dev_sv, dev_cm, dev_labels)
            save_checkpoint(baselines.logreg_to_checkpoint(fitted),
                            os.path.join(args.out, "baseline.ckpt"))
            print(f"fitted logreg weights {fitted.weight[0]:.4f} "
                  f"{fitted.weight[1]:.4f} bias {fitted.bias:.4f}")
        dev_records = baselines.baseline_records(args.kind, dev_protocol,
                                                 dev_sv, dev_cm, fitted)
        print("dev:")
        print(metrics.format_eer_report(metrics.sasv_report(dev_records)))

    records = baselines.baseline_records(args.kind, eval_protocol,
                                         eval_sv, eval_cm, fitted)
    metrics.export_scores(records, os.path.join(args.out, "scores.csv"))
    report = metrics.sasv_report(records)
    metrics.write_eer_report(report, os.path.join(args.out, "eer_report.csv"))
    _write_sidecar(args.out, "baseline", args)
    print("eval:")
    print(metrics.format_eer_report(report))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    coords = None if args.exhaustive else args.coords
    results = gradcheck.run_gradient_checks(seeds=seeds, coords_per_param=coords)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "gradcheck_report.csv"), "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["component", "max_rel_err"])
        for name in gradcheck.COMPONENTS:
            writer.writerow([name, f"{results[name]:.17g}"])
    _write_sidecar(args.out, "gradcheck", args)
    for name in gradcheck.COMPONENTS:
        print(f"{name:<12} max rel err {results[name]:.3e}")
    worst = max(results.values())
    if not worst < gradcheck.REL_TOL:
        raise NumericError(
            f"gradient check failed: max relative error {worst:.3e} "
            f">= {gradcheck.REL_TOL:.0e}"
        )
    return EXIT_OK


def _add_store_flags(sub, required: bool = True) -> None:
    sub.add_argument("--sv-emb", required=required, help="SV embedding file")
    sub.add_argument("--cm-emb", required=required, help="CM embedding file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sasv",
                     description="spoofing-aware speaker verification toolkit")
    commands = parser.add_subparsers(dest="command", required=True,
                                     parser_class=_Parser)

    synth = commands.add_parser("synth", help="generate a synthetic benchmark")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.add_argument("--speakers", type=int, default=30)
    synth.add_argument("--utts", type=int, default=10)
    synth.add_argument("--spoofs", type=int, default=10)
    synth.add_argument("--sv-dim", type=int, default=16)
    synth.add_argument("--cm-dim", type=int, default=16)
    synth.add_argument("--sv-noise", type=float, default=0.1)
    synth.add_argument("--spoof-sv-offset", type=float, default=0.0)
    synth.add_argument("--cm-separation", type=float, default=4.0)
    synth.add_argument("--cm-noise", type=float, default=0.5)
    synth.set_defaults(func=cmd_synth)

    tr = commands.add_parser("train", help="train the score-integration model")
    _add_store_flags(tr)
    tr.add_argument("--train-protocol", required=True)
    tr.add_argument("--dev-protocol", required=True)
    tr.add_argument("--mode", default="concat",
                    choices=[m.value for m in InputMode])
    tr.add_argument("--normalize-embeddings", choices=["on", "off"], default="off")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--lr", type=float, default=1e-4)
    tr.add_argument("--batch", type=int, default=24)
    tr.add_argument("--epochs", type=int, default=40)
    tr.add_argument("--loss-scale", type=float, default=20.0)
    tr.add_argument("--margin-real", type=float, default=0.9)
    tr.add_argument("--margin-fake", type=float, default=0.2)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)

    ev = commands.add_parser("eval", help="score a protocol and report EERs")
    ev.add_argument("--model")
    _add_store_flags(ev, required=False)
    ev.add_argument("--eval-protocol", "--protocol", dest="eval_protocol")
    ev.add_argument("--scores", help="re-report from a previously exported score CSV")
    ev.add_argument("--score-field", default="s_sasv",
                    choices=list(metrics.SCORE_FIELDS))
    ev.add_argument("--normalize-embeddings", choices=["on", "off"])
    ev.add_argument("--threads", type=int, default=1)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    sc = commands.add_parser("score", help="score a protocol to CSV")
    sc.add_argument("--model", required=True)
    _add_store_flags(sc)
    sc.add_argument("--eval-protocol", "--protocol", dest="eval_protocol",
                    required=True)
    sc.add_argument("--normalize-embeddings", choices=["on", "off"])
    sc.add_argument("--threads", type=int, default=1)
    sc.add_argument("--out", required=True)
    sc.set_defaults(func=cmd_score)

    bl = commands.add_parser("baseline", help="run a score-fusion baseline")
    bl.add_argument("--kind", required=True, choices=list(baselines.BASELINE_KINDS))
    _add_store_flags(bl)
    cm_src = bl.add_mutually_exclusive_group(required=True)
    cm_src.add_argument("--cm-scores", help="per-utterance ID<TAB>score file")
    cm_src.add_argument("--cm-model",
                        help="trained checkpoint used as the CM scorer")
    bl.add_argument("--dev-protocol")
    bl.add_argument("--eval-protocol", "--protocol", dest="eval_protocol",
                    required=True)
    bl.add_argument("--normalize-embeddings", choices=["on", "off"], default="off")
    bl.add_argument("--out", required=True)
    bl.set_defaults(func=cmd_baseline)

    gc = commands.add_parser("gradcheck", help="finite-difference gradient audit")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--seeds", type=int, default=10,
                    help="number of consecutive seeds to sweep")
    gc.add_argument("--coords", type=int, default=48,
                    help="sampled coordinates per parameter in the composite check")
    gc.add_argument("--exhaustive", action="store_true",
                    help="check every coordinate of the composite (slow)")
    gc.add_argument("--out", required=True)
    gc.set_defaults(func=cmd_gradcheck)

    return parser


def _setup_logging() -> None:
    name = os.environ.get("SASV_LOG", "info").lower()
    if name not in _LOG_LEVELS:
        raise UsageError(
            f"SASV_LOG must be one of {sorted(_LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=_LOG_LEVELS[name], format="%(message)s")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging()
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"sasv: error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"sasv: data error: {exc}\n")
        return EXIT_DATA
    except NumericError as exc:
        sys.stderr.write(f"sasv: numeric error: {exc}\n")
        return EXIT_NUMERIC
    except OSError as exc:
        sys.stderr.write(f"sasv: data error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
