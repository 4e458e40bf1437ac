"""Command-line entry point: synth, validate, split, train, evaluate, predict.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ensemble as en
from . import evalreport as ev
from .config import ConfigError, RunConfig
from .dataset import (MODALITIES, DataError, SynthConfig, atomic_write, dump_manifest, filter_playable,
                      generate_synthetic, load_manifest, split)
from .numerics import UsageError

logger = logging.getLogger("mvpp")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageExit(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mvpp", description="Retrieval-augmented multi-modal popularity prediction.")
    ap.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic manifest (and its config)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--videos", type=int, default=1500)
    s.add_argument("--authors", type=int, default=15)
    s.add_argument("--noise", type=float)
    s.add_argument("--unplayable", type=int, default=0, help="number of damaged (unplayable) videos")
    s.add_argument("--test-videos", type=int, default=0, help="extra unlabeled videos from the same world")
    s.add_argument("--test-out", help="manifest path for the unlabeled videos")
    s.add_argument("--config-out", help="write the full default config here (default: <out>.config.json)")
    s.add_argument("--config")

    v = sub.add_parser("validate", help="check a manifest and print its report")
    v.add_argument("--manifest", required=True)

    p = sub.add_parser("split", help="author-stratified train/val split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--val-out", required=True)
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")

    t = sub.add_parser("train", help="train the C/R/E ensemble and write a bundle")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out-bundle", required=True)
    t.add_argument("--config")
    t.add_argument("--unlabeled", help="manifest of unlabeled videos for semi-supervision")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--workers", type=int)

    e = sub.add_parser("evaluate", help="MSE/PLCC of a bundle on held-out labeled videos")
    e.add_argument("--bundle", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report", required=True, help="structured (JSON) report path")
    e.add_argument("--hide", choices=MODALITIES, help="hide one modality at prediction time")

    r = sub.add_parser("predict", help="write predictions for every playable video in a manifest")
    r.add_argument("--bundle", required=True)
    r.add_argument("--manifest", required=True)
    r.add_argument("--out", required=True)
    return ap


def _config(path, **overrides) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    return cfg.override(**overrides)


def cmd_synth(a) -> int:
    cfg = _config(a.config, seed=a.seed, noise=a.noise)
    if a.test_videos and not a.test_out:
        raise UsageError("--test-videos needs --test-out")
    n_unplayable = a.unplayable
    if not 0 <= n_unplayable <= a.videos:
        raise UsageError("--unplayable must lie in [0, --videos]")
    sc = SynthConfig(n_videos=a.videos, n_authors=a.authors, dims=cfg.dims, noise=cfg.noise, seed=cfg.seed,
                     missing_frac=cfg.missing_frac,
                     unplayable_frac=n_unplayable / a.videos if a.videos else 0.0,
                     n_unlabeled=a.test_videos)
    try:
        data = generate_synthetic(sc)
    except ValueError as e:
        raise UsageError(str(e)) from None
    outputs = {a.out: dump_manifest(data.records, data.dims),
               a.config_out or f"{a.out}.config.json": cfg.dumps()}
    if a.test_videos:
        outputs[a.test_out] = dump_manifest(data.unlabeled, data.dims)
    for path, text in outputs.items():
        atomic_write(path, text)
    logger.info("wrote %d videos to %s", len(data.records), a.out)
    return EXIT_OK


def cmd_validate(a) -> int:
    _, report = load_manifest(a.manifest)
    print("\n".join(report.lines()))
    return EXIT_OK


def cmd_split(a) -> int:
    cfg = _config(a.config, ratio=a.ratio, seed=a.seed)
    records, report = load_manifest(a.manifest)
    labeled = [r for r in filter_playable(records) if r.labeled]
    sp = split(labeled, cfg.ratio, cfg.seed)
    texts = {a.train_out: dump_manifest(sp.train, report.dims), a.val_out: dump_manifest(sp.val, report.dims)}
    for path, text in texts.items():
        atomic_write(path, text)
    logger.info("split %d records: %d train / %d val", len(labeled), len(sp.train), len(sp.val))
    return EXIT_OK


def cmd_train(a) -> int:
    cfg = _config(a.config, seed=a.seed, epochs=a.epochs, workers=a.workers)
    records, report = load_manifest(a.manifest)
    playable = filter_playable(records)
    labeled = [r for r in playable if r.labeled]
    unlabeled = [r for r in playable if not r.labeled]
    if a.unlabeled:
        extra, extra_report = load_manifest(a.unlabeled)
        if extra_report.dims != report.dims:
            raise DataError(f"unlabeled manifest dims {extra_report.dims} differ from {report.dims}")
        unlabeled += [r for r in filter_playable(extra) if not r.labeled]
    if not labeled:
        raise DataError("manifest has no playable labeled videos")
    logger.info("%d records, %d playable, %d labeled, %d unlabeled", len(records), len(playable),
                len(labeled), len(unlabeled))
    sp = split(labeled, cfg.ratio, cfg.seed)
    ens = en.train_variants(sp.train, sp.val, cfg.ensemble(), unlabeled, report.dims)
    ens.run_config = cfg.to_dict()
    history_path = Path(f"{a.out_bundle}.history.json")
    atomic_write(history_path, json.dumps(ens.histories, indent=1, sort_keys=True) + "\n")
    en.save_bundle(ens, a.out_bundle)
    for m in ens.selection:
        n_r = sum(v == "R" for v in ens.selection[m].values())
        logger.info("%s: E uses R for %d of %d authors", m, n_r, len(ens.selection[m]))
    return EXIT_OK


def _heldout(records, ens):
    train_ids = set(ens.train_ids)
    return [r for r in filter_playable(records) if r.labeled and r.video_id not in train_ids]


def cmd_evaluate(a) -> int:
    ens = en.load_bundle(a.bundle)
    records, _ = load_manifest(a.manifest)
    held = _heldout(records, ens)
    if not held:
        raise DataError("no held-out labeled videos to evaluate (all are in the bundle's training set)")
    if a.hide:
        held = [r.without(a.hide) for r in held if set(r.available()) - {a.hide}]
    table = ev.evaluate(ens, held)
    atomic_write(a.report, ev.emit_report(table, "structured"))
    print(f"evaluated {len(held)} held-out videos")
    print(ev.emit_report(table, "text"), end="")
    return EXIT_OK


def cmd_predict(a) -> int:
    ens = en.load_bundle(a.bundle)
    records, _ = load_manifest(a.manifest)
    usable = filter_playable(records)
    if len(usable) < len(records):
        logger.warning("skipping %d unplayable videos", len(records) - len(usable))
    rows = en.predict_rows(usable, ens)
    atomic_write(a.out, en.render_predictions(rows))
    logger.info("wrote %d predictions to %s", len(rows), a.out)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "validate": cmd_validate, "split": cmd_split, "train": cmd_train,
            "evaluate": cmd_evaluate, "predict": cmd_predict}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"mvpp {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, en.BundleError, FileNotFoundError, IsADirectoryError) as e:
        print(f"mvpp {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
