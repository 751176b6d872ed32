"""Command-line entry point.

    tdsal train    --manifest train.csv --out run/ [--config cfg.txt] [--seed N]
    tdsal infer    --model run/model.tdsm --manifest test.csv --out maps/ [--category NAME]
    tdsal classify --model run/model.tdsm --manifest test.csv [--out DIR]
    tdsal segment  --model run/model.tdsm --manifest test.csv --out seg/
    tdsal eval     --model run/model.tdsm --manifest test.csv [--out DIR]
    tdsal bench    [--seed N] [--out DIR]

Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric failure.
"""

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import pipeline as pl
from .config import load_config
from .errors import (CapacityError, ConfigError, DegenerateDataError, DimensionError,
                     ManifestError, ModelFormatError, UndefinedRecallError)
from .imgfeat import load_image, load_mask
from .manifest import load_manifest
from .modelfile import load_model, save_model
from .pnm import write_pgm

log = logging.getLogger("tdsaliency")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
MODEL_NAME = "model.tdsm"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def parse_args(argv):
    p = _Parser(prog="tdsal", description="top-down saliency and image classification")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, manifest=True, model=True, out_required=False):
        sp = sub.add_parser(name)
        if manifest:
            sp.add_argument("--manifest", type=Path, required=True)
        if model:
            sp.add_argument("--model", type=Path, required=True)
        sp.add_argument("--out", type=Path, required=out_required)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--category")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
        return sp

    add("train", model=False, out_required=True)
    add("infer", out_required=True)
    add("classify")
    add("segment", out_required=True)
    add("eval")
    add("bench", manifest=False, model=False)
    args = p.parse_args(argv)
    if args.threads < 1:
        p.error("--threads must be >= 1")
    return args


def _map(fn, items, threads):
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _samples(rows, categories, config, threads):
    index = {c: n for n, c in enumerate(categories)}

    def build(row):
        mask = load_mask(row.mask) if row.mask is not None else None
        return pl.make_sample(row.image.stem, load_image(row.image), mask,
                              [index[lb] for lb in row.labels], len(categories), config)

    return _map(build, rows, threads)


def emit_saliency(smap, path):
    """16-bit PGM of the pixel map plus a (row, col, saliency) patch CSV."""
    path = Path(path)
    pix = pl.patch_to_pixel(smap, smap.grid)
    write_pgm(path, np.floor(65535.0 * pix + 0.5).astype(np.uint16), 65535)
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "saliency"])
        for j, s in enumerate(smap.values):
            w.writerow([j // smap.grid.cols, j % smap.grid.cols, repr(float(s))])


def _category_indices(model, name):
    if name is None:
        return list(range(len(model.categories)))
    if name not in model.categories:
        raise ManifestError(f"unknown category {name!r}; model has {list(model.categories)}")
    return [model.categories.index(name)]


def _load_for_model(args):
    model = load_model(args.model)
    _, rows = load_manifest(args.manifest, categories=model.categories)
    samples = _samples(rows, model.categories, model.config, args.threads)
    results = _map(lambda s: pl.run_image(model, s), samples, args.threads)
    return model, samples, results


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    categories, rows = load_manifest(args.manifest)
    samples = _samples(rows, categories, config, args.threads)
    model = pl.train(samples, categories, config)
    args.out.mkdir(parents=True, exist_ok=True)
    save_model(args.out / MODEL_NAME, model)
    print(args.out / MODEL_NAME)


def cmd_infer(args):
    model, samples, results = _load_for_model(args)
    args.out.mkdir(parents=True, exist_ok=True)
    for s, res in zip(samples, results):
        for n in _category_indices(model, args.category):
            emit_saliency(res.refined[n], args.out / f"{s.name}.{model.categories[n]}.pgm")


def cmd_classify(args):
    model, samples, results = _load_for_model(args)
    rows = [(s.name, model.categories[n], repr(float(r.confidences[n])), int(r.decisions[n]))
            for s, r in zip(samples, results) for n in _category_indices(model, args.category)]
    _write_rows(args.out, "classification.csv", ("image", "category", "confidence", "decision"), rows)


def cmd_segment(args):
    model, samples, results = _load_for_model(args)
    args.out.mkdir(parents=True, exist_ok=True)
    for s, r in zip(samples, results):
        pix = [pl.patch_to_pixel(m, s.grid) for m in r.refined]
        write_pgm(args.out / f"{s.name}.seg.pgm",
                  pl.segment(pix, model.config.threshold).astype(np.uint8))


def evaluate(model, samples, results, cats=None):
    """(metric, category, value) rows for a labelled test set."""
    cats = range(len(model.categories)) if cats is None else cats
    rows = []
    for n in cats:
        name = model.categories[n]
        gt = np.concatenate([s.patch_labels[n] for s in samples])
        if not (gt > 0).any():
            continue
        for tag, attr in (("eer_precision", "refined"), ("eer_precision_unrefined", "maps")):
            vals = np.concatenate([getattr(r, attr)[n].values for r in results])
            rows.append((tag, name, ev.precision_at_eer(ev.pr_curve(vals, gt))))
        per = [ev.precision_at_eer(ev.pr_curve(r.refined[n].values, s.patch_labels[n]))
               for s, r in zip(samples, results) if (s.patch_labels[n] > 0).any()]
        rows.append(("eer_precision_per_image", name, float(np.mean(per))))
    preds, gts = [], []
    for s, r in zip(samples, results):
        pix = [pl.patch_to_pixel(m, s.grid) for m in r.refined]
        preds.append(pl.segment(pix, model.config.threshold))
        gts.append(s.pixel_labels)
    pred, gtl = np.stack(preds), np.stack(gts)
    for n in cats:
        rows.append(("iou", model.categories[n], ev.iou(pred == n + 1, gtl == n + 1)))
    acc, mean = ev.pixel_accuracy(pred, gtl, len(model.categories) + 1)
    rows.append(("pixel_accuracy", "background", float(acc[0])))
    for n in cats:
        rows.append(("pixel_accuracy", model.categories[n], float(acc[n + 1])))
    rows.append(("pixel_accuracy_mean", "all", mean))
    L = pl.image_label_matrix(samples, len(model.categories))
    D = np.array([r.decisions for r in results])
    rows.append(("classification_accuracy", "all", float(np.mean((D == (L > 0)).all(axis=1)))))
    return rows


def cmd_eval(args):
    model, samples, results = _load_for_model(args)
    rows = evaluate(model, samples, results, _category_indices(model, args.category))
    _write_rows(args.out, "metrics.csv", ("metric", "category", "value"),
                [(m, c, repr(float(v))) for m, c, v in rows])


def cmd_bench(args):
    rep = ev.coding_benchmark(seed=args.seed or 0)
    rows = [(k, repr(float(v))) for k, v in rep._asdict().items()]
    _write_rows(args.out, "bench.csv", ("quantity", "value"), rows)


def _write_rows(out, filename, header, rows):
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    w = csv.writer(sys.stdout)
    w.writerow(header)
    w.writerows(rows)


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "classify": cmd_classify,
            "segment": cmd_segment, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except (ManifestError, ConfigError, ModelFormatError, DimensionError, CapacityError,
            DegenerateDataError, OSError) as e:
        print(f"tdsal: {e}", file=sys.stderr)
        return EXIT_DATA
    except (UndefinedRecallError, FloatingPointError, np.linalg.LinAlgError,
            ArithmeticError) as e:
        print(f"tdsal: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
