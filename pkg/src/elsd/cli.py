"""Command-line entry point: ``elsd <command> ...`` (or ``python -m elsd``)."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import fileio, metrics, synth, train, viz
from .checkpoint import CheckpointError
from .decode import DecodeConfig
from .geom import Homography, label_correspondences

log = logging.getLogger("elsd")


class CliError(Exception):
    pass


def _images_from(paths, dataset, view):
    """[(id, image)] from PGM files and/or a dataset directory."""
    out = []
    for p in paths or []:
        out.append((Path(p).stem, synth.read_pgm(p)))
    if dataset:
        for k, s in enumerate(synth.read_dataset(dataset)):
            for v in view:
                out.append((f"{k:05d}_{v}", s.image_a if v == "a" else s.image_b))
    if not out:
        raise CliError("no input images (give PGM paths or --dataset)")
    return out


def _check_size(img, net, name):
    if img.shape != (net.input_size, net.input_size):
        raise CliError(f"{name}: image is {img.shape[1]}x{img.shape[0]}, checkpoint expects "
                       f"{net.input_size}x{net.input_size}")


def cmd_gen_data(a):
    cfg = synth.SceneConfig(image_size=a.size, n_lines=(a.min_lines, a.max_lines))
    samples = synth.generate_dataset(a.n, a.seed, cfg)
    meta = {"seed": a.seed, "scene": synth.config_dict(cfg), "homography": synth.config_dict(synth.HomographyConfig())}
    path = synth.write_dataset(a.out, samples, meta)
    gts = {}
    for k, s in enumerate(samples):
        gts[f"{k:05d}_a"] = s.segments_a
        gts[f"{k:05d}_b"] = s.segments_b
    fileio.write_ground_truth(path / "gt.txt", gts)
    print(f"wrote {len(samples)} pairs to {path}")


def cmd_train(a):
    cfg = train.TrainConfig.load(a.config) if a.config else train.TrainConfig()
    if a.dataset:
        cfg.dataset = a.dataset
    if a.checkpoint:
        cfg.checkpoint = a.checkpoint
    if a.epochs is not None:
        cfg.epochs = a.epochs
    if a.seed is not None:
        cfg.seed = a.seed
    if not cfg.dataset or not Path(cfg.dataset).is_dir():
        raise CliError(f"dataset directory {cfg.dataset!r} does not exist")
    if not cfg.checkpoint:
        raise CliError("no checkpoint path (set 'checkpoint' in the config or pass --checkpoint)")
    samples = synth.read_dataset(cfg.dataset)
    params, runlog = train.train(samples, cfg, progress=None if a.quiet else
                                 lambda r: print(f"epoch {r['epoch']:3d}  detector {r['detector']:.4f}  "
                                                 f"descriptor {r['descriptor']:.4f}  total {r['total']:.4f}",
                                                 flush=True))
    out = train.save_model(cfg.checkpoint, params, cfg)
    runlog.write(out / "runlog.jsonl")
    print(f"checkpoint written to {out}")


def cmd_detect(a):
    params, net = train.load_model(a.checkpoint)
    dcfg = DecodeConfig(score_thresh=a.score_thresh, downsample=net.downsample, ncs=not a.no_ncs)
    items = _images_from(a.images, a.dataset, a.view)
    for name, img in items:
        _check_size(img, net, name)
    preds = train.predict([im for _, im in items], params, net, dcfg)
    fileio.write_predictions(fileio.ensure_parent(a.out), {k: p for (k, _), p in zip(items, preds)})
    print(f"{sum(map(len, preds))} segments in {len(items)} image(s) -> {a.out}")


def _segments_for(path, image_id):
    if path is None:
        return None
    blocks = fileio.read_ground_truth(path)
    if image_id not in blocks:
        if len(blocks) == 1:
            return next(iter(blocks.values()))
        raise CliError(f"{path}: no block for image {image_id!r}")
    return blocks[image_id]


def _detect_one(img, params, net, a):
    dcfg = DecodeConfig(score_thresh=a.score_thresh, downsample=net.downsample, ncs=not a.no_ncs)
    return [p.segment for p in train.predict([img], params, net, dcfg)[0]]


def cmd_describe(a):
    params, net = train.load_model(a.checkpoint)
    img = synth.read_pgm(a.image)
    _check_size(img, net, a.image)
    segs = _segments_for(a.segments, Path(a.image).stem) or _detect_one(img, params, net, a)
    desc = train.describe(img, segs, params, net)
    with open(fileio.ensure_parent(a.out), "w", encoding="utf-8") as f:
        f.write(f"# image: {Path(a.image).stem}\n")
        for s, d in zip(segs, desc):
            (x1, y1), (x2, y2) = s
            f.write(" ".join(repr(float(v)) for v in (x1, y1, x2, y2, *d)) + "\n")
    print(f"{len(segs)} descriptor(s) of dimension {net.descriptor_dim} -> {a.out}")


def cmd_match(a):
    params, net = train.load_model(a.checkpoint)
    ia, ib = synth.read_pgm(a.image_a), synth.read_pgm(a.image_b)
    _check_size(ia, net, a.image_a)
    _check_size(ib, net, a.image_b)
    sa = _segments_for(a.segments_a, Path(a.image_a).stem) or _detect_one(ia, params, net, a)
    sb = _segments_for(a.segments_b, Path(a.image_b).stem) or _detect_one(ib, params, net, a)
    m = metrics.match_lines(train.describe(ia, sa, params, net), train.describe(ib, sb, params, net))
    fileio.write_matches(fileio.ensure_parent(a.out), {f"{Path(a.image_a).stem}:{Path(a.image_b).stem}": m})
    if a.segments_out:
        fileio.write_ground_truth(a.segments_out, {Path(a.image_a).stem: sa, Path(a.image_b).stem: sb})
    print(f"{len(m)} match(es) between {len(sa)} and {len(sb)} segments -> {a.out}")


def cmd_eval(a):
    preds = fileio.read_predictions(a.preds)
    gts = fileio.read_ground_truth(a.gt)
    ids = [k for k in gts if k in preds] if a.intersect else list(gts)
    missing = [k for k in ids if k not in preds]
    if missing:
        raise CliError(f"{a.preds}: no predictions for image {missing[0]!r} (use --intersect to skip)")
    if not ids:
        raise CliError("no images to evaluate")
    p = [preds[k] for k in ids]
    g = [gts[k] for k in ids]
    rep = metrics.evaluate(p, g, image_size=a.image_size)
    if a.matches:
        m = fileio.read_matches(a.matches)
        gm = fileio.read_matches(a.match_gt) if a.match_gt else {}
        scores = [metrics.match_prf(m[k], gm.get(k, [])) for k in m]
        if scores:
            rep.match = metrics.MatchScores(*(float(np.mean([getattr(s, f) for s in scores]))
                                              for f in ("precision", "recall", "f_score")))
    text = rep.to_json()
    if a.out:
        Path(a.out).write_text(text + "\n")
    if a.pr_csv:
        _write_pr_csv(a.pr_csv, p, g, a.image_size)
    print(text)


def _write_pr_csv(path, preds, gts, image_size):
    """Ranked precision/recall points for sAP10."""
    precision, recall = metrics.structural_pr(preds, gts, 10.0, 128, image_size)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank", "precision", "recall"])
        for r, (pv, rv) in enumerate(zip(precision, recall), 1):
            w.writerow([r, pv, rv])


def cmd_viz(a):
    img = synth.read_pgm(a.image)
    if a.matches:
        if not (a.image_b and a.segments and a.segments_b):
            raise CliError("match visualisation needs --image-b, --segments and --segments-b")
        ib = synth.read_pgm(a.image_b)
        sa = _segments_for(a.segments, Path(a.image).stem)
        sb = _segments_for(a.segments_b, Path(a.image_b).stem)
        m = next(iter(fileio.read_matches(a.matches).values()), [])
        gt = None
        if a.homography:
            h = Homography(np.loadtxt(a.homography).reshape(3, 3))
            gt = label_correspondences(sa, sb, h, train.STATIC_TOL)
        for i, j in m:
            if i >= len(sa) or j >= len(sb):
                raise CliError(f"{a.matches}: match ({i}, {j}) refers to a missing segment")
        svg = viz.matches_svg(img, sa, ib, sb, m, gt)
    else:
        items = []
        if a.preds:
            blocks = fileio.read_predictions(a.preds)
            items = blocks.get(Path(a.image).stem, next(iter(blocks.values()), []) if len(blocks) == 1 else [])
        elif a.segments:
            items = _segments_for(a.segments, Path(a.image).stem)
        svg = viz.segments_svg(img, items)
        if a.ppm:
            viz.segments_ppm(a.ppm, img, items)
    viz.write_svg(fileio.ensure_parent(a.out), svg)
    print(f"wrote {a.out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elsd", description="Line segment detection and description on synthetic scenes.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic pair dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--min-lines", type=int, default=3)
    p.add_argument("--max-lines", type=int, default=8)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    def detect_flags(p):
        p.add_argument("--score-thresh", type=float, default=0.22)
        p.add_argument("--no-ncs", action="store_true", help="rank peaks by the midpoint map alone")

    p = sub.add_parser("detect", help="detect segments, write a prediction file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="*", help="PGM images")
    p.add_argument("--dataset", help="dataset directory to read images from")
    p.add_argument("--view", default="ab", choices=["a", "b", "ab"])
    p.add_argument("--out", required=True)
    detect_flags(p)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("describe", help="descriptors for given or detected segments")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--segments", help="segment file (ground-truth format); detect if omitted")
    p.add_argument("--out", required=True)
    detect_flags(p)
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("match", help="match segments between two images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    p.add_argument("--segments-a")
    p.add_argument("--segments-b")
    p.add_argument("--segments-out", help="also write the segments that were matched")
    p.add_argument("--out", required=True)
    detect_flags(p)
    p.set_defaults(fn=cmd_match)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--preds", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--intersect", action="store_true", help="only score images present in both files")
    p.add_argument("--matches")
    p.add_argument("--match-gt")
    p.add_argument("--out")
    p.add_argument("--pr-csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("viz", help="SVG overlay of segments or matches")
    p.add_argument("--image", required=True)
    p.add_argument("--preds")
    p.add_argument("--segments")
    p.add_argument("--matches")
    p.add_argument("--image-b")
    p.add_argument("--segments-b")
    p.add_argument("--homography", help="text file with 9 numbers, used to colour matches")
    p.add_argument("--ppm", help="also write a PPM raster")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_viz)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        a.fn(a)
    except (CliError, fileio.FormatError, synth.DatasetError, CheckpointError,
            train.TrainingError, ValueError, OSError) as e:
        print(f"elsd {a.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
