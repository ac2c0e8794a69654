"""Command-line entry point.

Exit status: 0 success, 2 configuration/validation error, 3 data/IO error.
Machine output goes to files or stdout; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    BenchManifest,
    CategoryScore,
    filter_and_remap,
    read_inventory,
    remap_mask,
    score_categories,
    similarity_stats,
    vocab_hash,
)
from .errors import ConfigError, DataError, NonConvergentConfigError, OvsError
from .gfa import NORMALIZE_MODES, FusionConfig, gfa_closed_form, gfa_iterate, spectral_radius, _inputs, _operator
from .metrics import MIOU_MODES, TIE_BREAKS, ConfusionAccumulator, class_count_sweep, confusion_update, miou, regions_from_gt
from .plotting import plot_similarity_histogram, plot_sweep
from .proxy import PAIRINGS, ProxyConfig, build_proxy_batch, finite_difference_check, proxy_loss
from .storage import read_emb1, read_mask, write_emb1, write_msk1

log = logging.getLogger("ovsbench")

FORMAT_VERSION = f"ovsbench/{__version__}"
JOBS_ENV = "OVSBENCH_JOBS"
MASK_SUFFIXES = (".msk1", ".png")
GRAD_TOLERANCE = 1e-4


def _run_config(args) -> dict:
    cfg = {}
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        cfg[key] = str(value) if isinstance(value, Path) else value
    return cfg


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _jobs(args) -> int:
    jobs = args.jobs if args.jobs is not None else int(os.environ.get(JOBS_ENV, "1"))
    if jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {jobs}")
    return jobs


def _find_mask(directory: Path, image_id: str, role: str) -> Path:
    for suffix in MASK_SUFFIXES:
        p = directory / f"{image_id}{suffix}"
        if p.exists():
            return p
    raise DataError(f"missing {role} mask for image_id {image_id!r} in {directory}")


def _probability(name):
    def parse(text):
        value = float(text)
        if not np.isfinite(value):
            raise argparse.ArgumentTypeError(f"{name} must be finite")
        return value

    return parse


def cmd_score(args) -> int:
    candidates = read_emb1(args.candidates, require_labels=True)
    train = read_emb1(args.train_vocab, require_labels=True)
    scores = score_categories(candidates, train)
    stats = similarity_stats(scores, image_count=args.image_count)
    report = {
        "version": FORMAT_VERSION,
        "config": _run_config(args),
        "train_vocab_hash": vocab_hash(train),
        "scores": [{"name": s.name, "max_train_similarity": s.max_train_similarity} for s in scores],
        "stats": stats.to_dict(),
    }
    _write_text(args.out, _dump(report))
    if args.out not in (None, "-"):
        sys.stdout.write(stats.table(args.name))
    if args.table:
        Path(args.table).write_text(stats.table(args.name))
    if args.figure:
        plot_similarity_histogram(scores, args.figure)
    return 0


def _load_scores(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    entries = data["scores"] if isinstance(data, dict) and "scores" in data else data
    if isinstance(entries, dict):
        scores = [CategoryScore(k, float(v)) for k, v in entries.items()]
    else:
        scores = [CategoryScore(e["name"], float(e["max_train_similarity"])) for e in entries]
    vhash = data.get("train_vocab_hash", "") if isinstance(data, dict) else ""
    return scores, vhash


def cmd_build(args) -> int:
    if args.sigma2 > args.sigma1:
        raise ConfigError(f"--sigma2 ({args.sigma2}) must not exceed --sigma1 ({args.sigma1})")
    scores, vhash = _load_scores(args.scores)
    inventory = read_inventory(args.inventory)
    manifest = filter_and_remap(
        inventory,
        scores,
        args.sigma1,
        args.sigma2,
        exclude=args.exclude or (),
        train_vocab_hash=vhash,
        config=_run_config(args),
    )
    _write_text(args.out, manifest.to_json())
    if args.masks_out:
        out_dir = Path(args.masks_out)
        out_dir.mkdir(parents=True, exist_ok=True)
        base = Path(args.mask_root) if args.mask_root else Path(args.inventory).parent
        for rec in manifest.kept:
            src = base / rec.mask_path
            if not src.exists():
                raise DataError(f"missing source mask {src} for image_id {rec.image_id!r}")
            write_msk1(out_dir / f"{rec.image_id}.msk1", remap_mask(read_mask(src), manifest))
    log.info("kept %d of %d images", len(manifest.kept), len(manifest.records))
    return 0


def _fusion_config(args) -> FusionConfig:
    return FusionConfig(
        lam=args.lam,
        omega=args.omega,
        max_iters=args.max_iters,
        tolerance=args.tolerance,
        normalize_mode=args.normalize_mode,
        normalize_inputs=args.normalize_inputs,
    )


def cmd_fuse(args) -> int:
    cfg = _fusion_config(args)
    fq = read_emb1(args.fq)
    fc = read_emb1(args.fc)
    q, c = _inputs(fq, fc, cfg)
    _, _, a = _operator(q, c, cfg)
    rho = spectral_radius(cfg.omega**2 * a, cfg.power_iters, cfg.power_tol)
    if not rho < 1.0:
        raise NonConvergentConfigError(
            f"spectral radius of omega^2*A is {rho:.6g} >= 1 (lambda={cfg.lam}, omega={cfg.omega})",
            lam=cfg.lam,
            omega=cfg.omega,
            spectral_radius=rho,
        )
    result = gfa_closed_form(fq, fc, cfg) if args.closed_form else gfa_iterate(fq, fc, cfg)
    write_emb1(args.out, result.fused_clip, labels=fc.labels)
    if args.out_query:
        write_emb1(args.out_query, result.fused_query, labels=fq.labels)
    report = {
        "version": FORMAT_VERSION,
        "config": _run_config(args),
        "solver": "closed_form" if args.closed_form else "iterate",
        "iterations_used": result.iterations_used,
        "converged": result.converged,
        "spectral_radius_estimate": result.spectral_radius_estimate,
        "shape": list(result.fused_clip.shape),
    }
    _write_text(args.report, _dump(report))
    return 0 if result.converged else 3


def _eval_one(record, args, n_classes):
    gt = read_mask(_find_mask(Path(args.gt_dir), record.image_id, "ground-truth"))
    pred = read_mask(_find_mask(Path(args.pred_dir), record.image_id, "prediction"))
    acc = ConfusionAccumulator([str(i) for i in range(n_classes)])
    return confusion_update(acc, gt, pred)


def cmd_eval(args) -> int:
    try:
        manifest = BenchManifest.from_dict(json.loads(Path(args.manifest).read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{args.manifest}: not a valid manifest ({exc})") from exc
    names = manifest.final_categories
    records = manifest.kept
    jobs = _jobs(args)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda r: _eval_one(r, args, len(names)), records))
    else:
        parts = [_eval_one(r, args, len(names)) for r in records]
    acc = ConfusionAccumulator(names)
    for part in parts:
        acc.intersection += part.intersection
        acc.gt += part.gt
        acc.pred += part.pred
    value, table = miou(acc, args.miou_mode, args.include_others)
    both = {}
    for mode in MIOU_MODES:
        try:
            both[mode] = miou(acc, mode, args.include_others)[0]
        except OvsError:
            both[mode] = None
    report = {
        "version": FORMAT_VERSION,
        "config": _run_config(args),
        "images": len(records),
        "miou": value,
        "miou_by_mode": both,
        "per_class": table,
    }
    _write_text(args.out, _dump(report))
    if args.table:
        Path(args.table).write_text(_class_table(table, value))
    return 0


def _class_table(table, value) -> str:
    width = max([len("class")] + [len(r["class"]) for r in table])
    lines = [f"{'class'.ljust(width)}  {'IoU':>8}  {'gt px':>10}  {'pred px':>10}"]
    for r in table:
        iou = "-" if r["iou"] is None else f"{100 * r['iou']:.2f}"
        mark = "" if r["included"] else " *"
        lines.append(f"{r['class'].ljust(width)}  {iou:>8}  {r['gt']:>10}  {r['pred']:>10}{mark}")
    lines.append(f"{'mIoU'.ljust(width)}  {100 * value:>8.2f}")
    return "\n".join(lines) + "\n"


def _parse_steps(text: str):
    try:
        steps = [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError as exc:
        raise ConfigError(f"--steps must be a comma-separated list of integers, got {text!r}") from exc
    if not steps or any(s < 0 for s in steps) or any(b <= a for a, b in zip(steps, steps[1:])):
        raise ConfigError(f"--steps must be nonnegative and strictly increasing, got {text!r}")
    return steps


def _sweep_images(regions, gt_dir: Path):
    if regions.labels is None:
        raise DataError("region embeddings need a label sidecar with '<image_id>/<class_id>' labels")
    per_image = {}
    for label, row in zip(regions.labels, regions.rows):
        image_id, sep, class_id = label.rpartition("/")
        if not sep:
            raise DataError(f"region label {label!r} is not of the form '<image_id>/<class_id>'")
        try:
            per_image.setdefault(image_id, {})[int(class_id)] = row
        except ValueError as exc:
            raise DataError(f"region label {label!r} has a non-integer class id") from exc
    images = []
    for image_id in sorted(per_image):
        gt = read_mask(_find_mask(gt_dir, image_id, "ground-truth"))
        images.append(regions_from_gt(gt, per_image[image_id], image_id))
    return images


def cmd_sweep(args) -> int:
    steps = _parse_steps(args.steps)
    regions = read_emb1(args.regions)
    base = read_emb1(args.base_classes)
    distractors = read_emb1(args.distractors)
    images = _sweep_images(regions, Path(args.gt_dir))
    result = class_count_sweep(
        images,
        base,
        distractors,
        steps,
        seed=args.seed,
        tie_break=args.tie_break,
        placement=args.placement,
        miou_mode=args.miou_mode,
        include_others=args.include_others,
    )
    _write_text(args.out, result.to_csv())
    if args.out not in (None, "-"):
        out = Path(args.out)
        summary = {
            "version": FORMAT_VERSION,
            "config": _run_config(args),
            "seed": result.seed,
            "distractor_source": result.distractor_source,
            "points": [{"count": n, "miou": m} for n, m in result.points],
        }
        out.with_suffix(".json").write_text(_dump(summary))
        figure = args.figure or out.with_suffix(".png")
        plot_sweep(result, figure)
    elif args.figure:
        plot_sweep(result, args.figure)
    return 0


def _proxy_inputs(args):
    fq = read_emb1(args.fq)
    fc = read_emb1(args.fc)
    ft = read_emb1(args.ft)
    cfg = ProxyConfig(gamma=args.gamma, seed=args.seed, pairing=args.pairing)
    return build_proxy_batch(fq, fc, ft, cfg)


def cmd_pc_sample(args) -> int:
    batch = _proxy_inputs(args)
    prefix = Path(args.out_prefix)
    for name, arr in (("query", batch.mixed_query), ("clip", batch.mixed_clip), ("text", batch.mixed_text)):
        write_emb1(prefix.with_name(f"{prefix.name}.{name}.emb1"), arr)
    report = {
        "version": FORMAT_VERSION,
        "config": _run_config(args),
        "alphas": batch.alphas.tolist(),
        "pairs": batch.pair_indices.tolist(),
    }
    _write_text(args.report, _dump(report))
    return 0


def cmd_pc_loss(args) -> int:
    batch = _proxy_inputs(args)
    l_pq, l_pc, total = proxy_loss(batch)
    report = {
        "version": FORMAT_VERSION,
        "config": _run_config(args),
        "rows": len(batch),
        "l_pq": l_pq,
        "l_pc": l_pc,
        "total": total,
    }
    status = 0
    if args.check_grad:
        err = finite_difference_check(batch, h=1e-5, wrt_text=True)
        report["grad_check"] = {"h": 1e-5, "max_relative_error": err, "tolerance": GRAD_TOLERANCE, "ok": err < GRAD_TOLERANCE}
        status = 0 if err < GRAD_TOLERANCE else 3
    _write_text(args.report, _dump(report))
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovsbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=FORMAT_VERSION)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    parser.add_argument("--jobs", type=int, default=None, help=f"worker threads (default ${JOBS_ENV} or 1)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("score", help="score candidate categories against a training vocabulary")
    p.add_argument("--candidates", required=True, type=Path, help="EMB1 with label sidecar")
    p.add_argument("--train-vocab", required=True, type=Path, help="EMB1 with label sidecar")
    p.add_argument("--out", default="-", help="scores + stats JSON (default stdout)")
    p.add_argument("--table", type=Path, help="write the aligned stats table here")
    p.add_argument("--figure", type=Path, help="write a similarity histogram PNG here")
    p.add_argument("--name", default="", help="dataset name for the stats table")
    p.add_argument("--image-count", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("build", help="filter and remap an image inventory into a manifest")
    p.add_argument("--inventory", required=True, type=Path, help="JSON lines: image_id, mask_path, categories")
    p.add_argument("--scores", required=True, type=Path, help="output of `score`")
    p.add_argument("--sigma1", required=True, type=_probability("sigma1"), help="image filter threshold")
    p.add_argument("--sigma2", required=True, type=_probability("sigma2"), help="'others' remap threshold")
    p.add_argument("--exclude", nargs="*", default=[], help="categories to remap to 'others' unconditionally")
    p.add_argument("--masks-out", type=Path, help="write kept masks remapped to manifest class ids here")
    p.add_argument("--mask-root", type=Path, help="base directory for inventory mask paths (default: inventory dir)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("fuse", help="fuse query embeddings with pooled CLIP features")
    p.add_argument("--fq", required=True, type=Path)
    p.add_argument("--fc", required=True, type=Path)
    p.add_argument("--lambda", dest="lam", type=float, default=0.2)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--tolerance", type=float, default=1e-12)
    p.add_argument("--normalize-mode", choices=NORMALIZE_MODES, default="column_softmax")
    p.add_argument("--normalize-inputs", action="store_true", help="L2-normalize input rows first")
    solver = p.add_mutually_exclusive_group()
    solver.add_argument("--iterate", dest="closed_form", action="store_false")
    solver.add_argument("--closed-form", dest="closed_form", action="store_true")
    p.set_defaults(closed_form=False)
    p.add_argument("--out", required=True, type=Path, help="fused CLIP rows (EMB1)")
    p.add_argument("--out-query", type=Path, help="fused query rows (EMB1)")
    p.add_argument("--report", default="-", help="JSON run report (default stdout)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="mIoU of predicted masks against ground truth")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--pred-dir", required=True, type=Path)
    p.add_argument("--gt-dir", required=True, type=Path)
    p.add_argument("--miou-mode", choices=MIOU_MODES, default="present_classes")
    p.add_argument("--include-others", action="store_true")
    p.add_argument("--out", default="-")
    p.add_argument("--table", type=Path, help="write an aligned per-class table here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="mIoU as distractor categories are added")
    p.add_argument("--regions", required=True, type=Path, help="EMB1 labeled '<image_id>/<class_id>'")
    p.add_argument("--gt-dir", required=True, type=Path)
    p.add_argument("--base-classes", required=True, type=Path)
    p.add_argument("--distractors", required=True, type=Path)
    p.add_argument("--steps", required=True, help="comma-separated distractor counts, e.g. 0,25,50,100")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tie-break", choices=TIE_BREAKS, default="lowest_index")
    p.add_argument("--placement", choices=("append", "prepend"), default="append")
    p.add_argument("--miou-mode", choices=MIOU_MODES, default="present_classes")
    p.add_argument("--include-others", action="store_true")
    p.add_argument("--out", default="-", help="CSV count,miou")
    p.add_argument("--figure", type=Path, help="PNG curve (default: next to --out)")
    p.set_defaults(func=cmd_sweep)

    for name, func, help_ in (
        ("pc-sample", cmd_pc_sample, "mix aligned embedding triples into proxy embeddings"),
        ("pc-loss", cmd_pc_loss, "proxy losses on a mixed batch"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--fq", required=True, type=Path)
        p.add_argument("--fc", required=True, type=Path)
        p.add_argument("--ft", required=True, type=Path)
        p.add_argument("--gamma", type=float, default=2.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--pairing", choices=PAIRINGS, default="random_derangement")
        p.add_argument("--report", default="-")
        if name == "pc-sample":
            p.add_argument("--out-prefix", required=True, help="writes <prefix>.{query,clip,text}.emb1")
        else:
            p.add_argument("--check-grad", action="store_true", help="verify gradients by finite differences")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        code = getattr(exc, "code", "io")
        print(f"error[{code}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
