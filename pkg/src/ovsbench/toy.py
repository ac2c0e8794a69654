"""Seeded synthetic corpus for demos and end-to-end checks.

Writes a training vocabulary, candidate categories with a controlled spread of
training similarity, an image inventory with source-vocabulary masks, and
(after ``build``) predictions and sweep inputs::

    python -m ovsbench.toy OUT_DIR [--seed N]
    python -m ovsbench.toy OUT_DIR --after-build
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .bench import BenchManifest
from .metrics import IGNORE_VALUE, OTHERS, SegMask
from .storage import pseudo_encode, read_msk1, write_emb1, write_msk1

DIM = 32
N_TRAIN = 8
N_CANDIDATES = 10
N_IMAGES = 30
MASK_SIZE = 8


def _unit(v):
    return v / np.linalg.norm(v)


def candidate_embeddings(seed: int = 0, dim: int = DIM):
    """Training and candidate vocabularies; candidate i leans on one training row with weight beta_i."""
    train_labels = [f"train_{i}" for i in range(N_TRAIN)]
    train = np.stack([pseudo_encode(t, dim, seed) for t in train_labels])
    betas = np.linspace(0.15, 0.97, N_CANDIDATES)
    cand_labels = [f"cat_{i}" for i in range(N_CANDIDATES)]
    cands = []
    for i, label in enumerate(cand_labels):
        own = pseudo_encode(label, dim, seed)
        anchor = train[i % N_TRAIN]
        own = _unit(own - np.dot(own, anchor) * anchor)
        cands.append(betas[i] * anchor + np.sqrt(1 - betas[i] ** 2) * own)
    return (train_labels, train), (cand_labels, np.stack(cands))


def make_corpus(root, seed: int = 0) -> dict:
    """Write vocabularies, inventory and source masks under ``root``; return their paths."""
    root = Path(root)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    (train_labels, train), (cand_labels, cands) = candidate_embeddings(seed)
    write_emb1(root / "train.emb1", train, labels=train_labels)
    write_emb1(root / "candidates.emb1", cands, labels=cand_labels)

    rng = np.random.Generator(np.random.PCG64(seed))
    lines = []
    for k in range(N_IMAGES):
        n_cat = int(rng.integers(1, 4))
        ids = sorted(rng.choice(N_CANDIDATES, size=n_cat, replace=False).tolist())
        labels = np.array(ids, dtype=np.uint16)[rng.integers(0, n_cat, size=(MASK_SIZE, MASK_SIZE))]
        # every listed category keeps at least one pixel
        for j, c in enumerate(ids):
            labels[j, 0] = c
        labels[rng.random((MASK_SIZE, MASK_SIZE)) < 0.05] = IGNORE_VALUE
        for j, c in enumerate(ids):
            labels[j, 0] = c
        image_id = f"img_{k:03d}"
        write_msk1(root / "masks" / f"{image_id}.msk1", SegMask(labels))
        lines.append({"image_id": image_id, "mask_path": f"masks/{image_id}.msk1", "categories": [cand_labels[c] for c in ids]})
    with open(root / "inventory.jsonl", "w") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    return {
        "train": root / "train.emb1",
        "candidates": root / "candidates.emb1",
        "inventory": root / "inventory.jsonl",
    }


def make_predictions(gt_dir, pred_dir, n_classes: int, seed: int = 0, flip: float = 0.2) -> None:
    """Corrupt each ground-truth mask by relabeling a seeded fraction of pixels."""
    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    pred_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    for path in sorted(gt_dir.glob("*.msk1")):
        labels = read_msk1(path).labels.copy()
        labels[labels == IGNORE_VALUE] = 0
        noise = rng.random(labels.shape) < flip
        labels[noise] = rng.integers(0, n_classes, size=int(noise.sum()))
        write_msk1(pred_dir / path.name, SegMask(labels))


def make_sweep_inputs(manifest: BenchManifest, gt_dir, out_dir, seed: int = 0, noise: float = 0.35, n_distractors: int = 120) -> dict:
    """Base-class embeddings for the manifest vocabulary, noisy region embeddings, and a distractor pool."""
    gt_dir, out_dir = Path(gt_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(manifest.final_categories)
    base = np.stack([pseudo_encode(n, DIM, seed) for n in names])
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    region_labels, region_rows = [], []
    for rec in manifest.kept:
        labels = read_msk1(gt_dir / f"{rec.image_id}.msk1").labels
        for c in sorted(int(x) for x in np.unique(labels) if x != IGNORE_VALUE):
            region_labels.append(f"{rec.image_id}/{c}")
            region_rows.append(_unit(base[c] + noise * rng.standard_normal(DIM) / np.sqrt(DIM)))
    d_labels = [f"distractor_{i}" for i in range(n_distractors)]
    distractors = []
    for i in range(n_distractors):
        # near-duplicates of base classes (cosine ~0.97)
        anchor = base[i % len(names)]
        distractors.append(_unit(anchor + 0.25 * rng.standard_normal(DIM) / np.sqrt(DIM)))
    paths = {
        "base": out_dir / "base_classes.emb1",
        "regions": out_dir / "regions.emb1",
        "distractors": out_dir / "distractors.emb1",
    }
    write_emb1(paths["base"], base, labels=names)
    write_emb1(paths["regions"], np.stack(region_rows), labels=region_labels)
    write_emb1(paths["distractors"], np.stack(distractors), labels=d_labels)
    return paths


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="write the seeded toy corpus")
    parser.add_argument("out", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--after-build",
        action="store_true",
        help="read OUT/manifest.json and OUT/gt, then write predictions (OUT/pred) and sweep inputs (OUT/sweep_in)",
    )
    args = parser.parse_args(argv)
    if args.after_build:
        manifest = BenchManifest.from_dict(json.loads((args.out / "manifest.json").read_text()))
        make_predictions(args.out / "gt", args.out / "pred", len(manifest.final_categories), args.seed)
        paths = make_sweep_inputs(manifest, args.out / "gt", args.out / "sweep_in", args.seed)
        paths["predictions"] = args.out / "pred"
    else:
        paths = make_corpus(args.out, args.seed)
    for name, path in paths.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()


__all__ = ["make_corpus", "make_predictions", "make_sweep_inputs", "candidate_embeddings", "OTHERS"]
