"""Segmentation evaluation: confusion tallies, mIoU, nearest-class scoring and the class-count sweep."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .embedding import EmbeddingSet, l2_normalize_rows
from .errors import (
    AmbiguityError,
    ConfigError,
    DataError,
    EmptyEvaluationError,
    EmptyInputError,
    InsufficientDistractorsError,
    ShapeError,
    VocabularyError,
)

IGNORE_VALUE = 65535
OTHERS = "others"
MIOU_MODES = ("present_classes", "all_classes")
TIE_BREAKS = ("lowest_index", "error")


@dataclass(frozen=True, eq=False)
class SegMask:
    labels: np.ndarray
    ignore_value: int = IGNORE_VALUE

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"mask must be a nonempty H x W raster, got shape {arr.shape}")
        if arr.dtype != np.uint16:
            if np.any(arr < 0) or np.any(arr > IGNORE_VALUE):
                raise ShapeError("mask ids must fit in an unsigned 16-bit integer")
            arr = arr.astype(np.uint16)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


class ConfusionAccumulator:
    """Per-class intersection / gt / prediction pixel counts.

    Accumulators over the same class list merge by elementwise addition.
    """

    def __init__(self, class_names: Sequence[str]):
        self.class_names = tuple(class_names)
        if not self.class_names:
            raise EmptyInputError("accumulator needs at least one class")
        k = len(self.class_names)
        self.intersection = np.zeros(k, dtype=np.int64)
        self.gt = np.zeros(k, dtype=np.int64)
        self.pred = np.zeros(k, dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def union(self) -> np.ndarray:
        return self.gt + self.pred - self.intersection

    def update(self, gt: SegMask, pred: SegMask) -> "ConfusionAccumulator":
        return confusion_update(self, gt, pred)

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.class_names != self.class_names:
            raise VocabularyError("cannot merge accumulators over different class lists")
        out = ConfusionAccumulator(self.class_names)
        out.intersection = self.intersection + other.intersection
        out.gt = self.gt + other.gt
        out.pred = self.pred + other.pred
        return out

    def to_dict(self) -> dict:
        return {
            "classes": list(self.class_names),
            "intersection": self.intersection.tolist(),
            "union": self.union.tolist(),
            "gt": self.gt.tolist(),
            "pred": self.pred.tolist(),
        }


def _labels(m) -> np.ndarray:
    return m.labels if isinstance(m, SegMask) else SegMask(m).labels


def confusion_update(acc: ConfusionAccumulator, gt, pred) -> ConfusionAccumulator:
    """Add one image's pixel tallies to ``acc`` (in place) and return it.

    Pixels that are ignore in ``gt`` are skipped entirely; ``pred`` may only
    carry the ignore id at those pixels.
    """
    g = _labels(gt)
    p = _labels(pred)
    if g.shape != p.shape:
        raise ShapeError(f"gt mask {g.shape} and prediction {p.shape} differ in size")
    valid = g != IGNORE_VALUE
    gv = g[valid].astype(np.int64)
    pv = p[valid].astype(np.int64)
    k = acc.num_classes
    if pv.size and pv.max() >= k:
        bad = sorted(set(pv[pv >= k].tolist()))
        if IGNORE_VALUE in bad:
            raise VocabularyError("prediction contains the ignore id at evaluated pixels")
        raise VocabularyError(f"prediction uses class ids outside the vocabulary: {bad}")
    if gv.size and gv.max() >= k:
        bad = sorted(set(gv[gv >= k].tolist()))
        raise VocabularyError(f"ground truth uses class ids outside the vocabulary: {bad}")
    acc.gt += np.bincount(gv, minlength=k)
    acc.pred += np.bincount(pv, minlength=k)
    acc.intersection += np.bincount(gv[gv == pv], minlength=k)
    return acc


def miou(acc: ConfusionAccumulator, mode: str = "present_classes", include_others: bool = False):
    """Mean IoU plus a per-class table.

    ``present_classes`` averages classes with ground-truth pixels;
    ``all_classes`` averages every class with a nonzero union, so a class that
    was predicted but never present scores 0. ``others`` is left out of the
    mean unless ``include_others`` is set; its pixels still count in every
    other class's union.
    """
    if mode not in MIOU_MODES:
        raise ConfigError(f"miou mode must be one of {MIOU_MODES}, got {mode!r}")
    union = acc.union
    if mode == "present_classes":
        selected = acc.gt > 0
    else:
        selected = union > 0
    if not include_others:
        selected &= np.array([name != OTHERS for name in acc.class_names])
    table = []
    ious = []
    for i, name in enumerate(acc.class_names):
        iou = float(acc.intersection[i] / union[i]) if union[i] > 0 else None
        table.append(
            {
                "class": name,
                "intersection": int(acc.intersection[i]),
                "union": int(union[i]),
                "gt": int(acc.gt[i]),
                "pred": int(acc.pred[i]),
                "iou": iou,
                "included": bool(selected[i]),
            }
        )
        if selected[i]:
            ious.append(iou)
    if not ious:
        raise EmptyEvaluationError(f"no classes to average under mode {mode!r}")
    return float(np.mean(ious)), table


def _class_scores(regions: np.ndarray, classes: np.ndarray) -> np.ndarray:
    return l2_normalize_rows(regions) @ l2_normalize_rows(classes).T


def _argmax_rows(scores: np.ndarray, order: np.ndarray, tie_break: str, names=None) -> np.ndarray:
    """Argmax over columns visited in ``order``; ties resolve to the earliest position."""
    ranked = scores[:, order]
    best_pos = np.argmax(ranked, axis=1)
    if tie_break == "error":
        top = ranked[np.arange(ranked.shape[0]), best_pos]
        for r in range(ranked.shape[0]):
            tied = order[np.flatnonzero(ranked[r] == top[r])]
            if tied.size > 1:
                labels = [names[i] if names else int(i) for i in tied]
                raise AmbiguityError(f"tie between classes {labels}", tied=labels)
    elif tie_break != "lowest_index":
        raise ConfigError(f"tie_break must be one of {TIE_BREAKS}, got {tie_break!r}")
    return order[best_pos]


def nearest_class_scorer(region_embedding, class_embeddings, tie_break: str = "lowest_index", order=None) -> int:
    """Index of the class with the highest cosine score.

    ``order`` optionally fixes which class counts as "lowest" for tie breaking;
    it defaults to the natural index order.
    """
    classes = class_embeddings.rows if isinstance(class_embeddings, EmbeddingSet) else np.atleast_2d(class_embeddings)
    if classes.shape[0] < 1:
        raise EmptyInputError("class set is empty")
    region = np.atleast_2d(np.asarray(region_embedding, dtype=np.float64))
    names = getattr(class_embeddings, "labels", None)
    order = np.arange(classes.shape[0]) if order is None else np.asarray(order)
    return int(_argmax_rows(_class_scores(region, classes), order, tie_break, names)[0])


def nearest_classes(regions, class_embeddings, tie_break: str = "lowest_index", order=None) -> np.ndarray:
    classes = class_embeddings.rows if isinstance(class_embeddings, EmbeddingSet) else np.atleast_2d(class_embeddings)
    if classes.shape[0] < 1:
        raise EmptyInputError("class set is empty")
    regions = np.atleast_2d(np.asarray(regions, dtype=np.float64))
    names = getattr(class_embeddings, "labels", None)
    order = np.arange(classes.shape[0]) if order is None else np.asarray(order)
    return _argmax_rows(_class_scores(regions, classes), order, tie_break, names)


@dataclass(eq=False)
class SweepImage:
    """Ground truth plus region proposals for one image.

    ``region_map`` holds a region index per pixel (-1 for none) and
    ``region_embeddings`` one row per region.
    """

    gt: SegMask
    region_map: np.ndarray
    region_embeddings: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        self.region_map = np.asarray(self.region_map, dtype=np.int64)
        self.region_embeddings = np.atleast_2d(np.asarray(self.region_embeddings, dtype=np.float64))
        if self.region_map.shape != self.gt.labels.shape:
            raise ShapeError(f"region map {self.region_map.shape} does not match gt {self.gt.labels.shape}")
        if self.region_map.max(initial=-1) >= self.region_embeddings.shape[0]:
            raise ShapeError("region map references a region without an embedding")
        uncovered = (self.region_map < 0) & (self.gt.labels != IGNORE_VALUE)
        if np.any(uncovered):
            raise DataError(f"image {self.image_id!r}: {int(uncovered.sum())} labeled pixels belong to no region")


def regions_from_gt(gt: SegMask, embeddings_by_class: dict, image_id: str = "") -> SweepImage:
    """One region per ground-truth class segment, with caller-supplied embeddings keyed by class id."""
    ids = [int(c) for c in np.unique(gt.labels) if c != IGNORE_VALUE]
    missing = [c for c in ids if c not in embeddings_by_class]
    if missing:
        raise DataError(f"image {image_id!r}: no region embedding for gt classes {missing}")
    region_map = np.full(gt.labels.shape, -1, dtype=np.int64)
    for r, c in enumerate(ids):
        region_map[gt.labels == c] = r
    emb = np.stack([np.asarray(embeddings_by_class[c], dtype=np.float64) for c in ids]) if ids else np.zeros((0, 1))
    return SweepImage(gt, region_map, emb, image_id)


def predict_image(image: SweepImage, classes: np.ndarray, tie_break: str = "lowest_index", order=None) -> SegMask:
    if image.region_embeddings.shape[0] == 0:
        return SegMask(np.zeros_like(image.gt.labels))
    picks = nearest_classes(image.region_embeddings, classes, tie_break, order)
    pred = np.zeros(image.gt.labels.shape, dtype=np.uint16)
    covered = image.region_map >= 0
    pred[covered] = picks[image.region_map[covered]]
    return SegMask(pred)


@dataclass
class SweepResult:
    points: List[tuple] = field(default_factory=list)  # (num_categories, miou)
    seed: int = 0
    distractor_source: str = ""
    steps: List[int] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["count,miou"]
        lines += [f"{n},{m:.12f}" for n, m in self.points]
        return "\n".join(lines) + "\n"


def class_count_sweep(
    images: Sequence[SweepImage],
    base_classes: EmbeddingSet,
    distractors: EmbeddingSet,
    steps: Sequence[int],
    seed: int = 0,
    tie_break: str = "lowest_index",
    placement: str = "append",
    miou_mode: str = "present_classes",
    include_others: bool = False,
) -> SweepResult:
    """mIoU as seeded-random distractor categories join the candidate list.

    Distractors are drawn as prefixes of one seeded permutation of the pool, so
    each step's set contains the previous one. Class ids stay fixed (base
    classes first, then distractors in draw order); ``placement`` only decides
    which group wins exact score ties under ``lowest_index``.
    """
    steps = [int(s) for s in steps]
    if not steps:
        raise ConfigError("steps must be nonempty")
    if any(s < 0 for s in steps) or any(b <= a for a, b in zip(steps, steps[1:])):
        raise ConfigError(f"steps must be nonnegative and strictly increasing, got {steps}")
    if placement not in ("append", "prepend"):
        raise ConfigError(f"placement must be 'append' or 'prepend', got {placement!r}")
    if distractors is not None and len(distractors) and distractors.dim != base_classes.dim:
        raise ShapeError("distractor and base class dimensions differ")
    pool = 0 if distractors is None else len(distractors)
    if steps[-1] > pool:
        raise InsufficientDistractorsError(f"step {steps[-1]} needs {steps[-1]} distractors, pool has {pool}")

    rng = np.random.Generator(np.random.PCG64(int(seed)))
    draw = rng.permutation(pool) if pool else np.zeros(0, dtype=np.int64)
    n_base = len(base_classes)
    base_names = list(base_classes.labels) if base_classes.labels else [f"class_{i}" for i in range(n_base)]

    result = SweepResult(seed=int(seed), steps=steps)
    result.distractor_source = f"{steps[-1]} of {pool} pooled distractors, seeded permutation, {placement}ed"
    for k in steps:
        chosen = draw[:k]
        if k:
            classes = np.vstack([base_classes.rows, distractors.rows[chosen]])
            d_names = [
                distractors.labels[i] if distractors.labels else f"distractor_{int(i)}" for i in chosen
            ]
        else:
            classes = base_classes.rows
            d_names = []
        if placement == "append":
            order = np.arange(n_base + k)
        else:
            order = np.concatenate([np.arange(n_base, n_base + k), np.arange(n_base)])
        acc = ConfusionAccumulator(base_names + d_names)
        for image in images:
            confusion_update(acc, image.gt, predict_image(image, classes, tie_break, order))
        value, _ = miou(acc, miou_mode, include_others)
        result.points.append((n_base + k, value))
    return result
