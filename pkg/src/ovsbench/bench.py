"""Benchmark curation: score candidate categories against a training vocabulary,
filter images whose categories are all too close to training semantics, and
remap the remaining too-close categories to ``others``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .embedding import EmbeddingSet, cosine_matrix
from .errors import ConfigError, DataError, EmptyInputError, MissingLabelError, ShapeError, UnscoredCategoryError
from .metrics import OTHERS

logger = logging.getLogger(__name__)

MANIFEST_VERSION = "ovsbench-manifest/1"
KEPT = "kept"
FILTERED = "filtered"
REASON_SIGMA1 = "image_similarity_above_sigma1"
REASON_ALL_REMAPPED = "all_categories_remapped"


@dataclass(frozen=True)
class CategoryScore:
    name: str
    max_train_similarity: float


@dataclass
class ImageRecord:
    image_id: str
    mask_path: str
    categories: List[str]
    image_similarity: float = float("nan")
    decision: str = KEPT
    remapped: List[str] = field(default_factory=list)
    reason: Optional[str] = None

    def kept_categories(self) -> List[str]:
        gone = set(self.remapped)
        return [c for c in self.categories if c not in gone]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "mask_path": self.mask_path,
            "categories": list(self.categories),
            "image_similarity": self.image_similarity,
            "decision": self.decision,
            "remapped": {c: OTHERS for c in self.remapped},
            "reason": self.reason,
        }


@dataclass
class BenchManifest:
    sigma1: float
    sigma2: float
    records: List[ImageRecord]
    final_categories: List[str]
    remapped_categories: List[str]
    train_vocab_hash: str = ""
    excluded: List[str] = field(default_factory=list)
    source_vocabulary: List[str] = field(default_factory=list)
    status: str = "ok"
    version: str = MANIFEST_VERSION
    config: dict = field(default_factory=dict)

    @property
    def kept(self) -> List[ImageRecord]:
        return [r for r in self.records if r.decision == KEPT]

    def kept_inventory(self) -> List[dict]:
        return [{"image_id": r.image_id, "mask_path": r.mask_path, "categories": list(r.categories)} for r in self.kept]

    def class_ids(self) -> Dict[str, int]:
        """Evaluation class id per final category, in manifest order."""
        return {name: i for i, name in enumerate(self.final_categories)}

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "train_vocab_hash": self.train_vocab_hash,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "status": self.status,
            "excluded": list(self.excluded),
            "source_vocabulary": list(self.source_vocabulary),
            "final_categories": list(self.final_categories),
            "remapped_categories": list(self.remapped_categories),
            "records": [r.to_dict() for r in self.records],
            "counts": {
                "images": len(self.records),
                "kept": len(self.kept),
                "filtered": len(self.records) - len(self.kept),
            },
            "config": self.config,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "BenchManifest":
        records = [
            ImageRecord(
                image_id=r["image_id"],
                mask_path=r["mask_path"],
                categories=list(r["categories"]),
                image_similarity=float(r["image_similarity"]),
                decision=r["decision"],
                remapped=[c for c in r["categories"] if c in r.get("remapped", {})],
                reason=r.get("reason"),
            )
            for r in d["records"]
        ]
        return cls(
            sigma1=float(d["sigma1"]),
            sigma2=float(d["sigma2"]),
            records=records,
            final_categories=list(d["final_categories"]),
            remapped_categories=list(d.get("remapped_categories", [])),
            train_vocab_hash=d.get("train_vocab_hash", ""),
            excluded=list(d.get("excluded", [])),
            source_vocabulary=list(d.get("source_vocabulary", [])),
            status=d.get("status", "ok"),
            version=d.get("version", MANIFEST_VERSION),
            config=dict(d.get("config", {})),
        )


@dataclass(frozen=True)
class SimilarityStats:
    mean: float
    median: float
    min: float
    max: float
    class_count: int
    image_count: int = 0

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "min": self.min,
            "max": self.max,
            "class_count": self.class_count,
            "image_count": self.image_count,
        }

    def table(self, name: str = "") -> str:
        headers = ["Dataset", "Cls Num.", "Img Num.", "Mean Sim.", "Median Sim.", "Min Sim.", "Max Sim."]
        values = [
            name or "-",
            str(self.class_count),
            str(self.image_count),
            f"{self.mean:.4f}",
            f"{self.median:.4f}",
            f"{self.min:.4f}",
            f"{self.max:.4f}",
        ]
        widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
        head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        return head + "\n" + row + "\n"


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise DataError(f"cannot serialize non-finite value {x!r}")
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def canonical_json(obj, indent: int = 2) -> str:
    """Sorted-key JSON with every float written with exactly six decimals."""

    def emit(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, (float, np.floating)):
            return _format_float(float(o))
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, str):
            return json.dumps(o, ensure_ascii=False)
        if isinstance(o, Mapping):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {emit(o[k], level + 1)}" for k in sorted(o)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            return "[\n" + ",\n".join(pad + emit(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return emit(obj, 0) + "\n"


def vocab_hash(vocab: EmbeddingSet) -> str:
    """SHA-256 over the float32 rows and the labels of a vocabulary."""
    h = hashlib.sha256()
    h.update(np.asarray(vocab.rows, dtype="<f4").tobytes())
    h.update(json.dumps(list(vocab.labels or [])).encode("utf-8"))
    return "sha256:" + h.hexdigest()


def score_categories(candidates: EmbeddingSet, train_vocab: EmbeddingSet) -> List[CategoryScore]:
    """Maximum cosine similarity of each candidate against every training category."""
    if candidates.labels is None:
        raise MissingLabelError("candidate vocabulary has no labels")
    if train_vocab.labels is None:
        raise MissingLabelError("training vocabulary has no labels")
    if candidates.dim != train_vocab.dim:
        raise ShapeError(f"candidate dimension {candidates.dim} != training dimension {train_vocab.dim}")
    if len(train_vocab) == 0:
        raise EmptyInputError("training vocabulary is empty")
    if len(candidates) == 0:
        return []
    best = cosine_matrix(candidates.rows, train_vocab.rows).max(axis=1)
    return [CategoryScore(name, float(s)) for name, s in zip(candidates.labels, best)]


def _score_map(scores: Union[Mapping[str, float], Iterable[CategoryScore]]) -> Dict[str, float]:
    if isinstance(scores, Mapping):
        return {str(k): float(v) for k, v in scores.items()}
    return {s.name: float(s.max_train_similarity) for s in scores}


def image_similarity(categories: Sequence[str], scores) -> float:
    """Minimum training similarity over the categories present in an image."""
    table = _score_map(scores)
    if not categories:
        raise EmptyInputError("image lists no categories")
    missing = [c for c in categories if c not in table]
    if missing:
        raise UnscoredCategoryError(f"categories without a score: {missing}")
    return min(table[c] for c in categories)


def _as_record(r) -> ImageRecord:
    if isinstance(r, ImageRecord):
        return ImageRecord(r.image_id, r.mask_path, list(r.categories))
    try:
        return ImageRecord(str(r["image_id"]), str(r.get("mask_path", "")), [str(c) for c in r["categories"]])
    except KeyError as exc:
        raise DataError(f"inventory record missing field {exc.args[0]!r}") from exc


def filter_and_remap(
    records,
    scores,
    sigma1: float = 0.8,
    sigma2: float = 0.8,
    exclude: Sequence[str] = (),
    train_vocab_hash: str = "",
    config: Optional[dict] = None,
) -> BenchManifest:
    """Apply the image filter and the ``others`` remap.

    An image is filtered when its similarity exceeds ``sigma1``. In the
    remaining images, each category scoring above ``sigma2`` (or listed in
    ``exclude``) is remapped to ``others``; an image left with nothing but
    ``others`` is dropped as well.
    """
    if not (math.isfinite(sigma1) and math.isfinite(sigma2)):
        raise ConfigError("sigma1 and sigma2 must be finite")
    if sigma2 > sigma1:
        raise ConfigError(f"sigma2 ({sigma2}) must not exceed sigma1 ({sigma1})")
    table = _score_map(scores)
    source = list(scores.keys()) if isinstance(scores, Mapping) else [s.name for s in scores]
    excluded = set(exclude)
    out: List[ImageRecord] = []
    remapped_all = set()
    for raw in records:
        rec = _as_record(raw)
        rec.image_similarity = image_similarity(rec.categories, table)
        if rec.image_similarity > sigma1:
            rec.decision, rec.reason = FILTERED, REASON_SIGMA1
        else:
            rec.remapped = [c for c in rec.categories if table[c] > sigma2 or c in excluded]
            remapped_all.update(rec.remapped)
            if not rec.kept_categories():
                rec.decision, rec.reason = FILTERED, REASON_ALL_REMAPPED
                logger.info("dropping %s: every category remapped to %s", rec.image_id, OTHERS)
        out.append(rec)

    final = sorted({c for r in out if r.decision == KEPT for c in r.kept_categories()})
    status = "ok"
    if not any(r.decision == KEPT for r in out):
        status = "empty_benchmark"
        logger.warning("no images survived filtering (sigma1=%s, sigma2=%s)", sigma1, sigma2)
    return BenchManifest(
        sigma1=float(sigma1),
        sigma2=float(sigma2),
        records=out,
        final_categories=final + [OTHERS],
        remapped_categories=sorted(remapped_all),
        train_vocab_hash=train_vocab_hash,
        excluded=sorted(excluded),
        source_vocabulary=source,
        status=status,
        config=dict(config or {}),
    )


def similarity_stats(scores, image_count: int = 0) -> SimilarityStats:
    values = np.array(list(_score_map(scores).values()) if isinstance(scores, Mapping)
                      else [s.max_train_similarity for s in scores], dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError("no scores to summarize")
    return SimilarityStats(
        mean=float(values.mean()),
        median=float(np.median(values)),
        min=float(values.min()),
        max=float(values.max()),
        class_count=int(values.size),
        image_count=int(image_count),
    )


def read_inventory(path) -> List[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return rows


def source_to_final_ids(manifest: BenchManifest) -> np.ndarray:
    """Lookup table from source-vocabulary ids to manifest class ids.

    Categories that did not survive as themselves map to ``others``.
    """
    ids = manifest.class_ids()
    others = ids[OTHERS]
    return np.array([ids.get(c, others) for c in manifest.source_vocabulary], dtype=np.int64)


def remap_mask(mask, manifest: BenchManifest):
    """Translate a source-vocabulary mask into manifest class ids, keeping ignore pixels."""
    from .metrics import IGNORE_VALUE, SegMask

    lut = source_to_final_ids(manifest)
    labels = np.asarray(mask.labels)
    valid = labels != IGNORE_VALUE
    if np.any(labels[valid] >= lut.size):
        bad = sorted(set(labels[valid][labels[valid] >= lut.size].tolist()))
        raise DataError(f"mask ids outside the source vocabulary: {bad}")
    out = np.full(labels.shape, IGNORE_VALUE, dtype=np.uint16)
    out[valid] = lut[labels[valid]]
    return SegMask(out)
