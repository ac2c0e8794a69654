import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ovsbench.bench import (
    FILTERED,
    KEPT,
    BenchManifest,
    CategoryScore,
    canonical_json,
    filter_and_remap,
    image_similarity,
    remap_mask,
    score_categories,
    similarity_stats,
)
from ovsbench.embedding import EmbeddingSet
from ovsbench.errors import ConfigError, EmptyInputError, MissingLabelError, UnscoredCategoryError
from ovsbench.metrics import IGNORE_VALUE, OTHERS, SegMask


def _records(layout):
    return [{"image_id": k, "mask_path": f"{k}.msk1", "categories": cats} for k, cats in layout.items()]


def test_score_examples():
    train = EmbeddingSet([[1, 0, 0], [0, 1, 0]], ["t0", "t1"])
    cands = EmbeddingSet([[0, 2, 0], [0, 0, 5]], ["same", "orth"])
    scores = score_categories(cands, train)
    assert [s.name for s in scores] == ["same", "orth"]
    assert scores[0].max_train_similarity == pytest.approx(1.0)
    assert scores[1].max_train_similarity == pytest.approx(0.0)


def test_score_matches_double_loop(rng):
    cands = EmbeddingSet(rng.standard_normal((5, 6)), [f"c{i}" for i in range(5)])
    train = EmbeddingSet(rng.standard_normal((10, 6)), [f"t{i}" for i in range(10)])
    got = [s.max_train_similarity for s in score_categories(cands, train)]
    np.testing.assert_allclose(got, oracles.max_scores(cands.rows.tolist(), train.rows.tolist()), atol=1e-12)


def test_score_equivariance(rng):
    cands = EmbeddingSet(rng.standard_normal((6, 4)), [f"c{i}" for i in range(6)])
    train = EmbeddingSet(rng.standard_normal((7, 4)), [f"t{i}" for i in range(7)])
    base = {s.name: s.max_train_similarity for s in score_categories(cands, train)}
    perm = rng.permutation(6)
    shuffled = score_categories(cands.subset(perm), train.subset(rng.permutation(7)))
    assert [s.name for s in shuffled] == [f"c{i}" for i in perm]
    for s in shuffled:
        assert s.max_train_similarity == pytest.approx(base[s.name], abs=1e-15)


def test_score_requires_labels(rng):
    with pytest.raises(MissingLabelError):
        score_categories(EmbeddingSet(np.eye(2)), EmbeddingSet(np.eye(2), ["a", "b"]))


def test_image_similarity():
    scores = {"a": 0.9, "b": 0.3}
    assert image_similarity(["a"], scores) == 0.9
    assert image_similarity(["a", "b"], scores) == 0.3
    with pytest.raises(UnscoredCategoryError):
        image_similarity(["a", "z"], scores)


def test_image_similarity_scan_min(rng):
    names = [f"c{i}" for i in range(12)]
    scores = dict(zip(names, rng.uniform(-1, 1, 12)))
    for _ in range(20):
        cats = list(rng.choice(names, size=rng.integers(1, 6), replace=False))
        expected = scores[cats[0]]
        for c in cats[1:]:
            expected = scores[c] if scores[c] < expected else expected
        assert image_similarity(cats, scores) == expected


def test_all_high_scores_filter_everything():
    recs = _records({"i0": ["a"], "i1": ["a", "b"]})
    m = filter_and_remap(recs, {"a": 1.0, "b": 1.0}, 0.8, 0.8)
    assert not m.kept and m.status == "empty_benchmark"
    assert all(r.reason == "image_similarity_above_sigma1" for r in m.records)
    assert m.final_categories == [OTHERS]


def test_worked_remap_example():
    m = filter_and_remap(_records({"img": ["low", "high"]}), {"low": 0.5, "high": 0.9}, 0.8, 0.8)
    (rec,) = m.records
    assert rec.decision == KEPT and rec.image_similarity == 0.5
    assert rec.remapped == ["high"]
    assert m.final_categories == ["low", OTHERS]
    expected = oracles.bench_rules(_records({"img": ["low", "high"]}), {"low": 0.5, "high": 0.9}, 0.8, 0.8)
    assert expected["img"] == (0.5, "kept", ["high"])


def test_unit_thresholds_keep_everything(rng):
    names = [f"c{i}" for i in range(8)]
    scores = dict(zip(names, rng.uniform(-1, 1, 8)))
    recs = _records({f"i{k}": list(rng.choice(names, 3, replace=False)) for k in range(10)})
    m = filter_and_remap(recs, scores, 1.0, 1.0)
    assert all(r.decision == KEPT and not r.remapped for r in m.records)


def test_sigma_order_enforced():
    with pytest.raises(ConfigError):
        filter_and_remap(_records({"i": ["a"]}), {"a": 0.1}, 0.5, 0.6)


def test_all_remapped_image_dropped():
    m = filter_and_remap(_records({"i": ["a", "b"]}), {"a": 0.7, "b": 0.75}, 0.8, 0.6)
    (rec,) = m.records
    assert rec.decision == FILTERED and rec.reason == "all_categories_remapped"
    assert rec.remapped == ["a", "b"]


def test_exclusion_list():
    m = filter_and_remap(_records({"i": ["a", "b"]}), {"a": 0.1, "b": 0.2}, 0.8, 0.8, exclude=["b"])
    assert m.records[0].remapped == ["b"] and m.final_categories == ["a", OTHERS]
    assert m.excluded == ["b"]


def _random_problem(seed):
    rng = np.random.default_rng(seed)
    names = [f"c{i}" for i in range(10)]
    scores = {n: float(s) for n, s in zip(names, rng.uniform(0.0, 1.0, 10))}
    recs = _records({f"i{k:02d}": sorted(rng.choice(names, rng.integers(1, 4), replace=False).tolist()) for k in range(30)})
    return recs, scores


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_matches_rule_oracle(seed, s_a, s_b):
    recs, scores = _random_problem(seed)
    s1, s2 = max(s_a, s_b), min(s_a, s_b)
    m = filter_and_remap(recs, scores, s1, s2)
    expected = oracles.bench_rules(recs, scores, s1, s2)
    for r in m.records:
        assert (r.image_similarity, r.decision, sorted(r.remapped)) == expected[r.image_id]
    # kept categories all appear in the final list and nothing is both kept and remapped
    finals = set(m.final_categories)
    for r in m.kept:
        assert set(r.kept_categories()) <= finals
        assert any(scores[c] <= s2 for c in r.kept_categories())
    assert not (set(m.remapped_categories) & (finals - {OTHERS}))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_threshold_monotonicity(seed):
    recs, scores = _random_problem(seed)
    grid = np.linspace(0.2, 1.0, 5)
    for s2 in grid:
        kept = [len(filter_and_remap(recs, scores, s1, s2).kept) for s1 in grid if s1 >= s2]
        assert all(b >= a for a, b in zip(kept, kept[1:]))
    for s1 in grid:
        remaps = [len(filter_and_remap(recs, scores, s1, s2).remapped_categories) for s2 in grid if s2 <= s1]
        assert all(b <= a for a, b in zip(remaps, remaps[1:]))


def test_idempotence():
    recs, scores = _random_problem(5)
    m = filter_and_remap(recs, scores, 0.7, 0.5)
    again = filter_and_remap(m.kept_inventory(), scores, 0.7, 0.5)
    assert [r.to_dict() for r in again.records] == [r.to_dict() for r in m.kept]
    assert again.final_categories == m.final_categories


def test_similarity_stats():
    s = similarity_stats([CategoryScore("a", 0.2), CategoryScore("b", 0.6), CategoryScore("c", 0.8)])
    assert s.mean == pytest.approx(0.5333, abs=1e-4)
    assert (s.median, s.min, s.max, s.class_count) == (0.6, 0.2, 0.8, 3)
    even = similarity_stats({"a": 0.1, "b": 0.2, "c": 0.4, "d": 0.9})
    assert even.median == pytest.approx(0.3)
    flat = similarity_stats({"a": 0.42, "b": 0.42})
    assert flat.mean == flat.median == flat.min == flat.max == 0.42
    with pytest.raises(EmptyInputError):
        similarity_stats([])


def test_stats_table_column_order():
    table = similarity_stats({"a": 0.2, "b": 0.6}).table("toy")
    head = table.splitlines()[0].split()
    assert " ".join(head) == "Dataset Cls Num. Img Num. Mean Sim. Median Sim. Min Sim. Max Sim."
    assert "0.4000" in table


def test_canonical_json():
    text = canonical_json({"b": 1.0, "a": [0.1234567, -0.0000001, True, None, 3], "c": {}})
    assert text.index('"a"') < text.index('"b"')
    assert "0.123457" in text and "1.000000" in text and "-0.000000" not in text
    assert json.loads(text)["a"][2] is True


def test_manifest_json_roundtrip():
    recs, scores = _random_problem(2)
    m = filter_and_remap(recs, scores, 0.8, 0.6, train_vocab_hash="sha256:x")
    back = BenchManifest.from_dict(json.loads(m.to_json()))
    assert back.to_json() == m.to_json()
    assert back.source_vocabulary == list(scores)


def test_remap_mask():
    m = filter_and_remap(_records({"i": ["lo", "hi"]}), {"lo": 0.1, "hi": 0.95, "gone": 0.2}, 0.9, 0.9)
    src = SegMask(np.array([[0, 1], [2, IGNORE_VALUE]], dtype=np.uint16))
    out = remap_mask(src, m)
    ids = m.class_ids()
    # "gone" never appears in a kept image, so it also lands in others
    assert out.labels.tolist() == [[ids["lo"], ids[OTHERS]], [ids[OTHERS], IGNORE_VALUE]]


# Reference OpenBench profile. It needs the real category lists and encoder
# embeddings to reproduce, so it is only used to check the table layout.
OPENBENCH_PROFILE = dict(class_count=286, image_count=6056, mean=0.6142, median=0.6452, min=0.2608, max=0.7947)


def test_reference_profile_renders():
    from ovsbench.bench import SimilarityStats

    row = SimilarityStats(**OPENBENCH_PROFILE).table("OpenBench").splitlines()[1].split()
    assert row == ["OpenBench", "286", "6056", "0.6142", "0.6452", "0.2608", "0.7947"]
