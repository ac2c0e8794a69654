import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def fusion_instances(count, seed=7, omegas=(0.3, 0.5, 0.7), max_n=32, max_d=64):
    """Seeded random fusion problems with rho(omega^2 A) < 1, with how many draws were rejected."""
    from ovsbench.gfa import FusionConfig, _operator, spectral_radius

    rng = np.random.default_rng(seed)
    out = []
    rejected = 0
    while len(out) < count:
        nc, nq, d = (int(x) for x in (rng.integers(1, max_n + 1), rng.integers(1, max_n + 1), rng.integers(1, max_d + 1)))
        # row scales vary so some draws land outside the convergent region
        fc = unit_rows(rng, nc, d) * rng.uniform(0.5, 3.0, size=(nc, 1))
        fq = unit_rows(rng, nq, d) * rng.uniform(0.5, 3.0, size=(nq, 1))
        omega = omegas[len(out) % len(omegas)]
        cfg = FusionConfig(lam=0.2, omega=omega, tolerance=1e-12, max_iters=200000)
        _, _, a = _operator(fq, fc, cfg)
        if spectral_radius(omega**2 * a) < 1.0:
            out.append((fq, fc, cfg))
        else:
            rejected += 1
    return out, rejected


def sweep_problem(seed, near=True, n_classes=5, n_images=8, pool=120, dim=32, size=8, noise=0.5):
    """In-memory sweep inputs: base classes, noisy gt-segment regions and a distractor pool.

    With ``near=False`` the base classes and regions live in the first
    ``n_classes`` coordinates and every distractor in the remaining ones, so
    distractor scores are exactly zero.
    """
    from ovsbench.embedding import EmbeddingSet
    from ovsbench.metrics import SegMask, regions_from_gt

    rng = np.random.default_rng(seed)
    if near:
        base = unit_rows(rng, n_classes, dim)
    else:
        base = np.zeros((n_classes, dim))
        base[:, :n_classes] = unit_rows(rng, n_classes, n_classes)
    images = []
    for k in range(n_images):
        gt = SegMask(rng.integers(0, n_classes, size=(size, size)).astype(np.uint16))
        emb = {}
        for c in np.unique(gt.labels):
            v = base[c] + noise * rng.standard_normal(dim) / np.sqrt(dim)
            if not near:
                v[n_classes:] = 0.0
            emb[int(c)] = v
        images.append(regions_from_gt(gt, emb, f"img_{k}"))
    if near:
        anchors = base[rng.integers(0, n_classes, size=pool)]
        dist = anchors + 0.15 * rng.standard_normal((pool, dim)) / np.sqrt(dim)
    else:
        dist = np.zeros((pool, dim))
        dist[:, n_classes:] = rng.standard_normal((pool, dim - n_classes))
    base_set = EmbeddingSet(base, [f"class_{i}" for i in range(n_classes)])
    return images, base_set, EmbeddingSet(dist, [f"d_{i}" for i in range(pool)])


def run_pipeline(root, seed=0, sigma1="0.8", sigma2="0.6"):
    """score -> build -> eval -> sweep on the toy corpus, with paths relative to ``root``.

    Returns the output paths (relative, so the caller should chdir into ``root``).
    """
    import json
    import os

    from ovsbench.bench import BenchManifest
    from ovsbench.cli import main
    from ovsbench.toy import make_corpus, make_predictions, make_sweep_inputs

    old = os.getcwd()
    os.chdir(root)
    try:
        make_corpus(".", seed)
        calls = [
            ["score", "--candidates", "candidates.emb1", "--train-vocab", "train.emb1", "--out", "scores.json",
             "--table", "stats.txt", "--figure", "scores.png", "--name", "toy", "--image-count", "30"],
            ["build", "--inventory", "inventory.jsonl", "--scores", "scores.json", "--sigma1", sigma1,
             "--sigma2", sigma2, "--masks-out", "gt", "--out", "manifest.json"],
        ]
        for argv in calls:
            assert main(argv) == 0, argv
        manifest = BenchManifest.from_dict(json.loads(Path("manifest.json").read_text()))
        make_predictions("gt", "pred", len(manifest.final_categories), seed)
        make_sweep_inputs(manifest, "gt", "sweep_in", seed)
        assert main(["eval", "--manifest", "manifest.json", "--pred-dir", "pred", "--gt-dir", "gt",
                     "--out", "eval.json", "--table", "eval.txt"]) == 0
        assert main(["sweep", "--regions", "sweep_in/regions.emb1", "--gt-dir", "gt",
                     "--base-classes", "sweep_in/base_classes.emb1", "--distractors", "sweep_in/distractors.emb1",
                     "--steps", "0,25,50,100", "--seed", str(seed), "--out", "sweep.csv"]) == 0
    finally:
        os.chdir(old)
    names = ["scores.json", "stats.txt", "manifest.json", "eval.json", "eval.txt", "sweep.csv", "sweep.json",
             "sweep.png", "scores.png"]
    return {n: Path(root) / n for n in names}


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
