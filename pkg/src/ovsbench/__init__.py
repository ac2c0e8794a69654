"""Embedding-space fusion, proxy mixing, benchmark curation and mIoU evaluation
for open-vocabulary segmentation."""

__version__ = "0.1.0"

from .embedding import EmbeddingSet, cosine_similarity, l2_normalize, mask_pool  # noqa: E402
from .gfa import (  # noqa: E402
    FusionConfig,
    FusionResult,
    compute_affinity,
    gfa_closed_form,
    gfa_iterate,
    gfa_unrolled,
    normalize_affinity,
    reduce_fused,
)
from .proxy import ProxyBatch, ProxyConfig, build_proxy_batch, mix_pair, proxy_loss, proxy_loss_grad, sample_alpha  # noqa: E402
from .bench import (  # noqa: E402
    BenchManifest,
    CategoryScore,
    filter_and_remap,
    image_similarity,
    score_categories,
    similarity_stats,
)
from .metrics import (  # noqa: E402
    ConfusionAccumulator,
    SegMask,
    class_count_sweep,
    confusion_update,
    miou,
    nearest_class_scorer,
)
from .storage import pseudo_encode, read_emb1, read_msk1, write_emb1, write_msk1  # noqa: E402
