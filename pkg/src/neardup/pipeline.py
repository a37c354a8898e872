"""Static end-to-end run: index, search, select, closure, cut.

Clusters every image of one embedding set against itself. Images that never
reach a passing edge come back as singleton clusters, so the output is a
partition. Deterministic for fixed config + seed + input: same clusters,
byte-identical cluster file.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import MlpModel, TrainConfig, load_model, predict_rows, train
from .clustering import NearDupeCluster, clusters_to_tsv, k_cut, transitive_closure
from .config import PipelineConfig
from .corpus import GroundTruth, generate_labels
from .embeddings import EmbeddingSet, LshConfig, select_bits
from .errors import DataError
from .index import build_index
from .metrics import pairwise_precision_recall, rand_index
from .search import batch_search, recall_at_distance
from .util import atomic_write_text

log = logging.getLogger("neardup")


@dataclass
class StaticRunResult:
    clusters: list
    lsh_config: LshConfig
    edge_count: int = 0
    candidate_pairs: int = 0
    timings: dict = field(default_factory=dict)

    def assignment(self) -> dict:
        out = {}
        for c in self.clusters:
            for i in c.image_ids:
                out[i] = c.cluster_id
        return out


def resolve_lsh_config(config: PipelineConfig, embeddings: EmbeddingSet) -> LshConfig:
    """Materialize the LshConfig, picking bits by variance when unset.

    The selection sample is the first lsh.select_sample stored rows, so the
    choice is deterministic for a given embedding set.
    """
    lsh = config.lsh
    if embeddings.d != lsh.d:
        raise DataError(f"embeddings have d={embeddings.d}, config expects {lsh.d}")
    if lsh.selected_bits is not None:
        bits = [int(b) for b in lsh.selected_bits]
    else:
        sample = embeddings.bits_matrix()[: lsh.select_sample]
        bits = select_bits(sample, lsh.d, lsh.m)
    return LshConfig(d=lsh.d, selected_bits=tuple(bits), term_bits=lsh.term_bits)


def static_clusters(
    embeddings: EmbeddingSet,
    model: MlpModel,
    config: PipelineConfig,
    lsh_config: LshConfig = None,
) -> StaticRunResult:
    """Run the full static pipeline over one embedding set."""
    timings = {}
    if len(embeddings) == 0:
        return StaticRunResult([], lsh_config, timings={})

    t0 = time.perf_counter()
    if lsh_config is None:
        lsh_config = resolve_lsh_config(config, embeddings)
    index = build_index(embeddings, lsh_config)
    timings["index"] = time.perf_counter() - t0
    log.info("indexed %d images, %d postings", len(embeddings), index.posting_count())

    t0 = time.perf_counter()
    hits = batch_search(embeddings, index, k=config.search.k, min_overlap=config.search.min_overlap)
    n_hits = sum(len(v) for v in hits.values())
    timings["search"] = time.perf_counter() - t0
    log.info("search produced %d candidate pairs", n_hits)

    # score each unordered candidate pair once; scores are symmetric
    t0 = time.perf_counter()
    pairs = set()
    for q, hlist in hits.items():
        for h in hlist:
            a, b = (q, h.index_image) if q < h.index_image else (h.index_image, q)
            pairs.add((a, b))
    pairs = sorted(pairs)
    edges = []
    if pairs:
        rows_a = embeddings.rows_of([p[0] for p in pairs])
        rows_b = embeddings.rows_of([p[1] for p in pairs])
        scores = predict_rows(model, embeddings, rows_a, rows_b)
        keep = scores >= config.classifier.threshold
        edges = [pairs[i] for i in np.nonzero(keep)[0]]
    timings["select"] = time.perf_counter() - t0
    log.info("classifier kept %d of %d pairs", len(edges), len(pairs))

    t0 = time.perf_counter()
    groups = transitive_closure(edges)
    timings["closure"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    clusters = k_cut(groups, model, embeddings, config.kcut.threshold, seed=config.seed)
    clustered = {i for c in clusters for i in c.image_ids}
    for image_id in embeddings.ids:
        image_id = int(image_id)
        if image_id not in clustered:
            clusters.append(NearDupeCluster(image_id, image_id, []))
    clusters.sort(key=lambda c: c.cluster_id)
    timings["cut"] = time.perf_counter() - t0
    log.info("%d clusters (%d non-singleton)", len(clusters), sum(1 for c in clusters if c.size > 1))

    return StaticRunResult(
        clusters,
        lsh_config,
        edge_count=len(edges),
        candidate_pairs=len(pairs),
        timings=timings,
    )


def run_full(embeddings: EmbeddingSet, model: MlpModel, config: PipelineConfig, clusters_path):
    """Static run that persists its cluster table; returns (result, report).

    The output file is written atomically. An empty embedding set is a
    successful run producing an empty file.
    """
    result = static_clusters(embeddings, model, config)
    atomic_write_text(clusters_path, clusters_to_tsv(result.clusters))
    report = {
        "images": len(embeddings),
        "clusters": len(result.clusters),
        "non_singleton_clusters": sum(1 for c in result.clusters if c.size > 1),
        "candidate_pairs": result.candidate_pairs,
        "edges": result.edge_count,
        "timings": {k: round(v, 6) for k, v in result.timings.items()},
    }
    return result, report


def train_default_model(
    embeddings: EmbeddingSet,
    truth: GroundTruth,
    config: PipelineConfig,
    lsh_config: LshConfig = None,
):
    """Train a classifier from ground truth; used when no model file exists.

    Label volume scales with corpus size, 14% positive like the synthetic
    label generator's default split.
    """
    if lsh_config is None:
        lsh_config = resolve_lsh_config(config, embeddings)
    n = len(embeddings)
    total = min(60000, max(2000, 2 * n))
    available = int(sum(s * (s - 1) // 2 for s in truth.group_sizes()))
    if available == 0:
        raise DataError("corpus has no duplicate pairs to train on")
    cross = n * (n - 1) // 2 - available
    if cross == 0:
        raise DataError("corpus has no cross-group pairs to train on")
    n_pos = min(max(1, round(total * 0.14)), available)
    n_neg = min(max(1, total - n_pos), cross)
    pairs = generate_labels(
        truth, embeddings, n_pos, n_neg, seed=config.seed, lsh_config=lsh_config
    )
    cls = config.classifier
    train_config = TrainConfig(
        learning_rate=cls.learning_rate,
        beta1=cls.beta1,
        beta2=cls.beta2,
        eps=cls.eps,
        batch_size=cls.batch_size,
        epochs=cls.epochs,
        seed=config.seed,
        hidden=tuple(cls.hidden),
    )
    return train(pairs, embeddings, train_config), len(pairs)


def _purity(predicted: dict, truth_map: dict) -> float:
    by_cluster = {}
    for image_id, cluster_id in predicted.items():
        by_cluster.setdefault(cluster_id, []).append(image_id)
    correct = 0
    for members in by_cluster.values():
        counts = {}
        for image_id in members:
            g = truth_map[image_id]
            counts[g] = counts.get(g, 0) + 1
        correct += max(counts.values())
    return correct / len(predicted)


def evaluate_pipeline(
    embeddings: EmbeddingSet,
    truth: GroundTruth,
    config: PipelineConfig,
    model: MlpModel = None,
    distance_threshold: int = 8,
) -> dict:
    """Cluster a labelled corpus and score the result against ground truth.

    When no model is passed and the config names no model file, one is
    trained on the spot from the ground truth.
    """
    if len(embeddings) == 0:
        raise DataError("evaluation needs a non-empty corpus")
    lsh_config = resolve_lsh_config(config, embeddings)

    training = None
    if model is None:
        if config.classifier.model_path:
            model = load_model(config.classifier.model_path)
        else:
            t0 = time.perf_counter()
            result, n_pairs = train_default_model(embeddings, truth, config, lsh_config)
            model = result.model
            training = {
                "pairs": n_pairs,
                "epoch_losses": [round(x, 6) for x in result.epoch_losses],
                "validation": result.validation,
                "seconds": round(time.perf_counter() - t0, 3),
            }
            log.info("trained model on %d pairs in %.1fs", n_pairs, training["seconds"])

    run = static_clusters(embeddings, model, config, lsh_config=lsh_config)
    predicted = run.assignment()
    truth_map = truth.assignment()
    precision, recall = pairwise_precision_recall(predicted, truth_map)

    group_vec = np.array([truth_map[int(i)] for i in embeddings.ids], dtype=np.uint64)
    r_at_d = recall_at_distance(
        embeddings, group_vec, lsh_config, distance_threshold,
        min_overlap=config.search.min_overlap,
    )

    histogram = {}
    for c in run.clusters:
        histogram[c.size] = histogram.get(c.size, 0) + 1

    return {
        "images": len(embeddings),
        "clusters": len(run.clusters),
        "pairwise_precision": precision,
        "pairwise_recall": recall,
        "rand_index": rand_index(predicted, truth_map),
        "purity": _purity(predicted, truth_map),
        "recall_at_distance": {"distance": distance_threshold, "value": r_at_d},
        "candidate_pairs": run.candidate_pairs,
        "edges": run.edge_count,
        "cluster_size_histogram": {str(k): histogram[k] for k in sorted(histogram)},
        "timings": {k: round(v, 6) for k, v in run.timings.items()},
        "training": training,
    }
