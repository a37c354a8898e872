"""Command line front end: one subcommand per stage plus end-to-end runs.

Every output file is written atomically (temp file + rename), so an aborted
command never leaves a partial artifact behind. Failures print the failing
stage to stderr and exit 1. Logging goes to stderr; -v raises verbosity.
"""

import argparse
import json
import logging
import sys

from .classifier import (
    TrainConfig,
    load_model,
    predict_pairs,
    save_model,
    train,
)
from .clustering import clusters_to_tsv, k_cut, read_clusters_tsv, transitive_closure
from .config import PipelineConfig
from .corpus import (
    SyntheticCorpusSpec,
    generate_corpus,
    load_corpus,
    read_labels_csv,
    save_corpus,
)
from .embeddings import EmbeddingSet
from .errors import DataError, NearDupError
from .incremental import assignments_to_tsv, run_incremental
from .index import build_index, index_size_bytes, load_index, serialize_index
from .pipeline import resolve_lsh_config, run_full
from .search import SearchHit, SearchResultBatch, batch_search
from .selection import ClusterHeadEntry, emit_augmentation_labels, select_candidates, select_edges
from .util import atomic_write_bytes, atomic_write_json, atomic_write_text, set_thread_cap

log = logging.getLogger("neardup")


def _load_config(path) -> PipelineConfig:
    return PipelineConfig.load(path) if path else PipelineConfig()


def _load_embeddings(paths) -> EmbeddingSet:
    sets = [EmbeddingSet.load(p) for p in paths]
    merged = sets[0]
    for s in sets[1:]:
        merged = merged.concat(s)
    return merged


# -- subcommands --------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    dupes = None
    if args.dupes_dist:
        try:
            raw = json.loads(args.dupes_dist)
            dupes = {int(k): float(v) for k, v in raw.items()}
        except (ValueError, AttributeError) as exc:
            raise DataError(f"--dupes-dist must be a JSON object of count: weight: {exc}")
    kwargs = dict(
        seed=args.seed,
        n_base=args.n_base,
        d=args.d,
        flip_min=args.flip_min,
        flip_max=args.flip_max,
    )
    if dupes is not None:
        kwargs["dupes_per_base"] = dupes
    spec = SyntheticCorpusSpec(**kwargs)
    embeddings, truth = generate_corpus(spec)
    save_corpus(embeddings, truth, args.out, spec)
    print(f"{len(embeddings)} images in {len(truth.groups())} groups -> {args.out}")
    return 0


def cmd_build_index(args) -> int:
    embeddings = _load_embeddings(args.embeddings)
    config = _load_config(args.config)
    lsh = resolve_lsh_config(config, embeddings)
    if args.heads:
        clusters = read_clusters_tsv(args.heads)
        head_ids = sorted(c.head for c in clusters)
        index = build_index(embeddings.subset(head_ids), lsh, head_only=True)
    else:
        index = build_index(embeddings, lsh)
    atomic_write_bytes(args.out, serialize_index(index))
    sizes = index_size_bytes(index)
    print(
        f"{len(index.dictionary)} images, {index.posting_count()} postings, "
        f"{sizes.serialized} bytes ({sizes.payload} payload, {sizes.baseline} uncompressed) -> {args.out}"
    )
    return 0


def cmd_search(args) -> int:
    index = load_index(args.index)
    queries = _load_embeddings(args.queries)
    results = batch_search(queries, index, k=args.k, min_overlap=args.min_overlap)
    lines = []
    total = 0
    for q in sorted(results):
        for h in results[q]:
            lines.append(f"{q}\t{h.index_image}\t{h.overlap}\t{h.jaccard:.6f}")
            total += 1
    atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    print(f"{total} hits for {len(queries)} queries -> {args.out}")
    return 0


def cmd_train_classifier(args) -> int:
    embeddings = _load_embeddings(args.embeddings)
    config = _load_config(args.config)
    pairs = read_labels_csv(args.labels)
    cls = config.classifier
    train_config = TrainConfig(
        learning_rate=cls.learning_rate,
        beta1=cls.beta1,
        beta2=cls.beta2,
        eps=cls.eps,
        batch_size=cls.batch_size,
        epochs=args.epochs if args.epochs is not None else cls.epochs,
        seed=args.seed if args.seed is not None else config.seed,
        hidden=tuple(cls.hidden),
    )
    result = train(pairs, embeddings, train_config)
    save_model(result.model, args.out)
    report = {
        "pairs": len(pairs),
        "epoch_losses": [round(x, 6) for x in result.epoch_losses],
        "validation": result.validation,
        "threshold": result.model.threshold,
    }
    if args.report:
        atomic_write_json(args.report, report)
    print(
        f"trained on {len(pairs)} pairs, final loss {result.epoch_losses[-1]:.6f}, "
        f"threshold {result.model.threshold:.6f} -> {args.out}"
    )
    return 0


def _read_pairs_csv(path) -> list:
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id_a", "id_b"]:
            raise DataError(f"{path}: expected header id_a,id_b")
        return [(int(row[0]), int(row[1])) for row in reader if row]


def cmd_classify(args) -> int:
    model = load_model(args.model)
    embeddings = _load_embeddings(args.embeddings)
    pairs = _read_pairs_csv(args.pairs)
    scores = predict_pairs(model, pairs, embeddings)
    body = "id_a,id_b,score\n" + "".join(
        f"{a},{b},{s:.9f}\n" for (a, b), s in zip(pairs, scores)
    )
    atomic_write_text(args.out, body)
    print(f"scored {len(pairs)} pairs -> {args.out}")
    return 0


def _read_hits_tsv(path) -> SearchResultBatch:
    results = SearchResultBatch()
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{ln}: expected 4 tab-separated fields")
            q, m, overlap, jac = parts
            results.setdefault(int(q), []).append(
                SearchHit(int(m), int(overlap), float(jac))
            )
    return results


def cmd_select(args) -> int:
    model = load_model(args.model)
    embeddings = _load_embeddings(args.embeddings)
    hits = _read_hits_tsv(args.hits)
    if args.threshold is None:
        args.threshold = model.threshold
    if args.clusters:
        clusters = read_clusters_tsv(args.clusters)
        heads = {}
        for c in clusters:
            aug = sorted(c.members, key=lambda ms: (-ms[1], ms[0]))[: args.k_aug]
            heads[c.head] = ClusterHeadEntry(c.cluster_id, c.head, tuple(aug))
        matches = select_candidates(hits, heads, model, embeddings, args.threshold, k_aug=args.k_aug)
        atomic_write_text(
            args.out,
            "".join(
                f"{m.query}\t{m.cluster_id}\t{m.matched_via}\t{m.score:.6f}\n" for m in matches
            ),
        )
        print(f"{len(matches)} matched queries -> {args.out}")
        if args.labels_out:
            labels = emit_augmentation_labels(matches, heads, model, embeddings, args.threshold)
            atomic_write_text(
                args.labels_out,
                "id_a,id_b,label\n" + "".join(f"{a},{b},{l}\n" for a, b, l in labels),
            )
            print(f"{len(labels)} augmentation labels -> {args.labels_out}")
    else:
        edges = select_edges(hits, model, embeddings, args.threshold)
        atomic_write_text(args.out, "".join(f"{a}\t{b}\t{s:.6f}\n" for a, b, s in edges))
        print(f"{len(edges)} edges -> {args.out}")
    return 0


def _read_edges_tsv(path) -> list:
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise DataError(f"{path}:{ln}: expected at least 2 tab-separated fields")
            edges.append((int(parts[0]), int(parts[1])))
    return edges


def cmd_cluster(args) -> int:
    model = load_model(args.model)
    embeddings = _load_embeddings(args.embeddings)
    if args.threshold is None:
        args.threshold = model.threshold
    edges = _read_edges_tsv(args.edges)
    groups = transitive_closure(edges)
    clusters = k_cut(groups, model, embeddings, args.threshold, seed=args.seed)
    atomic_write_text(args.out, clusters_to_tsv(clusters))
    clustered = sum(c.size for c in clusters)
    print(f"{len(clusters)} clusters over {clustered} images -> {args.out}")
    return 0


def cmd_run(args) -> int:
    embeddings = _load_embeddings(args.embeddings)
    model = load_model(args.model)
    config = _load_config(args.config)
    result, report = run_full(embeddings, model, config, args.out)
    if args.report:
        atomic_write_json(args.report, report)
    print(
        f"{report['images']} images -> {report['clusters']} clusters "
        f"({report['non_singleton_clusters']} non-singleton) -> {args.out}"
    )
    return 0


def cmd_incremental(args) -> int:
    new_embeddings = _load_embeddings(args.new)
    model = load_model(args.model)
    config = _load_config(args.config)
    store, assignments, labels = run_incremental(args.store, new_embeddings, model, config)
    if args.assignments:
        atomic_write_text(args.assignments, assignments_to_tsv(assignments))
    if args.labels_out:
        atomic_write_text(
            args.labels_out,
            "id_a,id_b,label\n" + "".join(f"{a},{b},{l}\n" for a, b, l in labels),
        )
    by_prov = {}
    for _, _, prov in assignments:
        by_prov[prov] = by_prov.get(prov, 0) + 1
    detail = ", ".join(f"{k}={v}" for k, v in sorted(by_prov.items())) or "empty batch"
    print(
        f"batch of {len(new_embeddings)}: {detail}; "
        f"store now {len(store)} images in {store.n_clusters} clusters"
    )
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_pipeline

    embeddings, truth = load_corpus(args.corpus)
    config = _load_config(args.config)
    model = load_model(args.model) if args.model else None
    report = evaluate_pipeline(
        embeddings, truth, config, model=model, distance_threshold=args.distance
    )
    if args.report:
        atomic_write_json(args.report, report)
    print(
        f"precision {report['pairwise_precision']:.4f}, recall {report['pairwise_recall']:.4f}, "
        f"rand {report['rand_index']:.4f}, recall@{args.distance} "
        f"{report['recall_at_distance']['value']:.4f}"
    )
    return 0


# -- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neardup", description="near-duplicate image detection over binary embeddings"
    )
    parser.add_argument("--threads", type=int, default=None, help="worker thread cap (default: NEARDUP_THREADS or all cores)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic labelled corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-base", type=int, default=1000)
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flip-min", type=int, default=1)
    p.add_argument("--flip-max", type=int, default=12)
    p.add_argument("--dupes-dist", help='JSON dupe-count distribution, e.g. \'{"0":0.5,"3":0.5}\'')
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("build-index", help="build a term index from embeddings")
    p.add_argument("--embeddings", action="append", required=True, help="embedding file (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--heads", help="clusters TSV: index only its head images")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("search", help="batch search queries against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", action="append", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--min-overlap", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train-classifier", help="train the pair classifier from labels")
    p.add_argument("--labels", required=True, help="labels CSV (id_a,id_b,label)")
    p.add_argument("--embeddings", action="append", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="JSON training report")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("classify", help="score image pairs with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", action="append", required=True)
    p.add_argument("--pairs", required=True, help="CSV with header id_a,id_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("select", help="filter search hits with the classifier")
    p.add_argument("--hits", required=True, help="search output TSV")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", action="append", required=True)
    p.add_argument("--threshold", type=float, default=None, help="score cut (default: the model's stored threshold)")
    p.add_argument("--clusters", help="clusters TSV: match against heads instead of emitting edges")
    p.add_argument("--k-aug", type=int, default=3)
    p.add_argument("--labels-out", help="CSV for augmentation-recovered positive labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cluster", help="closure + threshold cut over verified edges")
    p.add_argument("--edges", required=True, help="edges TSV from select")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", action="append", required=True)
    p.add_argument("--threshold", type=float, default=None, help="score cut (default: the model's stored threshold)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("run", help="full static pipeline: embeddings to clusters")
    p.add_argument("--embeddings", action="append", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="clusters TSV")
    p.add_argument("--report", help="JSON run report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("incremental", help="ingest a batch into a cluster store")
    p.add_argument("--store", required=True, help="store directory (created if missing)")
    p.add_argument("--new", action="append", required=True, help="embedding file of the batch")
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--assignments", help="TSV: image, cluster, provenance")
    p.add_argument("--labels-out", help="CSV for augmentation-recovered positive labels")
    p.set_defaults(func=cmd_incremental)

    p = sub.add_parser("evaluate", help="cluster a labelled corpus and score it")
    p.add_argument("--corpus", required=True, help="corpus directory from gen-corpus")
    p.add_argument("--config")
    p.add_argument("--model", help="model file (trained on the fly when omitted)")
    p.add_argument("--distance", type=int, default=8, help="hamming radius for recall@distance")
    p.add_argument("--report", help="JSON evaluation report")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")
    set_thread_cap(args.threads)
    try:
        return args.func(args)
    except NearDupError as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
