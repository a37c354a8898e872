"""Synthetic corpora with planted near-duplicates, plus labeled pair sampling.

Base images are uniform random bit vectors. Each base receives a number of
duplicates drawn from a configurable distribution (power-law-ish by
default, so pair groups dominate and sizes are heavy-tailed); a duplicate
is its base with k uniformly chosen bits flipped, k uniform in
[flip_min, flip_max]. flip_max well below the expected random-pair hamming
distance (d/2) keeps planted pairs unambiguous. flip_min == flip_max == 0
plants exact duplicates.

Ground truth is the partition {base + its duplicates}. Labeled pairs for
classifier training are sampled from it: positives inside groups, negatives
across groups, with a configurable fraction of negatives restricted to
pairs that actually collide in the LSH index (harder negatives).
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingSet, LshConfig
from .errors import DataError, SamplingError

DEFAULT_DUPES_DIST = {0: 0.5, 1: 0.25, 2: 0.11, 3: 0.06, 4: 0.04, 6: 0.025, 9: 0.01, 16: 0.005}


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    seed: int = 0
    n_base: int = 1000
    d: int = 256
    dupes_per_base: dict = field(default_factory=lambda: dict(DEFAULT_DUPES_DIST))
    flip_min: int = 1
    flip_max: int = 12
    hard_negative_fraction: float = 0.5  # share of negatives drawn from LSH collisions

    def __post_init__(self):
        if self.n_base <= 0:
            raise DataError("n_base must be positive")
        if self.d <= 0 or self.d % 8:
            raise DataError(f"d must be a positive multiple of 8, got {self.d}")
        if not 0 <= self.flip_min <= self.flip_max <= self.d:
            raise DataError(
                f"flip range [{self.flip_min}, {self.flip_max}] invalid for d={self.d}"
            )
        dist = {int(k): float(v) for k, v in self.dupes_per_base.items()}
        if not dist or any(k < 0 for k in dist) or any(v < 0 for v in dist.values()):
            raise DataError("dupes_per_base must map counts >= 0 to weights >= 0")
        total = sum(dist.values())
        if total <= 0:
            raise DataError("dupes_per_base weights sum to zero")
        object.__setattr__(self, "dupes_per_base", {k: v / total for k, v in sorted(dist.items())})
        if not 0.0 <= self.hard_negative_fraction <= 1.0:
            raise DataError("hard_negative_fraction must be in [0, 1]")


@dataclass
class GroundTruth:
    """group_of[i] is the group id of ids[i]; group id = the base image id."""

    ids: np.ndarray
    group_of: np.ndarray

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint64)
        self.group_of = np.ascontiguousarray(self.group_of, dtype=np.uint64)
        if self.ids.shape != self.group_of.shape:
            raise DataError("ids and group_of must align")

    def groups(self) -> dict:
        out = {}
        for i, g in zip(self.ids, self.group_of):
            out.setdefault(int(g), []).append(int(i))
        return {g: sorted(v) for g, v in out.items()}

    def assignment(self) -> dict:
        return {int(i): int(g) for i, g in zip(self.ids, self.group_of)}

    def group_sizes(self) -> np.ndarray:
        _, counts = np.unique(self.group_of, return_counts=True)
        return counts

    def within_group_pairs(self) -> list:
        pairs = []
        for members in self.groups().values():
            for i in range(len(members)):
                for j in range(i + 1, len(members)):
                    pairs.append((members[i], members[j]))
        return pairs


def generate_corpus(spec: SyntheticCorpusSpec):
    """Returns (EmbeddingSet, GroundTruth), ids sequential from 0 and
    deterministic under spec.seed."""
    rng = np.random.default_rng(spec.seed)
    counts = np.array(sorted(spec.dupes_per_base), dtype=np.int64)
    probs = np.array([spec.dupes_per_base[int(c)] for c in counts])
    dupes = rng.choice(counts, size=spec.n_base, p=probs)

    n_total = int(spec.n_base + dupes.sum())
    bits = np.zeros((n_total, spec.d), dtype=np.uint8)
    group_of = np.zeros(n_total, dtype=np.uint64)

    base_bits = rng.integers(0, 2, size=(spec.n_base, spec.d), dtype=np.uint8)
    row = 0
    for b in range(spec.n_base):
        base_id = row
        bits[row] = base_bits[b]
        group_of[row] = base_id
        row += 1
        for _ in range(int(dupes[b])):
            k = int(rng.integers(spec.flip_min, spec.flip_max + 1))
            dup = base_bits[b].copy()
            if k:
                flip = rng.choice(spec.d, size=k, replace=False)
                dup[flip] ^= 1
            bits[row] = dup
            group_of[row] = base_id
            row += 1

    ids = np.arange(n_total, dtype=np.uint64)
    return EmbeddingSet.from_bits(ids, bits), GroundTruth(ids, group_of)


def generate_labels(
    truth: GroundTruth,
    embeddings: EmbeddingSet,
    n_pos: int,
    n_neg: int,
    seed: int = 0,
    lsh_config: LshConfig = None,
    hard_negative_fraction: float = 0.5,
    min_overlap: int = 2,
) -> list:
    """Sample (id_a, id_b, label) triples from ground truth.

    Positives are uniform over within-group pairs without replacement.
    Negatives are cross-group; when lsh_config is given, up to
    hard_negative_fraction of them come from pairs the LSH index would
    actually surface as candidates (>= min_overlap shared terms), the rest
    uniform random cross-group.
    """
    if n_pos < 0 or n_neg < 0:
        raise SamplingError("pair counts must be >= 0")
    rng = np.random.default_rng(seed)

    pos_pairs = truth.within_group_pairs()
    if n_pos > 0 and not pos_pairs:
        raise SamplingError("ground truth has no within-group pairs (all singletons)")
    if n_pos > len(pos_pairs):
        raise SamplingError(f"requested {n_pos} positives, only {len(pos_pairs)} exist")
    pos_idx = rng.choice(len(pos_pairs), size=n_pos, replace=False) if n_pos else []
    out = [(pos_pairs[i][0], pos_pairs[i][1], 1) for i in pos_idx]

    if n_neg == 0:
        return out
    group = truth.assignment()
    chosen = set()

    n_hard = int(round(n_neg * hard_negative_fraction)) if lsh_config is not None else 0
    if n_hard:
        hard = _candidate_cross_group_pairs(truth, embeddings, lsh_config, min_overlap)
        take = min(n_hard, len(hard))
        if take:
            for i in rng.choice(len(hard), size=take, replace=False):
                chosen.add(hard[i])

    ids = truth.ids
    n = ids.size
    if n < 2:
        raise SamplingError("need at least two images for negatives")
    attempts = 0
    while len(chosen) < n_neg:
        attempts += 1
        if attempts > 200 * n_neg + 1000:
            raise SamplingError("cannot sample enough distinct cross-group negatives")
        i, j = rng.integers(n), rng.integers(n)
        a, b = int(ids[i]), int(ids[j])
        if a == b or group[a] == group[b]:
            continue
        pair = (a, b) if a < b else (b, a)
        chosen.add(pair)

    out.extend((a, b, 0) for a, b in sorted(chosen))
    return out


def _candidate_cross_group_pairs(truth: GroundTruth, embeddings: EmbeddingSet, lsh_config, min_overlap: int) -> list:
    """Sorted unordered cross-group pairs that the index surfaces as candidates."""
    from .index import build_index
    from .search import overlap_pairs

    index = build_index(embeddings, lsh_config)
    ext_q, ext_i, _ = overlap_pairs(embeddings, index, min_overlap=min_overlap)
    if ext_q.size == 0:
        return []
    order = np.argsort(truth.ids)
    sorted_ids = truth.ids[order]
    gq = truth.group_of[order[np.searchsorted(sorted_ids, ext_q)]]
    gi = truth.group_of[order[np.searchsorted(sorted_ids, ext_i)]]
    cross = gq != gi
    a = np.minimum(ext_q[cross], ext_i[cross])
    b = np.maximum(ext_q[cross], ext_i[cross])
    uniq = np.unique(np.stack([a, b], axis=1), axis=0)
    return [(int(x), int(y)) for x, y in uniq]


# -- labeled pair CSV --------------------------------------------------------
#
# header id_a,id_b,label[,source]; label is 0/1.


def write_labels_csv(pairs, path, source: str = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if source is None:
            writer.writerow(["id_a", "id_b", "label"])
            writer.writerows((a, b, l) for a, b, l in pairs)
        else:
            writer.writerow(["id_a", "id_b", "label", "source"])
            writer.writerows((a, b, l, source) for a, b, l in pairs)


def read_labels_csv(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["id_a", "id_b", "label"]:
            raise DataError(f"{path}: expected header id_a,id_b,label[,source]")
        for ln, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{ln}: expected at least 3 columns")
            label = int(row[2])
            if label not in (0, 1):
                raise DataError(f"{path}:{ln}: label must be 0 or 1")
            out.append((int(row[0]), int(row[1]), label))
    return out


# -- corpus directory --------------------------------------------------------
#
# embeddings.ndem + groundtruth.tsv (image_id <tab> group_id) + spec.json


def save_corpus(embeddings: EmbeddingSet, truth: GroundTruth, directory, spec: SyntheticCorpusSpec = None) -> None:
    os.makedirs(directory, exist_ok=True)
    embeddings.save(os.path.join(directory, "embeddings.ndem"))
    with open(os.path.join(directory, "groundtruth.tsv"), "w", encoding="utf-8") as fh:
        for i, g in zip(truth.ids, truth.group_of):
            fh.write(f"{int(i)}\t{int(g)}\n")
    if spec is not None:
        payload = {
            "seed": spec.seed,
            "n_base": spec.n_base,
            "d": spec.d,
            "dupes_per_base": {str(k): v for k, v in spec.dupes_per_base.items()},
            "flip_min": spec.flip_min,
            "flip_max": spec.flip_max,
            "hard_negative_fraction": spec.hard_negative_fraction,
        }
        with open(os.path.join(directory, "spec.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_corpus(directory):
    embeddings = EmbeddingSet.load(os.path.join(directory, "embeddings.ndem"))
    ids, groups = [], []
    with open(os.path.join(directory, "groundtruth.tsv"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, g = line.split("\t")
            ids.append(int(a))
            groups.append(int(g))
    truth = GroundTruth(np.array(ids, dtype=np.uint64), np.array(groups, dtype=np.uint64))
    if truth.ids.size != len(embeddings):
        raise DataError(f"{directory}: ground truth covers {truth.ids.size} ids, embeddings {len(embeddings)}")
    return embeddings, truth
