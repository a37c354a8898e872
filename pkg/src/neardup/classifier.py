"""Near-duplicate pair classifier: an MLP over XORed binary embeddings.

The two embeddings of a candidate pair are XORed bitwise and the resulting
0/1 vector is the network input, so the model sees only where the pair
disagrees and score(a, b) == score(b, a) holds bit-exactly. Hidden layers
are ReLU, the output is a single sigmoid unit, training is mini-batch Adam
on binary cross-entropy. Everything is plain dense numpy float64; no ML
runtime is involved.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingSet
from .errors import DimensionError, FormatError, ModelError, TrainingError

MODEL_MAGIC = b"NDML"
MODEL_VERSION = 1


def xor_features(a, b) -> np.ndarray:
    """XOR two 0/1 bit arrays of equal width into a float feature vector."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise DimensionError(f"embedding widths differ: {a.shape} vs {b.shape}")
    return np.bitwise_xor(a, b).astype(np.float64)


@dataclass
class MlpModel:
    """Dense feedforward net. weights[i] has shape (fan_out, fan_in)."""

    weights: list
    biases: list
    threshold: float = 0.5

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ModelError("weights and biases must be non-empty and aligned")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ModelError(f"layer shape mismatch: W{w.shape} b{b.shape}")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ModelError(
                    f"layer chaining mismatch: {prev.shape} feeds {nxt.shape}"
                )
        if self.weights[-1].shape[0] != 1:
            raise ModelError("output layer must have a single unit")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def widths(self) -> list:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def parameter_count(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))


def init_model(d: int, hidden=(512, 256, 64), seed: int = 0) -> MlpModel:
    """Xavier-uniform initialized model with the canonical layer stack."""
    rng = np.random.default_rng(seed)
    widths = [d, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_batch(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Scores in [0, 1] for a (n, d) feature matrix."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != model.input_dim:
        raise ModelError(
            f"feature matrix must be (n, {model.input_dim}), got {feats.shape}"
        )
    act = feats
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        act = np.maximum(act @ w.T + b, 0.0)
    logits = act @ model.weights[-1].T + model.biases[-1]
    return _sigmoid(logits[:, 0])


def forward(model: MlpModel, features) -> float:
    """Score a single feature vector."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 1:
        raise ModelError(f"expected a 1-d feature vector, got shape {feats.shape}")
    return float(forward_batch(model, feats[np.newaxis, :])[0])


def loss_and_grads(model: MlpModel, features: np.ndarray, labels: np.ndarray):
    """Mean BCE loss and analytic gradients for one batch.

    Returns (loss, grad_weights, grad_biases). Loss is computed from logits
    for stability; dL/dlogit = sigmoid(logit) - label.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise TrainingError("empty batch")

    acts = [x]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        acts.append(np.maximum(acts[-1] @ w.T + b, 0.0))
    logits = (acts[-1] @ model.weights[-1].T + model.biases[-1])[:, 0]

    # bce from logits: max(z,0) - z*y + log1p(exp(-|z|))
    loss = float(np.mean(np.maximum(logits, 0.0) - logits * y + np.log1p(np.exp(-np.abs(logits)))))

    delta = ((_sigmoid(logits) - y) / n)[:, np.newaxis]
    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    grad_w[-1] = delta.T @ acts[-1]
    grad_b[-1] = delta.sum(axis=0)
    back = delta @ model.weights[-1]
    for li in range(len(model.weights) - 2, -1, -1):
        back = back * (acts[li + 1] > 0.0)
        grad_w[li] = back.T @ acts[li]
        grad_b[li] = back.sum(axis=0)
        if li:
            back = back @ model.weights[li]
    return loss, grad_w, grad_b


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 5
    seed: int = 0
    hidden: tuple = (512, 256, 64)
    validation_fraction: float = 0.1
    min_recall: float = 0.5


@dataclass
class TrainResult:
    model: MlpModel
    epoch_losses: list = field(default_factory=list)
    validation: dict = field(default_factory=dict)


def pair_features(pairs, embeddings: EmbeddingSet) -> np.ndarray:
    """XOR feature matrix for (id_a, id_b) pairs, resolved against embeddings."""
    return _unpack(_pair_xor_packed(pairs, embeddings), embeddings.d)


def _pair_xor_packed(pairs, embeddings: EmbeddingSet) -> np.ndarray:
    rows_a = embeddings.rows_of([p[0] for p in pairs])
    rows_b = embeddings.rows_of([p[1] for p in pairs])
    return np.bitwise_xor(embeddings.packed[rows_a], embeddings.packed[rows_b])


def _unpack(packed: np.ndarray, d: int) -> np.ndarray:
    return np.unpackbits(packed, axis=1)[:, :d].astype(np.float64)


def train(pairs, embeddings: EmbeddingSet, config: TrainConfig = None) -> TrainResult:
    """Train a fresh model on (id_a, id_b, label) triples.

    Deterministic under config.seed: initialization, the validation split
    and per-epoch shuffles all draw from one seeded generator. The decision
    threshold is chosen on the validation split as the highest-precision
    cut with recall >= config.min_recall.
    """
    config = config or TrainConfig()
    pairs = list(pairs)
    if not pairs:
        raise TrainingError("empty training set")
    labels = np.array([int(p[2]) for p in pairs], dtype=np.float64)
    if set(np.unique(labels)) - {0.0, 1.0}:
        raise TrainingError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise TrainingError("training set must contain both classes")

    rng = np.random.default_rng(config.seed)
    model = init_model(embeddings.d, hidden=tuple(config.hidden), seed=config.seed)

    n = len(pairs)
    perm = rng.permutation(n)
    n_val = int(round(n * config.validation_fraction))
    # keep both classes in the training portion regardless of the split draw
    val_rows = perm[:n_val]
    train_rows = perm[n_val:]
    if train_rows.size == 0 or labels[train_rows].min() == labels[train_rows].max():
        val_rows = np.zeros(0, dtype=np.int64)
        train_rows = perm

    # packed XOR rows are 8x smaller than float features; unpack per batch
    xor_packed = _pair_xor_packed(pairs, embeddings)
    d = embeddings.d

    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0
    epoch_losses = []
    n_train = train_rows.size
    for _ in range(config.epochs):
        order = train_rows[rng.permutation(n_train)]
        batch_losses = []
        for s in range(0, n_train, config.batch_size):
            rows = order[s : s + config.batch_size]
            x = _unpack(xor_packed[rows], d)
            loss, gw, gb = loss_and_grads(model, x, labels[rows])
            batch_losses.append(loss * rows.size)
            step += 1
            c1 = 1.0 - config.beta1**step
            c2 = 1.0 - config.beta2**step
            for params, grads, ms, vs in (
                (model.weights, gw, m_w, v_w),
                (model.biases, gb, m_b, v_b),
            ):
                for p, g, m, v in zip(params, grads, ms, vs):
                    m *= config.beta1
                    m += (1.0 - config.beta1) * g
                    v *= config.beta2
                    v += (1.0 - config.beta2) * np.square(g)
                    p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        epoch_losses.append(sum(batch_losses) / n_train)

    validation = {}
    y_val = labels[val_rows]
    if val_rows.size and y_val.min() != y_val.max():
        val_scores = np.concatenate(
            [
                forward_batch(model, _unpack(xor_packed[val_rows[s : s + 8192]], d))
                for s in range(0, val_rows.size, 8192)
            ]
        )
        model.threshold = choose_threshold(val_scores, y_val, min_recall=config.min_recall)
        from .metrics import pr_auc, roc_auc

        validation = {
            "size": int(val_rows.size),
            "threshold": model.threshold,
            "pr_auc": pr_auc(val_scores, y_val),
            "roc_auc": roc_auc(val_scores, y_val),
        }
    return TrainResult(model, epoch_losses, validation)


def choose_threshold(scores: np.ndarray, labels: np.ndarray, min_recall: float = 0.5) -> float:
    """Highest-precision score cut subject to recall >= min_recall.

    Ties prefer higher recall, then the lower threshold; falls back to the
    lowest score when no cut reaches min_recall.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos_total = int((labels == 1).sum())
    if pos_total == 0:
        raise TrainingError("cannot choose a threshold without positives")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    tp_cum = np.cumsum(l_sorted == 1)
    fp_cum = np.cumsum(l_sorted == 0)
    # evaluate each distinct score as a >= cut: take the last row of its run
    ends = np.nonzero(np.append(np.diff(s_sorted) != 0, True))[0]
    tp = tp_cum[ends].astype(np.float64)
    fp = fp_cum[ends].astype(np.float64)
    recall = tp / pos_total
    precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1.0), 0.0)
    feasible = np.nonzero(recall >= min_recall)[0]
    if feasible.size == 0:
        return float(scores.min())
    p_feas = precision[feasible]
    # thetas are descending and recall is non-decreasing, so the last
    # max-precision candidate also maximizes recall and minimizes theta
    pick = feasible[np.nonzero(p_feas == p_feas.max())[0][-1]]
    return float(s_sorted[ends[pick]])


def predict_pairs(model: MlpModel, pairs, embeddings: EmbeddingSet, chunk: int = 8192) -> np.ndarray:
    """Scores for (id_a, id_b) pairs, order-preserving, chunked for memory."""
    pairs = list(pairs)
    if not pairs:
        return np.zeros(0, dtype=np.float64)
    if embeddings.d != model.input_dim:
        raise ModelError(
            f"model expects input width {model.input_dim}, embeddings have d={embeddings.d}"
        )
    out = np.empty(len(pairs), dtype=np.float64)
    for s in range(0, len(pairs), chunk):
        block = pairs[s : s + chunk]
        out[s : s + len(block)] = forward_batch(model, pair_features(block, embeddings))
    return out


def predict_rows(model: MlpModel, embeddings: EmbeddingSet, rows_a, rows_b, chunk: int = 8192) -> np.ndarray:
    """Same as predict_pairs but addressed by row indices (internal fast path)."""
    rows_a = np.asarray(rows_a, dtype=np.intp)
    rows_b = np.asarray(rows_b, dtype=np.intp)
    out = np.empty(rows_a.size, dtype=np.float64)
    for s in range(0, rows_a.size, chunk):
        xor = np.bitwise_xor(
            embeddings.packed[rows_a[s : s + chunk]], embeddings.packed[rows_b[s : s + chunk]]
        )
        feats = np.unpackbits(xor, axis=1)[:, : embeddings.d].astype(np.float64)
        out[s : s + feats.shape[0]] = forward_batch(model, feats)
    return out


# -- model file --------------------------------------------------------------
#
# magic "NDML" | version u16 | n_layers u16
# per layer: rows u32 | cols u32 | rows*cols f32 weights (row-major) | rows f32 biases
# then threshold f32. Little-endian. Weights are stored at f32 precision.


def save_model(model: MlpModel, path) -> None:
    parts = [MODEL_MAGIC, struct.pack("<HH", MODEL_VERSION, len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
        parts.append(w.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    parts.append(struct.pack("<f", model.threshold))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic, not a model file")
    version, n_layers = struct.unpack("<HH", blob[4:8])
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 8
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", blob[off : off + 8])
        off += 8
        w = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off).astype(np.float64)
        off += 4 * rows * cols
        b = np.frombuffer(blob, dtype="<f4", count=rows, offset=off).astype(np.float64)
        off += 4 * rows
        weights.append(w.reshape(rows, cols))
        biases.append(b)
    if off + 4 != len(blob):
        raise FormatError(f"{path}: trailing bytes after threshold")
    (threshold,) = struct.unpack("<f", blob[off : off + 4])
    return MlpModel(weights, biases, threshold=float(threshold))
