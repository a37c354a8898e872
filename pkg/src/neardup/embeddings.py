"""Binary embeddings and LSH term derivation.

Dense visual embeddings are binarized per component (bit = 1 iff the
component is >= 0). A fixed subset of m bits, ranked by empirical variance
over a sample, is chopped into m/g groups of g consecutive bits; each group
becomes one integer term tagged with its group index:

    term = (group_index << g) | group_value

so terms from different groups can never collide and every image carries
exactly m/g distinct terms. Jaccard overlap of two term sets is the cheap
stand-in for cosine similarity used by candidate generation.

Bit order conventions, used everywhere including the embedding file:
bit i of an embedding is element i of the unpacked 0/1 array, and packed
bytes store bit 0 as the most significant bit of byte 0 (numpy's "big"
bitorder). Within a term group the first extracted bit is the most
significant bit of the group value.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigMismatchError, DataError, DimensionError, FormatError, SelectionError

EMBEDDING_MAGIC = b"NDEM"
EMBEDDING_VERSION = 1

# ImageId is a 64-bit unsigned integer; the all-ones value is reserved
# so dense arrays can use it as a sentinel.
MAX_IMAGE_ID = 2**64 - 2


def _check_image_id(image_id: int) -> int:
    image_id = int(image_id)
    if not 0 <= image_id <= MAX_IMAGE_ID:
        raise DataError(f"image id out of range [0, 2^64 - 2]: {image_id}")
    return image_id


@dataclass(frozen=True)
class BinaryEmbedding:
    """A single image's binarized embedding: id plus a 0/1 bit array."""

    image_id: int
    bits: np.ndarray

    def __post_init__(self):
        _check_image_id(self.image_id)
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size == 0:
            raise DimensionError("bits must be a non-empty 1-d array")
        if bits.max(initial=0) > 1:
            raise DimensionError("bits must contain only 0/1 values")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def d(self) -> int:
        return self.bits.shape[0]


def binarize(vector, image_id: int = 0) -> BinaryEmbedding:
    """Sign-binarize a real vector: bit = 1 iff the component is >= 0."""
    vec = np.asarray(vector, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise DimensionError(f"expected a non-empty 1-d vector, got shape {vec.shape}")
    if not np.isfinite(vec).all():
        raise DimensionError("vector contains non-finite components")
    return BinaryEmbedding(image_id, (vec >= 0.0).astype(np.uint8))


@dataclass(frozen=True)
class LshConfig:
    """Term-derivation parameters. selected_bits has length m, m % g == 0."""

    d: int
    selected_bits: tuple
    term_bits: int  # g: bits per term group

    def __post_init__(self):
        if self.d <= 0 or self.d % 8 != 0:
            raise DimensionError(f"d must be a positive multiple of 8, got {self.d}")
        if not 1 <= self.term_bits <= 24:
            raise DimensionError(f"term_bits must be in [1, 24], got {self.term_bits}")
        sel = tuple(int(b) for b in self.selected_bits)
        object.__setattr__(self, "selected_bits", sel)
        m = len(sel)
        if m == 0 or m % self.term_bits != 0:
            raise DimensionError(
                f"selected bit count {m} is not a positive multiple of term_bits {self.term_bits}"
            )
        if len(set(sel)) != m:
            raise DimensionError("selected_bits contains duplicates")
        if min(sel) < 0 or max(sel) >= self.d:
            raise DimensionError("selected_bits indices out of range")
        # term values must fit the u32 posting key
        top_term = ((m // self.term_bits - 1) << self.term_bits) | ((1 << self.term_bits) - 1)
        if top_term >= 2**32:
            raise DimensionError("term values would overflow 32 bits")

    @property
    def m(self) -> int:
        return len(self.selected_bits)

    @property
    def term_count(self) -> int:
        return self.m // self.term_bits


@dataclass(frozen=True)
class LshTermSet:
    """The m/g derived terms of one image, immutable."""

    image_id: int
    terms: frozenset
    config: LshConfig = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", frozenset(int(t) for t in self.terms))


def select_bits(sample, d: int, m: int) -> list:
    """Rank bit positions by empirical variance over a sample, descending,
    ties broken by lower index, and return the top m indices.

    For 0/1 bits the variance is p(1-p) with p the empirical mean, so the
    ranking key k*(n-k) (k = count of ones) is exact integer arithmetic.
    """
    bits = _sample_matrix(sample, d)
    n = bits.shape[0]
    if n == 0:
        raise SelectionError("cannot select bits from an empty sample")
    if not 0 < m <= d:
        raise SelectionError(f"m must be in [1, d]; got m={m}, d={d}")
    ones = bits.sum(axis=0, dtype=np.int64)
    key = ones * (n - ones)  # monotone in variance, exact
    order = np.lexsort((np.arange(d), -key))
    return [int(i) for i in order[:m]]


def _sample_matrix(sample, d: int) -> np.ndarray:
    if isinstance(sample, EmbeddingSet):
        if sample.d != d:
            raise DimensionError(f"sample has d={sample.d}, expected {d}")
        return sample.bits_matrix()
    if isinstance(sample, np.ndarray):
        if sample.ndim != 2 or sample.shape[1] != d:
            raise DimensionError(f"sample matrix must be (n, {d}), got {sample.shape}")
        return sample.astype(np.uint8, copy=False)
    rows = []
    for emb in sample:
        if emb.d != d:
            raise DimensionError(f"sample embedding has d={emb.d}, expected {d}")
        rows.append(emb.bits)
    if not rows:
        return np.zeros((0, d), dtype=np.uint8)
    return np.stack(rows)


def _group_weights(g: int) -> np.ndarray:
    # first extracted bit is the MSB of the group value
    return (1 << np.arange(g - 1, -1, -1, dtype=np.uint32)).astype(np.uint32)


def derive_terms(embedding: BinaryEmbedding, config: LshConfig) -> LshTermSet:
    """Derive the image's LSH term set under config."""
    if embedding.d != config.d:
        raise DimensionError(f"embedding has d={embedding.d}, config expects {config.d}")
    row = derive_terms_matrix(embedding.bits[np.newaxis, :], config)[0]
    return LshTermSet(embedding.image_id, frozenset(int(t) for t in row), config)


def derive_terms_matrix(bits: np.ndarray, config: LshConfig) -> np.ndarray:
    """Vectorized term derivation: (n, d) 0/1 matrix -> (n, term_count) uint32.

    Column j holds the group-j term of each row; the per-image term set is
    exactly the row's values (groups cannot collide, so no dedup is needed).
    """
    if bits.ndim != 2 or bits.shape[1] != config.d:
        raise DimensionError(f"bits matrix must be (n, {config.d}), got {bits.shape}")
    g = config.term_bits
    sel = bits[:, np.array(config.selected_bits, dtype=np.intp)].astype(np.uint32)
    grouped = sel.reshape(bits.shape[0], config.term_count, g)
    values = grouped @ _group_weights(g)
    tags = (np.arange(config.term_count, dtype=np.uint32) << np.uint32(g))
    return (values + tags).astype(np.uint32)


def jaccard_overlap(a: LshTermSet, b: LshTermSet):
    """Return (overlap_count, jaccard) for two term sets of the same config."""
    if a.config != b.config:
        raise ConfigMismatchError("term sets derive from different LSH configs")
    overlap = len(a.terms & b.terms)
    union = len(a.terms) + len(b.terms) - overlap
    return overlap, (overlap / union if union else 0.0)


class EmbeddingSet:
    """A column-packed collection of embeddings sharing one width d.

    Bits are stored packed, ceil(d/8) bytes per image, bit 0 in the MSB of
    byte 0. This is also the record layout of the embedding file.
    """

    def __init__(self, d: int, ids: np.ndarray, packed: np.ndarray):
        if d <= 0 or d % 8 != 0:
            raise DimensionError(f"d must be a positive multiple of 8, got {d}")
        ids = np.ascontiguousarray(ids, dtype=np.uint64)
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        if packed.ndim != 2 or packed.shape != (ids.shape[0], d // 8):
            raise DimensionError(
                f"packed must be ({ids.shape[0]}, {d // 8}), got {packed.shape}"
            )
        if ids.size and int(ids.max()) > MAX_IMAGE_ID:
            raise DataError(f"image id out of range [0, 2^64 - 2]: {int(ids.max())}")
        if ids.size != np.unique(ids).size:
            raise DataError("duplicate image ids in embedding set")
        self.d = d
        self.ids = ids
        self.packed = packed
        self._row_of = None
        self._unpacked = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    @classmethod
    def from_embeddings(cls, embeddings) -> "EmbeddingSet":
        embs = list(embeddings)
        if not embs:
            raise DimensionError("cannot build an EmbeddingSet from zero embeddings")
        d = embs[0].d
        for e in embs:
            if e.d != d:
                raise DimensionError("mixed embedding widths")
        ids = np.array([e.image_id for e in embs], dtype=np.uint64)
        packed = np.stack([np.packbits(e.bits) for e in embs])
        return cls(d, ids, packed)

    @classmethod
    def from_bits(cls, ids, bits: np.ndarray) -> "EmbeddingSet":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits.shape[1], np.asarray(ids, dtype=np.uint64), np.packbits(bits, axis=1))

    def bits_matrix(self) -> np.ndarray:
        if self._unpacked is None:
            self._unpacked = np.unpackbits(self.packed, axis=1)[:, : self.d]
        return self._unpacked

    def row_of(self, image_id: int) -> int:
        if self._row_of is None:
            self._row_of = {int(v): i for i, v in enumerate(self.ids)}
        try:
            return self._row_of[int(image_id)]
        except KeyError:
            raise DataError(f"unknown image id {image_id}") from None

    def rows_of(self, image_ids) -> np.ndarray:
        return np.array([self.row_of(i) for i in image_ids], dtype=np.intp)

    def get(self, image_id: int) -> BinaryEmbedding:
        row = self.row_of(image_id)
        bits = np.unpackbits(self.packed[row])[: self.d]
        return BinaryEmbedding(int(self.ids[row]), bits)

    def __contains__(self, image_id) -> bool:
        if self._row_of is None:
            self._row_of = {int(v): i for i, v in enumerate(self.ids)}
        return int(image_id) in self._row_of

    def subset(self, image_ids) -> "EmbeddingSet":
        rows = self.rows_of(image_ids)
        return EmbeddingSet(self.d, self.ids[rows], self.packed[rows])

    def concat(self, other: "EmbeddingSet") -> "EmbeddingSet":
        if other.d != self.d:
            raise DimensionError("mixed embedding widths")
        return EmbeddingSet(
            self.d,
            np.concatenate([self.ids, other.ids]),
            np.vstack([self.packed, other.packed]),
        )

    def term_sets(self, config: LshConfig) -> list:
        terms = derive_terms_matrix(self.bits_matrix(), config)
        return [
            LshTermSet(int(self.ids[i]), frozenset(int(t) for t in terms[i]), config)
            for i in range(len(self))
        ]

    # -- embedding file -------------------------------------------------
    #
    # magic "NDEM" | version u16 | d u16 | count u64
    # then count records of: image_id u64 | ceil(d/8) raw bit bytes
    # all integers little-endian.

    def save(self, path) -> None:
        header = EMBEDDING_MAGIC + struct.pack("<HHQ", EMBEDDING_VERSION, self.d, len(self))
        record = np.zeros(
            len(self),
            dtype=np.dtype([("id", "<u8"), ("bits", np.uint8, (self.d // 8,))]),
        )
        record["id"] = self.ids
        record["bits"] = self.packed
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(record.tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingSet":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != EMBEDDING_MAGIC:
            raise FormatError(f"{path}: bad magic, not an embedding file")
        if len(blob) < 16:
            raise FormatError(f"{path}: truncated header")
        version, d, count = struct.unpack("<HHQ", blob[4:16])
        if version != EMBEDDING_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if d == 0 or d % 8 != 0:
            raise FormatError(f"{path}: invalid d={d}")
        rec = np.dtype([("id", "<u8"), ("bits", np.uint8, (d // 8,))])
        body = blob[16:]
        if len(body) != count * rec.itemsize:
            raise FormatError(
                f"{path}: expected {count} records ({count * rec.itemsize} bytes), got {len(body)}"
            )
        record = np.frombuffer(body, dtype=rec)
        return cls(d, record["id"].copy(), record["bits"].copy().reshape(count, d // 8))


def hamming_distance_matrix(a: EmbeddingSet, rows_a, b: EmbeddingSet, rows_b) -> np.ndarray:
    """Exact hamming distances between selected rows, via a byte popcount table."""
    if a.d != b.d:
        raise DimensionError("mixed embedding widths")
    xor = np.bitwise_xor(a.packed[rows_a], b.packed[rows_b])
    return _POPCOUNT[xor].sum(axis=-1, dtype=np.int64)


_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)
