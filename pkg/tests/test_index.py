import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neardup import EmbeddingSet, LshConfig, build_index, index_size_bytes, load_index, save_index
from neardup.embeddings import derive_terms, BinaryEmbedding
from neardup.errors import EncodingError, FormatError, IndexBuildError
from neardup.index import (
    IdDictionary,
    header_size_bytes,
    serialize_index,
    varbyte_decode,
    varbyte_encode,
)


# -- oracles ------------------------------------------------------------------


def vb_encode_oracle(values):
    # scalar bit twiddling, one value at a time
    out = bytearray()
    prev = 0
    for i, v in enumerate(values):
        delta = v if i == 0 else v - prev
        prev = v
        while True:
            low = delta & 0x7F
            delta >>= 7
            if delta:
                out.append(low | 0x80)
            else:
                out.append(low)
                break
    return bytes(out)


def vb_decode_oracle(payload):
    values, acc, shift, prev = [], 0, 0, 0
    for byte in payload:
        acc |= (byte & 0x7F) << shift
        if byte & 0x80:
            shift += 7
        else:
            prev += acc
            values.append(prev)
            acc, shift = 0, 0
    return values


def naive_index_oracle(term_sets):
    # dict of python lists, dense ids in input order
    dense = {}
    postings = {}
    for ts in term_sets:
        dense[ts.image_id] = len(dense)
        for t in sorted(ts.terms):
            postings.setdefault(t, []).append(dense[ts.image_id])
    return dense, postings


# -- varbyte ------------------------------------------------------------------


def test_varbyte_frozen_examples():
    assert varbyte_encode([0]) == bytes([0x00])
    assert varbyte_encode([5, 9, 12]) == bytes([0x05, 0x04, 0x03])  # deltas 5,4,3
    # 128 needs two bytes; the high bit marks continuation
    assert varbyte_encode([128]) == bytes([0x80, 0x01])
    assert varbyte_encode([2**32 - 1]) == vb_encode_oracle([2**32 - 1])


def test_varbyte_decode_frozen_examples():
    assert varbyte_decode(bytes([0x05, 0x04, 0x03])).tolist() == [5, 9, 12]
    assert varbyte_decode(bytes([0x80, 0x01])).tolist() == [128]
    assert varbyte_decode(b"").tolist() == []


@settings(max_examples=200)
@given(st.lists(st.integers(0, 2**32 - 1), min_size=0, max_size=60, unique=True))
def test_varbyte_round_trip_matches_oracle(ids):
    ids = sorted(ids)
    payload = varbyte_encode(ids)
    assert payload == vb_encode_oracle(ids)
    assert varbyte_decode(payload).tolist() == ids
    assert vb_decode_oracle(payload) == ids


def test_varbyte_rejects_bad_sequences():
    with pytest.raises(EncodingError):
        varbyte_encode([3, 3])
    with pytest.raises(EncodingError):
        varbyte_encode([5, 2])
    with pytest.raises(EncodingError):
        varbyte_encode([2**32])
    with pytest.raises(EncodingError):
        varbyte_decode(bytes([0x80]))  # ends mid-value


def test_varbyte_one_byte_per_small_delta():
    # dense consecutive ids: every delta fits 7 bits -> 1 byte per posting
    ids = list(range(1000))
    assert len(varbyte_encode(ids)) == 1000


# -- dictionary ---------------------------------------------------------------


def test_id_dictionary_first_seen_order():
    d = IdDictionary(np.array([99, 3, 47], dtype=np.uint64))
    assert d.to_dense(99) == 0
    assert d.to_dense(47) == 2
    assert d.to_external(1) == 3
    assert 3 in d and 4 not in d
    with pytest.raises(KeyError):
        d.to_dense(1000)
    with pytest.raises(IndexBuildError):
        IdDictionary(np.array([1, 1], dtype=np.uint64))


@given(st.lists(st.integers(0, 2**64 - 2), min_size=1, max_size=50, unique=True))
def test_id_dictionary_bijective(ids):
    d = IdDictionary(np.array(ids, dtype=np.uint64))
    for ext in ids:
        assert d.to_external(d.to_dense(ext)) == ext
    for dense in range(len(ids)):
        assert d.to_dense(d.to_external(dense)) == dense


# -- index build --------------------------------------------------------------


@pytest.fixture
def small_sets(lsh64, rng):
    bits = rng.integers(0, 2, size=(30, 64), dtype=np.uint8)
    ids = rng.choice(10**6, size=30, replace=False).astype(np.uint64)
    return EmbeddingSet.from_bits(ids, bits).term_sets(lsh64)


def test_build_index_matches_naive_oracle(small_sets):
    index = build_index(small_sets)
    dense, postings = naive_index_oracle(small_sets)
    assert len(index.dictionary) == len(dense)
    for ext, dn in dense.items():
        assert index.dictionary.to_dense(ext) == dn
    assert sorted(index.terms) == sorted(postings)
    for term, ids in postings.items():
        assert index.posting_ids(term).tolist() == ids
    assert index.posting_count() == sum(len(v) for v in postings.values())


def test_build_index_from_embedding_set_equivalent(small_sets, lsh64):
    # the bulk EmbeddingSet path and the per-term-set path must agree
    via_sets = build_index(small_sets)
    index = build_index(via_sets_to_embeddings(small_sets, lsh64), lsh64)
    assert index.terms == via_sets.terms
    for t in index.terms:
        assert index.posting_ids(t).tolist() == via_sets.posting_ids(t).tolist()


def via_sets_to_embeddings(term_sets, config):
    # invert term derivation: place each group value back into its bits
    rows, ids = [], []
    for ts in term_sets:
        bits = np.zeros(config.d, dtype=np.uint8)
        for term in ts.terms:
            group = term >> config.term_bits
            value = term & ((1 << config.term_bits) - 1)
            for k in range(config.term_bits):
                pos = config.selected_bits[group * config.term_bits + k]
                bits[pos] = (value >> (config.term_bits - 1 - k)) & 1
        rows.append(bits)
        ids.append(ts.image_id)
    return EmbeddingSet.from_bits(np.array(ids, dtype=np.uint64), np.stack(rows))


def test_build_index_rejects_duplicates(small_sets):
    with pytest.raises(IndexBuildError):
        build_index(small_sets + [small_sets[0]])


def test_build_index_rejects_mixed_configs(small_sets):
    other = LshConfig(d=64, selected_bits=tuple(range(28, 64)), term_bits=6)
    bits = np.ones(64, dtype=np.uint8)
    odd = derive_terms(BinaryEmbedding(10**9, bits), other)
    with pytest.raises(IndexBuildError):
        build_index(small_sets + [odd])


def test_empty_index(lsh64):
    index = build_index([], config=lsh64)
    assert len(index) == 0
    assert index.terms == []
    assert index.posting_count() == 0
    blob = serialize_index(index)
    assert len(blob) == header_size_bytes(index)
    back = load_index_from_bytes(blob)
    assert back.terms == []
    assert back.config == lsh64


def load_index_from_bytes(blob, tmp=None):
    import tempfile, os

    fd, path = tempfile.mkstemp(suffix=".ndix")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        return load_index(path)
    finally:
        os.unlink(path)


def test_single_posting_payload_is_one_byte(lsh64, rng):
    bits = rng.integers(0, 2, size=(1, 64), dtype=np.uint8)
    index = build_index(EmbeddingSet.from_bits(np.array([0], dtype=np.uint64), bits), lsh64)
    sizes = index_size_bytes(index)
    # 6 terms, one dense id 0 each: 1 payload byte per posting vs 8 baseline
    assert sizes.payload == 6
    assert sizes.baseline == 48
    assert sizes.serialized == header_size_bytes(index) + 6 * (12 + 1)


def test_index_file_round_trip(small_sets, tmp_path):
    index = build_index(small_sets, head_only=True)
    path = tmp_path / "x.ndix"
    save_index(index, path)
    back = load_index(path)
    assert back.head_only is True
    assert back.config == index.config
    np.testing.assert_array_equal(back.dictionary.external, index.dictionary.external)
    assert back.terms == index.terms
    for t in index.terms:
        assert back.posting_ids(t).tolist() == index.posting_ids(t).tolist()
    # byte-stable: serializing the loaded index reproduces the file
    assert serialize_index(back) == path.read_bytes()


def test_index_file_rejects_corruption(small_sets, tmp_path):
    index = build_index(small_sets)
    path = tmp_path / "x.ndix"
    save_index(index, path)
    blob = path.read_bytes()
    (tmp_path / "magic.ndix").write_bytes(b"ZZZZ" + blob[4:])
    with pytest.raises(FormatError):
        load_index(tmp_path / "magic.ndix")
    (tmp_path / "trail.ndix").write_bytes(blob + b"\x00")
    with pytest.raises(FormatError):
        load_index(tmp_path / "trail.ndix")


def test_compression_beats_baseline_on_clustered_ids(rng):
    # dense posting lists (the real workload) compress well below 8 B/posting
    config = LshConfig(d=64, selected_bits=tuple(range(36)), term_bits=6)
    bits = rng.integers(0, 2, size=(5000, 64), dtype=np.uint8)
    index = build_index(
        EmbeddingSet.from_bits(np.arange(5000, dtype=np.uint64), bits), config
    )
    sizes = index_size_bytes(index)
    assert index.posting_count() == 30000
    assert sizes.payload < 0.5 * sizes.baseline
