"""Chunking, hash embedding, and exact index tests against independent oracles."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpusforge.backends import count_tokens
from corpusforge.index import (
    ChunkPolicy,
    IndexFormatError,
    VectorIndex,
    ZeroVector,
    chunk_store_path,
    chunk_text,
    embed_hash,
    load_chunks,
    save_chunks,
)
from corpusforge.tiers import SecurityTier


def oracle_reconstruct(body: str, chunks) -> str:
    """Independent overlap-stripping concatenation via char spans."""
    parts = []
    prev_end = 0
    for chunk in chunks:
        start, end = chunk.char_span
        parts.append(body[max(start, prev_end) : end])
        prev_end = end
    return "".join(parts)


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------


def test_small_body_single_chunk():
    body = " ".join(f"w{i}" for i in range(100))
    chunks = chunk_text(body, "d" * 64, ChunkPolicy(512, 64))
    assert len(chunks) == 1
    assert chunks[0].text == body
    assert chunks[0].char_span == (0, len(body))


def test_uniform_tokens_sizes_and_overlap():
    body = " ".join(f"w{i % 7}" for i in range(1000))
    chunks = chunk_text(body, "d" * 64, ChunkPolicy(512, 64))
    assert all(c.token_count <= 512 for c in chunks)
    for left, right in zip(chunks, chunks[1:]):
        shared = body[right.char_span[0] : left.char_span[1]]
        assert count_tokens(shared) == 64
    assert oracle_reconstruct(body, chunks) == body


def test_heading_boundaries_preferred():
    sections = []
    for i in range(3):
        sections.append(f"# Heading{i}\n\n" + " ".join(f"s{i}w{j}" for j in range(60)))
    body = "\n\n".join(sections)
    chunks = chunk_text(body, "d" * 64, ChunkPolicy(80, 8))
    heading_positions = [body.index(f"# Heading{i}") for i in (1, 2)]
    cut_ends = {c.char_span[1] for c in chunks}
    for pos in heading_positions:
        assert pos in cut_ends, "chunk cuts should land exactly before headings"
    assert oracle_reconstruct(body, chunks) == body


def test_chunk_ids_sequential_and_tiered():
    body = " ".join(f"w{i}" for i in range(300))
    chunks = chunk_text(body, "abc123", ChunkPolicy(64, 8), tier=SecurityTier.PUBLIC)
    assert [c.chunk_id for c in chunks] == [
        f"abc123#{i:04d}" for i in range(1, len(chunks) + 1)
    ]
    assert all(c.tier is SecurityTier.PUBLIC for c in chunks)
    assert len(chunks) > 1


def test_giant_word_is_hard_cut():
    body = "start " + "x" * 4000 + " end"
    chunks = chunk_text(body, "d" * 64, ChunkPolicy(100, 10))
    assert all(c.token_count <= 100 for c in chunks)
    assert oracle_reconstruct(body, chunks) == body


@settings(max_examples=150, deadline=None)
@given(
    words=st.lists(
        st.text(alphabet="abcdefg", min_size=1, max_size=12), min_size=1, max_size=300
    ),
    target=st.integers(min_value=8, max_value=64),
    data=st.data(),
)
def test_reconstruction_property(words, target, data):
    overlap = data.draw(st.integers(min_value=0, max_value=target - 1))
    body = " ".join(words)
    chunks = chunk_text(body, "d" * 8, ChunkPolicy(target, overlap))
    assert oracle_reconstruct(body, chunks) == body
    assert all(c.token_count <= target for c in chunks)
    spans = [c.char_span for c in chunks]
    assert spans[0][0] == 0 and spans[-1][1] == len(body)
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        assert s2 <= e1 and s2 > s1  # tiled with progress


def test_markdown_body_reconstruction_for_fixture_doc():
    body = (
        "# Intro\n\nThe experiment overview paragraph with details.\n\n"
        "## Data\n\n" + " ".join(f"value{i}" for i in range(200)) + "\n\n"
        "## Methods\n\nFinal section text."
    )
    chunks = chunk_text(body, "f" * 64, ChunkPolicy(64, 8))
    assert oracle_reconstruct(body, chunks) == body


# ---------------------------------------------------------------------------
# embed_hash
# ---------------------------------------------------------------------------


def test_embed_deterministic_across_calls():
    a = embed_hash("alpha beta gamma", 128)
    b = embed_hash("alpha beta gamma", 128)
    assert a.dtype == np.float64
    assert (a == b).all()


def test_embed_deterministic_across_processes():
    import subprocess
    import sys

    code = (
        "import numpy as np\n"
        "from corpusforge.index import embed_hash\n"
        "print(embed_hash('alpha beta gamma', 64).tobytes().hex())\n"
    )
    outs = {
        subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, check=True
        ).stdout
        for _ in range(2)
    }
    assert len(outs) == 1


def test_embed_unit_norm_and_self_similarity():
    v = embed_hash("the quick brown fox", 384)
    norm = float(np.linalg.norm(v))
    assert abs(norm - 1.0) < 1e-6
    assert abs(float(np.dot(v, v)) - 1.0) < 1e-9


def test_embed_similarity_ordering():
    a = embed_hash("alpha beta", 384)
    b = embed_hash("alpha beta", 384)
    c = embed_hash("gamma delta", 384)
    cos_ab = float(np.dot(a.astype(np.float64), b.astype(np.float64)))
    cos_ac = float(np.dot(a.astype(np.float64), c.astype(np.float64)))
    assert cos_ab > cos_ac


def test_embed_zero_vector_raises():
    with pytest.raises(ZeroVector):
        embed_hash("???", 64)
    with pytest.raises(ZeroVector):
        embed_hash("", 64)


# ---------------------------------------------------------------------------
# top_k vs brute-force oracle
# ---------------------------------------------------------------------------


def random_unit_vectors(rng, n, d) -> np.ndarray:
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def oracle_top_k(entries, query, k, ceiling):
    """Brute force: score every eligible entry with a per-entry dot product,
    sort all, take k."""
    q = np.asarray(query, dtype=np.float64)
    scored = [
        (float(np.dot(e.vector.astype(np.float64), q)), e.chunk_id)
        for e in entries
        if e.tier <= ceiling
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [(chunk_id, score) for score, chunk_id in scored[:k]]


def build_index(rng, n=500, d=64, tiers=(SecurityTier.PUBLIC,)) -> VectorIndex:
    index = VectorIndex(d)
    vectors = random_unit_vectors(rng, n, d)
    for i in range(n):
        index.add(f"doc{i:05d}#0001", vectors[i], tiers[i % len(tiers)], f"http://h.org/{i}")
    return index


def test_top_k_matches_oracle_small():
    rng = np.random.default_rng(7)
    index = build_index(rng, n=1000, d=64)
    for k in (1, 5, 50):
        query = random_unit_vectors(rng, 1, 64)[0]
        got = index.top_k(query, k, SecurityTier.PUBLIC)
        want = oracle_top_k(index.entries, query, k, SecurityTier.PUBLIC)
        assert [cid for cid, _ in got.hits] == [cid for cid, _ in want]
        for (_, gs), (_, ws) in zip(got.hits, want):
            assert abs(gs - ws) <= 1e-9


def test_top_k_exact_query_ranks_first():
    rng = np.random.default_rng(11)
    index = build_index(rng, n=200, d=32)
    target = index.entries[57]
    got = index.top_k(target.vector, 3, SecurityTier.PUBLIC)
    assert got.hits[0][0] == target.chunk_id
    assert abs(got.hits[0][1] - 1.0) < 1e-6


def test_top_k_tier_filtering():
    rng = np.random.default_rng(13)
    tiers = (SecurityTier.PUBLIC, SecurityTier.COLLABORATION, SecurityTier.CONTROLLED)
    index = build_index(rng, n=90, d=32, tiers=tiers)
    query = random_unit_vectors(rng, 1, 32)[0]
    public_hits = index.top_k(query, 90, SecurityTier.PUBLIC)
    assert public_hits.eligible == 30
    for chunk_id, _ in public_hits.hits:
        entry = next(e for e in index.entries if e.chunk_id == chunk_id)
        assert entry.tier <= SecurityTier.PUBLIC


def test_top_k_public_over_controlled_only_index_is_empty():
    rng = np.random.default_rng(17)
    index = build_index(rng, n=40, d=32, tiers=(SecurityTier.CONTROLLED,))
    query = random_unit_vectors(rng, 1, 32)[0]
    got = index.top_k(query, 10, SecurityTier.PUBLIC)
    assert got.hits == []
    assert got.eligible == 0
    assert got.index_empty is False


def test_top_k_empty_index_flagged():
    index = VectorIndex(16)
    got = index.top_k(np.zeros(16), 5, SecurityTier.CONTROLLED)
    assert got.hits == [] and got.index_empty is True


def test_top_k_ties_broken_by_chunk_id():
    index = VectorIndex(4)
    v = np.array([1.0, 0.0, 0.0, 0.0])
    for cid in ("z#0001", "a#0001", "m#0001"):
        index.add(cid, v, SecurityTier.PUBLIC, "http://h.org/t")
    got = index.top_k(v, 3, SecurityTier.PUBLIC)
    assert [cid for cid, _ in got.hits] == ["a#0001", "m#0001", "z#0001"]


def test_add_validations():
    index = VectorIndex(8)
    unit = np.ones(8) / np.sqrt(8)
    index.add("c#0001", unit, SecurityTier.PUBLIC, "u")
    with pytest.raises(Exception):
        index.add("c#0001", unit, SecurityTier.PUBLIC, "u")  # duplicate id
    with pytest.raises(Exception):
        index.add("c#0002", np.ones(8), SecurityTier.PUBLIC, "u")  # not unit
    with pytest.raises(Exception):
        index.add("c#0003", np.ones(4) / 2, SecurityTier.PUBLIC, "u")  # dim


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def test_persist_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    index = build_index(
        rng, n=100, d=48,
        tiers=(SecurityTier.PUBLIC, SecurityTier.COLLABORATION, SecurityTier.CONTROLLED),
    )
    path = tmp_path / "x.cfix"
    index.save(path)
    loaded = VectorIndex.load(path)
    assert loaded.dimension == index.dimension
    assert len(loaded) == len(index)
    for original, restored in zip(index.entries, loaded.entries):
        assert original.chunk_id == restored.chunk_id
        assert original.tier == restored.tier
        assert original.source_url == restored.source_url
        assert original.vector.tobytes() == restored.vector.tobytes()


def test_persist_empty_round_trip(tmp_path):
    index = VectorIndex(16)
    path = tmp_path / "empty.cfix"
    index.save(path)
    loaded = VectorIndex.load(path)
    assert len(loaded) == 0 and loaded.dimension == 16


def test_truncated_file_detected(tmp_path):
    rng = np.random.default_rng(29)
    index = build_index(rng, n=20, d=16)
    path = tmp_path / "t.cfix"
    index.save(path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(IndexFormatError):
        VectorIndex.load(path)


def test_corrupted_byte_detected(tmp_path):
    rng = np.random.default_rng(31)
    index = build_index(rng, n=20, d=16)
    path = tmp_path / "c.cfix"
    index.save(path)
    data = bytearray(path.read_bytes())
    data[40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(IndexFormatError):
        VectorIndex.load(path)


def test_wrong_version_rejected(tmp_path):
    import struct
    import zlib

    rng = np.random.default_rng(37)
    index = build_index(rng, n=5, d=8)
    path = tmp_path / "v.cfix"
    index.save(path)
    data = bytearray(path.read_bytes())
    data[4:6] = struct.pack("<H", 99)
    body = bytes(data[:-4])
    data[-4:] = struct.pack("<I", zlib.crc32(body))
    path.write_bytes(bytes(data))
    with pytest.raises(IndexFormatError, match="version"):
        VectorIndex.load(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.cfix"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(IndexFormatError, match="magic"):
        VectorIndex.load(path)


def test_save_is_deterministic(tmp_path):
    rng = np.random.default_rng(41)
    index = build_index(rng, n=30, d=16)
    p1, p2 = tmp_path / "a.cfix", tmp_path / "b.cfix"
    index.save(p1)
    index.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_chunk_sidecar_round_trip(tmp_path):
    body = " ".join(f"w{i}" for i in range(100))
    chunks = chunk_text(body, "e" * 64, ChunkPolicy(32, 4), tier=SecurityTier.COLLABORATION)
    path = chunk_store_path(tmp_path / "x.cfix")
    save_chunks(chunks, {"e" * 64: "http://h.org/doc"}, path)
    loaded = load_chunks(path)
    assert len(loaded) == len(chunks)
    first = loaded[chunks[0].chunk_id]
    assert first["text"] == chunks[0].text
    assert first["tier"] == "collaboration"
    assert first["source_url"] == "http://h.org/doc"
