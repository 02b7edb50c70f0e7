"""Chunking, deterministic hash embedding, and exact tier-filtered retrieval.

Chunks are bounded-token spans of a document body cut preferentially at
Markdown headings, then paragraph breaks, then word boundaries; consecutive
chunks share a configured token overlap and their char spans tile the body so
that overlap-stripped concatenation reproduces it byte for byte.

The index is an exact cosine scan persisted in a small binary format:
magic "CFIX", version u16, dimension u16, entry count u64, two u16 string
slot widths, fixed-size little-endian records, and a trailing CRC-32.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import count_tokens
from .tiers import SecurityTier

INDEX_MAGIC = b"CFIX"
INDEX_VERSION = 1
DEFAULT_DIMENSION = 384


class IndexError_(Exception):
    pass


class ZeroVector(IndexError_):
    """Text produced no hashable tokens; callers skip the chunk with a warning."""


class IndexFormatError(IndexError_):
    pass


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------


@dataclass
class ChunkPolicy:
    target_tokens: int = 512
    overlap_tokens: int = 64

    def __post_init__(self) -> None:
        if self.target_tokens < 1:
            raise ValueError("target_tokens must be positive")
        if not 0 <= self.overlap_tokens < self.target_tokens:
            raise ValueError("overlap_tokens must be in [0, target_tokens)")


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_count: int
    tier: SecurityTier
    char_span: tuple[int, int]


@dataclass
class _Piece:
    start: int
    end: int
    tokens: int
    heading: bool = False  # piece begins a Markdown heading line
    paragraph: bool = False  # piece follows a blank line
    continuation: bool = False  # fragment of an over-long word; no overlap across it


_WORD_RE = re.compile(r"\S+")
_HEADING_LINE_RE = re.compile(r"(?m)^#{1,6} ")


def _split_long_piece(text: str, start: int, end: int, target: int) -> list[_Piece]:
    """Split one over-long whitespace piece into fragments of <= target tokens."""
    budget = target * 4  # bytes per fragment
    out: list[_Piece] = []
    pos = start
    while pos < end:
        stop = pos
        size = 0
        while stop < end:
            step = len(text[stop].encode("utf-8"))
            if size + step > budget:
                break
            size += step
            stop += 1
        if stop == pos:  # single char over budget: take it anyway
            stop = pos + 1
        out.append(
            _Piece(pos, stop, count_tokens(text[pos:stop]), continuation=pos != start)
        )
        pos = stop
    return out


def _pieces(text: str, target: int) -> list[_Piece]:
    heading_starts = {m.start() for m in _HEADING_LINE_RE.finditer(text)}
    pieces: list[_Piece] = []
    prev_end = 0
    for m in _WORD_RE.finditer(text):
        tokens = (len(m.group().encode("utf-8")) + 3) // 4
        if tokens > target:
            new = _split_long_piece(text, m.start(), m.end(), target)
        else:
            new = [_Piece(m.start(), m.end(), tokens)]
        gap = text[prev_end : new[0].start]
        new[0].heading = new[0].start in heading_starts
        new[0].paragraph = gap.count("\n") >= 2 or prev_end == 0
        pieces.extend(new)
        prev_end = new[-1].end
    return pieces


def chunk_text(
    body: str,
    doc_id: str,
    policy: ChunkPolicy | None = None,
    tier: SecurityTier = SecurityTier.CONTROLLED,
) -> list[Chunk]:
    """Split a document body into overlapping chunks.

    Char spans tile the body: chunk k+1 starts at or before chunk k's end,
    and stripping each chunk's leading overlap reproduces the body exactly.
    """
    policy = policy or ChunkPolicy()
    target, overlap = policy.target_tokens, policy.overlap_tokens
    pieces = _pieces(body, target)
    if not pieces:
        return [_make_chunk(body, doc_id, 1, (0, len(body)), tier)]

    chunks: list[Chunk] = []
    n = len(pieces)
    i = 0  # first piece of the current chunk
    seq = 1
    span_start = 0
    while True:
        # grow the window while it fits the target and no forced break occurs
        j = i
        total = 0
        while j < n and total + pieces[j].tokens <= target:
            if j > i and pieces[j].continuation:
                break
            total += pieces[j].tokens
            j += 1
        if j >= n:
            chunks.append(_make_chunk(body, doc_id, seq, (span_start, len(body)), tier))
            break
        cut = _best_cut(pieces, i, j)
        span_end = pieces[cut].start
        chunks.append(_make_chunk(body, doc_id, seq, (span_start, span_end), tier))
        seq += 1
        # overlap: largest piece suffix of this chunk within the overlap budget
        if pieces[cut].continuation:
            nxt = cut
        else:
            nxt = cut
            used = 0
            while nxt > i + 1 and not pieces[nxt - 1].continuation:
                cost = pieces[nxt - 1].tokens
                if used + cost > overlap:
                    break
                used += cost
                nxt -= 1
        i = nxt
        span_start = pieces[i].start
    return chunks


def _best_cut(pieces: list[_Piece], i: int, j: int) -> int:
    """Pick the cut index in (i, j]: latest heading start, else latest
    paragraph start, else the window end (a word boundary)."""
    if pieces[j].continuation:
        return j  # forced break inside an over-long word
    for predicate in (lambda p: p.heading, lambda p: p.paragraph):
        for c in range(j, i, -1):
            if predicate(pieces[c]):
                return c
    return j


def _make_chunk(body: str, doc_id: str, seq: int, span: tuple[int, int], tier) -> Chunk:
    text = body[span[0] : span[1]]
    return Chunk(
        chunk_id=f"{doc_id}#{seq:04d}",
        doc_id=doc_id,
        text=text,
        token_count=count_tokens(text),
        tier=tier,
        char_span=span,
    )


def reconstruct(chunks: list[Chunk]) -> str:
    """Concatenate chunks with their overlaps removed (the chunking oracle)."""
    out: list[str] = []
    prev_end = 0
    for chunk in chunks:
        start, end = chunk.char_span
        skip = max(0, prev_end - start)
        out.append(chunk.text[skip:])
        prev_end = end
    return "".join(out)


# ---------------------------------------------------------------------------
# Deterministic hash embedding
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def embed_hash(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    """Feature-hashing embedder over lowercase ASCII-alphanumeric unigrams and
    bigrams: a fixed 64-bit hash picks the bucket, its top bit the sign, and
    the accumulated vector is L2-normalized. Deterministic across runs and
    platforms."""
    words = _TOKEN_RE.findall(text.lower())
    if not words:
        raise ZeroVector("no hashable tokens in text")
    features = words + [f"{a} {b}" for a, b in zip(words, words[1:])]
    vec = np.zeros(dimension, dtype=np.float64)
    for feature in features:
        h = int.from_bytes(
            hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little"
        )
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % dimension] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ZeroVector("all features cancelled")
    return vec / norm


# ---------------------------------------------------------------------------
# Exact index
# ---------------------------------------------------------------------------


@dataclass
class IndexEntry:
    chunk_id: str
    vector: np.ndarray  # float64, unit norm
    tier: SecurityTier
    source_url: str


@dataclass
class SearchResult:
    hits: list[tuple[str, float]]
    eligible: int
    index_empty: bool


class VectorIndex:
    """Exact cosine top-k over unit vectors with tier ceilings."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1 or dimension > 0xFFFF:
            raise ValueError("dimension out of range")
        self.dimension = dimension
        self.entries: list[IndexEntry] = []
        self._ids: set[str] = set()
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, chunk_id: str, vector: np.ndarray, tier: SecurityTier, source_url: str) -> None:
        if chunk_id in self._ids:
            raise IndexError_(f"duplicate chunk_id: {chunk_id}")
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise IndexError_(
                f"vector dimension {vec.shape} does not match index ({self.dimension})"
            )
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-6:
            raise IndexError_(f"vector for {chunk_id} is not unit norm ({norm})")
        self.entries.append(IndexEntry(chunk_id, vec, tier, source_url))
        self._ids.add(chunk_id)
        self._matrix = None

    def _scores(self, query: np.ndarray) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack([e.vector for e in self.entries])
        return self._matrix @ np.asarray(query, dtype=np.float64)

    def top_k(self, query: np.ndarray, k: int, tier_ceiling: SecurityTier) -> SearchResult:
        """Exact scan over entries with tier <= ceiling; descending score,
        ties broken by ascending chunk_id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.entries:
            return SearchResult([], 0, True)
        scores = self._scores(query)
        eligible = [
            (float(scores[i]), e.chunk_id)
            for i, e in enumerate(self.entries)
            if e.tier <= tier_ceiling
        ]
        eligible.sort(key=lambda pair: (-pair[0], pair[1]))
        return SearchResult(
            hits=[(chunk_id, score) for score, chunk_id in eligible[:k]],
            eligible=len(eligible),
            index_empty=False,
        )

    # -- persistence --------------------------------------------------------

    def save(self, path: Path | str) -> None:
        id_slot = max((len(e.chunk_id.encode()) for e in self.entries), default=0)
        url_slot = max((len(e.source_url.encode()) for e in self.entries), default=0)
        if id_slot > 0xFFFF or url_slot > 0xFFFF:
            raise IndexFormatError("string field exceeds format limit")
        buf = bytearray()
        buf += INDEX_MAGIC
        buf += struct.pack("<HHQHH", INDEX_VERSION, self.dimension, len(self.entries), id_slot, url_slot)
        for e in self.entries:
            cid = e.chunk_id.encode()
            url = e.source_url.encode()
            buf += struct.pack("<H", len(cid)) + cid.ljust(id_slot, b"\0")
            buf += struct.pack("<B", int(e.tier))
            buf += struct.pack("<H", len(url)) + url.ljust(url_slot, b"\0")
            buf += e.vector.astype("<f8").tobytes()
        buf += struct.pack("<I", zlib.crc32(bytes(buf)))
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(bytes(buf))
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path | str) -> "VectorIndex":
        data = Path(path).read_bytes()
        if len(data) < 4 + 16 + 4:
            raise IndexFormatError("file too short")
        if data[:4] != INDEX_MAGIC:
            raise IndexFormatError("bad magic bytes")
        (stored_crc,) = struct.unpack("<I", data[-4:])
        if zlib.crc32(data[:-4]) != stored_crc:
            raise IndexFormatError("checksum mismatch (truncated or corrupt index)")
        version, dimension, count, id_slot, url_slot = struct.unpack("<HHQHH", data[4:20])
        if version != INDEX_VERSION:
            raise IndexFormatError(f"unsupported index version {version}")
        record = 2 + id_slot + 1 + 2 + url_slot + 8 * dimension
        expected = 20 + record * count + 4
        if len(data) != expected:
            raise IndexFormatError("entry area size mismatch")
        index = cls(dimension)
        pos = 20
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            chunk_id = data[pos : pos + id_len].decode()
            pos += id_slot
            tier = SecurityTier(data[pos])
            pos += 1
            (url_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            url = data[pos : pos + url_len].decode()
            pos += url_slot
            vec = np.frombuffer(data, dtype="<f8", count=dimension, offset=pos).copy()
            pos += 8 * dimension
            index.entries.append(IndexEntry(chunk_id, vec, tier, url))
            index._ids.add(chunk_id)
        return index


# ---------------------------------------------------------------------------
# Chunk text sidecar (needed to assemble prompts at serve time)
# ---------------------------------------------------------------------------


def chunk_store_path(index_path: Path | str) -> Path:
    return Path(str(index_path) + ".chunks.jsonl")


def save_chunks(chunks: list[Chunk], source_urls: dict[str, str], path: Path | str) -> None:
    lines = []
    for c in chunks:
        lines.append(
            json.dumps(
                {
                    "chunk_id": c.chunk_id,
                    "doc_id": c.doc_id,
                    "text": c.text,
                    "token_count": c.token_count,
                    "tier": c.tier.label,
                    "char_span": list(c.char_span),
                    "source_url": source_urls.get(c.doc_id, ""),
                },
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_chunks(path: Path | str) -> dict[str, dict]:
    out: dict[str, dict] = {}
    p = Path(path)
    if not p.exists():
        return out
    for line in p.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["chunk_id"]] = rec
    return out
