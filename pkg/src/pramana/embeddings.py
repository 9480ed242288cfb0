"""Audio/text embedding providers for the embedding-similarity evaluator.

Only the provider interface is modeled; the multimodal encoder itself lives
behind a subprocess, an HTTP endpoint or a replay table. ``mock_bag_of_chars``
is a deterministic stand-in whose similarity tracks character overlap.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass

import numpy as np

from .errors import AdapterError, ConfigError
from .protocol import ChannelPool, exchange, post_json
from .segmentation import AudioSegment

KINDS = ("subprocess", "http", "replay", "mock_bag_of_chars")

# independent Devanagari vowels and consonants, then ASCII lowercase and digits
DEFAULT_ALPHABET = (
    "".join(chr(c) for c in range(0x0905, 0x0915))
    + "".join(chr(c) for c in range(0x0915, 0x093A))
    + "abcdefghijklmnopqrstuvwxyz0123456789"
)


class EmbeddingUnavailable(AdapterError):
    pass


def text_key(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    id: str
    kind: str
    dimension: int = 0
    command: tuple = ()
    url: str = ""
    path: str = ""
    alphabet: str = ""
    timeout_s: float = 60.0
    max_inflight: int = 1

    def __post_init__(self):
        if self.kind == "mock_bag_of_chars":
            alphabet = self.alphabet or DEFAULT_ALPHABET
            object.__setattr__(self, "alphabet", alphabet)
            if not self.dimension:
                object.__setattr__(self, "dimension", len(alphabet))

    def validate(self) -> list[str]:
        errs = []
        if self.kind not in KINDS:
            errs.append(f"embedding provider {self.id!r}: unknown kind {self.kind!r}")
        if self.dimension <= 0:
            errs.append(f"embedding provider {self.id!r}: dimension must be positive")
        if self.kind == "mock_bag_of_chars":
            if len(set(self.alphabet)) != len(self.alphabet):
                errs.append(f"embedding provider {self.id!r}: alphabet has duplicates")
            if self.dimension != len(self.alphabet):
                errs.append(f"embedding provider {self.id!r}: dimension must equal alphabet size")
        if self.kind == "subprocess" and not self.command:
            errs.append(f"embedding provider {self.id!r}: subprocess kind needs a command")
        if self.kind == "http" and not self.url:
            errs.append(f"embedding provider {self.id!r}: http kind needs a url")
        if self.kind == "replay" and not self.path:
            errs.append(f"embedding provider {self.id!r}: replay kind needs a path")
        return errs

    def to_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind, "dimension": self.dimension}
        for name in ("url", "path", "alphabet"):
            if getattr(self, name):
                d[name] = getattr(self, name)
        if self.command:
            d["command"] = list(self.command)
        if self.kind in ("subprocess", "http"):
            d.update(timeout_s=self.timeout_s, max_inflight=self.max_inflight)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingProviderSpec":
        d = dict(d)
        if "command" in d:
            d["command"] = tuple([d["command"]] if isinstance(d["command"], str) else d["command"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"embedding provider spec: {exc}") from None


def bag_of_chars(text: str, alphabet: str) -> np.ndarray:
    """L2-normalized character histogram; characters outside ``alphabet`` are ignored."""
    index = {ch: i for i, ch in enumerate(alphabet)}
    v = np.zeros(len(alphabet))
    for ch in text:
        i = index.get(ch)
        if i is not None:
            v[i] += 1.0
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


class EmbeddingProvider:
    """Caches vectors per key for the lifetime of the provider."""

    def __init__(self, spec: EmbeddingProviderSpec):
        errs = spec.validate()
        if errs:
            raise ConfigError(errs)
        self.spec = spec
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()
        self._table: dict[str, list] | None = None
        self._pool = ChannelPool(spec.command, spec.max_inflight, spec.timeout_s) if spec.kind == "subprocess" else None
        self._slots = threading.BoundedSemaphore(spec.max_inflight)

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmbeddingUnavailable("cannot embed empty text")
        key = text_key(text)
        return self._cached(("text", key), lambda: self._compute_text(text, key))

    def embed_audio(self, segment: AudioSegment) -> np.ndarray:
        return self._cached(("audio", segment.id), lambda: self._compute_audio(segment))

    def _cached(self, key, compute) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        vec = np.asarray(compute(), dtype=np.float64)
        if vec.shape != (self.spec.dimension,):
            raise EmbeddingUnavailable(
                f"provider {self.spec.id!r} returned shape {vec.shape}, expected ({self.spec.dimension},)"
            )
        with self._lock:
            self._cache[key] = vec
        return vec

    def _compute_text(self, text, key):
        kind = self.spec.kind
        if kind == "mock_bag_of_chars":
            return bag_of_chars(text, self.spec.alphabet)
        if kind == "replay":
            return self._lookup(key)
        return self._remote({"id": key, "kind": "text", "text": text})

    def _compute_audio(self, seg: AudioSegment):
        kind = self.spec.kind
        if kind == "mock_bag_of_chars":
            # test corpora only: the audio "sounds like" its reference text
            if seg.reference_text is None:
                raise EmbeddingUnavailable(f"segment {seg.id}: mock audio embedding needs reference text")
            return bag_of_chars(seg.reference_text, self.spec.alphabet)
        if kind == "replay":
            return self._lookup(seg.id)
        return self._remote(
            {"id": seg.id, "kind": "audio", "audio_path": seg.audio_path,
             "offset_s": seg.offset_s, "duration_s": seg.duration_s}
        )

    def _lookup(self, key: str):
        if self._table is None:
            table = load_embedding_table(self.spec.path)
            with self._lock:
                self._table = table
        if key not in self._table:
            raise EmbeddingUnavailable(f"embedding unavailable: {key}")
        return self._table[key]

    def _remote(self, request: dict):
        rid = request["id"]
        if self.spec.kind == "subprocess":
            replies, failure = exchange(self._pool, [request])
            reply = replies.get(rid)
            if reply is None:
                raise EmbeddingUnavailable(f"embedding unavailable for {rid}: {failure or 'no reply'}")
        else:
            with self._slots:
                body = post_json(self.spec.url.rstrip("/") + "/embed", {"segments": [request]}, self.spec.timeout_s)
            results = body.get("results") or []
            reply = next((r for r in results if isinstance(r, dict) and r.get("id") == rid), None)
            if reply is None:
                raise EmbeddingUnavailable(f"embedding unavailable for {rid}: no reply")
        vec = reply.get("vector")
        if not isinstance(vec, list):
            raise EmbeddingUnavailable(f"embedding reply for {rid} has no vector")
        return vec

    def close(self) -> None:
        if self._pool is not None:
            self._pool.close()


def load_embedding_table(path) -> dict[str, list]:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if not isinstance(row.get("id"), str) or not isinstance(row.get("vector"), list):
                raise EmbeddingUnavailable(f"{path}:{lineno}: expected {{'id', 'vector'}}")
            table[row["id"]] = row["vector"]
    return table


def embed_text(spec: EmbeddingProviderSpec, text: str) -> np.ndarray:
    return EmbeddingProvider(spec).embed_text(text)


def embed_audio(spec: EmbeddingProviderSpec, segment: AudioSegment) -> np.ndarray:
    return EmbeddingProvider(spec).embed_audio(segment)
