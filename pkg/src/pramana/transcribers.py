"""Pseudo-transcriber adapters: subprocess, HTTP and replay.

Every adapter returns exactly one :class:`TranscriptCandidate` per input
segment, in input order, or raises :class:`TranscriptionError` carrying the
candidates it did get plus the ids it could not produce. Texts pass through
verbatim.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from typing import Sequence

from .errors import AdapterError, AdapterUnavailable, ConfigError
from .protocol import ChannelPool, ChannelTimeout, ProtocolViolation, exchange, post_json
from .segmentation import AudioSegment

log = logging.getLogger(__name__)

KINDS = ("subprocess", "http", "replay")
DIST_TOL = 1e-6


@dataclass(frozen=True)
class TranscriberSpec:
    id: str
    kind: str
    command: tuple = ()
    url: str = ""
    path: str = ""
    batch_size: int = 16
    timeout_s: float = 60.0
    max_inflight: int = 1

    def validate(self) -> list[str]:
        errs = []
        if not self.id:
            errs.append("transcriber id must be nonempty")
        if self.kind not in KINDS:
            errs.append(f"transcriber {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == "subprocess" and not self.command:
            errs.append(f"transcriber {self.id!r}: subprocess kind needs a command")
        if self.kind == "http" and not self.url:
            errs.append(f"transcriber {self.id!r}: http kind needs a url")
        if self.kind == "replay" and not self.path:
            errs.append(f"transcriber {self.id!r}: replay kind needs a path")
        if self.batch_size < 1:
            errs.append(f"transcriber {self.id!r}: batch_size must be >= 1")
        if self.timeout_s <= 0:
            errs.append(f"transcriber {self.id!r}: timeout_s must be positive")
        if self.max_inflight < 1:
            errs.append(f"transcriber {self.id!r}: max_inflight must be >= 1")
        return errs

    def to_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind}
        if self.command:
            d["command"] = list(self.command)
        if self.url:
            d["url"] = self.url
        if self.path:
            d["path"] = self.path
        d.update(batch_size=self.batch_size, timeout_s=self.timeout_s, max_inflight=self.max_inflight)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriberSpec":
        d = dict(d)
        if isinstance(d.get("command"), str):
            d["command"] = (d["command"],)
        if "command" in d:
            d["command"] = tuple(d["command"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"transcriber spec: {exc}") from None


@dataclass(frozen=True)
class TranscriptCandidate:
    segment_id: str
    transcriber_id: str
    text: str
    token_dists: tuple | None = None
    confidence: float | None = None


class TranscriptionError(AdapterError):
    """Some segments of a batch could not be transcribed."""

    def __init__(self, message: str, results: dict[str, TranscriptCandidate], failed: dict[str, str]):
        self.results = results
        self.failed = failed
        missing = ", ".join(sorted(failed))
        super().__init__(f"{message}: {missing}")


def candidate_from_reply(reply: dict, transcriber_id: str) -> TranscriptCandidate:
    """Validate one wire reply; raise ProtocolViolation on bad payloads."""
    text = reply.get("text")
    if not isinstance(text, str):
        raise ProtocolViolation(f"reply {reply.get('id')!r} has no text")
    dists = reply.get("token_dists")
    if dists is not None:
        try:
            dists = tuple(tuple(float(p) for p in row) for row in dists)
        except (TypeError, ValueError):
            raise ProtocolViolation(f"reply {reply.get('id')!r}: token_dists not numeric") from None
        for row in dists:
            if abs(sum(row) - 1.0) > DIST_TOL:
                raise ProtocolViolation(f"reply {reply.get('id')!r}: token distribution does not sum to 1")
    conf = reply.get("confidence")
    if conf is not None:
        if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise ProtocolViolation(f"reply {reply.get('id')!r}: confidence outside [0, 1]")
        conf = float(conf)
    return TranscriptCandidate(reply["id"], transcriber_id, text, dists, conf)


def request_for(seg: AudioSegment) -> dict:
    return {"id": seg.id, "audio_path": seg.audio_path, "offset_s": seg.offset_s, "duration_s": seg.duration_s}


class Transcriber:
    def __init__(self, spec: TranscriberSpec):
        self.spec = spec

    @property
    def id(self) -> str:
        return self.spec.id

    def transcribe_batch(self, segments: Sequence[AudioSegment]) -> list[TranscriptCandidate]:
        replies, failure = self._fetch(segments)
        results: dict[str, TranscriptCandidate] = {}
        failed: dict[str, str] = {}
        for seg in segments:
            reply = replies.get(seg.id)
            if reply is None:
                failed[seg.id] = failure or "incomplete batch"
                continue
            try:
                results[seg.id] = candidate_from_reply(reply, self.id)
            except ProtocolViolation as exc:
                log.warning("%s: %s", self.id, exc)
                failed[seg.id] = "protocol violation"
        if failed:
            reasons = set(failed.values())
            head = reasons.pop() if len(reasons) == 1 else "incomplete batch"
            raise TranscriptionError(head, results, failed)
        return [results[seg.id] for seg in segments]

    def _fetch(self, segments) -> tuple[dict[str, dict], str | None]:
        raise NotImplementedError

    def healthcheck(self) -> None:
        """Raise AdapterUnavailable when the backend is not usable."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class ReplayTranscriber(Transcriber):
    """Serves replies from a JSONL table keyed by segment id."""

    def __init__(self, spec: TranscriberSpec):
        super().__init__(spec)
        self._table: dict[str, dict] | None = None

    @property
    def table(self) -> dict[str, dict]:
        if self._table is None:
            self._table = load_replay_table(self.spec.path)
        return self._table

    def _fetch(self, segments):
        table = self.table
        return {s.id: table[s.id] for s in segments if s.id in table}, None

    def healthcheck(self) -> None:
        if not os.path.isfile(self.spec.path) or not os.access(self.spec.path, os.R_OK):
            raise AdapterUnavailable(f"replay file not readable: {self.spec.path}")


class SubprocessTranscriber(Transcriber):
    def __init__(self, spec: TranscriberSpec):
        super().__init__(spec)
        self.pool = ChannelPool(spec.command, spec.max_inflight, spec.timeout_s)

    def _fetch(self, segments):
        return exchange(self.pool, [request_for(s) for s in segments])

    def healthcheck(self) -> None:
        ch = self.pool.acquire()
        self.pool.release(ch)

    def close(self) -> None:
        self.pool.close()


class HttpTranscriber(Transcriber):
    def __init__(self, spec: TranscriberSpec):
        super().__init__(spec)
        self._slots = threading.BoundedSemaphore(spec.max_inflight)

    @property
    def endpoint(self) -> str:
        return self.spec.url.rstrip("/") + "/transcribe"

    def _fetch(self, segments):
        with self._slots:
            try:
                body = post_json(self.endpoint, {"segments": [request_for(s) for s in segments]}, self.spec.timeout_s)
            except ChannelTimeout:
                return {}, "transcriber timeout"
            except ProtocolViolation as exc:
                return {}, f"protocol violation: {exc}"
        results = body.get("results")
        if not isinstance(results, list):
            log.warning("protocol violation from %s: %r", self.endpoint, body)
            return {}, "protocol violation: no results list"
        replies = {}
        for reply in results:
            if isinstance(reply, dict) and isinstance(reply.get("id"), str):
                replies[reply["id"]] = reply
            else:
                log.warning("protocol violation from %s: %r", self.endpoint, reply)
        return replies, None

    def healthcheck(self) -> None:
        try:
            post_json(self.endpoint, {"segments": []}, self.spec.timeout_s)
        except AdapterUnavailable:
            raise
        except AdapterError as exc:
            raise AdapterUnavailable(str(exc)) from None


def load_replay_table(path) -> dict[str, dict]:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                raise ProtocolViolation(f"{path}:{lineno}: malformed JSON") from None
            if not isinstance(row, dict) or not isinstance(row.get("id"), str):
                raise ProtocolViolation(f"{path}:{lineno}: row without string id")
            table[row["id"]] = row
    return table


_ADAPTERS = {"replay": ReplayTranscriber, "subprocess": SubprocessTranscriber, "http": HttpTranscriber}


def make_transcriber(spec: TranscriberSpec) -> Transcriber:
    errs = spec.validate()
    if errs:
        raise ConfigError(errs)
    return _ADAPTERS[spec.kind](spec)


def transcribe_batch(spec: TranscriberSpec, segments: Sequence[AudioSegment]) -> list[TranscriptCandidate]:
    """One-shot convenience wrapper; long runs should keep the adapter alive."""
    adapter = make_transcriber(spec)
    try:
        return adapter.transcribe_batch(segments)
    finally:
        adapter.close()


def healthcheck(spec: TranscriberSpec) -> None:
    adapter = make_transcriber(spec)
    try:
        adapter.healthcheck()
    finally:
        adapter.close()
