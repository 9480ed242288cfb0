"""Energy-based voice activity detection and segment manifests.

The detector is a deliberately simple stand-in: frame RMS compared against
a percentile noise floor. Real VAD output can be brought in through
:func:`load_external_segments`.
"""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ManifestError


@dataclass(frozen=True)
class AudioSegment:
    id: str
    source_id: str
    audio_path: str
    offset_s: float
    duration_s: float
    domain: str | None = None
    reference_text: str | None = None

    @property
    def end_s(self) -> float:
        return self.offset_s + self.duration_s

    def to_row(self) -> dict:
        row = {
            "id": self.id,
            "audio_path": self.audio_path,
            "offset_s": self.offset_s,
            "duration_s": self.duration_s,
        }
        if self.domain is not None:
            row["domain"] = self.domain
        if self.source_id and self.source_id != self.audio_path:
            row["source"] = self.source_id
        if self.reference_text is not None:
            row["text"] = self.reference_text
        return row

    @classmethod
    def from_row(cls, row: dict) -> "AudioSegment":
        try:
            seg_id = row["id"]
            audio_path = row.get("audio_path", "")
            offset = float(row.get("offset_s", 0.0))
            duration = float(row["duration_s"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad segment row: {exc!r}") from None
        if not isinstance(seg_id, str) or not seg_id:
            raise ManifestError("segment id must be a nonempty string")
        if offset < 0 or duration <= 0:
            raise ManifestError(f"segment {seg_id}: need offset_s >= 0 and duration_s > 0")
        return cls(
            id=seg_id,
            source_id=row.get("source") or audio_path,
            audio_path=audio_path,
            offset_s=offset,
            duration_s=duration,
            domain=row.get("domain"),
            reference_text=row.get("text"),
        )


@dataclass(frozen=True)
class VadConfig:
    frame_ms: float = 30.0
    energy_threshold_db: float = 12.0
    hangover_frames: int = 8
    min_dur_s: float = 2.0
    max_dur_s: float = 30.0
    noise_floor_percentile: float = 10.0
    # frames within this many dB of the loudest frame always count as voiced,
    # so recordings without any silence are not rejected wholesale
    peak_margin_db: float = 6.0

    def __post_init__(self):
        if self.frame_ms <= 0:
            raise ValueError("frame_ms must be positive")
        if not self.min_dur_s < self.max_dur_s:
            raise ValueError("min_dur_s must be smaller than max_dur_s")
        if self.hangover_frames < 0:
            raise ValueError("hangover_frames must be nonnegative")
        if not 0 <= self.noise_floor_percentile <= 100:
            raise ValueError("noise_floor_percentile must lie in [0, 100]")


def frame_rms(samples: np.ndarray, frame_len: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    n_frames = math.ceil(len(x) / frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[: len(x)] = x
    frames = padded.reshape(n_frames, frame_len)
    counts = np.full(n_frames, frame_len, dtype=np.float64)
    counts[-1] = len(x) - (n_frames - 1) * frame_len
    return np.sqrt((frames**2).sum(axis=1) / counts)


def voiced_mask(rms: np.ndarray, cfg: VadConfig) -> np.ndarray:
    peak = float(rms.max()) if len(rms) else 0.0
    if peak <= 0.0:
        return np.zeros(len(rms), dtype=bool)
    floor = float(np.percentile(rms, cfg.noise_floor_percentile))
    threshold = min(floor * 10 ** (cfg.energy_threshold_db / 20), peak * 10 ** (-cfg.peak_margin_db / 20))
    return (rms > 0) & (rms >= threshold)


def _runs(mask: np.ndarray, hangover: int) -> list[tuple[int, int]]:
    """Half-open frame runs of voiced frames, bridging gaps of <= hangover frames."""
    runs: list[tuple[int, int]] = []
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return runs
    start = prev = int(idx[0])
    for i in idx[1:]:
        i = int(i)
        if i - prev - 1 > hangover:
            runs.append((start, prev + 1))
            start = i
        prev = i
    runs.append((start, prev + 1))
    return runs


def _split_long(run, rms, max_frames):
    start, end = run
    if end - start <= max_frames:
        return [run]
    length = end - start
    lo, hi = start + length // 4, start + (3 * length) // 4
    split = lo + int(np.argmin(rms[lo:hi]))
    # the quietest frame is dropped between the halves
    return _split_long((start, split), rms, max_frames) + _split_long((split + 1, end), rms, max_frames)


def detect_segments(
    samples,
    sample_rate: int,
    cfg: VadConfig = VadConfig(),
    source_id: str = "",
    audio_path: str = "",
    domain: str | None = None,
) -> list[AudioSegment]:
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected mono samples")
    if len(x) == 0:
        return []
    frame_len = max(1, int(round(sample_rate * cfg.frame_ms / 1000)))
    rms = frame_rms(x, frame_len)
    mask = voiced_mask(rms, cfg)
    n = len(x)

    def seconds(frame: int) -> float:
        return min(frame * frame_len, n) / sample_rate

    max_frames = int(cfg.max_dur_s * sample_rate // frame_len)
    segments = []
    for run in _runs(mask, cfg.hangover_frames):
        for start, end in _split_long(run, rms, max_frames):
            t0, t1 = seconds(start), seconds(end)
            dur = t1 - t0
            if dur < cfg.min_dur_s or dur > cfg.max_dur_s:
                continue
            segments.append(
                AudioSegment(
                    id=f"{source_id}-{len(segments):05d}" if source_id else f"seg-{len(segments):05d}",
                    source_id=source_id,
                    audio_path=audio_path,
                    offset_s=round(t0, 6),
                    duration_s=round(dur, 6),
                    domain=domain,
                )
            )
    return segments


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM mono WAV as floats in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        rate = w.getframerate()
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def segment_wav(path, cfg: VadConfig = VadConfig(), domain: str | None = None) -> list[AudioSegment]:
    samples, rate = read_wav(path)
    return detect_segments(samples, rate, cfg, source_id=Path(path).stem, audio_path=str(path), domain=domain)


def check_segments(segments: Iterable[AudioSegment]) -> list[AudioSegment]:
    """Sort per source by offset and reject overlaps within a source."""
    ordered = sorted(segments, key=lambda s: (s.source_id, s.offset_s, s.id))
    for a, b in zip(ordered, ordered[1:]):
        if a.source_id == b.source_id and b.offset_s < a.end_s - 1e-9:
            raise ManifestError(f"overlapping segments {a.id!r} and {b.id!r} in source {a.source_id!r}")
    return ordered


def load_external_segments(path) -> list[AudioSegment]:
    segments = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict):
                    raise ManifestError("row is not a JSON object")
                segments.append(AudioSegment.from_row(row))
            except (json.JSONDecodeError, ManifestError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return check_segments(segments)


DURATION_BUCKETS = ("2-10", "10-20", "20-30")


def duration_bucket(seg) -> str:
    """Duration band: [2, 10), [10, 20), [20, 30]; anything else is "other"."""
    d = seg.duration_s if hasattr(seg, "duration_s") else float(seg)
    if 2 <= d < 10:
        return "2-10"
    if 10 <= d < 20:
        return "10-20"
    if 20 <= d <= 30:
        return "20-30"
    return "other"
