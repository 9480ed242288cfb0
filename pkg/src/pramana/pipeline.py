"""End-to-end pseudo-labeling: transcribe, agree, filter, write a manifest.

Segments stream through a bounded thread pool in batches. Every input
segment yields exactly one output record, accepted or rejected with a
reason, so the hours funnel can be audited from the output manifest alone.
Completed segment ids go to an append-only checkpoint log, which makes an
interrupted run resumable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .agreement import AgreementConfig, AgreementResult, select_pseudo_label
from .errors import AdapterError, AdapterUnavailable, ConfigError, ManifestError, PramanaError
from .evaluators import FilterConfig, FilterResult, MissingEvaluatorInput, filter_decision, make_evaluator
from .segmentation import AudioSegment
from .textnorm import DEFAULT_NORMALIZATION, NormalizationConfig
from .transcribers import TranscriberSpec, TranscriptionError, make_transcriber

log = logging.getLogger(__name__)

TRANSCRIPTION_ERROR = "transcription_error"
NO_AGREEMENT = "no_agreement"
FILTERED = "filtered"
MISSING_EVALUATOR_INPUT = "missing_evaluator_input"
REJECTION_REASONS = (TRANSCRIPTION_ERROR, NO_AGREEMENT, FILTERED, MISSING_EVALUATOR_INPUT)

PRESETS = ("PN-RNNT", "PN-SONAR", "PN-No-Filter", "PN")


class PipelineError(PramanaError):
    """Fatal run failure; the checkpoint written so far stays usable."""


class IncompatibleCheckpoint(PramanaError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    transcribers: tuple = ()
    agreement: AgreementConfig = AgreementConfig()
    filter: FilterConfig = FilterConfig()
    normalization: NormalizationConfig = DEFAULT_NORMALIZATION
    workers: int = 1
    checkpoint_path: str | None = None
    ordered_output: bool = True
    retries: int = 2

    def __post_init__(self):
        object.__setattr__(self, "transcribers", tuple(self.transcribers))

    def validate(self) -> list[str]:
        errs = []
        if not self.transcribers:
            errs.append("at least one transcriber is required")
        ids = [t.id for t in self.transcribers]
        if len(set(ids)) != len(ids):
            errs.append(f"transcriber ids must be unique, got {ids}")
        for t in self.transcribers:
            errs += t.validate()
        errs += self.filter.validate()
        for e in self.filter.evaluators:
            source = e.params.get("transcriber") if e.kind == "confidence" else None
            if source is not None and source not in ids:
                errs.append(f"evaluator {e.id!r} reads confidence from unknown transcriber {source!r}")
        if self.workers < 1:
            errs.append("workers must be >= 1")
        if self.retries < 0:
            errs.append("retries must be >= 0")
        return errs

    def warnings(self) -> list[str]:
        return self.agreement.warnings(len(self.transcribers)) + self.filter.warnings()

    def to_dict(self) -> dict:
        return {
            "transcribers": [t.to_dict() for t in self.transcribers],
            "agreement": self.agreement.to_dict(),
            "filter": self.filter.to_dict(),
            "normalization": self.normalization.to_dict(),
            "workers": self.workers,
            "checkpoint_path": self.checkpoint_path,
            "ordered_output": self.ordered_output,
            "retries": self.retries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        """Build and validate; every problem found is reported in one ConfigError."""
        if not isinstance(d, dict):
            raise ConfigError("pipeline config must be a JSON object")
        errs = []
        known = {"transcribers", "agreement", "filter", "normalization", "workers",
                 "checkpoint_path", "ordered_output", "retries"}
        errs += [f"unknown config key {k!r}" for k in sorted(set(d) - known)]
        kwargs = {k: d[k] for k in ("workers", "checkpoint_path", "ordered_output", "retries") if k in d}
        parts = {
            "transcribers": lambda v: tuple(TranscriberSpec.from_dict(t) for t in v),
            "agreement": AgreementConfig.from_dict,
            "filter": FilterConfig.from_dict,
            "normalization": NormalizationConfig.from_dict,
        }
        for key, build in parts.items():
            if key in d:
                try:
                    kwargs[key] = build(d[key])
                except ConfigError as exc:
                    errs += [f"{key}: {v}" for v in exc.violations]
                except (TypeError, ValueError, KeyError, AttributeError) as exc:
                    errs.append(f"{key}: {exc}")
        if errs:
            raise ConfigError(errs)
        cfg = cls(**kwargs)
        errs = cfg.validate()
        if errs:
            raise ConfigError(errs)
        return cfg

    def config_hash(self) -> str:
        """Hash of everything that influences per-segment decisions."""
        d = self.to_dict()
        for k in ("workers", "checkpoint_path", "ordered_output", "retries"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True, ensure_ascii=False).encode()).hexdigest()


def resolve_paths(d: dict, base) -> dict:
    """Make relative adapter/table paths in a config dict relative to ``base``."""

    def fix(obj):
        if isinstance(obj, dict) and isinstance(obj.get("path"), str) and obj["path"]:
            obj["path"] = os.path.join(base, obj["path"])

    d = json.loads(json.dumps(d))
    for t in d.get("transcribers") or []:
        fix(t)
    for e in (d.get("filter") or {}).get("evaluators") or []:
        params = e.get("params") if isinstance(e, dict) else None
        if isinstance(params, dict):
            fix(params)
            fix(params.get("provider"))
    return d


def load_config_dict(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return resolve_paths(d, os.path.dirname(os.path.abspath(path)))


def load_config(path) -> PipelineConfig:
    """Load a JSON config; relative paths inside resolve against its directory."""
    return PipelineConfig.from_dict(load_config_dict(path))


@dataclass
class LabelRecord:
    row: dict
    segment: AudioSegment
    candidates: list = field(default_factory=list)
    agreement: AgreementResult | None = None
    filter: FilterResult | None = None
    accepted_text: str | None = None
    stage_rejected: str | None = None
    detail: str | None = None

    @property
    def passed_agreement(self) -> bool:
        return self.agreement is not None and self.agreement.accepted

    def to_row(self) -> dict:
        out = dict(self.row)
        cands = []
        for c in self.candidates:
            item = {"transcriber_id": c.transcriber_id, "text": c.text}
            if c.confidence is not None:
                item["confidence"] = c.confidence
            cands.append(item)
        out["candidates"] = cands
        if self.agreement is not None:
            out["agreement"] = {"scores": list(self.agreement.scores), "selected": self.agreement.selected}
        else:
            out["agreement"] = {"scores": [], "selected": None}
        out["evaluators"] = dict(self.filter.scores) if self.filter is not None else {}
        if self.accepted_text is not None:
            out["accepted_text"] = self.accepted_text
        else:
            out["stage_rejected"] = self.stage_rejected
            if self.detail:
                out["reject_detail"] = self.detail
        return out


@dataclass(frozen=True)
class RecordSummary:
    """What the yield accounting needs from an output row."""

    id: str
    duration_s: float
    domain: str | None
    passed_agreement: bool
    stage_rejected: str | None

    @classmethod
    def of(cls, rec: LabelRecord) -> "RecordSummary":
        return cls(rec.segment.id, rec.segment.duration_s, rec.segment.domain, rec.passed_agreement, rec.stage_rejected)

    @classmethod
    def from_row(cls, row: dict) -> "RecordSummary":
        agreement = row.get("agreement") or {}
        return cls(
            row["id"], float(row["duration_s"]), row.get("domain"),
            agreement.get("selected") is not None, row.get("stage_rejected"),
        )


def _micro(seconds: float) -> int:
    return round(seconds * 1_000_000)


@dataclass
class YieldReport:
    """Hours surviving each stage. Durations are summed as integer microseconds
    so totals do not depend on record order."""

    input_us: int = 0
    agreement_us: int = 0
    filter_us: int = 0
    counts: dict = field(default_factory=lambda: {"accepted": 0, **{r: 0 for r in REJECTION_REASONS}})
    per_domain: dict = field(default_factory=dict)

    @property
    def hours_input(self) -> float:
        return self.input_us / 3.6e9

    @property
    def hours_after_agreement(self) -> float:
        return self.agreement_us / 3.6e9

    @property
    def hours_after_filter(self) -> float:
        return self.filter_us / 3.6e9

    @property
    def segments(self) -> int:
        return sum(self.counts.values())

    def add(self, s: RecordSummary) -> None:
        us = _micro(s.duration_s)
        dom = self.per_domain.setdefault(
            s.domain or "unknown", {"segments": 0, "input_us": 0, "agreement_us": 0, "filter_us": 0}
        )
        self.input_us += us
        dom["input_us"] += us
        dom["segments"] += 1
        if s.passed_agreement:
            self.agreement_us += us
            dom["agreement_us"] += us
        if s.stage_rejected is None:
            self.filter_us += us
            dom["filter_us"] += us
            self.counts["accepted"] += 1
        else:
            self.counts[s.stage_rejected] = self.counts.get(s.stage_rejected, 0) + 1

    def to_dict(self) -> dict:
        return {
            "segments": self.segments,
            "hours_input": self.hours_input,
            "hours_after_agreement": self.hours_after_agreement,
            "hours_after_filter": self.hours_after_filter,
            "counts": dict(self.counts),
            "per_domain": {
                name: {
                    "segments": d["segments"],
                    "hours_input": d["input_us"] / 3.6e9,
                    "hours_after_agreement": d["agreement_us"] / 3.6e9,
                    "hours_after_filter": d["filter_us"] / 3.6e9,
                }
                for name, d in sorted(self.per_domain.items())
            },
        }

    def format_funnel(self) -> str:
        lines = [
            f"input            {self.hours_input:12.4f} h  ({self.segments} segments)",
            f"after agreement  {self.hours_after_agreement:12.4f} h",
            f"after filtering  {self.hours_after_filter:12.4f} h  ({self.counts['accepted']} accepted)",
        ]
        for reason in REJECTION_REASONS:
            lines.append(f"  rejected {reason:<24} {self.counts.get(reason, 0)}")
        return "\n".join(lines)


def report_from_manifest(path) -> YieldReport:
    report = YieldReport()
    for _, row in iter_jsonl(path):
        report.add(RecordSummary.from_row(row))
    return report


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                raise ManifestError(f"{path}:{lineno}: malformed JSON") from None
            if not isinstance(row, dict):
                raise ManifestError(f"{path}:{lineno}: row is not an object")
            yield lineno, row


def read_input(path) -> Iterator[tuple[dict, AudioSegment]]:
    seen = set()
    for lineno, row in iter_jsonl(path):
        try:
            seg = AudioSegment.from_row(row)
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
        if seg.id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate segment id {seg.id!r}")
        seen.add(seg.id)
        yield row, seg


def _dump(row: dict) -> str:
    return json.dumps(row, ensure_ascii=False) + "\n"


class _Stages:
    """Transcribers and evaluators for one run, shared by all workers."""

    def __init__(self, cfg: PipelineConfig, transcribers=None, evaluators=None):
        self.cfg = cfg
        self.transcribers = transcribers or [make_transcriber(t) for t in cfg.transcribers]
        providers: dict = {}
        self.evaluators = evaluators or [make_evaluator(e, cfg.normalization, providers) for e in cfg.filter.evaluators]

    def close(self):
        for t in self.transcribers:
            t.close()
        for e in self.evaluators:
            e.close()

    def _with_retries(self, what, fn):
        delay = 0.05
        for attempt in range(self.cfg.retries + 1):
            try:
                return fn()
            except AdapterUnavailable as exc:
                if attempt == self.cfg.retries:
                    raise PipelineError(f"{what} failed after {attempt + 1} attempts: {exc}") from exc
                log.warning("%s unavailable (%s); retrying", what, exc)
                time.sleep(delay)
                delay *= 2

    def _transcribe(self, adapter, segments):
        def call():
            try:
                return {c.segment_id: c for c in adapter.transcribe_batch(segments)}, {}
            except TranscriptionError as exc:
                log.warning("%s: %s", adapter.id, exc)
                return exc.results, exc.failed

        return self._with_retries(f"transcriber {adapter.id!r}", call)

    def process(self, batch: list[tuple[dict, AudioSegment]]) -> list[LabelRecord]:
        segments = [seg for _, seg in batch]
        outputs = [self._transcribe(t, segments) for t in self.transcribers]
        records = []
        for row, seg in batch:
            rec = LabelRecord(row, seg)
            failures = [f"{t.id}: {failed[seg.id]}" for t, (_, failed) in zip(self.transcribers, outputs) if seg.id in failed]
            rec.candidates = [res[seg.id] for res, _ in outputs if seg.id in res]
            if failures:
                rec.stage_rejected, rec.detail = TRANSCRIPTION_ERROR, "; ".join(failures)
            else:
                self._label(rec)
            records.append(rec)
        return records

    def _label(self, rec: LabelRecord) -> None:
        cfg = self.cfg
        rec.agreement = select_pseudo_label(rec.candidates, cfg.agreement, cfg.normalization)
        if not rec.agreement.accepted:
            rec.stage_rejected = NO_AGREEMENT
            return
        accepted = rec.candidates[rec.agreement.selected]
        scores = {}
        try:
            for ev in self.evaluators:
                scores[ev.id] = self._with_retries(
                    f"evaluator {ev.id!r}", lambda ev=ev: ev.score(rec.segment, accepted, rec.candidates)
                )
        except (MissingEvaluatorInput, AdapterError) as exc:
            rec.stage_rejected, rec.detail = MISSING_EVALUATOR_INPUT, str(exc)
            return
        rec.filter = filter_decision(scores, cfg.filter)
        if rec.filter.accepted:
            rec.accepted_text = accepted.text
        else:
            rec.stage_rejected = FILTERED


def _batches(items: Iterable, size: int) -> Iterator[list]:
    batch = []
    for item in items:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


class _Checkpoint:
    """Append-only log: a header line with the config hash, then one id per line."""

    def __init__(self, path: str):
        self.path = path
        self.fh = None

    def read(self, expected_hash: str) -> set[str]:
        if not os.path.exists(self.path):
            raise IncompatibleCheckpoint(f"incompatible checkpoint: {self.path} does not exist")
        done = set()
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        try:
            header = json.loads(lines[0])
        except (json.JSONDecodeError, IndexError):
            raise IncompatibleCheckpoint(f"incompatible checkpoint: {self.path} has no header") from None
        if not isinstance(header, dict) or header.get("config_hash") != expected_hash:
            raise IncompatibleCheckpoint("incompatible checkpoint: config hash mismatch")
        for line in lines[1:]:
            try:
                done.add(json.loads(line))
            except json.JSONDecodeError:
                continue  # torn final line
        return done

    def start(self, config_hash: str, done: Iterable[str] = ()) -> None:
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"config_hash": config_hash}) + "\n")
            for seg_id in done:
                fh.write(json.dumps(seg_id, ensure_ascii=False) + "\n")
        os.replace(tmp, self.path)
        self.fh = open(self.path, "a", encoding="utf-8")

    def mark(self, ids: Iterable[str]) -> None:
        self.fh.write("".join(json.dumps(i, ensure_ascii=False) + "\n" for i in ids))
        self.fh.flush()

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()
            self.fh = None


def checkpoint_path_for(cfg: PipelineConfig, output_manifest) -> str:
    return cfg.checkpoint_path or f"{output_manifest}.ckpt"


def _recover_output(output_manifest, done: set[str], report: YieldReport) -> list[str]:
    """Keep only rows whose id the checkpoint confirms; drop torn or duplicate lines."""
    kept_lines, kept_ids, seen = [], [], set()
    if os.path.exists(output_manifest):
        with open(output_manifest, encoding="utf-8") as fh:
            for line in fh:
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    continue
                rid = row.get("id") if isinstance(row, dict) else None
                if rid in done and rid not in seen:
                    seen.add(rid)
                    kept_ids.append(rid)
                    kept_lines.append(_dump(row))
                    report.add(RecordSummary.from_row(row))
    tmp = f"{output_manifest}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.writelines(kept_lines)
    os.replace(tmp, output_manifest)
    return kept_ids


def run_pipeline(cfg: PipelineConfig, input_manifest, output_manifest, resume: bool = False,
                 transcribers=None, evaluators=None) -> YieldReport:
    """Label every segment of ``input_manifest`` into ``output_manifest``.

    With ``resume=True`` the checkpoint of a previous run (same config hash)
    is honoured and only unfinished segments are processed. ``transcribers``
    and ``evaluators`` optionally replace the adapters built from ``cfg``.
    """
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    for w in cfg.warnings():
        log.warning(w)
    if not os.path.isfile(input_manifest):
        raise PipelineError(f"cannot read input manifest {input_manifest}")

    ckpt = _Checkpoint(checkpoint_path_for(cfg, output_manifest))
    chash = cfg.config_hash()
    report = YieldReport()
    done: set[str] = set()
    if resume:
        done = set(_recover_output(output_manifest, ckpt.read(chash), report))
        ckpt.start(chash, sorted(done))
        out = open(output_manifest, "a", encoding="utf-8")
    else:
        ckpt.start(chash)
        out = open(output_manifest, "w", encoding="utf-8")

    stages = _Stages(cfg, transcribers, evaluators)
    batch_size = min(t.spec.batch_size for t in stages.transcribers)
    pending = ((row, seg) for row, seg in read_input(input_manifest) if seg.id not in done)

    def commit(records):
        out.write("".join(_dump(r.to_row()) for r in records))
        out.flush()
        ckpt.mark(r.segment.id for r in records)
        for r in records:
            report.add(RecordSummary.of(r))

    pool = ThreadPoolExecutor(max_workers=cfg.workers)
    try:
        inflight: deque = deque()
        for batch in _batches(pending, batch_size):
            inflight.append(pool.submit(stages.process, batch))
            while len(inflight) >= cfg.workers:
                inflight = _drain(inflight, cfg.ordered_output, commit)
        while inflight:
            inflight = _drain(inflight, cfg.ordered_output, commit)
    except BaseException:
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    finally:
        pool.shutdown(wait=True)
        out.close()
        ckpt.close()
        stages.close()
    return report


def _drain(inflight: deque, ordered: bool, commit) -> deque:
    """Commit at least one finished batch and return the remaining futures."""
    if ordered:
        commit(inflight.popleft().result())
        return inflight
    finished, rest = wait(inflight, return_when=FIRST_COMPLETED)
    for fut in finished:
        commit(fut.result())
    return deque(f for f in inflight if f in rest)


def resume(cfg: PipelineConfig, input_manifest, output_manifest, **kwargs) -> YieldReport:
    return run_pipeline(cfg, input_manifest, output_manifest, resume=True, **kwargs)


def _find(items, ident, what):
    for item in items:
        if item.id == ident:
            return item
    raise ConfigError(f"preset needs {what} {ident!r}, which the base config does not define")


def ablation_preset(name: str, base: PipelineConfig) -> PipelineConfig:
    """The four labeling setups compared in the ablation.

    Each preset uses the base config's ``rnnt``/``ctc`` transcribers and
    ``sonar``/``rnnt_conf`` evaluators (those it needs must exist).
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    rnnt = _find(base.transcribers, "rnnt", "transcriber")
    evs = base.filter.evaluators
    if name == "PN-RNNT":
        return replace(
            base, transcribers=(rnnt,), agreement=replace(base.agreement, delta=0, include_self=True),
            filter=FilterConfig((), lam=0, comparison="ge"),
        )
    if name == "PN-SONAR":
        sonar = _find(evs, "sonar", "evaluator")
        return replace(
            base, transcribers=(rnnt,), agreement=replace(base.agreement, delta=0, include_self=True),
            filter=FilterConfig((sonar,), lam=1, comparison="ge"),
        )
    ctc = _find(base.transcribers, "ctc", "transcriber")
    pair = AgreementConfig(tau=1.0, delta=1, include_self=True)
    if name == "PN-No-Filter":
        return replace(base, transcribers=(rnnt, ctc), agreement=pair, filter=FilterConfig((), lam=0, comparison="ge"))
    sonar = replace(_find(evs, "sonar", "evaluator"), rho=0.8)
    rnnt_conf = replace(_find(evs, "rnnt_conf", "evaluator"), rho=0.7)
    return replace(
        base, transcribers=(rnnt, ctc), agreement=pair,
        filter=FilterConfig((sonar, rnnt_conf), lam=2, comparison="ge"),
    )

