"""Per-domain and per-duration WER reports for one or more ASR systems.

The overall figure is micro-averaged (total word edits over total reference
words); the unweighted mean over domains is reported next to it as
``macro_wer``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ManifestError
from .segmentation import DURATION_BUCKETS, duration_bucket
from .textnorm import DEFAULT_NORMALIZATION, NormalizationConfig, normalize, word_edits

UNKNOWN_DOMAIN = "unknown"
FORMATS = ("text", "csv", "json")


class MissingHypotheses(ManifestError):
    def __init__(self, system: str, ids: Sequence[str]):
        self.system = system
        self.ids = sorted(ids)
        super().__init__(f"system {system!r} lacks hypotheses for: {', '.join(self.ids)}")


@dataclass
class Tally:
    edits: int = 0
    ref_words: int = 0
    utterances: int = 0
    # integer microseconds keep sums independent of row order
    duration_us: int = 0

    @property
    def minutes(self) -> float:
        return self.duration_us / 6e7

    @property
    def wer(self) -> float | None:
        return self.edits / self.ref_words if self.ref_words else None

    def add(self, edits: int, words: int, duration_s: float) -> None:
        self.edits += edits
        self.ref_words += words
        self.utterances += 1
        self.duration_us += round(duration_s * 1e6)


@dataclass
class SystemReport:
    per_domain: dict = field(default_factory=dict)
    per_bucket: dict = field(default_factory=dict)
    overall: Tally = field(default_factory=Tally)

    @property
    def wer(self) -> float | None:
        return self.overall.wer

    @property
    def macro_wer(self) -> float | None:
        wers = [t.wer for t in self.per_domain.values() if t.wer is not None]
        return sum(wers) / len(wers) if wers else None


@dataclass
class EvalReport:
    systems: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return _rows(self) == _rows(other)


@dataclass(frozen=True)
class Reference:
    id: str
    text: str
    domain: str
    duration_s: float | None


def load_references(path, norm: NormalizationConfig = DEFAULT_NORMALIZATION) -> list[Reference]:
    refs = []
    for lineno, row in _jsonl(path):
        text = row.get("text")
        if not isinstance(text, str) or not normalize(text, norm).split():
            raise ManifestError(f"{path}:{lineno}: empty reference text for {row.get('id')!r}")
        dur = row.get("duration_s")
        refs.append(Reference(row["id"], text, row.get("domain") or UNKNOWN_DOMAIN,
                              float(dur) if dur is not None else None))
    return refs


def load_hypotheses(path) -> dict[str, str]:
    """``{"id", "text"}`` rows; pipeline output rows use ``accepted_text`` instead.

    Rejected pipeline rows carry no label and are skipped.
    """
    hyps = {}
    for lineno, row in _jsonl(path):
        if "stage_rejected" in row:
            continue
        text = row.get("text", row.get("accepted_text"))
        if not isinstance(text, str):
            raise ManifestError(f"{path}:{lineno}: hypothesis without text")
        hyps[row["id"]] = text
    return hyps


def _jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    raise ManifestError(f"{path}:{lineno}: malformed JSON") from None
                if not isinstance(row, dict) or not isinstance(row.get("id"), str):
                    raise ManifestError(f"{path}:{lineno}: row needs a string id")
                yield lineno, row


def evaluate_rows(references: Sequence[Reference], systems: Mapping[str, Mapping[str, str]],
                  norm: NormalizationConfig = DEFAULT_NORMALIZATION) -> EvalReport:
    report = EvalReport()
    for name, hyps in systems.items():
        missing = [r.id for r in references if r.id not in hyps]
        if missing:
            raise MissingHypotheses(name, missing)
        sysrep = SystemReport()
        for ref in references:
            ref_text = normalize(ref.text, norm)
            if not ref_text.split():
                raise ValueError("empty reference")
            edits, words = word_edits(ref_text, normalize(hyps[ref.id], norm))
            dur = ref.duration_s or 0.0
            sysrep.per_domain.setdefault(ref.domain, Tally()).add(edits, words, dur)
            if ref.duration_s is not None:
                sysrep.per_bucket.setdefault(duration_bucket(ref.duration_s), Tally()).add(edits, words, dur)
            sysrep.overall.add(edits, words, dur)
        report.systems[name] = sysrep
    return report


def evaluate(reference_manifest, hypothesis_manifests, norm: NormalizationConfig = DEFAULT_NORMALIZATION) -> EvalReport:
    """Score hypothesis manifests against a reference manifest.

    ``hypothesis_manifests`` is a path, a list of paths (systems named after
    the file stem) or a ``{system name: path}`` mapping.
    """
    if isinstance(hypothesis_manifests, (str, Path)):
        hypothesis_manifests = [hypothesis_manifests]
    if not isinstance(hypothesis_manifests, Mapping):
        hypothesis_manifests = {Path(p).stem: p for p in hypothesis_manifests}
    refs = load_references(reference_manifest, norm)
    return evaluate_rows(refs, {name: load_hypotheses(p) for name, p in hypothesis_manifests.items()}, norm)


# -- rendering ---------------------------------------------------------------

CSV_FIELDS = ("system", "group", "key", "utterances", "duration_us", "edits", "ref_words", "wer")


def _bucket_order(key):
    order = list(DURATION_BUCKETS) + ["other"]
    return order.index(key) if key in order else len(order)


def _rows(report: EvalReport) -> list[tuple]:
    """Long-format rows: one per (system, group, key); ALL last per system."""
    rows = []
    for name in sorted(report.systems):
        s = report.systems[name]
        for key in sorted(s.per_domain):
            rows.append((name, "domain", key, s.per_domain[key]))
        for key in sorted(s.per_bucket, key=_bucket_order):
            rows.append((name, "duration", key, s.per_bucket[key]))
        rows.append((name, "overall", "ALL", s.overall))
    return [(n, g, k, t.utterances, t.duration_us, t.edits, t.ref_words) for n, g, k, t in rows]


def _fmt(x) -> str:
    return "-" if x is None else f"{100 * x:.2f}"


def _wide_table(report: EvalReport, group: str) -> list[str]:
    names = sorted(report.systems)
    keys = []
    for s in report.systems.values() if group != "overall" else ():
        table = s.per_domain if group == "domain" else s.per_bucket
        keys += [k for k in table if k not in keys]
    keys = sorted(keys) if group == "domain" else sorted(keys, key=_bucket_order)
    label = {"domain": "Domain", "duration": "Duration (s)", "overall": "Set"}[group]
    header = [label, "Dur(mins)", "#Utt"] + names
    body = []
    first = report.systems[names[0]] if names else None
    for key in keys:
        table = (first.per_domain if group == "domain" else first.per_bucket) if first else {}
        t = table.get(key, Tally())
        cells = [key, f"{t.minutes:.2f}", str(t.utterances)]
        for n in names:
            tb = report.systems[n].per_domain if group == "domain" else report.systems[n].per_bucket
            cells.append(_fmt(tb[key].wer) if key in tb else "-")
        body.append(cells)
    if names:
        o = first.overall
        body.append(["ALL", f"{o.minutes:.2f}", str(o.utterances)] + [_fmt(report.systems[n].wer) for n in names])
        if group == "domain" and len(keys) > 1:
            body.append(["macro avg", "", ""] + [_fmt(report.systems[n].macro_wer) for n in names])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header] + body]
    return lines


def report_table(report: EvalReport, format: str = "text", by_domain: bool = True, by_duration: bool = True) -> str:
    """Render a report deterministically.

    ``text`` gives a wide table of WER percentages, one column per system;
    ``csv`` and ``json`` give long-format rows that :func:`parse_table` reads
    back into an equal report.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    groups = {"overall"} | ({"domain"} if by_domain else set()) | ({"duration"} if by_duration else set())
    rows = [r for r in _rows(report) if r[1] in groups]
    if format == "text":
        parts = []
        if by_domain:
            parts.append("\n".join(_wide_table(report, "domain")))
        if by_duration:
            parts.append("\n".join(_wide_table(report, "duration")))
        if not parts:
            parts.append("\n".join(_wide_table(report, "overall")))
        return "\n\n".join(parts) + "\n"
    records = [dict(zip(CSV_FIELDS, r + ((r[5] / r[6]) if r[6] else None,))) for r in rows]
    if format == "json":
        return json.dumps(records, ensure_ascii=False, indent=1) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
    return buf.getvalue()


def parse_table(document: str, format: str = "csv") -> EvalReport:
    """Inverse of :func:`report_table` for the ``csv`` and ``json`` formats."""
    if format == "json":
        records = json.loads(document)
    elif format == "csv":
        records = list(csv.DictReader(io.StringIO(document)))
    else:
        raise ValueError("only csv and json tables can be parsed")
    report = EvalReport()
    for rec in records:
        s = report.systems.setdefault(rec["system"], SystemReport())
        t = Tally(int(rec["edits"]), int(rec["ref_words"]), int(rec["utterances"]), int(rec["duration_us"]))
        if rec["group"] == "domain":
            s.per_domain[rec["key"]] = t
        elif rec["group"] == "duration":
            s.per_bucket[rec["key"]] = t
        else:
            s.overall = t
    return report
