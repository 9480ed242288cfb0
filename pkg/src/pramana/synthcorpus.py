"""Seeded synthetic corpora with controlled transcriber error rates.

A corpus is a directory holding reference transcripts, one replay table per
simulated transcriber, an embedding replay table and a ready-to-run pipeline
config. Nothing here touches audio; it exists so the labeling algorithms can
be checked end to end against known ground truth, and so threshold trade-offs
can be swept without any ASR model.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .agreement import AgreementConfig, select_pseudo_label
from .embeddings import bag_of_chars, text_key
from .errors import AdapterError, ConfigError
from .evaluators import FilterConfig, MissingEvaluatorInput, filter_decision, make_evaluator
from .pipeline import load_config, read_input
from .segmentation import AudioSegment
from .textnorm import DEFAULT_NORMALIZATION, levenshtein, normalize
from .transcribers import ReplayTranscriber, candidate_from_reply

# Devanagari consonants without nukta forms
DEVANAGARI_LETTERS = "".join(chr(c) for c in range(0x0915, 0x093A) if c not in (0x0929, 0x0931, 0x0934))

# content-domain tags assigned to synthetic segments
DOMAINS = (
    "Business News", "Cooking", "Debates", "Education - Technology", "Headlines", "Health",
    "Household activities", "How-to Technology", "Interviews_Panels", "Maths", "On-field reporting",
    "Science", "Social Science", "Sports News",
)


@dataclass(frozen=True)
class TranscriberProfile:
    id: str
    char_error_rate: float
    # relative weights of substitution, insertion, deletion
    op_weights: tuple = (0.6, 0.2, 0.2)
    replacement_alphabet: str = ""
    confidence_slope: float = 4.0
    confidence_noise: float = 0.05
    token_dists: bool = False

    def validate(self) -> list[str]:
        errs = []
        if not 0.0 <= self.char_error_rate <= 1.0:
            errs.append(f"profile {self.id!r}: char_error_rate must lie in [0, 1], got {self.char_error_rate}")
        if len(self.op_weights) != 3 or any(w < 0 for w in self.op_weights) or sum(self.op_weights) <= 0:
            errs.append(f"profile {self.id!r}: op_weights must be three nonnegative weights")
        if self.confidence_noise < 0:
            errs.append(f"profile {self.id!r}: confidence_noise must be >= 0")
        return errs


DEFAULT_PROFILES = (TranscriberProfile("rnnt", 0.05), TranscriberProfile("ctc", 0.08))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_segments: int = 1000
    alphabet: str = DEVANAGARI_LETTERS
    words_per_segment: tuple = (1, 6)
    word_length: tuple = (2, 5)
    seconds_per_word: float = 1.5
    domains: tuple = DOMAINS
    transcriber_profiles: tuple = DEFAULT_PROFILES

    def validate(self) -> list[str]:
        errs = []
        if self.n_segments < 1:
            errs.append("n_segments must be >= 1")
        if len(set(self.alphabet)) < 2 or any(ch.isspace() for ch in self.alphabet):
            errs.append("alphabet needs at least two distinct non-space characters")
        for name in ("words_per_segment", "word_length"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                errs.append(f"{name} must satisfy 1 <= min <= max")
        if self.seconds_per_word <= 0:
            errs.append("seconds_per_word must be positive")
        if not self.transcriber_profiles:
            errs.append("at least one transcriber profile is required")
        ids = [p.id for p in self.transcriber_profiles]
        if len(set(ids)) != len(ids):
            errs.append("transcriber profile ids must be unique")
        for p in self.transcriber_profiles:
            errs += p.validate()
        return errs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["words_per_segment"] = list(self.words_per_segment)
        d["word_length"] = list(self.word_length)
        d["domains"] = list(self.domains)
        d["transcriber_profiles"] = [
            {**asdict(p), "op_weights": list(p.op_weights)} for p in self.transcriber_profiles
        ]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        try:
            if "transcriber_profiles" in d:
                d["transcriber_profiles"] = tuple(
                    TranscriberProfile(**{**p, "op_weights": tuple(p.get("op_weights", (0.6, 0.2, 0.2)))})
                    for p in d["transcriber_profiles"]
                )
            for key in ("words_per_segment", "word_length", "domains"):
                if key in d:
                    d[key] = tuple(d[key])
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(f"synth config: {exc}") from None
        errs = cfg.validate()
        if errs:
            raise ConfigError(errs)
        return cfg


def perturb(text: str, rate: float, rng: random.Random, alphabet: str, op_weights=(0.6, 0.2, 0.2)) -> str:
    """Apply one random edit per character with probability ``rate``.

    Substitutions and insertions draw from ``alphabet``; the result is
    re-normalized so that whitespace edits never leave double spaces.
    """
    out = []
    ops = ("sub", "ins", "del")
    for ch in text:
        if rng.random() >= rate:
            out.append(ch)
            continue
        op = rng.choices(ops, weights=op_weights)[0]
        if op == "sub":
            choices = [c for c in alphabet if c != ch]
            out.append(rng.choice(choices) if choices else ch)
        elif op == "ins":
            out.append(ch)
            out.append(rng.choice(alphabet))
        # deletion appends nothing
    return normalize("".join(out))


def _confidence(realized_cer: float, profile: TranscriberProfile, rng: random.Random) -> float:
    noise = rng.gauss(0.0, profile.confidence_noise) if profile.confidence_noise > 0 else 0.0
    return min(1.0, max(0.0, 1.0 - profile.confidence_slope * realized_cer + noise))


def _dump(row) -> str:
    return json.dumps(row, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class SynthCorpus:
    root: Path
    reference: Path
    input: Path
    replay: dict
    embeddings: Path
    pipeline_config: Path


def corpus_paths(out_dir, cfg: SynthConfig) -> SynthCorpus:
    root = Path(out_dir)
    return SynthCorpus(
        root=root,
        reference=root / "reference.jsonl",
        input=root / "input.jsonl",
        replay={p.id: root / "transcribers" / f"{p.id}.jsonl" for p in cfg.transcriber_profiles},
        embeddings=root / "embeddings.jsonl",
        pipeline_config=root / "pipeline.json",
    )


def embedding_alphabet(cfg: SynthConfig) -> str:
    chars = dict.fromkeys(cfg.alphabet)
    for p in cfg.transcriber_profiles:
        chars.update(dict.fromkeys(p.replacement_alphabet))
    return "".join(chars)


def default_pipeline_dict(cfg: SynthConfig) -> dict:
    """Pipeline config at tau=1, delta=1, rho 0.8/0.7, lam=2; paths relative to the corpus dir."""
    profiles = cfg.transcriber_profiles
    alphabet = embedding_alphabet(cfg)
    return {
        "transcribers": [
            {"id": p.id, "kind": "replay", "path": f"transcribers/{p.id}.jsonl", "batch_size": 64}
            for p in profiles
        ],
        "agreement": {"tau": 1.0, "delta": 1, "include_self": True},
        "filter": {
            "evaluators": [
                {"id": "sonar", "kind": "embedding_similarity", "rho": 0.8,
                 "params": {"provider": {"id": "synth-emb", "kind": "replay", "dimension": len(alphabet),
                                         "path": "embeddings.jsonl"}}},
                {"id": f"{profiles[0].id}_conf", "kind": "confidence", "rho": 0.7,
                 "params": {"transcriber": profiles[0].id}},
            ],
            "lam": 2,
            "comparison": "ge",
        },
        "normalization": DEFAULT_NORMALIZATION.to_dict(),
        "workers": 1,
        "ordered_output": True,
    }


def generate(cfg: SynthConfig, out_dir) -> SynthCorpus:
    """Write a corpus; identical configs give byte-identical directories."""
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    paths = corpus_paths(out_dir, cfg)
    (paths.root / "transcribers").mkdir(parents=True, exist_ok=True)
    rng = random.Random(cfg.seed)
    emb_alphabet = embedding_alphabet(cfg)
    refs, outputs = [], {p.id: [] for p in cfg.transcriber_profiles}
    text_vectors: dict[str, list] = {}

    width = max(5, len(str(cfg.n_segments - 1)))
    for i in range(cfg.n_segments):
        n_words = rng.randint(*cfg.words_per_segment)
        words = ["".join(rng.choice(cfg.alphabet) for _ in range(rng.randint(*cfg.word_length))) for _ in range(n_words)]
        text = " ".join(words)
        duration = round(cfg.seconds_per_word * (n_words + rng.random()), 3)
        seg_id = f"synth-{i:0{width}d}"
        refs.append({"id": seg_id, "audio_path": f"audio/{seg_id}.wav", "offset_s": 0.0, "duration_s": duration,
                     "domain": cfg.domains[rng.randrange(len(cfg.domains))] if cfg.domains else None, "text": text})
        for p in cfg.transcriber_profiles:
            hyp = perturb(text, p.char_error_rate, rng, p.replacement_alphabet or cfg.alphabet, p.op_weights)
            conf = _confidence(levenshtein(text, hyp) / len(text), p, rng)
            reply = {"id": seg_id, "text": hyp, "confidence": conf}
            if p.token_dists and hyp.split():
                q = 0.5 + 0.5 * conf
                reply["token_dists"] = [[q, 1.0 - q] for _ in hyp.split()]
            outputs[p.id].append(reply)
            if hyp and text_key(hyp) not in text_vectors:
                text_vectors[text_key(hyp)] = bag_of_chars(hyp, emb_alphabet).tolist()

    with open(paths.reference, "w", encoding="utf-8") as fh:
        fh.writelines(_dump({k: v for k, v in r.items() if v is not None}) for r in refs)
    with open(paths.input, "w", encoding="utf-8") as fh:
        fh.writelines(_dump({k: v for k, v in r.items() if k != "text" and v is not None}) for r in refs)
    for pid, rows in outputs.items():
        with open(paths.replay[pid], "w", encoding="utf-8") as fh:
            fh.writelines(_dump(r) for r in rows)
    with open(paths.embeddings, "w", encoding="utf-8") as fh:
        for r in refs:
            fh.write(_dump({"id": r["id"], "vector": bag_of_chars(r["text"], emb_alphabet).tolist()}))
        for key, vec in text_vectors.items():
            fh.write(_dump({"id": key, "vector": vec}))
    with open(paths.pipeline_config, "w", encoding="utf-8") as fh:
        json.dump(default_pipeline_dict(cfg), fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    with open(paths.root / "synth.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    return paths


def load_references(corpus_dir) -> dict[str, str]:
    refs = {}
    with open(Path(corpus_dir) / "reference.jsonl", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            refs[row["id"]] = row["text"]
    return refs


# -- threshold sweep ---------------------------------------------------------

@dataclass
class SweepRow:
    tau: float
    delta: int
    rho: dict
    lam: int
    comparison: str
    n_segments: int
    n_accepted: int
    hours_input: float
    hours_accepted: float
    precision: float | None
    cer: float | None
    accepted: frozenset = field(default=frozenset(), repr=False)

    @property
    def yield_fraction(self) -> float:
        return self.n_accepted / self.n_segments if self.n_segments else 0.0


SWEEP_FIELDS = ("tau", "delta", "rho", "lam", "comparison", "n_segments", "n_accepted", "yield_fraction",
                "hours_input", "hours_accepted", "precision", "cer")


def sweep(corpus_dir, taus: Sequence[float], deltas: Sequence[int], rhos: Sequence[Mapping[str, float]],
          lams: Sequence[int], comparison: str = "ge", config=None) -> list[SweepRow]:
    """Evaluate every (tau, delta, rho, lam) grid point on a synthetic corpus.

    ``rhos`` is a list of per-evaluator threshold assignments (evaluator id to
    rho); evaluators not named keep the corpus config's threshold. Precision
    is the fraction of accepted labels equal to the reference after
    normalization; ``cer`` is the micro-averaged character error rate of the
    accepted labels.
    """
    root = Path(corpus_dir)
    cfg = config or load_config(root / "pipeline.json")
    norm = cfg.normalization
    refs = load_references(root)
    segments = [seg for _, seg in read_input(root / "input.jsonl")]
    adapters = [ReplayTranscriber(t) for t in cfg.transcribers]
    cands = {seg.id: [a.table[seg.id] for a in adapters] for seg in segments}
    candidates = {
        sid: [candidate_from_reply(r, a.id) for r, a in zip(rows, adapters)] for sid, rows in cands.items()
    }
    providers: dict = {}
    evaluators = [make_evaluator(e, norm, providers) for e in cfg.filter.evaluators]
    score_cache: dict = {}
    total_us = sum(round(s.duration_s * 1e6) for s in segments)
    rows = []
    for tau, delta in itertools.product(taus, deltas):
        acfg = AgreementConfig(tau=tau, delta=delta, include_self=cfg.agreement.include_self)
        selected = {}
        for seg in segments:
            res = select_pseudo_label(candidates[seg.id], acfg, norm)
            if res.accepted:
                selected[seg.id] = res.selected
        for rho in rhos:
            evs = tuple(replace(e, rho=rho.get(e.id, e.rho)) for e in cfg.filter.evaluators)
            for lam in lams:
                fcfg = FilterConfig(evs, lam=lam, comparison=comparison)
                accepted = []
                for seg in segments:
                    if seg.id not in selected:
                        continue
                    scores = _scores(seg, selected[seg.id], candidates[seg.id], evaluators, score_cache)
                    if scores is not None and filter_decision(scores, fcfg).accepted:
                        accepted.append(seg)
                rows.append(_summarize(tau, delta, dict(rho), lam, comparison, segments, total_us, accepted,
                                       selected, candidates, refs, norm))
    for e in evaluators:
        e.close()
    return rows


def _scores(seg: AudioSegment, index: int, cands, evaluators, cache):
    key = (seg.id, index)
    if key not in cache:
        try:
            cache[key] = {e.id: e.score(seg, cands[index], cands) for e in evaluators}
        except (MissingEvaluatorInput, AdapterError):
            cache[key] = None
    return cache[key]


def _summarize(tau, delta, rho, lam, comparison, segments, total_us, accepted, selected, candidates, refs, norm):
    exact = edits = chars = 0
    acc_us = 0
    for seg in accepted:
        label = normalize(candidates[seg.id][selected[seg.id]].text, norm)
        ref = normalize(refs[seg.id], norm)
        exact += label == ref
        edits += levenshtein(ref, label)
        chars += len(ref)
        acc_us += round(seg.duration_s * 1e6)
    n = len(accepted)
    return SweepRow(
        tau=tau, delta=delta, rho=rho, lam=lam, comparison=comparison, n_segments=len(segments), n_accepted=n,
        hours_input=total_us / 3.6e9, hours_accepted=acc_us / 3.6e9,
        precision=exact / n if n else None, cer=edits / chars if chars else None,
        accepted=frozenset(s.id for s in accepted),
    )


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_FIELDS)
    for r in rows:
        values = [r.tau, r.delta, json.dumps(r.rho, sort_keys=True), r.lam, r.comparison, r.n_segments,
                  r.n_accepted, r.yield_fraction, r.hours_input, r.hours_accepted, r.precision, r.cer]
        writer.writerow(["" if v is None else v for v in values])
    return buf.getvalue()

