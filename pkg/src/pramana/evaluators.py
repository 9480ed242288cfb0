"""Evaluators that score an accepted pseudo-label, and the threshold filter.

Each evaluator ``k`` produces a score ``s_k`` for the accepted transcript; it
passes when ``s_k >= rho_k``. The filter score ``F`` counts passes and the
segment survives when ``F >= lam`` (or ``F > lam`` with ``comparison="gt"``).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embeddings import EmbeddingProvider, EmbeddingProviderSpec
from .errors import ConfigError, PramanaError
from .textnorm import DEFAULT_NORMALIZATION, NormalizationConfig, normalize

log = logging.getLogger(__name__)

KINDS = ("confidence", "embedding_similarity", "external")
AGGREGATIONS = ("mean", "min", "product")
DIST_TOL = 1e-6
# a score this close below rho still passes; absorbs float noise in cosines
# whose exact value sits on the threshold (e.g. 4/5 from unit-normalized vectors)
SCORE_TOL = 1e-9


class MissingEvaluatorInput(PramanaError):
    """The evaluator has nothing to score for this segment."""


def renyi_confidence(token_dists, alpha: float = 0.5, aggregation: str = "mean") -> float:
    """Linearly normalized Rényi-entropy confidence of a token sequence.

    Per token, ``H = ln(sum p**alpha) / (1 - alpha)`` and the confidence is
    ``1 - H / ln|V|``: 0 for a uniform distribution, 1 for a one-hot one.
    Token confidences are then reduced with ``aggregation``.
    """
    if alpha <= 0 or alpha == 1:
        raise ValueError("alpha must be positive and different from 1")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    if len(token_dists) == 0:
        raise ValueError("no tokens")
    confs = []
    for dist in token_dists:
        p = np.asarray(dist, dtype=np.float64)
        if p.ndim != 1 or len(p) < 2 or np.any(p < 0) or abs(p.sum() - 1.0) > DIST_TOL:
            raise ValueError("invalid distribution")
        h = math.log(np.sum(p[p > 0] ** alpha)) / (1.0 - alpha)
        confs.append(min(1.0, max(0.0, 1.0 - h / math.log(len(p)))))
    if aggregation == "mean":
        return float(np.mean(confs))
    if aggregation == "min":
        return float(min(confs))
    return float(np.prod(confs))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class EvaluatorSpec:
    id: str
    kind: str
    rho: float
    params: Mapping = field(default_factory=dict)

    def validate(self) -> list[str]:
        errs = []
        if self.kind not in KINDS:
            errs.append(f"evaluator {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == "embedding_similarity" and not -1 <= self.rho <= 1:
            errs.append(f"evaluator {self.id!r}: rho must lie in [-1, 1]")
        if self.kind == "confidence" and not 0 <= self.rho <= 1:
            errs.append(f"evaluator {self.id!r}: rho must lie in [0, 1]")
        if self.kind == "confidence":
            if self.params.get("aggregation", "mean") not in AGGREGATIONS:
                errs.append(f"evaluator {self.id!r}: unknown aggregation")
            alpha = self.params.get("alpha", 0.5)
            if alpha <= 0 or alpha == 1:
                errs.append(f"evaluator {self.id!r}: alpha must be positive and != 1")
        if self.kind == "embedding_similarity":
            provider = self.params.get("provider")
            if not isinstance(provider, Mapping):
                errs.append(f"evaluator {self.id!r}: needs a provider spec")
            else:
                errs += EmbeddingProviderSpec.from_dict(provider).validate()
            if self.params.get("text_source", "raw") not in ("raw", "normalized"):
                errs.append(f"evaluator {self.id!r}: text_source must be raw or normalized")
        if self.kind == "external" and not self.params.get("path"):
            errs.append(f"evaluator {self.id!r}: external scores need a path")
        return errs

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "rho": self.rho, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluatorSpec":
        try:
            return cls(d["id"], d["kind"], float(d["rho"]), dict(d.get("params", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"evaluator spec {d!r}: {exc!r}") from None


@dataclass(frozen=True)
class FilterConfig:
    evaluators: tuple = ()
    lam: int = 0
    comparison: str = "ge"

    def __post_init__(self):
        object.__setattr__(self, "evaluators", tuple(self.evaluators))

    def validate(self) -> list[str]:
        errs = []
        ids = [e.id for e in self.evaluators]
        if len(set(ids)) != len(ids):
            errs.append(f"evaluator ids must be unique, got {ids}")
        if self.comparison not in ("ge", "gt"):
            errs.append(f"comparison must be 'ge' or 'gt', got {self.comparison!r}")
        if self.lam < 0 or int(self.lam) != self.lam:
            errs.append(f"lam must be a nonnegative integer, got {self.lam}")
        for e in self.evaluators:
            errs += e.validate()
        return errs

    def warnings(self) -> list[str]:
        k = len(self.evaluators)
        if (self.comparison == "ge" and self.lam > k) or (self.comparison == "gt" and self.lam >= k):
            return [f"lam={self.lam} with K={k} evaluators ({self.comparison}) rejects every segment"]
        return []

    def to_dict(self) -> dict:
        return {
            "evaluators": [e.to_dict() for e in self.evaluators],
            "lam": self.lam,
            "comparison": self.comparison,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "FilterConfig":
        d = dict(d or {})
        evs = tuple(EvaluatorSpec.from_dict(e) for e in d.pop("evaluators", []))
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        try:
            return cls(evaluators=evs, **d)
        except TypeError as exc:
            raise ConfigError(f"filter config: {exc}") from None


@dataclass(frozen=True)
class FilterResult:
    scores: dict
    passes: dict
    filter_score: int
    accepted: bool


def filter_decision(scores: Mapping[str, float], cfg: FilterConfig) -> FilterResult:
    missing = [e.id for e in cfg.evaluators if e.id not in scores]
    if missing:
        raise ValueError(f"incomplete scores: missing {missing}")
    passes = {e.id: int(scores[e.id] >= e.rho - SCORE_TOL) for e in cfg.evaluators}
    f = sum(passes.values())
    accepted = f >= cfg.lam if cfg.comparison == "ge" else f > cfg.lam
    return FilterResult({e.id: float(scores[e.id]) for e in cfg.evaluators}, passes, f, accepted)


class Evaluator:
    """Runtime scorer ``g(t, X)`` built from an :class:`EvaluatorSpec`."""

    def __init__(self, spec: EvaluatorSpec):
        self.spec = spec

    @property
    def id(self) -> str:
        return self.spec.id

    def score(self, segment, accepted, candidates: Sequence) -> float:
        """Score the accepted candidate; ``candidates`` holds all N hypotheses."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class ConfidenceEvaluator(Evaluator):
    """Model confidence of the accepted transcript.

    ``params.transcriber`` names whose confidence to read (default: the
    transcriber that produced the accepted candidate). Per-token
    distributions take priority over a scalar confidence.
    """

    def score(self, segment, accepted, candidates):
        source = self.spec.params.get("transcriber")
        cand = accepted
        if source is not None:
            cand = next((c for c in candidates if c.transcriber_id == source), None)
            if cand is None:
                raise MissingEvaluatorInput(f"{self.id}: no candidate from transcriber {source!r}")
        if cand.token_dists:
            return renyi_confidence(
                cand.token_dists,
                self.spec.params.get("alpha", 0.5),
                self.spec.params.get("aggregation", "mean"),
            )
        if cand.confidence is not None:
            return float(cand.confidence)
        raise MissingEvaluatorInput(f"{self.id}: transcriber {cand.transcriber_id!r} gave no confidence data")


class EmbeddingSimilarityEvaluator(Evaluator):
    """Cosine similarity between the audio embedding and the transcript embedding."""

    def __init__(self, spec: EvaluatorSpec, norm: NormalizationConfig = DEFAULT_NORMALIZATION,
                 provider: EmbeddingProvider | None = None):
        super().__init__(spec)
        self.norm = norm
        self.provider = provider or EmbeddingProvider(EmbeddingProviderSpec.from_dict(spec.params["provider"]))

    def score(self, segment, accepted, candidates):
        text = accepted.text
        if self.spec.params.get("text_source", "raw") == "normalized":
            text = normalize(text, self.norm)
        try:
            return cosine_similarity(self.provider.embed_audio(segment), self.provider.embed_text(text))
        except ValueError as exc:
            raise MissingEvaluatorInput(f"{self.id}: {exc}") from None

    def close(self) -> None:
        self.provider.close()


class ExternalEvaluator(Evaluator):
    """Precomputed scores from a JSONL table of ``{"id", "score"}`` rows."""

    def __init__(self, spec: EvaluatorSpec):
        super().__init__(spec)
        self.table = {}
        with open(spec.params["path"], encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    self.table[row["id"]] = float(row["score"])

    def score(self, segment, accepted, candidates):
        try:
            return self.table[segment.id]
        except KeyError:
            raise MissingEvaluatorInput(f"{self.id}: no external score for {segment.id}") from None


def make_evaluator(spec: EvaluatorSpec, norm: NormalizationConfig = DEFAULT_NORMALIZATION,
                   providers: dict | None = None) -> Evaluator:
    """Instantiate a runtime evaluator.

    ``providers`` is a shared ``{provider id: EmbeddingProvider}`` cache so
    evaluators that reference the same provider reuse its embeddings.
    """
    errs = spec.validate()
    if errs:
        raise ConfigError(errs)
    if spec.kind == "confidence":
        return ConfidenceEvaluator(spec)
    if spec.kind == "external":
        return ExternalEvaluator(spec)
    pspec = EmbeddingProviderSpec.from_dict(spec.params["provider"])
    provider = None
    if providers is not None:
        provider = providers.get(pspec.id)
        if provider is None or provider.spec != pspec:
            provider = providers[pspec.id] = EmbeddingProvider(pspec)
    return EmbeddingSimilarityEvaluator(spec, norm, provider)
