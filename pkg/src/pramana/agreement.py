"""Agreement-based selection of one pseudo-label among N candidate transcripts.

Each candidate ``t_i`` earns one agreement point per candidate ``t_k`` whose
matching score with it reaches ``tau``; the candidate with the most points is
accepted when its score exceeds ``delta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

from .textnorm import DEFAULT_NORMALIZATION, NormalizationConfig, matching_score, normalize

log = logging.getLogger(__name__)

NO_AGREEMENT = "no agreement"


@dataclass(frozen=True)
class AgreementConfig:
    tau: float = 1.0
    delta: int = 1
    include_self: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.delta < 0 or int(self.delta) != self.delta:
            raise ValueError(f"delta must be a nonnegative integer, got {self.delta}")

    def warnings(self, n_candidates: int) -> list[str]:
        """Configurations that can never accept anything with N candidates."""
        max_score = n_candidates if self.include_self else n_candidates - 1
        if self.delta >= max_score:
            return [
                f"delta={self.delta} with N={n_candidates} "
                f"(include_self={self.include_self}) rejects every segment"
            ]
        return []

    def to_dict(self) -> dict:
        return {"tau": self.tau, "delta": self.delta, "include_self": self.include_self}

    @classmethod
    def from_dict(cls, d: dict | None) -> "AgreementConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class Accepted:
    index: int
    transcript: str


@dataclass(frozen=True)
class Rejected:
    reason: str


@dataclass(frozen=True)
class AgreementResult:
    matrix: tuple[tuple[int, ...], ...]
    scores: tuple[int, ...]
    outcome: Union[Accepted, Rejected]

    @property
    def accepted(self) -> bool:
        return isinstance(self.outcome, Accepted)

    @property
    def selected(self) -> int | None:
        return self.outcome.index if self.accepted else None


def _text(candidate) -> str:
    return candidate if isinstance(candidate, str) else candidate.text


def agreement_matrix(
    candidates: Sequence,
    cfg: AgreementConfig = AgreementConfig(),
    norm: NormalizationConfig = DEFAULT_NORMALIZATION,
) -> tuple[tuple[int, ...], ...]:
    """Binary N x N matrix with entry (i, k) = [M(t_i, t_k) >= tau].

    ``candidates`` may be plain strings or objects with a ``text`` attribute.
    """
    texts = [normalize(_text(c), norm) for c in candidates]
    n = len(texts)
    rows = [[0] * n for _ in range(n)]
    for i in range(n):
        rows[i][i] = 1 if cfg.include_self else 0
        for k in range(i + 1, n):
            agree = 1 if matching_score(texts[i], texts[k]) >= cfg.tau else 0
            rows[i][k] = rows[k][i] = agree
    return tuple(tuple(r) for r in rows)


def select_pseudo_label(
    candidates: Sequence,
    cfg: AgreementConfig = AgreementConfig(),
    norm: NormalizationConfig = DEFAULT_NORMALIZATION,
) -> AgreementResult:
    """Pick the candidate with maximal agreement score, or reject.

    Ties go to the lowest index, i.e. the first transcriber in configured order.
    The accepted transcript is the candidate's raw (unnormalized) text.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates")
    matrix = agreement_matrix(candidates, cfg, norm)
    scores = tuple(sum(row) for row in matrix)
    best = max(scores)
    if best > cfg.delta:
        index = scores.index(best)
        outcome = Accepted(index, _text(candidates[index]))
    else:
        outcome = Rejected(NO_AGREEMENT)
    return AgreementResult(matrix, scores, outcome)
