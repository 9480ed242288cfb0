"""Agreement- and evaluator-based pseudo-label curation for low-resource ASR."""

from .agreement import AgreementConfig, AgreementResult, agreement_matrix, select_pseudo_label
from .evaluators import EvaluatorSpec, FilterConfig, FilterResult, cosine_similarity, filter_decision, renyi_confidence
from .pipeline import PipelineConfig, YieldReport, ablation_preset, resume, run_pipeline
from .segmentation import AudioSegment, VadConfig, detect_segments, duration_bucket, load_external_segments
from .textnorm import NormalizationConfig, cer, levenshtein, matching_score, normalize, wer
from .transcribers import TranscriberSpec, TranscriptCandidate

__version__ = "0.1.0"

__all__ = [
    "AgreementConfig", "AgreementResult", "agreement_matrix", "select_pseudo_label",
    "EvaluatorSpec", "FilterConfig", "FilterResult", "cosine_similarity", "filter_decision", "renyi_confidence",
    "PipelineConfig", "YieldReport", "ablation_preset", "resume", "run_pipeline",
    "AudioSegment", "VadConfig", "detect_segments", "duration_bucket", "load_external_segments",
    "NormalizationConfig", "cer", "levenshtein", "matching_score", "normalize", "wer",
    "TranscriberSpec", "TranscriptCandidate",
]
