"""Evaluation toolkit for hint-free multi-hop deep search agents."""

from .chainbuilder import Chain, QuestionRecord, build_question, find_alternative_chain, verify_question
from .corpus import CorpusStore, ingest_corpus, load_corpus
from .masking import PLACEHOLDER, build_policy, mask_text
from .metrics import InstanceOutcome, ScoreReport, aggregate_scores, classify_profile, score_traces
from .sandbox import FinalResponse, LocalSession, Sandbox, Trace, start_episode

__version__ = "0.1.0"

__all__ = [
    "Chain", "QuestionRecord", "build_question", "find_alternative_chain", "verify_question",
    "CorpusStore", "ingest_corpus", "load_corpus",
    "PLACEHOLDER", "build_policy", "mask_text",
    "InstanceOutcome", "ScoreReport", "aggregate_scores", "classify_profile", "score_traces",
    "FinalResponse", "LocalSession", "Sandbox", "Trace", "start_episode",
]
