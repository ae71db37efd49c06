"""Protocol state machine extraction from plain-text specifications."""

from .ensemble import AlignmentParams, cluster_candidates, ensemble, majority_vote, span_overlap, transitions_aligned
from .evalkit import EvalReport, GroundTruth, evaluate, match_transitions, score, state_score
from .extract import CandidateSet, extract_provider, parse_model_output
from .fsm import Fsm, Provenance, Transition, export_dot, export_json, load_json, qualify_state
from .preproc import RawDocument, Window, clean_document, merge_windows, segment
from .prompting import ContextDigest, PromptBundle, ProtocolProfile, Style

__version__ = "0.1.0"

__all__ = [
    "AlignmentParams",
    "CandidateSet",
    "ContextDigest",
    "EvalReport",
    "Fsm",
    "GroundTruth",
    "PromptBundle",
    "ProtocolProfile",
    "Provenance",
    "RawDocument",
    "Style",
    "Transition",
    "Window",
    "clean_document",
    "cluster_candidates",
    "ensemble",
    "evaluate",
    "export_dot",
    "export_json",
    "extract_provider",
    "load_json",
    "match_transitions",
    "majority_vote",
    "merge_windows",
    "parse_model_output",
    "qualify_state",
    "score",
    "segment",
    "span_overlap",
    "state_score",
    "transitions_aligned",
]
