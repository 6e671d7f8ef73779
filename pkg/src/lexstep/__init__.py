"""Step-wise verified legal judgment reasoning with pluggable model backends."""

from __future__ import annotations

from .backends import Backends, ScriptedBackend, ScriptedScoreBackend, SamplingParams
from .case_model import (
    ErrorType,
    LegalCase,
    ReasoningStep,
    ReasoningTrace,
    StepVerification,
    load_corpus,
    save_corpus,
)
from .config import RunConfig
from .reasoner import ReasoningPipeline, run_reasoning
from .verifier import Verifier, VerifierConfig, estimate_potential

__version__ = "0.1.0"

__all__ = [
    "Backends",
    "ErrorType",
    "LegalCase",
    "ReasoningPipeline",
    "ReasoningStep",
    "ReasoningTrace",
    "RunConfig",
    "SamplingParams",
    "ScriptedBackend",
    "ScriptedScoreBackend",
    "StepVerification",
    "Verifier",
    "VerifierConfig",
    "estimate_potential",
    "load_corpus",
    "run_reasoning",
    "save_corpus",
]
