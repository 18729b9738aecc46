"""Deterministic multimodal pre-training pipeline.

Compiles declarative run specs into exact, verifiable artifacts: resumed
learning-rate schedules, token budgets, deterministically mixed and packed
token shards with loss masks, and stable-score evaluation reports.
"""

from .runspec import ModelScale, RunSpec, preset, validate

__all__ = ["ModelScale", "RunSpec", "preset", "validate"]
__version__ = "0.1.0"
