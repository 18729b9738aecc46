"""Stable-score aggregation of benchmark accuracies.

A raw accuracy mean rewards tasks with high chance floors (a coin-flip task
contributes 50 points for free). The stable score removes that: subtract
each task's random-chance baseline from its accuracy, then average. The
result reads as percentage points of advantage over random guessing and may
be negative.

Two baseline tables ship as package data: multiple-choice text tasks at
100/n_choices, and the vision suite where the two yes/no-style tasks (POPE,
RefCOCO grounding accuracy) sit at 50 and the open-ended VQA tasks at 0.
Both are plain YAML config, not hard-coded, so suites can be re-based.
Scores are carried as 64-bit floats and printed with 2 decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import yaml


class UnknownTaskError(KeyError):
    def __init__(self, task: str):
        self.task = task
        super().__init__(
            f"task {task!r} has no baseline in the active table and none was "
            "supplied in the input"
        )


@dataclass(frozen=True)
class TaskResult:
    """One benchmark outcome in percent points, with its chance floor."""

    task: str
    accuracy: float
    baseline: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"{self.task}: accuracy {self.accuracy} outside [0, 100]")
        if not 0.0 <= self.baseline <= 100.0:
            raise ValueError(f"{self.task}: baseline {self.baseline} outside [0, 100]")

    @property
    def delta(self) -> float:
        return self.accuracy - self.baseline


def chance_baseline(n_choices: int) -> float:
    """Uniform-guessing accuracy (percent) for an n-way choice task."""
    if n_choices < 2:
        raise ValueError(f"n_choices must be at least 2, got {n_choices}")
    return 100.0 / n_choices


def stable_score(results: Sequence[TaskResult]) -> float:
    """Mean of (accuracy - baseline) over tasks, in percent points."""
    if not results:
        raise ValueError("stable_score requires at least one task result")
    return sum(r.delta for r in results) / len(results)


class BaselineTable:
    """task name -> chance baseline (percent)."""

    def __init__(self, baselines: dict[str, float]):
        self.baselines = dict(baselines)

    def __contains__(self, task: str) -> bool:
        return task in self.baselines

    def __getitem__(self, task: str) -> float:
        try:
            return self.baselines[task]
        except KeyError:
            raise UnknownTaskError(task) from None

    @classmethod
    def from_yaml(cls, text: str) -> "BaselineTable":
        doc = yaml.safe_load(text)
        if not isinstance(doc, dict):
            raise ValueError("baseline table must be a mapping of task -> percent")
        out = {}
        for task, value in doc.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValueError(f"baseline for {task!r} must be a number")
            out[str(task)] = float(value)
        return cls(out)

    @classmethod
    def load(cls, path: str | Path) -> "BaselineTable":
        return cls.from_yaml(Path(path).read_text(encoding="utf-8"))


def _builtin(name: str) -> BaselineTable:
    text = resources.files("mmpipe").joinpath(f"data/{name}").read_text("utf-8")
    return BaselineTable.from_yaml(text)


def text_baselines() -> BaselineTable:
    return _builtin("text_baselines.yaml")


def vision_baselines() -> BaselineTable:
    return _builtin("vision_baselines.yaml")


def default_baselines() -> BaselineTable:
    merged = dict(text_baselines().baselines)
    merged.update(vision_baselines().baselines)
    return BaselineTable(merged)


@dataclass(frozen=True)
class ScoreReport:
    results: tuple[TaskResult, ...]
    score: float

    def lines(self) -> list[str]:
        width = max(len(r.task) for r in self.results)
        out = [f"{'task':<{width}}  accuracy  baseline    delta"]
        for r in self.results:
            out.append(
                f"{r.task:<{width}}  {r.accuracy:8.2f}  {r.baseline:8.2f}  {r.delta:+7.2f}"
            )
        out.append(f"stable score: {self.score:.2f}")
        return out

    def to_ndjson(self) -> str:
        lines = [
            json.dumps(
                {
                    "task": r.task,
                    "accuracy": r.accuracy,
                    "baseline": r.baseline,
                    "delta": r.delta,
                },
                sort_keys=True,
            )
            for r in self.results
        ]
        lines.append(json.dumps({"stable_score": self.score}, sort_keys=True))
        return "\n".join(lines) + "\n"


def parse_results(lines: Iterable[str], table: BaselineTable) -> list[TaskResult]:
    """Decode NDJSON {"task", "accuracy", optional "baseline"} entries.

    An entry's explicit baseline wins over the table; a task absent from
    both is rejected by name.
    """
    out: list[TaskResult] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        unknown = sorted(set(obj) - {"task", "accuracy", "baseline"})
        if unknown:
            raise ValueError(f"line {lineno}: unknown keys {', '.join(unknown)}")
        if "task" not in obj or "accuracy" not in obj:
            raise ValueError(f"line {lineno}: needs task and accuracy")
        task = str(obj["task"])
        baseline = obj.get("baseline")
        if baseline is None:
            baseline = table[task]
        out.append(TaskResult(task=task, accuracy=float(obj["accuracy"]), baseline=float(baseline)))
    return out


def score_report(path: str | Path, table: BaselineTable) -> ScoreReport:
    """Score an NDJSON results file against a baseline table."""
    with open(path, "r", encoding="utf-8") as fh:
        results = parse_results(fh, table)
    if not results:
        raise ValueError(f"{path}: no task results")
    return ScoreReport(results=tuple(results), score=stable_score(results))
