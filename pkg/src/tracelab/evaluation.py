"""Precision/Recall/F1 computation and pairwise method comparison.

Zero-denominator convention: a metric whose denominator is zero is reported
as 0.0 with a flag, never an error, so empty-prediction runs still rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .stats import RankTestResult, wilcoxon_signed_rank

__all__ = [
    "EvalResult",
    "MethodComparison",
    "f1_score",
    "evaluate",
    "compare_methods",
    "eval_result_to_dict",
    "comparisons_to_dict",
    "results_markdown",
    "comparisons_markdown",
]


@dataclass(frozen=True)
class EvalResult:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class MethodComparison:
    method_a: str
    method_b: str
    test: RankTestResult
    significant: bool
    alpha: float


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; zero when both are zero."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate(
    predicted: Iterable[tuple[str, str]], truth: Iterable[tuple[str, str]]
) -> EvalResult:
    """Exact set arithmetic of predicted links against ground truth."""
    predicted_set = set(predicted)
    truth_set = set(truth)
    tp = len(predicted_set & truth_set)
    fp = len(predicted_set - truth_set)
    fn = len(truth_set - predicted_set)
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("no-predictions")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("no-truth")
    else:
        recall = tp / (tp + fn)
    return EvalResult(
        tp=tp, fp=fp, fn=fn,
        precision=precision, recall=recall, f1=f1_score(precision, recall),
        flags=tuple(flags),
    )


def compare_methods(
    f1_by_method: Mapping[str, Sequence[float]], alpha: float = 0.05
) -> list[MethodComparison]:
    """Pairwise one-sided Wilcoxon tests over aligned per-project F1 scores.

    For every ordered pair (a, b) the alternative is "a scores higher than b";
    results are flagged significant at ``alpha``.
    """
    methods = sorted(f1_by_method)
    lengths = {m: len(f1_by_method[m]) for m in methods}
    if len(set(lengths.values())) > 1:
        raise ValueError(f"method sequences must be aligned, got lengths {lengths}")
    out = []
    for a in methods:
        for b in methods:
            if a == b:
                continue
            test = wilcoxon_signed_rank(list(f1_by_method[a]), list(f1_by_method[b]))
            out.append(
                MethodComparison(
                    method_a=a, method_b=b, test=test,
                    significant=test.p_value < alpha, alpha=alpha,
                )
            )
    return out


def eval_result_to_dict(result: EvalResult) -> dict:
    return {
        "tp": result.tp,
        "fp": result.fp,
        "fn": result.fn,
        "precision": result.precision,
        "recall": result.recall,
        "f1": result.f1,
        "flags": list(result.flags),
    }


def comparisons_to_dict(comparisons: Sequence[MethodComparison]) -> list[dict]:
    return [
        {
            "method_a": c.method_a,
            "method_b": c.method_b,
            "statistic": c.test.statistic,
            "w_plus": c.test.w_plus,
            "w_minus": c.test.w_minus,
            "p_value": c.test.p_value,
            "method": c.test.method,
            "significant": c.significant,
            "alpha": c.alpha,
        }
        for c in comparisons
    ]


def results_markdown(results: Mapping[str, EvalResult]) -> str:
    """Markdown table of evaluation results, one row per label."""
    lines = [
        "| Run | Precision | Recall | F1-Score |",
        "| --- | --- | --- | --- |",
    ]
    for label in sorted(results):
        r = results[label]
        lines.append(
            f"| {label} | {r.precision:.4f} | {r.recall:.4f} | {r.f1:.4f} |"
        )
    return "\n".join(lines) + "\n"


def comparisons_markdown(comparisons: Sequence[MethodComparison]) -> str:
    lines = [
        "| A | B | W | p-value | significant |",
        "| --- | --- | --- | --- | --- |",
    ]
    for c in comparisons:
        lines.append(
            f"| {c.method_a} | {c.method_b} | {c.test.statistic:.4g} "
            f"| {c.test.p_value:.6g} | {'yes' if c.significant else 'no'} |"
        )
    return "\n".join(lines) + "\n"
