"""Nonparametric statistics for lexical-overlap diagnostics.

Implements the full toolkit used by the workbench: co-occurrence word ratios,
the Difference Ratio with balanced resampling, the Mann-Whitney U test with a
Fisher combination across resamples, Spearman rank correlation with a
permutation test, and the Wilcoxon signed-rank test.

Conventions (fixed here, documented once):

* Ties receive average ranks everywhere.
* ``mann_whitney_u(a, b, "greater")`` tests the alternative that values in
  ``b`` are stochastically greater than values in ``a``.  The reported U is
  computed from the rank sum of ``a``; large U therefore favors ``b``.
* Resampling is without replacement inside one resample; the per-resample
  seeds come from the splitmix64 chain in :mod:`tracelab.seeds`, so runs are
  bit-reproducible and resamples may be evaluated in any order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Sequence, TYPE_CHECKING

import numpy as np

from .seeds import derive_seeds

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import Project

__all__ = [
    "RankTestResult",
    "DiffRatioReport",
    "co_occurrence_ratio",
    "difference_ratio",
    "mann_whitney_u",
    "fisher_combine",
    "spearman_permutation",
    "wilcoxon_signed_rank",
    "average_ranks",
]

FISHER_DEPENDENCE_CAVEAT = (
    "Combined p-value aggregates resample tests that share the true-link "
    "sample and are therefore not independent; the combination is computed "
    "as specified but should be read as a heuristic aggregate."
)

_P_CLAMP = 1e-300


@dataclass(frozen=True)
class RankTestResult:
    """Outcome of one rank test."""

    statistic: float
    p_value: float
    n_a: int
    n_b: int
    method: str = ""
    flags: tuple[str, ...] = ()
    u_prime: float | None = None
    w_plus: float | None = None
    w_minus: float | None = None


@dataclass(frozen=True)
class DiffRatioReport:
    """Difference Ratio diagnostic for one project."""

    p_true: float
    p_false: float
    difference_ratio: float
    combined_p: float
    n_resamples: int
    seed: int
    resample_p_values: tuple[float, ...]
    resample_means: tuple[float, ...]
    flags: tuple[str, ...] = ()
    caveat: str = FISHER_DEPENDENCE_CAVEAT


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties assigned the average of their rank block."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j + 2) / 2.0  # ranks i+1 .. j+1 inclusive
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def co_occurrence_ratio(a: set[str], b: set[str]) -> float:
    """Shared-vocabulary fraction |a & b| / |a | b|; zero when both empty."""
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def _tie_term(all_values: Sequence[float]) -> float:
    """Sum of t^3 - t over tie groups of the pooled sample."""
    counts: dict[float, int] = {}
    for v in all_values:
        counts[v] = counts.get(v, 0) + 1
    return float(sum(t**3 - t for t in counts.values() if t > 1))


def mann_whitney_u(
    a: Sequence[float],
    b: Sequence[float],
    alternative: str = "greater",
) -> RankTestResult:
    """Mann-Whitney U test on two independent samples.

    U is computed from the rank sum R1 of ``a``:
    ``U = n_a*n_b + n_a*(n_a+1)/2 - R1`` and ``U' = n_a*n_b - U``.  With
    ``alternative="greater"`` the p-value is for the hypothesis that ``b``
    is stochastically greater than ``a`` (the large-U tail).

    The p-value comes from exact enumeration over all rank assignments when
    ``max(n_a, n_b) <= 8`` and the pooled sample has no ties; otherwise from
    the normal approximation with tie-corrected variance and a continuity
    correction.  A degenerate pooled sample (zero variance) yields p = 1.
    """
    if alternative not in ("greater", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    n_a, n_b = len(a), len(b)
    if n_a == 0 or n_b == 0:
        raise ValueError("mann_whitney_u requires nonempty samples")

    pooled = list(a) + list(b)
    ranks = average_ranks(pooled)
    r1 = sum(ranks[:n_a])
    u = n_a * n_b + n_a * (n_a + 1) / 2.0 - r1
    u_prime = n_a * n_b - u
    has_ties = len(set(pooled)) < len(pooled)

    if not has_ties and max(n_a, n_b) <= 8:
        p = _mw_exact_p(n_a, n_b, u, alternative)
        method = "exact"
    else:
        p, method = _mw_normal_p(n_a, n_b, u, pooled, alternative)
    return RankTestResult(
        statistic=u, p_value=p, n_a=n_a, n_b=n_b, method=method, u_prime=u_prime
    )


def _mw_exact_p(n_a: int, n_b: int, u_obs: float, alternative: str) -> float:
    """Exact tail probability by enumeration over rank assignments (no ties)."""
    n = n_a + n_b
    mu = n_a * n_b / 2.0
    offset = n_a * n_b + n_a * (n_a + 1) / 2.0
    total = 0
    hits = 0
    for positions in combinations(range(1, n + 1), n_a):
        u_perm = offset - sum(positions)
        total += 1
        if alternative == "greater":
            if u_perm >= u_obs - 1e-9:
                hits += 1
        else:
            if abs(u_perm - mu) >= abs(u_obs - mu) - 1e-9:
                hits += 1
    return hits / total


def _mw_normal_p(
    n_a: int, n_b: int, u: float, pooled: Sequence[float], alternative: str
) -> tuple[float, str]:
    n = n_a + n_b
    mu = n_a * n_b / 2.0
    tie = _tie_term(pooled)
    var = (n_a * n_b / 12.0) * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return 1.0, "degenerate"
    sd = math.sqrt(var)
    if alternative == "greater":
        z = (u - mu - 0.5) / sd
        return _normal_sf(z), "normal"
    z = (abs(u - mu) - 0.5) / sd
    return min(1.0, 2.0 * _normal_sf(max(z, 0.0))), "normal"


def fisher_combine(p_values: Sequence[float]) -> float:
    """Fisher's method: chi = -2 * sum(ln p_i), chi-squared with 2k dof.

    The survival function for even degrees of freedom has the closed form
    ``exp(-x/2) * sum_{i<k} (x/2)^i / i!``, evaluated in log space for
    stability.  Zero p-values are clamped to 1e-300 and flagged via a
    warning; values outside (0, 1] are rejected.
    """
    if len(p_values) == 0:
        raise ValueError("fisher_combine requires at least one p-value")
    clamped = []
    for p in p_values:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"p-value {p} outside [0, 1]")
        if p == 0.0:
            warnings.warn("p-value of 0 clamped to 1e-300 in fisher_combine")
            p = _P_CLAMP
        clamped.append(p)
    chi = -2.0 * sum(math.log(p) for p in clamped)
    return _chi2_sf_even(chi, len(clamped))


def _chi2_sf_even(x: float, k: int) -> float:
    """Chi-squared survival function at x with 2k degrees of freedom."""
    if x <= 0.0:
        return 1.0
    half = x / 2.0
    log_half = math.log(half)
    # logsumexp over log(half^i / i!) for i in [0, k)
    log_terms = [i * log_half - math.lgamma(i + 1) for i in range(k)]
    m = max(log_terms)
    log_sum = m + math.log(sum(math.exp(t - m) for t in log_terms))
    return min(1.0, math.exp(-half + log_sum))


def _spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rho on average ranks; Pearson-on-ranks when ties exist."""
    n = len(x)
    rx = average_ranks(x)
    ry = average_ranks(y)
    has_ties = len(set(x)) < n or len(set(y)) < n
    if not has_ties:
        d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
        return 1.0 - 6.0 * d2 / (n * (n * n - 1))
    return _pearson(rx, ry)


def _pearson(u: Sequence[float], v: Sequence[float]) -> float:
    n = len(u)
    mu = sum(u) / n
    mv = sum(v) / n
    cov = sum((a - mu) * (b - mv) for a, b in zip(u, v))
    su = math.sqrt(sum((a - mu) ** 2 for a in u))
    sv = math.sqrt(sum((b - mv) ** 2 for b in v))
    if su == 0.0 or sv == 0.0:
        return math.nan
    return cov / (su * sv)


def spearman_permutation(
    x: Sequence[float],
    y: Sequence[float],
    n_perms: int | str = "exhaustive",
    seed: int = 0,
) -> RankTestResult:
    """Spearman rank correlation with a permutation test.

    Two-tailed p-value: the fraction of permutations of the ``y`` ranks with
    ``|rho_perm| >= |rho|``.  With ``n_perms="exhaustive"`` and n <= 8 all n!
    permutations are enumerated; otherwise a seeded Monte-Carlo estimate over
    ``n_perms`` draws (default 100,000) that counts the observed arrangement
    in both numerator and denominator.
    """
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise ValueError("spearman_permutation requires n >= 3")
    if len(set(x)) == 1 or len(set(y)) == 1:
        return RankTestResult(
            statistic=math.nan, p_value=1.0, n_a=n, n_b=n,
            method="undefined", flags=("constant-sequence",),
        )
    rho = _spearman_rho(x, y)
    rx = average_ranks(x)
    ry = average_ranks(y)
    flags: tuple[str, ...] = ()

    exhaustive = n_perms == "exhaustive"
    if exhaustive and n > 8:
        exhaustive = False
        n_perms = 100_000
        flags = ("exhaustive-infeasible-monte-carlo",)

    if exhaustive:
        total = 0
        hits = 0
        for perm in permutations(ry):
            r = _pearson(rx, perm)
            total += 1
            if abs(r) >= abs(rho) - 1e-12:
                hits += 1
        return RankTestResult(
            statistic=rho, p_value=hits / total, n_a=n, n_b=n,
            method="exhaustive", flags=flags,
        )

    if not isinstance(n_perms, int) or n_perms < 1:
        raise ValueError(f"n_perms must be 'exhaustive' or a positive int, got {n_perms!r}")
    rng = np.random.default_rng(seed)
    ry_arr = np.asarray(ry, dtype=float)
    rx_arr = np.asarray(rx, dtype=float)
    hits = 0
    for _ in range(n_perms):
        perm = rng.permutation(ry_arr)
        r = _pearson(rx_arr.tolist(), perm.tolist())
        if abs(r) >= abs(rho) - 1e-12:
            hits += 1
    p = (hits + 1) / (n_perms + 1)
    return RankTestResult(
        statistic=rho, p_value=p, n_a=n, n_b=n, method="monte-carlo", flags=flags
    )


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> RankTestResult:
    """Wilcoxon signed-rank test on paired samples.

    Differences d = x - y; zero differences are excluded; |d| are ranked with
    average ties; W+ and W- are the rank sums of positive and negative
    differences and the statistic is W = min(W+, W-).  The one-sided p-value
    is for the alternative "x > y" (small W- tail): exact enumeration over
    all sign assignments of the observed ranks when the remaining n <= 15,
    otherwise the normal approximation with continuity correction.
    """
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) == 0:
        raise ValueError("wilcoxon_signed_rank requires nonempty samples")
    diffs = [xi - yi for xi, yi in zip(x, y)]
    nonzero = [d for d in diffs if d != 0.0]
    if not nonzero:
        return RankTestResult(
            statistic=0.0, p_value=1.0, n_a=len(x), n_b=len(y),
            method="degenerate", flags=("all-zero-differences",),
            w_plus=0.0, w_minus=0.0,
        )
    abs_d = [abs(d) for d in nonzero]
    ranks = average_ranks(abs_d)
    w_plus = sum(r for r, d in zip(ranks, nonzero) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, nonzero) if d < 0)
    w = min(w_plus, w_minus)
    n = len(nonzero)

    if n <= 15:
        hits = 0
        total = 1 << n
        for mask in range(total):
            wm = sum(ranks[i] for i in range(n) if (mask >> i) & 1)
            if wm <= w_minus + 1e-9:
                hits += 1
        p = hits / total
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        tie = _tie_term(abs_d)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie / 48.0
        if var <= 0:
            p, method = 1.0, "degenerate"
        else:
            z = (w_minus - mu + 0.5) / math.sqrt(var)
            p = 1.0 - _normal_sf(z)  # lower tail of W-
            method = "normal"
    return RankTestResult(
        statistic=w, p_value=p, n_a=len(x), n_b=len(y),
        method=method, w_plus=w_plus, w_minus=w_minus,
    )


def difference_ratio(project: "Project", n_resamples: int, seed: int) -> DiffRatioReport:
    """Difference Ratio diagnostic with balanced false-link resampling.

    ``p_true`` is the mean co-occurrence word ratio over all true links.  For
    each of ``n_resamples`` resamples, ``|true|`` false pairs are drawn
    uniformly without replacement (with replacement, flagged, when fewer
    false pairs exist) and their mean ratio recorded; ``p_false`` is the mean
    of those resample means.  The Difference Ratio is
    ``(p_true - p_false) / p_false``.  Each resample is also tested against
    the true-link ratios with a one-sided Mann-Whitney U test (alternative:
    true-link ratios stochastically greater) and the per-resample p-values
    are combined with Fisher's method.
    """
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    req_ids = sorted(a.id for a in project.requirements())
    code_ids = sorted(a.id for a in project.code_artifacts())
    token_sets = {a.id: set(a.tokens) for a in project.artifacts}

    true_pairs = sorted(project.ground_truth)
    false_pairs = [
        (r, c) for r in req_ids for c in code_ids if (r, c) not in project.ground_truth
    ]
    if not true_pairs:
        raise ValueError("difference_ratio requires at least one true link")
    if not false_pairs:
        raise ValueError("difference_ratio requires at least one false pair")

    def ratio(pair: tuple[str, str]) -> float:
        return co_occurrence_ratio(token_sets[pair[0]], token_sets[pair[1]])

    true_ratios = [ratio(p) for p in true_pairs]
    false_ratios = [ratio(p) for p in false_pairs]
    p_true = sum(true_ratios) / len(true_ratios)

    flags: list[str] = []
    k = len(true_pairs)
    replace = k > len(false_pairs)
    if replace:
        flags.append("sampled-with-replacement")

    resample_means: list[float] = []
    resample_ps: list[float] = []
    for s in derive_seeds(seed, n_resamples):
        rng = np.random.default_rng(s)
        idx = rng.choice(len(false_pairs), size=k, replace=replace)
        sample = [false_ratios[i] for i in idx]
        resample_means.append(sum(sample) / k)
        # H1: true-link ratios stochastically greater than the false sample.
        test = mann_whitney_u(sample, true_ratios, "greater")
        resample_ps.append(test.p_value)

    p_false = sum(resample_means) / n_resamples
    if p_false > 0:
        dr = (p_true - p_false) / p_false
    else:
        dr = math.nan
        flags.append("undefined-zero-p-false")
    combined = fisher_combine(resample_ps)
    return DiffRatioReport(
        p_true=p_true,
        p_false=p_false,
        difference_ratio=dr,
        combined_p=combined,
        n_resamples=n_resamples,
        seed=seed,
        resample_p_values=tuple(resample_ps),
        resample_means=tuple(resample_means),
        flags=tuple(flags),
    )
