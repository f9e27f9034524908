"""Per-attempt success accounting, independent influence and its decay fit.

For ``N`` problems let ``S_i`` be the number solved exactly at attempt ``i``
(attempt 0 is the initial generation). The survivors entering attempt ``i``
are ``N_i = N - sum(S_0..S_{i-1})`` and the independent influence of attempt
``i`` is ``I_i = S_i / N_i``. The influence sequence is fitted with
``I(x) = a * exp(-b * x)`` by least squares on ``ln I``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass
from decimal import Decimal
from fractions import Fraction
from numbers import Real
from typing import Iterable, Sequence

import numpy as np

from .orchestrator import RunLog, SolveOutcome

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("i", "S_i", "N_i", "I_i")
FIT_FIELDS = ("a", "b", "r_squared", "points_used")


class InsufficientPoints(ValueError):
    """Fewer than two strictly positive influence points."""


def _exact(value: Real | str) -> Fraction:
    """Exact rational for ints, decimal strings and floats as written (``3.8`` -> 19/5)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(Decimal(repr(value)))
    return Fraction(Decimal(str(value).strip()))


def _plain(value: Fraction) -> int | float:
    return int(value) if value.denominator == 1 else float(value)


@dataclass(frozen=True)
class AttemptCounts:
    N: Fraction
    S: tuple[Fraction, ...]
    unsolved: Fraction
    # rounded table rows may over-sum N slightly; logs never may
    lenient: bool = False

    def __post_init__(self) -> None:
        if any(s < 0 for s in self.S) or self.N < 0:
            raise ValueError("counts must be non-negative")
        if self.unsolved < 0 and not self.lenient:
            raise ValueError("counts must be non-negative (sum(S) exceeds N)")
        if self.unsolved + sum(self.S) != self.N:
            raise ValueError("N must equal unsolved + sum(S)")

    @classmethod
    def from_values(cls, S: Sequence[Real | str], N: Real | str, lenient: bool = False) -> "AttemptCounts":
        s = tuple(_exact(v) for v in S)
        n = _exact(N)
        unsolved = n - sum(s)
        if unsolved < 0 and lenient:
            logger.warning("per-attempt values sum to %s > N=%s (rounding in the source table?)",
                           _plain(sum(s)), _plain(n))
        return cls(N=n, S=s, unsolved=unsolved, lenient=lenient)


@dataclass(frozen=True)
class InfluencePoint:
    i: int
    S_i: Fraction
    N_i: Fraction
    I_exact: Fraction

    @property
    def I_i(self) -> float:
        return float(self.I_exact)


@dataclass(frozen=True)
class DecayFit:
    a: float
    b: float
    r_squared: float
    points_used: int
    excluded: tuple[int, ...] = ()
    infeasible: tuple[int, ...] = ()

    def as_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "r_squared": self.r_squared,
            "points_used": self.points_used,
            "r_squared_scale": "ln",
            "excluded_zero_points": list(self.excluded),
            "excluded_infeasible_points": list(self.infeasible),
        }


def tally(outcomes: RunLog | Iterable[SolveOutcome], max_attempts: int = 5) -> AttemptCounts:
    if isinstance(outcomes, RunLog):
        outcomes = outcomes.outcomes
    outcomes = list(outcomes)
    S = [0] * (max_attempts + 1)
    unsolved = 0
    for outcome in outcomes:
        if outcome.solved and outcome.attempts:
            index = outcome.attempts[-1].index
            if index > max_attempts:
                raise ValueError(f"{outcome.problem_id} solved at attempt {index} > {max_attempts}")
            S[index] += 1
        else:
            unsolved += 1
    return AttemptCounts.from_values(S, len(outcomes))


def influence(counts: AttemptCounts) -> list[InfluencePoint]:
    points = []
    survivors = counts.N
    for i, solved in enumerate(counts.S):
        if survivors <= 0:
            break
        points.append(InfluencePoint(i=i, S_i=solved, N_i=survivors, I_exact=solved / survivors))
        survivors -= solved
    return points


def fit_decay(points: Sequence[InfluencePoint] | Sequence[tuple[float, float]]) -> DecayFit:
    """Fit ``a * exp(-b x)`` to points with positive influence; R^2 on the ln scale.

    Influence points with ``S_i > N_i`` can only come from rounded tables that
    over-sum N; they are dropped from the fit and listed in ``infeasible``.
    """
    infeasible = tuple(p.i for p in points if isinstance(p, InfluencePoint) and p.S_i > p.N_i)
    pairs = [(p.i, p.I_i) if isinstance(p, InfluencePoint) else (float(p[0]), float(p[1]))
             for p in points if not (isinstance(p, InfluencePoint) and p.i in infeasible)]
    usable = [(x, y) for x, y in pairs if y > 0]
    excluded = tuple(int(x) for x, y in pairs if y <= 0)
    if infeasible:
        logger.warning("influence above 1 at attempts %s excluded from the fit", list(infeasible))
    if len({x for x, _ in usable}) < 2:
        raise InsufficientPoints(
            f"need at least two distinct attempts with positive influence, got {len(usable)}"
        )
    x = np.array([p[0] for p in usable], dtype=float)
    y = np.log(np.array([p[1] for p in usable], dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    predicted = intercept + slope * x
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # constant ln I leaves only rounding noise in ss_tot; the flat line is exact then
    if ss_tot <= 1e-20 * max(1.0, float(np.sum(y**2))):
        r_squared = 1.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    return DecayFit(
        a=float(math.exp(intercept)),
        b=float(-slope),
        r_squared=r_squared,
        points_used=len(usable),
        excluded=excluded,
        infeasible=infeasible,
    )


def mean_influence(series: Sequence[Sequence[InfluencePoint]], pool: bool = False) -> list[tuple[float, float]]:
    """Combine influence series from several runs or models.

    With ``pool`` every point is kept; otherwise points are averaged per attempt.
    """
    if pool:
        return [(p.i, p.I_i) for s in series for p in s]
    by_attempt: dict[int, list[float]] = {}
    for s in series:
        for p in s:
            by_attempt.setdefault(p.i, []).append(p.I_i)
    return [(i, statistics.fmean(v)) for i, v in sorted(by_attempt.items())]


def influence_table(points: Sequence[InfluencePoint], sd: Sequence[float] | None = None) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = list(CSV_COLUMNS) + (["S_i_sd"] if sd is not None else [])
    writer.writerow(header)
    for p in points:
        row = [p.i, _fmt(p.S_i), _fmt(p.N_i), f"{p.I_i:.6f}"]
        if sd is not None:
            row.append(f"{sd[p.i]:.6f}" if p.i < len(sd) else "")
        writer.writerow(row)
    return out.getvalue()


def _fmt(value: Fraction) -> str:
    plain = _plain(value)
    return str(plain) if isinstance(plain, int) else f"{plain:.6g}"


def combine_counts(all_counts: Sequence[AttemptCounts]) -> tuple[AttemptCounts, list[float]]:
    """Mean per-attempt percentages across repeats plus their sample standard deviations."""
    if not all_counts:
        raise ValueError("no counts to combine")
    width = max(len(c.S) for c in all_counts)
    pct = [[float(c.S[i] / c.N * 100) if i < len(c.S) and c.N else 0.0 for i in range(width)]
           for c in all_counts]
    means = [statistics.fmean(col) for col in zip(*pct)]
    sds = [statistics.stdev(col) if len(col) > 1 else 0.0 for col in zip(*pct)]
    return AttemptCounts.from_values([repr(m) for m in means], 100, lenient=True), sds


def summarize(log: RunLog | Sequence[SolveOutcome]) -> dict:
    outcomes = log.outcomes if isinstance(log, RunLog) else list(log)
    if not outcomes:
        raise ValueError("cannot summarize an empty log")
    n = len(outcomes)
    solved = sum(1 for o in outcomes if o.solved)
    prompt_tokens = sum(a.prompt_tokens for o in outcomes for a in o.attempts)
    completion_tokens = sum(a.completion_tokens for o in outcomes for a in o.attempts)
    total = prompt_tokens + completion_tokens
    calls = sum(o.llm_calls for o in outcomes)
    attempts = sum(len(o.attempts) for o in outcomes)
    return {
        "problems": n,
        "solved": solved,
        "unsolved": n - solved,
        "setup_errors": sum(1 for o in outcomes if o.setup_error),
        "success_rate": solved / n,
        "success_rate_pct": round(100 * solved / n, 1),
        "prompt_tokens": prompt_tokens,
        "completion_tokens": completion_tokens,
        "total_tokens": total,
        "avg_tokens_per_problem": total / n,
        "avg_attempts_per_problem": attempts / n,
        "avg_debugging_attempts_per_problem": sum(max(len(o.attempts) - 1, 0) for o in outcomes) / n,
        "avg_llm_calls_per_problem": calls / n,
    }


def format_summary(summary: dict) -> str:
    return (
        f"Success rate: {summary['success_rate_pct']:.1f}% "
        f"({summary['solved']}/{summary['problems']})\n"
        f"Total tokens: {summary['total_tokens']}  "
        f"avg/problem: {summary['avg_tokens_per_problem']:.2f}\n"
        f"Avg attempts/problem: {summary['avg_attempts_per_problem']:.2f}  "
        f"avg LLM calls/problem: {summary['avg_llm_calls_per_problem']:.2f}"
    )


def points_to_json(points: Sequence[InfluencePoint]) -> list[dict]:
    return [
        {"i": p.i, "S_i": _plain(p.S_i), "N_i": _plain(p.N_i), "I_i": p.I_i,
         "I_i_exact": f"{p.I_exact.numerator}/{p.I_exact.denominator}"}
        for p in points
    ]


def dumps(obj) -> str:
    if hasattr(obj, "as_dict"):
        obj = obj.as_dict()
    elif hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    return json.dumps(obj, indent=2, default=str)
