"""Metric semantics, the judge client, and the statistics toolbox.

Everything here is replay-first: the aggregation, decomposition, variance,
significance, head-to-head, and Pareto analyses all consume score logs
(newline-delimited EvalRecord JSON), so the full analysis surface runs on
recorded fixtures with no model in the loop. Live judging merely appends
to the same log format.

Scoring follows the deferral policy: a query whose retrieval returned no
sources is scored at the 1.0 floor instead of being answered ungrounded.
The composite-overall mean therefore decomposes exactly as
co = coverage * cwa + (1 - coverage) * 1.0.
"""

from __future__ import annotations

import importlib.resources
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clients import chat_complete
from .corpus import tokenize

DEFERRED_CO = 1.0
_METRICS = ("faithfulness", "answer_relevance", "retrieval_quality")
_P_FLOOR = 5e-324  # smallest subnormal double; p-values are never reported as 0


class JudgeParseError(Exception):
    """Judge returned non-JSON or out-of-range scores; raw payload retained."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class JudgeScores:
    faithfulness: int
    answer_relevance: int
    retrieval_quality: int
    reasoning: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in _METRICS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{name} must be an integer, got {value!r}")
            if not 1 <= value <= 5:
                raise ValueError(f"{name} score {value} outside [1, 5]")


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    condition: str
    workflow: str
    has_sources: bool
    scores: JudgeScores | None
    latency: float

    @property
    def co(self) -> float:
        return composite_overall(self.has_sources, self.scores)


@dataclass(frozen=True)
class AggregateReport:
    n: int
    co: float
    cwa: float | None
    coverage: float
    mean_latency: float


@dataclass(frozen=True)
class DecompositionReport:
    delta_co: float
    via_coverage: float
    via_quality: float
    residual: float


@dataclass(frozen=True)
class WilcoxonResult:
    n_effective: int
    w_statistic: float
    p_value: float
    sided: str
    method: str  # "exact" for n <= 12, else "normal_approx"


@dataclass(frozen=True)
class HeadToHeadReport:
    n: int
    tie_rate: float
    a_win_rate: float
    a_win_mean_margin: float | None
    b_win_rate: float
    b_win_mean_margin: float | None
    net_flow: float


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    quality: float
    cost: float


def composite_overall(has_sources: bool, scores: JudgeScores | None) -> float:
    """Deferred queries score the 1.0 floor; answered ones the mean of
    faithfulness and answer relevance."""
    if not has_sources:
        return DEFERRED_CO
    if scores is None:
        raise ValueError("answered record missing scores")
    return (scores.faithfulness + scores.answer_relevance) / 2.0


def aggregate(records: list[EvalRecord]) -> AggregateReport:
    """Mean CO over all records, CWA over answered only, plus coverage."""
    if not records:
        raise ValueError("no records to aggregate")
    cos = [r.co for r in records]
    answered = [r.co for r in records if r.has_sources]
    coverage = len(answered) / len(records)
    return AggregateReport(
        n=len(records),
        co=sum(cos) / len(cos),
        cwa=(sum(answered) / len(answered)) if answered else None,
        coverage=coverage,
        mean_latency=sum(r.latency for r in records) / len(records),
    )


def decompose_advantage(
    base: AggregateReport, aug: AggregateReport
) -> DecompositionReport:
    """First-order split of a CO advantage into coverage and quality terms.

    via_coverage prices the coverage gain at the baseline's per-answer
    quality; via_quality prices the per-answer quality gain at the
    baseline's coverage; the residual is whatever the two first-order
    terms miss, defined by subtraction so the three always sum to the
    observed delta exactly.
    """
    if base.cwa is None or aug.cwa is None:
        raise ValueError("undefined cwa: decomposition needs coverage > 0 on both sides")
    delta_co = aug.co - base.co
    via_coverage = (aug.coverage - base.coverage) * base.cwa
    via_quality = base.coverage * (aug.cwa - base.cwa)
    residual = delta_co - via_coverage - via_quality
    return DecompositionReport(
        delta_co=delta_co,
        via_coverage=via_coverage,
        via_quality=via_quality,
        residual=residual,
    )


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xd = x - x.mean()
    yd = y - y.mean()
    if float((yd**2).sum()) == 0.0:
        raise ValueError("degenerate flag: zero variance")
    denom = math.sqrt(float((xd**2).sum()) * float((yd**2).sum()))
    if denom == 0.0:
        raise ValueError("degenerate co vector: zero variance")
    return float((xd * yd).sum()) / denom


def r2_coverage(records: list[EvalRecord]) -> float:
    """Squared Pearson correlation between CO and the 0/1 has_sources flag.

    Raises on a constant flag; as coverage approaches 1 the flag loses
    variance and the statistic is undefined.
    """
    if not records:
        raise ValueError("no records")
    co = np.array([r.co for r in records], dtype=np.float64)
    flags = np.array([1.0 if r.has_sources else 0.0 for r in records])
    return _pearson(co, flags) ** 2


@dataclass(frozen=True)
class SensitivityRow:
    threshold: int
    coverage_rate: float
    r2: float | None  # None when the recomputed flag is degenerate


def r2_sensitivity(
    records: list[EvalRecord], thresholds: list[int]
) -> list[SensitivityRow]:
    """Recompute the success flag at stricter grades and re-run the R2.

    A query counts as covered at threshold t only when it has sources
    and its retrieval_quality is at least t.
    """
    if not records:
        raise ValueError("no records")
    for r in records:
        if r.has_sources and r.scores is None:
            raise ValueError(f"answered record {r.query_id!r} missing retrieval_quality")
    co = np.array([r.co for r in records], dtype=np.float64)
    rows: list[SensitivityRow] = []
    for t in thresholds:
        flags = np.array(
            [
                1.0 if (r.has_sources and r.scores.retrieval_quality >= t) else 0.0
                for r in records
            ]
        )
        coverage_rate = float(flags.mean())
        try:
            r2 = _pearson(co, flags) ** 2
        except ValueError:
            r2 = None
        rows.append(SensitivityRow(threshold=t, coverage_rate=coverage_rate, r2=r2))
    return rows


def _average_ranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j + 2) / 2.0  # ranks are 1-based
        for idx in order[i : j + 1]:
            ranks[idx] = avg
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(
    pairs: list[tuple[float, float]], sided: str = "one_sided_greater"
) -> WilcoxonResult:
    """Paired signed-rank test on (a, b) value pairs.

    Zero differences are dropped; tied absolute differences receive
    average ranks. W is the sum of ranks of positive differences. The
    p-value is exact (full sign enumeration) for up to 12 effective
    pairs and a tie-corrected normal approximation above that. The
    one-sided alternative is a > b.
    """
    if sided not in ("one_sided_greater", "two_sided"):
        raise ValueError(f"unknown sidedness {sided!r}")
    diffs = [a - b for a, b in pairs]
    nonzero = [d for d in diffs if d != 0.0]
    if not nonzero:
        raise ValueError("no nonzero differences")
    n = len(nonzero)
    abs_diffs = [abs(d) for d in nonzero]
    ranks = _average_ranks(abs_diffs)
    w = sum(r for r, d in zip(ranks, nonzero) if d > 0)

    if n <= 12:
        method = "exact"
        total = 2**n
        eps = 1e-9
        n_ge = 0
        n_le = 0
        for signs in itertools.product((0, 1), repeat=n):
            w_sim = sum(r for r, s in zip(ranks, signs) if s)
            if w_sim >= w - eps:
                n_ge += 1
            if w_sim <= w + eps:
                n_le += 1
        if sided == "one_sided_greater":
            p = n_ge / total
        else:
            p = min(1.0, 2.0 * min(n_ge, n_le) / total)
    else:
        method = "normal_approx"
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        # tie correction over groups of equal |d|
        groups: dict[float, int] = {}
        for v in abs_diffs:
            groups[v] = groups.get(v, 0) + 1
        var -= sum(t**3 - t for t in groups.values()) / 48.0
        z = (w - mean) / math.sqrt(var)
        if sided == "one_sided_greater":
            p = _normal_sf(z)
        else:
            p = min(1.0, 2.0 * _normal_sf(abs(z)))

    return WilcoxonResult(
        n_effective=n,
        w_statistic=w,
        p_value=max(p, _P_FLOOR),
        sided=sided,
        method=method,
    )


def head_to_head(a: list[EvalRecord], b: list[EvalRecord]) -> HeadToHeadReport:
    """Per-query CO comparison of two strategies joined on query_id."""
    a_by_id = {r.query_id: r for r in a}
    b_by_id = {r.query_id: r for r in b}
    if set(a_by_id) != set(b_by_id):
        raise ValueError("mismatched query sets")
    if not a_by_id:
        raise ValueError("no records")
    ties = 0
    a_margins: list[float] = []
    b_margins: list[float] = []
    net = 0.0
    for qid, ra in a_by_id.items():
        delta = ra.co - b_by_id[qid].co
        net += delta
        if delta == 0.0:
            ties += 1
        elif delta > 0.0:
            a_margins.append(delta)
        else:
            b_margins.append(-delta)
    n = len(a_by_id)
    return HeadToHeadReport(
        n=n,
        tie_rate=ties / n,
        a_win_rate=len(a_margins) / n,
        a_win_mean_margin=(sum(a_margins) / len(a_margins)) if a_margins else None,
        b_win_rate=len(b_margins) / n,
        b_win_mean_margin=(sum(b_margins) / len(b_margins)) if b_margins else None,
        net_flow=net,
    )


def pareto_frontier(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset, sorted by cost.

    A point is dominated iff some other point has quality >= and cost <=
    with at least one strict inequality; exact duplicates survive.
    """
    frontier = [
        p
        for p in points
        if not any(
            q.quality >= p.quality
            and q.cost <= p.cost
            and (q.quality > p.quality or q.cost < p.cost)
            for q in points
        )
    ]
    return sorted(frontier, key=lambda p: (p.cost, p.quality, p.label))


# ---------------------------------------------------------------------------
# Judge client
# ---------------------------------------------------------------------------

NO_SOURCES_MARKER = "NO SOURCES RETRIEVED."


def load_judge_prompt() -> str:
    """The judge prompt asset, with {question}/{sources}/{answer} placeholders."""
    return (
        importlib.resources.files("rag_cascade")
        .joinpath("assets/judge_prompt.txt")
        .read_text(encoding="utf-8")
    )


def render_judge_prompt(
    template: str, question: str, sources: list[str], answer: str
) -> str:
    if sources:
        block = "\n\n".join(f"[{i}] {s}" for i, s in enumerate(sources, start=1))
    else:
        block = NO_SOURCES_MARKER
    # str.replace, not str.format: the template body contains JSON braces.
    return (
        template.replace("{question}", question)
        .replace("{sources}", block)
        .replace("{answer}", answer)
    )


def parse_judge_payload(content: str) -> JudgeScores:
    try:
        obj = json.loads(content)
        reasoning = {}
        values = {}
        for metric in _METRICS:
            entry = obj[metric]
            values[metric] = entry["score"]
            reasoning[metric] = str(entry.get("reasoning", ""))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise JudgeParseError(f"malformed judge payload: {exc}", raw=content) from exc
    try:
        return JudgeScores(
            faithfulness=values["faithfulness"],
            answer_relevance=values["answer_relevance"],
            retrieval_quality=values["retrieval_quality"],
            reasoning=reasoning,
        )
    except ValueError as exc:
        raise JudgeParseError(str(exc), raw=content) from exc


@dataclass(frozen=True)
class JudgeClient:
    endpoint: str
    model: str
    prompt_template: str
    temperature: float = 0.0  # greedy decoding for reproducible scores
    max_tokens: int = 4096
    timeout_s: float = 60.0
    retries: int = 2


def judge_response(
    client: JudgeClient, question: str, sources: list[str], answer: str
) -> JudgeScores:
    """Score one (question, sources, answer) triple with the judge endpoint."""
    prompt = render_judge_prompt(client.prompt_template, question, sources, answer)
    content = chat_complete(
        client.endpoint,
        client.model,
        prompt,
        temperature=client.temperature,
        max_tokens=client.max_tokens,
        timeout=client.timeout_s,
        retries=client.retries,
    )
    return parse_judge_payload(content)


class MockJudge:
    """Deterministic offline judge: token-overlap heuristics on a 1-5 scale."""

    def score(self, question: str, sources: list[str], answer: str) -> JudgeScores:
        q = set(tokenize(question))
        s = set(tokenize(" ".join(sources)))
        a = set(tokenize(answer))
        return JudgeScores(
            faithfulness=self._band(len(a & s) / len(a)) if a else 1,
            answer_relevance=self._band(len(q & a) / len(q)) if q else 1,
            retrieval_quality=self._band(len(q & s) / len(q)) if q else 1,
            reasoning={m: "mock heuristic" for m in _METRICS},
        )

    @staticmethod
    def _band(fraction: float) -> int:
        return max(1, min(5, 1 + round(4 * fraction)))


# ---------------------------------------------------------------------------
# Score log IO
# ---------------------------------------------------------------------------


def write_score_log(records: list[EvalRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r), ensure_ascii=False) + "\n")


def record_to_json(r: EvalRecord) -> dict:
    return {
        "query_id": r.query_id,
        "condition": r.condition,
        "workflow": r.workflow,
        "has_sources": r.has_sources,
        "faithfulness": r.scores.faithfulness if r.scores else None,
        "answer_relevance": r.scores.answer_relevance if r.scores else None,
        "retrieval_quality": r.scores.retrieval_quality if r.scores else None,
        "latency_s": r.latency,
    }


def record_from_json(rec: dict) -> EvalRecord:
    scores = None
    if rec.get("faithfulness") is not None:
        scores = JudgeScores(
            faithfulness=int(rec["faithfulness"]),
            answer_relevance=int(rec["answer_relevance"]),
            retrieval_quality=int(rec["retrieval_quality"]),
        )
    if rec["has_sources"] and scores is None:
        raise ValueError("answered record missing scores")
    return EvalRecord(
        query_id=str(rec["query_id"]),
        condition=rec.get("condition", "unlabeled"),
        workflow=str(rec["workflow"]),
        has_sources=bool(rec["has_sources"]),
        scores=scores,
        latency=float(rec.get("latency_s", 0.0)),
    )


def read_score_log(path: str | Path) -> list[EvalRecord]:
    records: list[EvalRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except Exception as exc:
                raise ValueError(f"bad score record on line {lineno}: {exc}") from exc
    return records
