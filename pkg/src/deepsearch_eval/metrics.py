"""Trace scoring: sufficiency probing, headline metrics, degradation and profiles."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .chainbuilder import QuestionRecord, oracle_messages
from .errors import EndpointError, NoInstancesError
from .sandbox import Trace
from .text import contains_alias, matches_answer

log = logging.getLogger(__name__)

ATTEMPT_CORRECT = "attempt_correct"
ATTEMPT_WRONG = "attempt_wrong"
REFUSE = "refuse"
RESPONSES = (ATTEMPT_CORRECT, ATTEMPT_WRONG, REFUSE)

PROBE_SYSTEM = "Fill in the blank (____) with the name of the missing entity. Reply with the name only."
JUDGE_SYSTEM = (
    "You grade answers. Given a question, the reference answer and a candidate answer, "
    "reply YES if the candidate refers to the same entity as the reference, otherwise NO."
)

TABLE_COLUMNS = (
    ("knowledge_score", "Knowledge Suff."),
    ("search_score", "Search Score"),
    ("gen_score", "Generation Score"),
    ("gr_f1", "Good Refusal F1"),
    ("ku_f1", "Knowledge Util. F1"),
    ("forget_rate", "Forget"),
    ("lead_astray_rate", "Lead-astray"),
    ("pass_at_1", "Pass@1"),
)


@dataclass
class SufficiencyAssessment:
    k: list[int]
    evidence_found_via_search: list[int]
    probe_transcripts: list[dict] = field(default_factory=list)
    complete: bool = True
    mode: str = "probe"  # probe | search-only

    @property
    def ks(self) -> int:
        return int(all(self.k))


@dataclass
class InstanceOutcome:
    question_id: str
    ks: int
    searched: bool
    hops_used: int
    hops_gt: int
    response: str
    visited: list[str] = field(default_factory=list)
    assessment: SufficiencyAssessment | None = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.response not in RESPONSES:
            raise ValueError(f"bad response class {self.response!r}")
        if self.hops_used < 0:
            raise ValueError("hops_used must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


@dataclass
class ScoreReport:
    n: int
    knowledge_score: float
    search_score: float
    gr_precision: float
    gr_recall: float
    gr_f1: float
    ku_precision: float
    ku_recall: float
    ku_f1: float
    gen_score: float
    pass_at_1: float
    counts: dict[str, int]
    forget_rate: float | None = None
    lead_astray_rate: float | None = None
    degradation: dict | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"format_version": 1, **asdict(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreReport":
        d = dict(d)
        d.pop("format_version", None)
        d.pop("label", None)
        return cls(**d)


def assess_sufficiency(trace: Trace, record: QuestionRecord, prober=None) -> SufficiencyAssessment:
    """Per-hop sufficiency bits.

    Evidence ``e_i`` counts as found when the page holding it (``chain[i]``)
    was visited; otherwise the probe for that hop goes to ``prober`` and
    succeeds when the completion contains an expected alias. With no
    prober, missing evidence simply counts as unknown (search-only mode).
    """
    visited = set(trace.visited)
    found = [int(record.chain[i] in visited) for i in range(record.hop_count)]
    k = list(found)
    transcripts: list[dict] = []
    complete = True
    for i, hit in enumerate(found):
        if hit:
            continue
        if prober is None:
            continue
        probe = record.probes[i]
        messages = [
            {"role": "system", "content": PROBE_SYSTEM},
            {"role": "user", "content": probe.prompt},
        ]
        try:
            completion = prober.chat(messages).text
        except EndpointError as exc:
            log.warning("probe %d for %s failed: %s", i, record.id, exc)
            complete = False
            transcripts.append({"hop": i, "messages": messages, "error": str(exc)})
            continue
        transcripts.append({"hop": i, "messages": messages, "completion": completion})
        k[i] = int(contains_alias(completion, probe.expected_aliases))
    return SufficiencyAssessment(k, found, transcripts, complete, "probe" if prober else "search-only")


def _judge(judge, record: QuestionRecord, answer: str) -> bool | None:
    messages = [
        {"role": "system", "content": JUDGE_SYSTEM},
        {
            "role": "user",
            "content": f"Question: {record.question}\nReference: {record.answer_aliases[0]}\nCandidate: {answer}",
        },
    ]
    try:
        reply = judge.chat(messages).text
    except EndpointError:
        return None
    return reply.strip().upper().startswith("YES")


def classify_response(trace: Trace, record: QuestionRecord, judge=None) -> str:
    final = trace.final_response
    if final is None or final.kind == "refuse":
        return REFUSE
    correct = matches_answer(final.answer_text, record.answer_aliases)
    if judge is not None:
        verdict = _judge(judge, record, final.answer_text)
        if verdict is not None:
            correct = verdict
    return ATTEMPT_CORRECT if correct else ATTEMPT_WRONG


def outcome_from_trace(trace: Trace, record: QuestionRecord, prober=None, judge=None) -> InstanceOutcome:
    assessment = assess_sufficiency(trace, record, prober)
    flags = []
    if trace.final_response is None:
        flags.append("no_submit_scored_as_refuse")
    if trace.budget_exhausted:
        flags.append("budget_exhausted")
    if not assessment.complete:
        flags.append("assessment_incomplete")
    if assessment.mode == "search-only":
        flags.append("search-only sufficiency")
    return InstanceOutcome(
        question_id=record.id,
        ks=assessment.ks,
        searched=bool(trace.tool_events),
        hops_used=len(set(trace.visited)),
        hops_gt=record.hop_count,
        response=classify_response(trace, record, judge),
        visited=list(trace.visited),
        assessment=assessment,
        flags=flags,
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def aggregate_scores(outcomes: Sequence[InstanceOutcome]) -> ScoreReport:
    """Compute the headline metrics over a set of scored instances.

    Precision, recall and F1 are 0 whenever their denominator is 0.
    """
    if not outcomes:
        raise NoInstancesError("no instances")
    n = len(outcomes)
    S = {i for i, o in enumerate(outcomes) if o.ks == 1}
    I = set(range(n)) - S
    A_c = {i for i, o in enumerate(outcomes) if o.response == ATTEMPT_CORRECT}
    A_w = {i for i, o in enumerate(outcomes) if o.response == ATTEMPT_WRONG}
    A = A_c | A_w
    N_ = {i for i, o in enumerate(outcomes) if o.response == REFUSE}
    # search-credit set: correct, searched, within the ground-truth hop count, not sufficient
    C = {
        i for i, o in enumerate(outcomes)
        if o.response == ATTEMPT_CORRECT and o.searched and o.hops_used <= o.hops_gt and o.ks == 0
    }
    S_star = S - A_c

    knowledge = len(S) / n
    gr_r, gr_p = _ratio(len(N_ & I), len(I)), _ratio(len(N_ & I), len(N_))
    ku_r, ku_p = _ratio(len(A_c & S), len(S)), _ratio(len(A_c & S), len(A))
    gr_f1, ku_f1 = _f1(gr_p, gr_r), _f1(ku_p, ku_r)
    return ScoreReport(
        n=n,
        knowledge_score=knowledge,
        search_score=knowledge + len(C) / n,
        gr_precision=gr_p,
        gr_recall=gr_r,
        gr_f1=gr_f1,
        ku_precision=ku_p,
        ku_recall=ku_r,
        ku_f1=ku_f1,
        gen_score=(gr_f1 + ku_f1) / 2 * knowledge,
        pass_at_1=len(A_c) / n,
        counts={
            "N": n, "S": len(S), "I": len(I), "A": len(A), "N_refuse": len(N_),
            "A_c": len(A_c), "A_w": len(A_w), "C": len(C), "S_star": len(S_star),
        },
    )


def found_evidence(record: QuestionRecord, visited: Iterable[str]) -> list[str]:
    """Ground-truth evidence sentences whose pages were visited, in chain order."""
    seen = set(visited)
    return [e.text for i, e in enumerate(record.evidence) if record.chain[i] in seen]


def degradation_analysis(
    outcomes: Sequence[InstanceOutcome], record_map: Mapping[str, QuestionRecord], lm
) -> dict:
    """Split sufficient-but-failed instances into forget and lead-astray.

    Each instance in S* is re-asked with only the clean evidence it found.
    A wrong clean answer is a forget; a right one means the noisy
    trajectory led the agent astray. LM failures stay unresolved, so the
    two rates can sum to less than 1.
    """
    s_star = [o for o in outcomes if o.ks == 1 and o.response != ATTEMPT_CORRECT]
    result = {"s_star": len(s_star), "forget": 0, "lead_astray": 0, "unresolved": 0, "transcripts": []}
    if not s_star:
        result.update(forget_rate=None, lead_astray_rate=None)
        return result
    for o in s_star:
        record = record_map[o.question_id]
        messages = oracle_messages(record.question, found_evidence(record, o.visited))
        try:
            reply = lm.chat(messages).text
        except EndpointError as exc:
            result["unresolved"] += 1
            result["transcripts"].append({"question_id": o.question_id, "error": str(exc)})
            continue
        result["transcripts"].append({"question_id": o.question_id, "messages": messages, "completion": reply})
        if matches_answer(reply, record.answer_aliases):
            result["lead_astray"] += 1
        else:
            result["forget"] += 1
    result["forget_rate"] = result["forget"] / len(s_star)
    result["lead_astray_rate"] = result["lead_astray"] / len(s_star)
    return result


def score_traces(
    traces: Sequence[Trace],
    records: Mapping[str, QuestionRecord],
    prober=None,
    judge=None,
    degradation_lm=None,
) -> tuple[ScoreReport, list[InstanceOutcome], list[InstanceOutcome]]:
    """Score a run. Returns the report, the included outcomes and the excluded ones."""
    outcomes, excluded = [], []
    for trace in traces:
        record = records[trace.question_id]
        o = outcome_from_trace(trace, record, prober, judge)
        (outcomes if o.assessment.complete else excluded).append(o)
    report = aggregate_scores(outcomes)
    if prober is None:
        report.flags.append("search-only sufficiency")
    if excluded:
        report.flags.append(f"{len(excluded)} instance(s) excluded: prober unavailable")
    if any("no_submit_scored_as_refuse" in o.flags for o in outcomes):
        report.flags.append("episodes without submit scored as refuse")
    if degradation_lm is not None:
        deg = degradation_analysis(outcomes, records, degradation_lm)
        report.forget_rate = deg["forget_rate"]
        report.lead_astray_rate = deg["lead_astray_rate"]
        report.degradation = {k: v for k, v in deg.items() if k != "transcripts"}
    return report, outcomes, excluded


PROFILES = {
    ("high", "low", "high"): "Powerful but Overconfident",
    ("high", "med", "high"): "Well-Calibrated Elite",
    ("high", "low", "low"): "Synthesis Bottleneck",
    ("med", "med", "med"): "Conservative Middle",
    ("med", "low", "low"): "Weak and Confused",
    ("low", "high", "low"): "Self-Aware of Weakness",
    ("high", "high", "high"): "Ideal",
}


def _bucket(value: float, high_above: float, low_below: float) -> str:
    if value > high_above:
        return "high"
    if value < low_below:
        return "low"
    return "med"


def classify_profile(report: ScoreReport | tuple[float, float, float]) -> str:
    """Map (knowledge, GR F1, KU F1) to a behaviour profile.

    A tuple is read as percentages; a :class:`ScoreReport` is converted.
    """
    if isinstance(report, ScoreReport):
        ks, gr, ku = 100 * report.knowledge_score, 100 * report.gr_f1, 100 * report.ku_f1
    else:
        ks, gr, ku = report
    key = (_bucket(ks, 70, 60), _bucket(gr, 40, 25), _bucket(ku, 45, 25))
    return PROFILES.get(key, "unclassified")


def format_table(rows: Sequence[tuple[str, ScoreReport]]) -> str:
    """Plain-text table in the leaderboard column order, values in percent."""
    headers = ["Run"] + [title for _, title in TABLE_COLUMNS]
    body = []
    for label, rep in rows:
        cells = [label]
        for key, _ in TABLE_COLUMNS:
            v = getattr(rep, key)
            cells.append("-" if v is None else f"{100 * v:.2f}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [headers] + body) for i in range(len(headers))]
    fmt = lambda cells: "  ".join(
        c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))
    )
    lines = [fmt(headers), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
    return "\n".join(lines) + "\n"
