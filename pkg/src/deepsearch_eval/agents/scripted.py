"""Deterministic agents used for calibration runs and tests."""

from __future__ import annotations

from ..chainbuilder import QuestionRecord
from ..sandbox import FinalResponse, Trace


def run_ground_truth(session, record: QuestionRecord, visit_answer: bool = False) -> Trace:
    """Walk the reference chain page by page, then answer.

    Fetches ``v_0 .. v_{n-1}`` (plus ``v_n`` when ``visit_answer``) by
    handle and submits the canonical answer.
    """
    stop = len(record.chain) if visit_answer else len(record.chain) - 1
    for entity in record.chain.entities[:stop]:
        session.fetch(entity)
    session.submit(FinalResponse("attempt", record.answer_aliases[0]))
    return session.trace()


def run_refuse_all(session) -> Trace:
    session.submit(FinalResponse("refuse"))
    return session.trace()
