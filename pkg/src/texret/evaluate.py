"""Retrieval evaluation: every indexed patch queries the whole index and
the mean fraction of same-class patches among the top N_r retrieved is
the average retrieval rate (ARR).

The query patch stays in the database and counts toward its own
retrieval, so a class whose 16 patches are mutually closest scores 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .divergence import TLS_BACKEND_CLOSED
from .store import Index, pairwise_jeffery

DEFAULT_NR = 16


@dataclass
class QueryOutcome:
    patch_id: str
    class_id: str
    hits: int
    ratio: float


@dataclass
class EvalReport:
    nr: int
    outcomes: list[QueryOutcome]
    arr: float
    per_class: dict[str, float]
    sm_seconds: float = 0.0
    sm_per_query: float = 0.0
    fe_seconds: float | None = None
    fe_per_image: float | None = None
    extra: dict = field(default_factory=dict)


def class_of(patch_id: str) -> str:
    stem, _, _ = patch_id.rpartition("_p")
    return stem or patch_id


def evaluate_index(index: Index, nr: int = DEFAULT_NR, jobs: int = 1,
                   tls_backend: str = TLS_BACKEND_CLOSED) -> EvalReport:
    ids, matrix = pairwise_jeffery(index, jobs=jobs, tls_backend=tls_backend)
    n = len(ids)
    outcomes: list[QueryOutcome] = []
    for i, patch_id in enumerate(ids):
        ranked = sorted(range(n), key=lambda j: (matrix[i, j], ids[j]))
        cls = class_of(patch_id)
        hits = sum(1 for j in ranked[:nr] if class_of(ids[j]) == cls)
        outcomes.append(QueryOutcome(patch_id=patch_id, class_id=cls,
                                     hits=hits, ratio=hits / nr))

    # One left-to-right sum feeds both the batch mean and the streaming
    # check, so the two agree exactly.
    total = 0.0
    for oc in outcomes:
        total += oc.ratio
    arr = total / len(outcomes) if outcomes else 0.0

    per_class: dict[str, float] = {}
    for cls in sorted({oc.class_id for oc in outcomes}):
        ratios = [oc.ratio for oc in outcomes if oc.class_id == cls]
        s = 0.0
        for r in ratios:
            s += r
        per_class[cls] = s / len(ratios)
    return EvalReport(nr=nr, outcomes=outcomes, arr=arr, per_class=per_class)


def report_tsv(report: EvalReport) -> str:
    """Deterministic report body: per-query rows, per-class rows, summary.

    Timing is intentionally not part of the file so identical inputs
    produce byte-identical reports.
    """
    lines = ["patch_id\tclass\thits\tratio"]
    for oc in report.outcomes:
        lines.append(f"{oc.patch_id}\t{oc.class_id}\t{oc.hits}\t{oc.ratio:.6f}")
    for cls, arr in report.per_class.items():
        lines.append(f"#class\t{cls}\t{arr:.6f}")
    lines.append(f"#ARR\t{report.arr:.6f}\t(nr={report.nr})")
    return "\n".join(lines) + "\n"
