"""Classification metrics with abstention accounting, plus RAG response scoring.

Per-rank metrics count an attempt whenever a prediction carries an entry at
that rank; accuracy and F1 are computed over attempted samples only, so a
model that abstains often can still score well on what it does attempt.
Macro accuracy is the unweighted mean of per-true-class accuracy; macro F1
averages per-class F1 over the union of true and predicted labels. Metrics
are undefined (rendered "--") at ranks with zero attempts.

RAG scoring follows the judge-based recipe: faithfulness is the fraction of
extracted claims supported by the retrieved context, and answer relevancy is
the mean cosine similarity between embeddings of questions generated from
the answer and the original query, clamped to [0, 1].
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import BioragError
from .records import dump_line
from .taxonomy import Classification, GroundTruthLabel, Rank, RANKS, names_match
from .textutil import taxon_key
from .vectorstore import cosine

log = logging.getLogger(__name__)

RARE_BELOW = 6_699
COMMON_ABOVE = 60_562


@dataclass(frozen=True)
class ClassificationResult:
    sample_id: str
    predicted: Classification
    truth: GroundTruthLabel

    def __post_init__(self) -> None:
        if self.sample_id != self.truth.sample_id:
            raise ValueError(
                f"prediction {self.sample_id} paired with truth {self.truth.sample_id}"
            )


@dataclass(frozen=True)
class RankMetrics:
    rank: Rank
    total: int
    attempts: int
    attempt_rate: float
    macro_accuracy: float | None
    macro_f1: float | None
    micro_accuracy: float | None


def rank_metrics(results: Sequence[ClassificationResult], rank: Rank) -> RankMetrics:
    """Metrics at one rank over results that have truth defined there."""
    scored = [r for r in results if r.truth.name_at(rank) is not None]
    if not scored:
        raise ValueError(f"no results carry ground truth at {rank.value}")

    attempted = [r for r in scored if r.predicted.has(rank)]
    attempts = len(attempted)
    if attempts == 0:
        return RankMetrics(
            rank=rank,
            total=len(scored),
            attempts=0,
            attempt_rate=0.0,
            macro_accuracy=None,
            macro_f1=None,
            micro_accuracy=None,
        )

    per_class_total: dict[str, int] = {}
    per_class_correct: dict[str, int] = {}
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}
    correct = 0
    for result in attempted:
        truth_name = result.truth.name_at(rank)
        pred_name = result.predicted.name_at(rank)
        truth_class = taxon_key(truth_name)
        pred_class = taxon_key(pred_name)
        per_class_total[truth_class] = per_class_total.get(truth_class, 0) + 1
        if names_match(truth_name, pred_name):
            correct += 1
            per_class_correct[truth_class] = per_class_correct.get(truth_class, 0) + 1
            tp[truth_class] = tp.get(truth_class, 0) + 1
        else:
            fn[truth_class] = fn.get(truth_class, 0) + 1
            fp[pred_class] = fp.get(pred_class, 0) + 1

    macro_accuracy = sum(
        per_class_correct.get(cls, 0) / total for cls, total in per_class_total.items()
    ) / len(per_class_total)

    label_union = set(per_class_total) | set(fp)
    f1_sum = 0.0
    for cls in label_union:
        t, p, n = tp.get(cls, 0), fp.get(cls, 0), fn.get(cls, 0)
        precision = t / (t + p) if t + p else 0.0
        recall = t / (t + n) if t + n else 0.0
        f1_sum += (
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    macro_f1 = f1_sum / len(label_union)

    return RankMetrics(
        rank=rank,
        total=len(scored),
        attempts=attempts,
        attempt_rate=attempts / len(scored),
        macro_accuracy=macro_accuracy,
        macro_f1=macro_f1,
        micro_accuracy=correct / attempts,
    )


def all_rank_metrics(results: Sequence[ClassificationResult]) -> dict[Rank, RankMetrics]:
    return {rank: rank_metrics(results, rank) for rank in RANKS
            if any(r.truth.name_at(rank) is not None for r in results)}


@dataclass
class RareCommonSplit:
    rare: set[str] = field(default_factory=set)
    common: set[str] = field(default_factory=set)
    neither: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)


def split_rare_common(
    labels: Iterable[GroundTruthLabel],
    rare_below: int = RARE_BELOW,
    common_above: int = COMMON_ABOVE,
) -> RareCommonSplit:
    """Partition sample ids by observation count using strict inequalities.

    Boundary-equal counts land in neither; labels without a count are warned
    and also land in neither.
    """
    split = RareCommonSplit()
    for label in labels:
        if label.n_obs is None:
            split.warnings.append(f"{label.sample_id}: no n_obs; counted as neither")
            split.neither.add(label.sample_id)
        elif label.n_obs < rare_below:
            split.rare.add(label.sample_id)
        elif label.n_obs > common_above:
            split.common.add(label.sample_id)
        else:
            split.neither.add(label.sample_id)
    return split


# -- RAG response scoring -------------------------------------------------


@dataclass
class RagScores:
    sample_id: str
    faithfulness: float | None = None
    answer_relevancy: float | None = None
    claims_total: int = 0
    claims_supported: int = 0
    questions_used: int = 0
    flags: list[str] = field(default_factory=list)


_VERDICT_TOKENS = {"SUPPORTED": True, "UNSUPPORTED": False}


def _parse_verdicts(reply: str, expected: int) -> list[bool]:
    verdicts = []
    for line in reply.splitlines():
        token = line.strip().upper()
        if token in _VERDICT_TOKENS:
            verdicts.append(_VERDICT_TOKENS[token])
    if len(verdicts) != expected:
        raise ValueError(f"expected {expected} verdicts, got {len(verdicts)}")
    return verdicts


def faithfulness(answer: str, contexts: Sequence[str], judge, prompts) -> RagScores:
    """Fraction of the answer's claims the context supports.

    Two judge passes: claim extraction (one per line), then one support
    verdict per claim. Zero claims leaves the score undefined; an
    unparseable verdict reply gets one retry and then marks the score
    undefined rather than guessing.
    """
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    scores = RagScores(sample_id="")
    claim_reply = judge.complete(prompts.render_claims(answer))
    claims = [line.strip() for line in claim_reply.splitlines() if line.strip()]
    scores.claims_total = len(claims)
    if not claims:
        scores.flags.append("no-claims")
        return scores

    prompt = prompts.render_support(claims, list(contexts))
    reply = judge.complete(prompt)
    try:
        verdicts = _parse_verdicts(reply, len(claims))
    except ValueError:
        log.debug("support verdicts unparseable; re-asking")
        reply = judge.complete(
            prompt + "\n\nReply with exactly one line per claim, each line "
            "containing only SUPPORTED or UNSUPPORTED."
        )
        try:
            verdicts = _parse_verdicts(reply, len(claims))
        except ValueError:
            scores.flags.append("judge-parse-failure")
            return scores

    scores.claims_supported = sum(verdicts)
    scores.faithfulness = scores.claims_supported / scores.claims_total
    return scores


def answer_relevancy(
    answer: str,
    query: str,
    generator,
    embedder,
    prompts,
    n: int = 3,
) -> RagScores:
    """Mean cosine between generated-question embeddings and the query embedding."""
    if not answer.strip() or not query.strip():
        raise ValueError("answer and query must be non-empty")
    scores = RagScores(sample_id="")
    try:
        reply = generator.complete(prompts.render_questions(answer, n))
        questions = [line.strip() for line in reply.splitlines() if line.strip()]
        if not questions:
            raise ValueError("generator produced no questions")
    except (BioragError, ValueError) as exc:
        log.warning("question generation failed: %s", exc)
        scores.flags.append("question-generation-failed")
        return scores

    query_vec = embedder.embed([query])[0]
    question_vecs = embedder.embed(questions)
    mean = sum(cosine(vec, query_vec) for vec in question_vecs) / len(questions)
    scores.questions_used = len(questions)
    scores.answer_relevancy = min(1.0, max(0.0, mean))
    return scores


# -- summaries and report files -------------------------------------------


@dataclass(frozen=True)
class QuartileSummary:
    count: int
    median: float
    q1: float
    q3: float
    outliers: tuple[float, ...]

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def _median(sorted_values: Sequence[float]) -> float:
    n = len(sorted_values)
    mid = n // 2
    if n % 2:
        return sorted_values[mid]
    return (sorted_values[mid - 1] + sorted_values[mid]) / 2.0


def quartile_summary(values: Iterable[float]) -> QuartileSummary | None:
    """Median-of-halves quartiles (the overall median joins both halves when
    the count is odd) and the points beyond 1.5 IQR of either quartile."""
    ordered = sorted(values)
    n = len(ordered)
    if n == 0:
        return None
    median = _median(ordered)
    if n == 1:
        q1 = q3 = ordered[0]
    else:
        half = n // 2
        lower = ordered[: half + (n % 2)]
        upper = ordered[half:]
        q1 = _median(lower)
        q3 = _median(upper)
    iqr = q3 - q1
    outliers = tuple(v for v in ordered if v < q1 - 1.5 * iqr or v > q3 + 1.5 * iqr)
    return QuartileSummary(count=n, median=median, q1=q1, q3=q3, outliers=outliers)


ABSENT = "--"


def _fmt(value: float | None) -> str:
    if value is None:
        return ABSENT
    return format(value, ".10g")


def _fmt_pct(value: float) -> str:
    return format(100.0 * value, ".1f") + "%"


def write_classification_report(
    metrics_by_variant: Mapping[str, Mapping[Rank, RankMetrics]],
    out_dir: Path | str,
    stem: str = "classification_metrics",
) -> tuple[Path, Path]:
    """Write the per-variant, per-rank table as CSV and aligned text."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"

    rows = []
    for variant in sorted(metrics_by_variant):
        per_rank = metrics_by_variant[variant]
        for rank in RANKS:
            if rank not in per_rank:
                continue
            m = per_rank[rank]
            rows.append(
                {
                    "variant": variant,
                    "rank": rank.value,
                    "total": m.total,
                    "attempts": m.attempts,
                    "attempt_rate": _fmt(m.attempt_rate),
                    "macro_accuracy": _fmt(m.macro_accuracy),
                    "macro_f1": _fmt(m.macro_f1),
                    "micro_accuracy": _fmt(m.micro_accuracy),
                }
            )
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else
                                ["variant", "rank", "total", "attempts", "attempt_rate",
                                 "macro_accuracy", "macro_f1", "micro_accuracy"])
        writer.writeheader()
        writer.writerows(rows)

    header = f"{'variant':<14} {'rank':<8} {'attempts':>16} {'acc':>12} {'f1':>12} {'micro':>12}"
    lines = [header, "-" * len(header)]
    for row in rows:
        attempts = f"{row['attempts']} ({_fmt_pct(float(row['attempt_rate']))})"
        acc = _short(row["macro_accuracy"])
        f1 = _short(row["macro_f1"])
        micro = _short(row["micro_accuracy"])
        lines.append(
            f"{row['variant']:<14} {row['rank']:<8} {attempts:>16} {acc:>12} {f1:>12} {micro:>12}"
        )
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return csv_path, txt_path


def _short(formatted: str) -> str:
    if formatted == ABSENT:
        return ABSENT
    return format(float(formatted), ".3f")


def write_rag_report(
    scores_by_variant: Mapping[str, Sequence[RagScores]],
    out_dir: Path | str,
) -> tuple[Path, Path]:
    """Per-sample scores file plus quartile summaries per variant and metric."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = out_dir / "rag_scores.csv"
    summary_path = out_dir / "rag_summary.csv"

    with open(scores_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variant", "sample_id", "faithfulness", "answer_relevancy",
             "claims_total", "claims_supported", "questions_used", "flags"]
        )
        for variant in sorted(scores_by_variant):
            for s in scores_by_variant[variant]:
                writer.writerow(
                    [variant, s.sample_id, _fmt(s.faithfulness), _fmt(s.answer_relevancy),
                     s.claims_total, s.claims_supported, s.questions_used,
                     ";".join(sorted(s.flags))]
                )

    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["variant", "metric", "count", "median", "q1", "q3", "iqr", "outliers"]
        )
        for variant in sorted(scores_by_variant):
            samples = scores_by_variant[variant]
            for metric in ("faithfulness", "answer_relevancy"):
                defined = [getattr(s, metric) for s in samples if getattr(s, metric) is not None]
                summary = quartile_summary(defined)
                if summary is None:
                    writer.writerow([variant, metric, 0, ABSENT, ABSENT, ABSENT, ABSENT, ""])
                    continue
                writer.writerow(
                    [variant, metric, summary.count, _fmt(summary.median),
                     _fmt(summary.q1), _fmt(summary.q3), _fmt(summary.iqr),
                     ";".join(_fmt(o) for o in summary.outliers)]
                )
    return scores_path, summary_path


def write_rag_scores_jsonl(scores_by_variant: Mapping[str, Sequence[RagScores]],
                           out_dir: Path | str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "rag_scores.jsonl"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for variant in sorted(scores_by_variant):
            for s in scores_by_variant[variant]:
                fh.write(dump_line({
                    "variant": variant,
                    "sample_id": s.sample_id,
                    "faithfulness": s.faithfulness,
                    "answer_relevancy": s.answer_relevancy,
                    "claims_total": s.claims_total,
                    "claims_supported": s.claims_supported,
                    "questions_used": s.questions_used,
                    "flags": sorted(s.flags),
                }))
    return path
