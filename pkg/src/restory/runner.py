"""Experiment orchestration and evaluation.

Runs generation over a dataset (render -> complete -> parse -> score ->
classify), aggregates scores by NLOC band, computes the metric-calibration
table over curated text pairs, measures annotator agreement, and emits
CSV/JSON reports. Per-entry failures never abort a run; they are recorded
and excluded from means. Results persist incrementally in dataset order,
so partial files are valid prefixes and warm-cache reruns are byte-stable.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import MAX_NLOC, STRATA, DatasetRecord
from .errors import DataError
from .gateway import BudgetExceededError, Gateway, GatewayError
from .metrics import (
    FidelityBand,
    HashEmbedder,
    ScoreTriple,
    bleu,
    classify_fidelity,
    greedy_embedding_score,
    rouge_l,
    tokenize,
)
from .prompts import Exemplar, PromptConfig, render_prompt
from .story import canonical_text, parse_stories

GREEDY_METRIC = "greedy-embedding"
DEFAULT_METRICS = (GREEDY_METRIC, "bleu", "rouge-l")

COARSE_BANDS = (("1-100", 1, 100), ("101-200", 101, 200), ("201-350", 201, 350))
RANGE_OF_INTEREST = "101-200"

SCHEMES = ("coarse3", "per-stratum")


class AnnotationError(DataError):
    pass


class EmptyCategoryError(DataError):
    pass


# ---------------------------------------------------------------------------
# Scoring


def score_pair(
    candidate_text: str,
    reference_text: str,
    embedder,
    metric_names: Sequence[str] = DEFAULT_METRICS,
) -> dict[str, ScoreTriple]:
    """All requested metrics for one candidate/reference text pair.

    Scalar metrics (BLEU) are widened to a triple with P = R = F1. An empty
    side yields zero triples across the board.
    """
    cand_tokens = tokenize(candidate_text)
    ref_tokens = tokenize(reference_text)
    zeros = ScoreTriple(0.0, 0.0, 0.0)
    scores: dict[str, ScoreTriple] = {}
    for name in metric_names:
        if not cand_tokens or not ref_tokens:
            scores[name] = zeros
            continue
        if name == GREEDY_METRIC:
            scores[name] = greedy_embedding_score(
                embedder.embed(candidate_text), embedder.embed(reference_text)
            )
        elif name == "bleu":
            v = bleu(cand_tokens, ref_tokens, smoothing=False)
            scores[name] = ScoreTriple(v, v, v)
        elif name == "bleu-smoothed":
            v = bleu(cand_tokens, ref_tokens, smoothing=True)
            scores[name] = ScoreTriple(v, v, v)
        elif name == "rouge-l":
            scores[name] = rouge_l(cand_tokens, ref_tokens, use_stemming=True)
        elif name == "rouge-l-nostem":
            scores[name] = rouge_l(cand_tokens, ref_tokens, use_stemming=False)
        else:
            raise DataError(f"unknown metric {name!r}")
    return scores


# ---------------------------------------------------------------------------
# Generation records


@dataclass(frozen=True)
class GenerationRecord:
    snippet_id: str
    nloc: int
    model_id: str
    prompt_fingerprint: str
    prompt_label: str
    scot: bool
    candidate_story: str
    scores: dict[str, ScoreTriple]
    band: FidelityBand
    cost_usd: float
    parse_fallback: bool = False
    multi_story: bool = False

    def __post_init__(self):
        if GREEDY_METRIC in self.scores:
            expected = classify_fidelity(self.scores[GREEDY_METRIC].f1)
            if self.band is not expected:
                raise DataError(
                    f"record {self.snippet_id}: band {self.band.value} inconsistent "
                    f"with {GREEDY_METRIC} f1"
                )

    def to_json(self) -> str:
        return json.dumps(
            {
                "snippet_id": self.snippet_id,
                "nloc": self.nloc,
                "model_id": self.model_id,
                "prompt_fingerprint": self.prompt_fingerprint,
                "prompt_label": self.prompt_label,
                "scot": self.scot,
                "candidate_story": self.candidate_story,
                "scores": {
                    name: {"precision": t.precision, "recall": t.recall, "f1": t.f1}
                    for name, t in sorted(self.scores.items())
                },
                "band": self.band.value,
                "cost_usd": self.cost_usd,
                "parse_fallback": self.parse_fallback,
                "multi_story": self.multi_story,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "GenerationRecord":
        obj = json.loads(line)
        return cls(
            snippet_id=obj["snippet_id"],
            nloc=obj["nloc"],
            model_id=obj["model_id"],
            prompt_fingerprint=obj["prompt_fingerprint"],
            prompt_label=obj.get("prompt_label", ""),
            scot=obj.get("scot", False),
            candidate_story=obj["candidate_story"],
            scores={
                name: ScoreTriple(t["precision"], t["recall"], t["f1"])
                for name, t in obj["scores"].items()
            },
            band=FidelityBand(obj["band"]),
            cost_usd=obj["cost_usd"],
            parse_fallback=obj.get("parse_fallback", False),
            multi_story=obj.get("multi_story", False),
        )


@dataclass(frozen=True)
class FailureRecord:
    snippet_id: str
    nloc: int
    failure: str

    def to_json(self) -> str:
        return json.dumps(
            {"snippet_id": self.snippet_id, "nloc": self.nloc, "failure": self.failure},
            sort_keys=True,
            ensure_ascii=False,
        )


@dataclass
class RunResult:
    records: list[GenerationRecord]
    failures: list[FailureRecord]
    total_cost_usd: float
    provider_calls: int


def save_results(
    records: Iterable[GenerationRecord | FailureRecord], path: str | Path
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_results(path: str | Path) -> tuple[list[GenerationRecord], list[FailureRecord]]:
    records: list[GenerationRecord] = []
    failures: list[FailureRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            if "failure" in obj:
                failures.append(
                    FailureRecord(obj["snippet_id"], obj["nloc"], obj["failure"])
                )
            else:
                records.append(GenerationRecord.from_json(line))
    return records, failures


# ---------------------------------------------------------------------------
# Experiment runner


def run_experiment(
    dataset: Sequence[DatasetRecord],
    gateway: Gateway,
    prompt_config: PromptConfig,
    exemplars: Sequence[Exemplar] = (),
    embedder=None,
    metric_names: Sequence[str] = DEFAULT_METRICS,
    results_path: str | Path | None = None,
    prompt_label: str = "",
    concurrency: int = 1,
) -> RunResult:
    """Generate and score one candidate story per dataset entry.

    Provider failures after retries are recorded per entry and the run
    continues; a budget overrun aborts after flushing everything completed
    so far. Records are written (and returned) in dataset order.
    """
    if not dataset:
        raise DataError("dataset is empty")
    if embedder is None:
        embedder = HashEmbedder()
    metric_names = tuple(metric_names)
    if GREEDY_METRIC not in metric_names:
        metric_names = (GREEDY_METRIC,) + metric_names

    out_fh = None
    if results_path is not None:
        results_path = Path(results_path)
        results_path.parent.mkdir(parents=True, exist_ok=True)
        out_fh = open(results_path, "w", encoding="utf-8")

    records: list[GenerationRecord] = []
    failures: list[FailureRecord] = []
    spent_before = gateway.spent_usd
    calls_before = gateway.provider_calls

    def generate(entry: DatasetRecord):
        rendered = render_prompt(prompt_config, entry.snippet, exemplars)
        return rendered, gateway.complete(rendered)

    def consume(entry: DatasetRecord, outcome) -> None:
        rendered, completion = outcome
        stories = parse_stories(completion.text)
        if stories:
            candidate = " ".join(canonical_text(s) for s in stories)
            fallback = False
        else:
            candidate = completion.text
            fallback = True
        scores = score_pair(candidate, entry.reference_story, embedder, metric_names)
        record = GenerationRecord(
            snippet_id=entry.snippet.id,
            nloc=entry.snippet.nloc,
            model_id=gateway.model.model_id,
            prompt_fingerprint=rendered.config_fingerprint,
            prompt_label=prompt_label,
            scot=prompt_config.scot,
            candidate_story=candidate,
            scores=scores,
            band=classify_fidelity(scores[GREEDY_METRIC].f1),
            cost_usd=completion.cost_usd,
            parse_fallback=fallback,
            multi_story=len(stories) > 1,
        )
        records.append(record)
        if out_fh:
            out_fh.write(record.to_json() + "\n")
            out_fh.flush()

    def record_failure(entry: DatasetRecord, exc: GatewayError) -> None:
        failure = FailureRecord(entry.snippet.id, entry.snippet.nloc, str(exc))
        failures.append(failure)
        if out_fh:
            out_fh.write(failure.to_json() + "\n")
            out_fh.flush()

    try:
        if concurrency <= 1:
            for entry in dataset:
                try:
                    consume(entry, generate(entry))
                except BudgetExceededError:
                    raise
                except GatewayError as exc:
                    record_failure(entry, exc)
        else:
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                futures = [(entry, pool.submit(generate, entry)) for entry in dataset]
                for entry, future in futures:
                    try:
                        consume(entry, future.result())
                    except BudgetExceededError:
                        for _, f in futures:
                            f.cancel()
                        raise
                    except GatewayError as exc:
                        record_failure(entry, exc)
    finally:
        if out_fh:
            out_fh.close()

    return RunResult(
        records=records,
        failures=failures,
        total_cost_usd=gateway.spent_usd - spent_before,
        provider_calls=gateway.provider_calls - calls_before,
    )


# ---------------------------------------------------------------------------
# Band aggregation


@dataclass(frozen=True)
class BandAggregate:
    band_label: str
    lower: int
    upper: int
    n: int
    mean_precision: float
    mean_recall: float
    mean_f1: float
    failures: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise DataError("aggregate n must be positive")


def _bands_for_scheme(scheme: str) -> list[tuple[str, int, int]]:
    if scheme == "coarse3":
        return list(COARSE_BANDS)
    if scheme == "per-stratum":
        return [(s.label, s.lower, s.upper) for s in STRATA]
    raise DataError(f"unknown aggregation scheme {scheme!r}; choose coarse3 or per-stratum")


def aggregate_by_band(
    records: Sequence[GenerationRecord],
    scheme: str = "coarse3",
    metric: str = GREEDY_METRIC,
    failures: Sequence[FailureRecord] = (),
) -> list[BandAggregate]:
    """Mean P/R/F1 of `metric` per NLOC band; empty bands are omitted.

    Failures count per band but never enter the means.
    """
    if not records:
        raise DataError("no records to aggregate")
    bands = _bands_for_scheme(scheme)

    def band_of(nloc: int) -> int:
        if not 1 <= nloc <= MAX_NLOC:
            raise DataError(f"record nloc {nloc} outside [1, {MAX_NLOC}]")
        for i, (_, lo, hi) in enumerate(bands):
            if lo <= nloc <= hi:
                return i
        raise AssertionError("bands do not cover the NLOC range")

    grouped: dict[int, list[GenerationRecord]] = {}
    for rec in records:
        grouped.setdefault(band_of(rec.nloc), []).append(rec)
    failed: dict[int, int] = {}
    for f in failures:
        idx = band_of(f.nloc)
        failed[idx] = failed.get(idx, 0) + 1

    out: list[BandAggregate] = []
    for idx in sorted(grouped):
        label, lo, hi = bands[idx]
        try:
            triples = [rec.scores[metric] for rec in grouped[idx]]
        except KeyError:
            raise DataError(f"records carry no scores for metric {metric!r}") from None
        n = len(triples)
        out.append(
            BandAggregate(
                band_label=label,
                lower=lo,
                upper=hi,
                n=n,
                mean_precision=sum(t.precision for t in triples) / n,
                mean_recall=sum(t.recall for t in triples) / n,
                mean_f1=sum(t.f1 for t in triples) / n,
                failures=failed.get(idx, 0),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Reports


def _report_rows(
    aggregates: Sequence[BandAggregate], scot: bool, prompt: str, model: str
) -> list[dict]:
    rows = []
    for agg in aggregates:
        rows.append(
            {
                "band": agg.band_label,
                "n": agg.n,
                "precision": round(agg.mean_precision * 100, 2),
                "recall": round(agg.mean_recall * 100, 2),
                "f1": round(agg.mean_f1 * 100, 2),
                "scot": scot,
                "prompt": prompt,
                "model": model,
                "failures": agg.failures,
            }
        )
    return rows


def collect_report_rows(
    records: Sequence[GenerationRecord],
    scheme: str = "coarse3",
    metric: str = GREEDY_METRIC,
    failures: Sequence[FailureRecord] = (),
) -> list[dict]:
    """Report rows for possibly mixed record sets: records are grouped by
    (model, prompt label, scot) and each group is aggregated separately,
    so side-by-side runs land in one table. Failure counts carry context
    for single-run sets only; they are omitted from mixed tables."""
    groups: dict[tuple[str, str, bool], list[GenerationRecord]] = {}
    for rec in records:
        groups.setdefault((rec.model_id, rec.prompt_label, rec.scot), []).append(rec)
    rows: list[dict] = []
    single = len(groups) == 1
    for (model, prompt, scot) in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        aggs = aggregate_by_band(
            groups[(model, prompt, scot)], scheme, metric,
            failures=failures if single else (),
        )
        rows.extend(_report_rows(aggs, scot, prompt, model))
    return rows


REPORT_COLUMNS = ("band", "n", "precision", "recall", "f1", "scot", "prompt", "model", "failures")


def write_report_rows(rows: Sequence[dict], path: str | Path, format: str = "csv") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for row in rows:
            lines.append(
                ",".join(
                    [
                        row["band"],
                        str(row["n"]),
                        f"{row['precision']:.2f}",
                        f"{row['recall']:.2f}",
                        f"{row['f1']:.2f}",
                        str(row["scot"]).lower(),
                        row["prompt"],
                        row["model"],
                        str(row["failures"]),
                    ]
                )
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif format == "json":
        doc = {
            "metadata": {"range_of_interest": RANGE_OF_INTEREST, "scale": "x100"},
            "rows": list(rows),
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    else:
        raise DataError(f"unknown report format {format!r}; choose csv or json")


def emit_report(
    aggregates: Sequence[BandAggregate],
    records: Sequence[GenerationRecord],
    path: str | Path,
    format: str = "csv",
) -> None:
    """Write aggregates for a single run; the run context (model, prompt,
    scot) is derived from the records and must be uniform."""
    contexts = {(r.model_id, r.prompt_label, r.scot) for r in records}
    if len(contexts) != 1:
        raise DataError(
            "records span multiple runs; use collect_report_rows for combined tables"
        )
    model, prompt, scot = next(iter(contexts))
    write_report_rows(_report_rows(aggregates, scot, prompt, model), path, format)


def read_report(path: str | Path, format: str = "csv") -> list[dict]:
    path = Path(path)
    if format == "csv":
        lines = path.read_text(encoding="utf-8").splitlines()
        header = lines[0].split(",")
        rows = []
        for line in lines[1:]:
            values = line.split(",")
            row = dict(zip(header, values))
            row["n"] = int(row["n"])
            row["failures"] = int(row["failures"])
            for key in ("precision", "recall", "f1"):
                row[key] = float(row[key])
            row["scot"] = row["scot"] == "true"
            rows.append(row)
        return rows
    if format == "json":
        return json.loads(path.read_text(encoding="utf-8"))["rows"]
    raise DataError(f"unknown report format {format!r}")


# ---------------------------------------------------------------------------
# Metric calibration


CALIBRATION_CATEGORIES = ("twin-minimal", "paraphrase-50", "different-meaning")

CALIBRATION_METRICS: tuple[tuple[str, str], ...] = (
    (GREEDY_METRIC, ""),  # variant filled with the embedder id at run time
    ("bleu", "default"),
    ("bleu-smoothed", "smoothing"),
    ("rouge-l", "default"),
    ("rouge-l-nostem", "no-stem"),
)


@dataclass(frozen=True)
class CalibrationPair:
    candidate: str
    reference: str
    category: str

    def __post_init__(self):
        if not self.candidate or not self.reference:
            raise DataError("calibration pair texts must be non-empty")
        if self.category not in CALIBRATION_CATEGORIES:
            raise DataError(f"unknown calibration category {self.category!r}")


def load_calibration_pairs(path: str | Path | None = None) -> list[CalibrationPair]:
    if path is None:
        text = (resources.files("restory") / "data" / "calibration_pairs.jsonl").read_text(
            encoding="utf-8"
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            pairs.append(
                CalibrationPair(obj["candidate"], obj["reference"], obj["category"])
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"bad calibration pair on line {lineno}: {exc}") from exc
    return pairs


def calibration_experiment(
    pairs: Sequence[CalibrationPair],
    embedder=None,
) -> list[dict]:
    """Mean score (x100) per metric variant and category, rows ordered
    twin-minimal, paraphrase-50, different-meaning column-wise to make
    the separation gradient easy to read."""
    if embedder is None:
        embedder = HashEmbedder()
    grouped: dict[str, list[CalibrationPair]] = {c: [] for c in CALIBRATION_CATEGORIES}
    for pair in pairs:
        grouped[pair.category].append(pair)
    empty = [c for c in CALIBRATION_CATEGORIES if not grouped[c]]
    if empty:
        raise EmptyCategoryError("empty calibration categories: " + ", ".join(empty))

    rows = []
    for metric, variant in CALIBRATION_METRICS:
        row: dict = {
            "metric": metric,
            "variant": variant or embedder.provider_id,
        }
        for category in CALIBRATION_CATEGORIES:
            members = grouped[category]
            total = 0.0
            for pair in members:
                triple = score_pair(pair.candidate, pair.reference, embedder, (metric,))[metric]
                total += triple.f1
            row[category] = round(total / len(members) * 100, 2)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Annotator agreement


@dataclass(frozen=True)
class AnnotationSet:
    item_ids: tuple
    labels_a: tuple
    labels_b: tuple
    label_set: frozenset | None = None

    def __post_init__(self):
        if not (len(self.item_ids) == len(self.labels_a) == len(self.labels_b)):
            raise AnnotationError(
                f"length mismatch: {len(self.item_ids)} items, "
                f"{len(self.labels_a)} vs {len(self.labels_b)} labels"
            )
        if len(self.item_ids) < 1:
            raise AnnotationError("need at least one annotated item")
        if self.label_set is not None:
            unknown = (set(self.labels_a) | set(self.labels_b)) - set(self.label_set)
            if unknown:
                raise AnnotationError(
                    "labels outside declared set: " + ", ".join(map(repr, sorted(unknown, key=repr)))
                )


def cohen_kappa(annotations: AnnotationSet) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e) between two
    annotators; 1.0 in the degenerate all-same-label case."""
    a, b = annotations.labels_a, annotations.labels_b
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    labels = set(a) | set(b)
    p_e = sum((a.count(l) / n) * (b.count(l) / n) for l in labels)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1 - p_e)
