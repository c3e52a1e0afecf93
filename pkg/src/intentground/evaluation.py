"""Scoring of prediction files against manifests, and report rendering.

A prediction file is line-delimited JSON: record_id, mode, box (or null),
status. Scoring matches each prediction against the record's ground-truth
set (primary only, or primary plus alternatives) and folds the per-sample
IoUs into per-(split, query type) metric reports plus the overall
aggregate over the context and uncommon types. Rendering mirrors the
benchmark table layout: per-type column groups and an overall P@0.5
column; precision cells are percentages rounded half-even to one decimal,
applied only at render time.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Sequence, Union

from .dataset import Manifest, load_manifest
from .geometry import BBox, best_match
from .metrics import MetricReport, ScoredSample, aggregate_overall, build_report

logger = logging.getLogger(__name__)

GT_MODES = ("primary_only", "with_alternatives")
PathLike = Union[str, Path]


class EvalInputError(ValueError):
    """Predictions reference unknown records or are malformed."""


@dataclass(frozen=True)
class EvalConfig:
    """What to score and how."""

    thresholds: tuple[float, ...] = (0.3, 0.5)
    strict: bool = True
    gt_mode: str = "with_alternatives"
    splits: tuple[str, ...] = ("test",)
    query_types: tuple[str, ...] = ("context", "uncommon")

    def __post_init__(self) -> None:
        if not self.thresholds:
            raise ValueError("at least one threshold required")
        if any(not 0.0 < t < 1.0 for t in self.thresholds):
            raise ValueError(f"thresholds must lie in (0, 1): {self.thresholds}")
        if self.gt_mode not in GT_MODES:
            raise ValueError(f"gt_mode must be one of {GT_MODES}")

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "strict": self.strict,
            "gt_mode": self.gt_mode,
            "splits": list(self.splits),
            "query_types": list(self.query_types),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        return cls(
            thresholds=tuple(data["thresholds"]),
            strict=data["strict"],
            gt_mode=data["gt_mode"],
            splits=tuple(data["splits"]),
            query_types=tuple(data["query_types"]),
        )


@dataclass(frozen=True)
class PredictionRow:
    record_id: str
    mode: str
    box: BBox | None
    status: str

    @classmethod
    def from_dict(cls, data: dict) -> "PredictionRow":
        box = data.get("box")
        return cls(
            record_id=data["record_id"],
            mode=data.get("mode", "unknown"),
            box=BBox.from_sequence(box) if box else None,
            status=data.get("status", "ok"),
        )


def load_predictions(path: PathLike) -> list[PredictionRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(PredictionRow.from_dict(json.loads(line)))
    return rows


@dataclass(frozen=True)
class EvalReport:
    """Per-cell metric reports plus the context/uncommon overall aggregate."""

    cells: dict[tuple[str, str], MetricReport]
    overall: MetricReport | None
    config: EvalConfig
    predictions_sha256: str = ""
    manifest_sha256: str = ""

    def cell(self, split: str, query_type: str) -> MetricReport | None:
        return self.cells.get((split, query_type))

    def by_query_type(self, query_type: str) -> MetricReport | None:
        """Pooled report for one query type across the included splits."""
        return self.cells.get(("all", query_type))


def file_sha256(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _score_record(record, row: PredictionRow | None, gt_mode: str) -> ScoredSample:
    if row is None or row.box is None:
        return ScoredSample(record_id=record.record_id, best_iou=0.0, matched_gt_index=None)
    gts = record.ground_truths(with_alternatives=gt_mode == "with_alternatives")
    best, index = best_match(row.box, gts)
    return ScoredSample(record_id=record.record_id, best_iou=best, matched_gt_index=index)


def score_samples(
    predictions: Sequence[PredictionRow], manifest: Manifest, cfg: EvalConfig
) -> dict[tuple[str, str], list[ScoredSample]]:
    """Per-(split, query type) scored samples, with an extra pooled "all" split.

    Every selected manifest record is scored; records without a prediction
    score 0 with a warning. Predictions for unknown records are a hard error.
    """
    by_id = manifest.by_id()
    rows: dict[str, PredictionRow] = {}
    for row in predictions:
        if row.record_id not in by_id:
            raise EvalInputError(f"prediction references unknown record {row.record_id!r}")
        if row.record_id in rows:
            raise EvalInputError(f"duplicate prediction for record {row.record_id!r}")
        rows[row.record_id] = row

    selected = [
        r
        for r in manifest.records
        if r.split in cfg.splits and r.query_type in cfg.query_types
    ]
    missing = [r.record_id for r in selected if r.record_id not in rows]
    if missing:
        logger.warning(
            "%d of %d selected records have no prediction and score 0 (first: %s)",
            len(missing),
            len(selected),
            missing[0],
        )
    grouped: dict[tuple[str, str], list[ScoredSample]] = {}
    for record in selected:
        sample = _score_record(record, rows.get(record.record_id), cfg.gt_mode)
        grouped.setdefault((record.split, record.query_type), []).append(sample)
        grouped.setdefault(("all", record.query_type), []).append(sample)
    return grouped


def evaluate(
    predictions: Sequence[PredictionRow],
    manifest: Manifest,
    cfg: EvalConfig | None = None,
    predictions_sha256: str = "",
    manifest_sha256: str = "",
) -> EvalReport:
    """Score predictions and assemble the full report."""
    cfg = cfg or EvalConfig()
    grouped = score_samples(predictions, manifest, cfg)
    cells = {
        key: build_report(samples, thresholds=cfg.thresholds, strict=cfg.strict)
        for key, samples in grouped.items()
    }
    context = cells.get(("all", "context"))
    uncommon = cells.get(("all", "uncommon"))
    overall = aggregate_overall(context, uncommon) if context and uncommon else None
    return EvalReport(
        cells=cells,
        overall=overall,
        config=cfg,
        predictions_sha256=predictions_sha256,
        manifest_sha256=manifest_sha256,
    )


def evaluate_files(
    predictions_path: PathLike, manifest_path: PathLike, cfg: EvalConfig | None = None
) -> EvalReport:
    return evaluate(
        load_predictions(predictions_path),
        load_manifest(manifest_path),
        cfg,
        predictions_sha256=file_sha256(predictions_path),
        manifest_sha256=file_sha256(manifest_path),
    )


def check_provenance(
    report: EvalReport, predictions_path: PathLike, manifest_path: PathLike
) -> list[str]:
    """Compare a report's recorded input hashes against the files on disk."""
    warnings = []
    if report.predictions_sha256 and file_sha256(predictions_path) != report.predictions_sha256:
        warnings.append(f"predictions file {predictions_path} no longer matches the report hash")
    if report.manifest_sha256 and file_sha256(manifest_path) != report.manifest_sha256:
        warnings.append(f"manifest file {manifest_path} no longer matches the report hash")
    for message in warnings:
        logger.warning("%s", message)
    return warnings


# --- rendering ---


def round_percent(fraction: float) -> str:
    """Render a unit-interval fraction as a one-decimal percentage.

    Half-even, with a pre-quantization to 4 decimals so float noise right at
    a .x5 boundary (e.g. 17.250000000000004) cannot flip the printed digit.
    """
    percent = Decimal(repr(fraction * 100.0))
    stabilized = percent.quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN)
    return str(stabilized.quantize(Decimal("0.1"), rounding=ROUND_HALF_EVEN))


def round_miou(value: float) -> str:
    stabilized = Decimal(repr(value)).quantize(Decimal("0.000001"), rounding=ROUND_HALF_EVEN)
    return str(stabilized.quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


REPORT_FORMATS = ("text-table", "csv", "structured")
_CSV_MAGIC = "# intentground-eval-report v1"


def _row_overall(report: EvalReport, split: str) -> MetricReport | None:
    context = report.cells.get((split, "context"))
    uncommon = report.cells.get((split, "uncommon"))
    if context and uncommon:
        return aggregate_overall(context, uncommon)
    return None


def _render_text_table(report: EvalReport) -> str:
    cfg = report.config
    thresholds = sorted(cfg.thresholds)
    metric_headers = [f"P@{t:g}" for t in thresholds] + ["mIoU"]
    group_width = max(len(" ".join(f"{h:>7}" for h in metric_headers)), 8)

    lines = []
    comparison = ">" if cfg.strict else ">="
    lines.append(
        f"gt mode: {cfg.gt_mode} | threshold comparison: IoU {comparison} t | "
        f"splits: {', '.join(cfg.splits)}"
    )
    header_groups = " | ".join(
        f"{qt.capitalize() + ' Split':^{group_width}}" for qt in cfg.query_types
    )
    lines.append(f"{'Split':<10} | {header_groups} | Overall P@0.5")
    sub = " | ".join(
        " ".join(f"{h:>7}" for h in metric_headers).ljust(group_width) for _ in cfg.query_types
    )
    lines.append(f"{'':<10} | {sub} | ")
    lines.append("-" * len(lines[-2]))

    splits = list(cfg.splits)
    if len(splits) > 1:
        splits.append("all")
    for split in splits:
        groups = []
        for qt in cfg.query_types:
            cell = report.cells.get((split, qt))
            if cell is None:
                groups.append(" ".join(f"{'—':>7}" for _ in metric_headers).ljust(group_width))
            else:
                values = [round_percent(cell.precision_at[t]) for t in thresholds]
                values.append(round_miou(cell.miou))
                groups.append(" ".join(f"{v:>7}" for v in values).ljust(group_width))
        row_overall = _row_overall(report, split)
        overall_text = (
            round_percent(row_overall.precision_at[0.5])
            if row_overall and 0.5 in row_overall.precision_at
            else "—"
        )
        lines.append(f"{split:<10} | {' | '.join(groups)} | {overall_text:>13}")
    return "\n".join(lines) + "\n"


def _render_csv(report: EvalReport) -> str:
    thresholds = sorted(report.config.thresholds)
    out = io.StringIO()
    out.write(_CSV_MAGIC + "\n")
    out.write(f"# config: {json.dumps(report.config.to_dict(), sort_keys=True)}\n")
    out.write(f"# predictions_sha256: {report.predictions_sha256}\n")
    out.write(f"# manifest_sha256: {report.manifest_sha256}\n")
    headers = ["split", "query_type", "n_samples", "miou"] + [f"p@{t!r}" for t in thresholds]
    out.write(",".join(headers) + "\n")

    def write_row(split: str, query_type: str, cell: MetricReport) -> None:
        values = [split, query_type, str(cell.n_samples), repr(cell.miou)]
        values += [repr(cell.precision_at[t]) for t in thresholds]
        out.write(",".join(values) + "\n")

    for (split, query_type), cell in sorted(report.cells.items()):
        write_row(split, query_type, cell)
    if report.overall is not None:
        write_row("overall", "context+uncommon", report.overall)
    return out.getvalue()


def _render_structured(report: EvalReport) -> str:
    def cell_dict(cell: MetricReport) -> dict:
        return {
            "n_samples": cell.n_samples,
            "miou": cell.miou,
            "precision_at": {repr(t): p for t, p in sorted(cell.precision_at.items())},
        }

    data = {
        "config": report.config.to_dict(),
        "provenance": {
            "predictions_sha256": report.predictions_sha256,
            "manifest_sha256": report.manifest_sha256,
        },
        "cells": {f"{s}/{q}": cell_dict(c) for (s, q), c in sorted(report.cells.items())},
        "overall": cell_dict(report.overall) if report.overall else None,
    }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def render_report(report: EvalReport, fmt: str = "text-table") -> bytes:
    """Render a report; one-decimal rounding happens only in text-table mode."""
    if fmt == "text-table":
        return _render_text_table(report).encode()
    if fmt == "csv":
        return _render_csv(report).encode()
    if fmt == "structured":
        return _render_structured(report).encode()
    raise ValueError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")


def _cell_from_values(n_samples: int, miou: float, precisions: dict[float, float]) -> MetricReport:
    return MetricReport(n_samples=n_samples, precision_at=precisions, miou=miou)


def parse_report_csv(data: Union[str, bytes]) -> EvalReport:
    """Inverse of the csv rendering, at full precision."""
    text = data.decode() if isinstance(data, bytes) else data
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != _CSV_MAGIC:
        raise EvalInputError("not an intentground eval-report csv")
    config = None
    predictions_sha = manifest_sha = ""
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("# config: "):
            config = EvalConfig.from_dict(json.loads(line[len("# config: "):]))
        elif line.startswith("# predictions_sha256: "):
            predictions_sha = line.split(": ", 1)[1].strip()
        elif line.startswith("# manifest_sha256: "):
            manifest_sha = line.split(": ", 1)[1].strip()
        elif not line.startswith("#"):
            body_start = i
            break
    if config is None:
        raise EvalInputError("csv report missing config line")
    headers = lines[body_start].split(",")
    thresholds = [float(h[2:]) for h in headers if h.startswith("p@")]
    cells: dict[tuple[str, str], MetricReport] = {}
    overall = None
    for line in lines[body_start + 1 :]:
        parts = line.split(",")
        split, query_type, n_samples, miou = parts[0], parts[1], int(parts[2]), float(parts[3])
        precisions = {t: float(v) for t, v in zip(thresholds, parts[4:])}
        cell = _cell_from_values(n_samples, miou, precisions)
        if split == "overall":
            overall = cell
        else:
            cells[(split, query_type)] = cell
    return EvalReport(
        cells=cells,
        overall=overall,
        config=config,
        predictions_sha256=predictions_sha,
        manifest_sha256=manifest_sha,
    )


def parse_report_structured(data: Union[str, bytes]) -> EvalReport:
    text = data.decode() if isinstance(data, bytes) else data
    raw = json.loads(text)

    def cell_from(d: dict) -> MetricReport:
        return MetricReport(
            n_samples=d["n_samples"],
            precision_at={float(t): p for t, p in d["precision_at"].items()},
            miou=d["miou"],
        )

    cells = {}
    for key, d in raw["cells"].items():
        split, query_type = key.split("/", 1)
        cells[(split, query_type)] = cell_from(d)
    return EvalReport(
        cells=cells,
        overall=cell_from(raw["overall"]) if raw.get("overall") else None,
        config=EvalConfig.from_dict(raw["config"]),
        predictions_sha256=raw["provenance"]["predictions_sha256"],
        manifest_sha256=raw["provenance"]["manifest_sha256"],
    )
