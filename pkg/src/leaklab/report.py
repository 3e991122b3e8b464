"""Table and figure-data rendering for a finished protocol matrix.

Everything here is a pure function of its inputs. Published reference values only ever land in
annotation columns or marker rows.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, TypeAdapter

from .constants import CLASS_DISTRIBUTION_FILE, TRACES_DIR
from .dataset import ClassLabel
from .errors import DomainError
from .extractor import ClassDistribution, TrainTrace, validation_gap
from .harness import PROTOCOL_ORDER, ProtocolId, ProtocolReport, read_results, summarize
from .reference import REFERENCE, ReferenceConstants

log = logging.getLogger(__name__)

NA = "NA"
TRAINING_CURVES_FILE = "training_curves.csv"
CLASS_HISTOGRAM_FILE = "class_histogram.csv"
KERNEL_BARS_FILE = "kernel_bars.csv"
VALIDATION_GAP_FILE = "validation_gap.csv"

COMPUTED_COLUMNS = ("protocol", "plcc", "srocc", "pool", "kernel", "ft", "test", "scheme", "runs", "failures")
ANNOTATION_COLUMNS = ("reference_plcc", "reference_srocc")

# Kernel chart panels and the reimplemented reference row each one is marked with
KERNEL_CHARTS: tuple[tuple[str, ProtocolId], ...] = (
    ("a", ProtocolId.NoFinetune),
    ("b", ProtocolId.Clean),
    ("c", ProtocolId.LeakyFt_CleanTest),
    ("d", ProtocolId.LeakyFt_TaintedTest),
)


def _flag(ok: bool | None) -> str:
    if ok is None:
        return "-"
    return "✓" if ok else "✗"


class TableRow(BaseModel):
    protocol: str
    plcc: str
    srocc: str
    pool: str
    kernel: str
    ft: str
    test: str
    scheme: str
    runs: int
    failures: int
    reference_plcc: str = ""
    reference_srocc: str = ""

    def computed(self) -> tuple:
        return tuple(getattr(self, c) for c in COMPUTED_COLUMNS)


class TableDocument(BaseModel):
    rows: list[TableRow]
    footer: list[str]

    def to_csv(self, annotations: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        columns = COMPUTED_COLUMNS + (ANNOTATION_COLUMNS if annotations else ())
        writer.writerow(columns)
        for r in self.rows:
            writer.writerow([getattr(r, c) for c in columns])
        return buf.getvalue()

    def to_text(self) -> str:
        header = list(COMPUTED_COLUMNS) + ["reference"]
        body = [
            [str(x) for x in r.computed()]
            + [f"{r.reference_plcc} / {r.reference_srocc}" if r.reference_plcc else ""]
            for r in self.rows
        ]
        widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in body)
        if self.footer:
            lines.append("")
            lines.extend(self.footer)
        return "\n".join(lines) + "\n"


def _row_order(report: ProtocolReport) -> tuple:
    return (
        PROTOCOL_ORDER.index(report.protocol),
        report.pooling.value if report.pooling else "",
        report.kernel or "",
    )


def _footer(reference: ReferenceConstants) -> list[str]:
    lines = ["Published reference values (display only):"]
    for r in reference.rows:
        if r.protocol is not None:
            continue
        lines.append(
            f"  row {r.row:>2} {r.method:<14} {r.source:<10} PLCC {r.cell('plcc')}  SROCC {r.cell('srocc')}"
        )
    lines.append(
        f"  dominant class share {reference.dominant_class_pct:.2f}%, peak class accuracy "
        f"{reference.peak_class_accuracy_pct:.2f}% ({reference.class_uplift_points:.2f} points above it)"
    )
    lines.append(f"  leaky fine-tuning validation accuracy > {reference.leaky_validation_accuracy_pct:.0f}%")
    return lines


def render_table(
    reports: Sequence[ProtocolReport],
    reference: ReferenceConstants | None = REFERENCE,
) -> TableDocument:
    """Rows in the published table's bottom-block order, with reference values alongside."""
    if not reports:
        raise DomainError("render_table needs at least one report")
    rows: list[TableRow] = []
    for rep in sorted(reports, key=_row_order):
        row = TableRow(
            protocol=rep.protocol.value,
            plcc=str(rep.plcc) if rep.plcc else NA,
            srocc=str(rep.srocc) if rep.srocc else NA,
            pool=rep.pooling.value if rep.pooling else "-",
            kernel=rep.kernel or "-",
            ft=_flag(rep.ft_ok),
            test=_flag(rep.test_ok),
            scheme=rep.scheme,
            runs=rep.n_runs,
            failures=rep.n_failures,
        )
        ref = reference.for_protocol(rep.protocol.value) if reference is not None else None
        if ref is not None:
            row.reference_plcc = ref.cell("plcc")
            row.reference_srocc = ref.cell("srocc")
        rows.append(row)
    return TableDocument(rows=rows, footer=_footer(reference) if reference is not None else [])


@dataclass
class FigureArtifacts:
    reports: list[ProtocolReport] = field(default_factory=list)
    traces: dict[tuple[str, int], TrainTrace] = field(default_factory=dict)
    class_distributions: dict[tuple[str, int], ClassDistribution] = field(default_factory=dict)
    reference: ReferenceConstants = REFERENCE


def _cell(x: float | None) -> str:
    return NA if x is None else repr(float(x))


def training_curves_csv(traces: dict[tuple[str, int], TrainTrace]) -> str:
    """Clean and leaky curves side by side on one iteration axis per split."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    metrics = ("train_loss", "val_loss", "val_acc", "test_loss", "test_acc")
    writer.writerow(["split", "iteration"] + [f"{k}_{m}" for k in ("clean", "leaky") for m in metrics])
    splits = sorted({s for k, s in traces if k in ("clean", "leaky")})
    for split in splits:
        pair = {k: traces.get((k, split)) for k in ("clean", "leaky")}
        iterations = sorted({p.iteration for t in pair.values() if t for p in t.validation})
        points = {k: ({p.iteration: p for p in t.validation} if t else {}) for k, t in pair.items()}
        losses = {k: ({p.iteration: p.loss for p in t.train} if t else {}) for k, t in pair.items()}
        for it in iterations:
            row: list[object] = [split, it]
            for k in ("clean", "leaky"):
                v = points[k].get(it)
                row += [
                    _cell(losses[k].get(it)),
                    _cell(v.val_loss if v else None),
                    _cell(v.val_accuracy if v else None),
                    _cell(v.test_loss if v else None),
                    _cell(v.test_accuracy if v else None),
                ]
            writer.writerow(row)
    return buf.getvalue()


def validation_gap_csv(traces: dict[tuple[str, int], TrainTrace]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["split", "clean_gap", "leaky_gap", "difference"])
    for split in sorted({s for _, s in traces}):
        clean, leaky = traces.get(("clean", split)), traces.get(("leaky", split))
        if clean is None or leaky is None:
            writer.writerow([split, NA, NA, NA])
            continue
        try:
            g = validation_gap(clean, leaky)
        except DomainError as e:
            log.warning("split %d: no validation gap (%s)", split, e)
            writer.writerow([split, NA, NA, NA])
            continue
        writer.writerow([split, _cell(g.clean_gap), _cell(g.leaky_gap), _cell(g.difference)])
    return buf.getvalue()


def class_histogram_csv(distributions: dict[tuple[str, int], ClassDistribution]) -> str:
    """Per-split predicted-class percentages, then mean and std rows per fine-tune kind."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = [c.name for c in ClassLabel]
    writer.writerow(["kind", "split"] + names + ["accuracy", "dominant_class_share"])
    for kind in sorted({k for k, _ in distributions}):
        entries = [(s, d) for (k, s), d in sorted(distributions.items()) if k == kind]
        for split, d in entries:
            writer.writerow([kind, split] + [_cell(p) for p in d.percentages] + [_cell(d.accuracy), _cell(d.dominant_class_share)])
        pct = np.array([d.percentages for _, d in entries], dtype=np.float64)
        acc = np.array([[d.accuracy, d.dominant_class_share] for _, d in entries], dtype=np.float64)
        writer.writerow([kind, "mean"] + [_cell(x) for x in pct.mean(axis=0)] + [_cell(x) for x in acc.mean(axis=0)])
        if len(entries) > 1:
            std_p, std_a = pct.std(axis=0, ddof=1), acc.std(axis=0, ddof=1)
            writer.writerow([kind, "std"] + [_cell(x) for x in std_p] + [_cell(x) for x in std_a])
        else:
            writer.writerow([kind, "std"] + [NA] * (len(names) + 2))
    return buf.getvalue()


def kernel_bars_csv(reports: Sequence[ProtocolReport], reference: ReferenceConstants = REFERENCE) -> str:
    """Bars per chart x pooling x kernel, followed by four reference markers per chart."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["chart", "protocol", "pooling", "kernel", "metric", "kind", "mean", "std"])
    for chart, pid in KERNEL_CHARTS:
        mine = sorted((r for r in reports if r.protocol is pid), key=_row_order)
        if not mine:
            for metric in ("plcc", "srocc"):
                writer.writerow([chart, pid.value, NA, NA, metric, "bar", NA, NA])
        for r in mine:
            for metric in ("plcc", "srocc"):
                s = getattr(r, metric)
                writer.writerow(
                    [
                        chart, pid.value, r.pooling.value if r.pooling else NA, r.kernel or NA, metric, "bar",
                        _cell(s.mean if s else None), _cell(s.std if s else None),
                    ]
                )
        markers = (("claimed", reference.claimed_for(pid.value)), ("reimplemented", reference.for_protocol(pid.value)))
        for label, ref in markers:
            for metric in ("plcc", "srocc"):
                value = getattr(ref, metric) if ref else None
                std = getattr(ref, f"{metric}_std") if ref else None
                writer.writerow([chart, pid.value, "", "", metric, f"reference-{label}", _cell(value), _cell(std)])
    return buf.getvalue()


def emit_figure_data(artifacts: FigureArtifacts, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        TRAINING_CURVES_FILE: training_curves_csv(artifacts.traces),
        VALIDATION_GAP_FILE: validation_gap_csv(artifacts.traces),
        CLASS_HISTOGRAM_FILE: class_histogram_csv(artifacts.class_distributions),
        KERNEL_BARS_FILE: kernel_bars_csv(artifacts.reports, artifacts.reference),
    }
    written: dict[str, Path] = {}
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written[name] = path
    log.info("wrote %d figure-data files to %s", len(written), out)
    return written


_TRACE_NAME = re.compile(r"^(none|clean|leaky)-(\d+)\.json$")
_DIST_KEY = re.compile(r"^(.+)-(\d+)$")
_DISTRIBUTIONS = TypeAdapter(dict[str, ClassDistribution])


def load_artifacts(run_dir: str | Path) -> FigureArtifacts:
    """Rebuild report inputs from a directory written by `leaklab run`."""
    run_dir = Path(run_dir)
    artifacts = FigureArtifacts(reports=summarize(read_results(run_dir)))
    traces_dir = run_dir / TRACES_DIR
    if traces_dir.is_dir():
        for p in sorted(traces_dir.iterdir()):
            m = _TRACE_NAME.match(p.name)
            if m:
                trace = TrainTrace.model_validate_json(p.read_text(encoding="utf-8"))
                artifacts.traces[(m.group(1), int(m.group(2)))] = trace
    dist_file = run_dir / CLASS_DISTRIBUTION_FILE
    if dist_file.exists():
        for key, value in _DISTRIBUTIONS.validate_json(dist_file.read_bytes()).items():
            m = _DIST_KEY.match(key)
            if m:
                artifacts.class_distributions[(m.group(1), int(m.group(2)))] = value
    return artifacts
