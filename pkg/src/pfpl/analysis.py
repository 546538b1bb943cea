"""Loss/metric correlation study and labeled feature export.

For each test utterance the enhancer runs full-length, every requested loss
is evaluated against the clean reference, objective metrics are computed,
and Pearson correlation coefficients are reported per (loss, metric) pair.
Feature export writes one CSV row per encoder frame for external projection
tools.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CorpusIndex, load_pair
from .dsp import StftConfig, Waveform
from .encoder import EncoderBackend, encode
from .exceptions import DegenerateInput, InvalidInput
from .losses import LossSpec, compute_loss
from .metrics import PesqAdapter, evaluate_pair
from .unet import MaskEstimator, enhance

METRIC_COLUMNS = ("pesq", "csig", "cbak", "covl", "stoi", "seg_snr", "llr", "wss")


def pearson_cc(u, v) -> float:
    """Pearson correlation coefficient of two equal-length sequences."""
    a = np.asarray(u, dtype=np.float64).ravel()
    b = np.asarray(v, dtype=np.float64).ravel()
    if a.shape[0] != b.shape[0]:
        raise InvalidInput(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise InvalidInput("need at least two points")
    da = a - a.mean()
    db = b - b.mean()
    var_a = (da**2).sum()
    var_b = (db**2).sum()
    if var_a == 0.0 or var_b == 0.0:
        raise DegenerateInput("zero variance; correlation undefined")
    return float((da * db).sum() / math.sqrt(var_a * var_b))


@dataclass
class CorrelationReport:
    rows: list[dict] = field(default_factory=list)
    pcc: dict = field(default_factory=dict)  # (loss, metric) -> float | None
    pesq_failures: int = 0
    loss_names: tuple[str, ...] = ()
    metric_names: tuple[str, ...] = ()

    def cell(self, loss: str, metric: str):
        return self.pcc.get((loss, metric))


def correlation_report(
    corpus: CorpusIndex,
    model: MaskEstimator,
    losses: list[LossSpec],
    adapter: PesqAdapter | None = None,
    stft_cfg: StftConfig | None = None,
    out_dir: str | Path | None = None,
    mask_hook=None,
) -> CorrelationReport:
    """Enhance every test utterance, tabulate losses vs metrics, correlate.

    `mask_hook` is the same test hook `enhance` takes (e.g. identity mask),
    bypassing the learned network.
    """
    stft_cfg = stft_cfg or StftConfig()
    ids = sorted(corpus.ids("test")) or sorted(corpus.ids())
    if len(ids) < 2:
        raise InvalidInput("need at least two test utterances to correlate")

    rows: list[dict] = []
    pesq_failures = 0
    for utterance_id in ids:
        clean, noisy = load_pair(corpus, utterance_id)
        enhanced = enhance(model, noisy, stft_cfg, mask_hook=mask_hook)
        row: dict = {"utterance_id": utterance_id}
        for spec in losses:
            value = compute_loss(spec, noisy.samples, clean.samples, enhanced.samples)
            row[f"loss_{spec.name}"] = float(value.total)
        scores = evaluate_pair(clean, enhanced, adapter)
        if adapter is not None and scores.pesq is None:
            pesq_failures += 1
        for name in METRIC_COLUMNS:
            row[name] = getattr(scores, name)
        rows.append(row)

    loss_names = tuple(spec.name for spec in losses)
    metric_names = tuple(
        m for m in METRIC_COLUMNS if any(r[m] is not None for r in rows)
    )
    pcc: dict = {}
    for loss_name in loss_names:
        column = [r[f"loss_{loss_name}"] for r in rows]
        # a loss column at float-noise level carries no ranking information
        numerically_zero = max(abs(v) for v in column) < 1e-6
        for metric in metric_names:
            pairs = [
                (r[f"loss_{loss_name}"], r[metric]) for r in rows if r[metric] is not None
            ]
            try:
                if numerically_zero:
                    raise DegenerateInput("loss column is numerically zero")
                pcc[(loss_name, metric)] = pearson_cc(
                    [p[0] for p in pairs], [p[1] for p in pairs]
                )
            except DegenerateInput:
                pcc[(loss_name, metric)] = None

    report = CorrelationReport(
        rows=rows,
        pcc=pcc,
        pesq_failures=pesq_failures,
        loss_names=loss_names,
        metric_names=metric_names,
    )
    if out_dir is not None:
        write_correlation_csvs(report, out_dir)
    return report


def write_correlation_csvs(report: CorrelationReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Emit correlation_report.csv (per-utterance scatter data) and pcc_matrix.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "correlation_report.csv"
    matrix_path = out_dir / "pcc_matrix.csv"

    columns = ["utterance_id"]
    columns += [f"loss_{n}" for n in report.loss_names]
    columns += list(METRIC_COLUMNS)
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if report.pesq_failures:
            fh.write(f"# pesq_excluded_utterances={report.pesq_failures}\n")
        writer.writerow(columns)
        for row in report.rows:
            writer.writerow(
                ["" if row.get(c) is None else _fmt(row.get(c)) for c in columns]
            )

    with open(matrix_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss"] + list(report.metric_names))
        for loss_name in report.loss_names:
            writer.writerow(
                [loss_name]
                + [
                    "degenerate" if report.cell(loss_name, m) is None else _fmt(report.cell(loss_name, m))
                    for m in report.metric_names
                ]
            )
    return table_path, matrix_path


def _fmt(value) -> str:
    # 17 significant digits: float64 survives the CSV round trip exactly
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def export_features(
    backend: EncoderBackend,
    items: list[tuple[Waveform, str]],
    path: str | Path,
) -> Path:
    """Write one CSV row per frame: utterance id, frame index, label, features."""
    if not items:
        raise InvalidInput("no items to export")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["utterance_id", "frame", "label"]
            + [f"f{i}" for i in range(backend.channels)]
        )
        for index, (waveform, label) in enumerate(items):
            features = encode(backend, waveform)
            for frame_index in range(features.frames):
                writer.writerow(
                    [f"utt{index:04d}", frame_index, label]
                    + [f"{v:.8g}" for v in features.values[frame_index]]
                )
    return path
