"""Evaluation metrics and exports: correct-classification probability,
empirical CDFs of transmitted-value magnitudes, learning-curve CSV/SVG."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def pcc(n_correct: int, n_test: int) -> float:
    """Correct classification probability in percent."""
    if n_test <= 0:
        raise ValueError("n_test must be positive")
    if not 0 <= n_correct <= n_test:
        raise ValueError("n_correct must lie in [0, n_test]")
    return n_correct / n_test * 100.0


@dataclass(frozen=True)
class Cdf:
    sorted_values: np.ndarray
    cumulative: np.ndarray

    def at(self, x: float) -> float:
        """Fraction of values <= x."""
        return float(np.searchsorted(self.sorted_values, x, side="right") / self.sorted_values.size)


def value_cdf(values) -> Cdf:
    """Empirical CDF over the absolute values of `values`."""
    flat = np.abs(np.asarray(values, dtype=np.float64).ravel())
    if flat.size == 0:
        raise ValueError("empty input")
    sorted_values = np.sort(flat)
    cumulative = np.arange(1, flat.size + 1) / flat.size
    return Cdf(sorted_values=sorted_values, cumulative=cumulative)


def write_cdf_csv(cdf: Cdf, path) -> None:
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["value", "cumulative"])
        for v, c in zip(cdf.sorted_values, cdf.cumulative):
            writer.writerow([repr(float(v)), repr(float(c))])


def scale_separation(smashed: np.ndarray, lower_weights: np.ndarray) -> dict:
    """Median magnitude of the smashed data vs the lower-segment weights.

    Reported (and logged), not asserted: the transmitted activations are
    observed to sit at a larger scale than model weights, which drives the
    noise robustness of the split method.
    """
    med_s = float(np.median(np.abs(smashed)))
    med_w = float(np.median(np.abs(lower_weights)))
    ratio = med_s / med_w if med_w > 0 else float("inf")
    log.info(
        "scale separation: median |smashed| = %.6g, median |weights| = %.6g, ratio = %.3g",
        med_s, med_w, ratio,
    )
    return {"median_abs_smashed": med_s, "median_abs_weights": med_w, "ratio": ratio}


def export_learning_curve(records, path, svg_path=None) -> None:
    """CSV of (round, loss, accuracy); accuracy is blank between evaluations.

    Numbers are written with repr so a round-trip parse reproduces the
    series exactly.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to export")
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "loss", "accuracy"])
        for rec in records:
            acc = "" if rec.eval_accuracy is None else repr(float(rec.eval_accuracy))
            writer.writerow([rec.round, repr(float(rec.loss)), acc])
    if svg_path is not None:
        _write_loss_svg(records, svg_path)


def _write_loss_svg(records, path, width=640, height=360, margin=40):
    xs = np.array([rec.round for rec in records], dtype=np.float64)
    ys = np.array([rec.loss for rec in records], dtype=np.float64)
    x0, x1 = xs.min(), max(xs.max(), xs.min() + 1)
    y0, y1 = ys.min(), max(ys.max(), ys.min() + 1e-12)
    px = margin + (xs - x0) / (x1 - x0) * (width - 2 * margin)
    py = height - margin - (ys - y0) / (y1 - y0) * (height - 2 * margin)
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="1.5"/>\n'
        f'<text x="{width // 2}" y="{height - 8}" text-anchor="middle" '
        f'font-size="12">round</text>\n'
        f'<text x="12" y="{height // 2}" font-size="12" '
        f'transform="rotate(-90 12 {height // 2})" text-anchor="middle">loss</text>\n'
        "</svg>\n"
    )
    Path(path).write_text(svg)
