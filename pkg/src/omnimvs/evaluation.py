"""Index-error metrics, per-frame and corpus reports, error-map exports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .io import write_pfm, write_ppm

THRESHOLDS = (1, 3, 5)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    """Statistics over evaluated pixels.

    ``gt*`` are the percentages of pixels whose raw index difference exceeds
    1, 3 and 5. ``mae``/``rms`` are in raw index units, the ``*_percent``
    variants use the percent error scale (difference / N * 100).
    """

    gt1: float
    gt3: float
    gt5: float
    mae: float
    rms: float
    mae_percent: float
    rms_percent: float
    evaluated_pixels: int
    ignored_pixels: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_shapes(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvaluationError(f"prediction {pred.shape} and GT {gt.shape} differ in shape")
    return pred, gt


def index_difference(pred, gt, ignore=None) -> np.ndarray:
    """|pred - gt| with NaN wherever either input is NaN or ``ignore`` holds."""
    pred, gt = _check_shapes(pred, gt)
    diff = np.abs(pred - gt)
    if ignore is not None:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != diff.shape:
            raise EvaluationError(f"ignore mask {ignore.shape} does not match {diff.shape}")
        diff = np.where(ignore, np.nan, diff)
    return diff


def index_error(pred, gt, num_spheres: int, ignore=None) -> np.ndarray:
    """Percent error |pred - gt| / N * 100; NaN marks ignored pixels."""
    if num_spheres < 1:
        raise EvaluationError("num_spheres must be positive")
    return index_difference(pred, gt, ignore) / num_spheres * 100.0


def summarize(diff, num_spheres: int, thresholds=THRESHOLDS) -> MetricReport:
    """Statistics of a raw index-difference raster; NaN pixels are ignored."""
    diff = np.asarray(diff, dtype=np.float64).ravel()
    keep = ~np.isnan(diff)
    values = diff[keep]
    if values.size == 0:
        raise EvaluationError("no evaluated pixels")
    if len(thresholds) != 3:
        raise EvaluationError("expected three thresholds")
    over = [100.0 * np.count_nonzero(values > t) / values.size for t in thresholds]
    mae = float(values.mean())
    rms = float(math.sqrt(np.mean(values * values)))
    scale = 100.0 / num_spheres
    return MetricReport(*over, mae, rms, mae * scale, rms * scale,
                        int(values.size), int(diff.size - values.size))


def evaluate(pred, gt, num_spheres: int, ignore=None) -> MetricReport:
    return summarize(index_difference(pred, gt, ignore), num_spheres)


def average_reports(reports) -> MetricReport:
    """Per-frame statistics averaged over frames; pixel counts are summed."""
    reports = list(reports)
    if not reports:
        raise EvaluationError("no reports to average")
    fields = ("gt1", "gt3", "gt5", "mae", "rms", "mae_percent", "rms_percent")
    means = [float(np.mean([getattr(r, f) for r in reports])) for f in fields]
    return MetricReport(*means, sum(r.evaluated_pixels for r in reports),
                        sum(r.ignored_pixels for r in reports))


_COLUMNS = [("frame", None), (">1 (%)", "gt1"), (">3 (%)", "gt3"), (">5 (%)", "gt5"),
            ("MAE (idx)", "mae"), ("RMS (idx)", "rms"), ("MAE (%)", "mae_percent"),
            ("RMS (%)", "rms_percent"), ("evaluated", "evaluated_pixels"),
            ("ignored", "ignored_pixels")]


def format_table(rows) -> str:
    """Aligned plain-text table from (label, MetricReport) rows."""
    cells = [[name for name, _ in _COLUMNS]]
    for label, rep in rows:
        line = [str(label)]
        for _, key in _COLUMNS[1:]:
            value = getattr(rep, key)
            line.append(str(value) if isinstance(value, int) else f"{value:.3f}")
        cells.append(line)
    widths = [max(len(r[i]) for r in cells) for i in range(len(_COLUMNS))]
    out = []
    for k, r in enumerate(cells):
        out.append("  ".join([r[0].ljust(widths[0])] +
                             [c.rjust(w) for c, w in zip(r[1:], widths[1:])]).rstrip())
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def reports_json(per_frame: dict, average: MetricReport | None, extra: dict | None = None) -> str:
    doc = {"frames": {k: v.to_dict() for k, v in per_frame.items()}}
    if average is not None:
        doc["average"] = average.to_dict()
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def error_colormap(error, vmax: float | None = None) -> np.ndarray:
    """Blue (zero) to red (``vmax``) RGB uint8 raster; ignored (NaN) pixels are black."""
    error = np.asarray(error, dtype=np.float64)
    finite = np.isfinite(error)
    if vmax is None:
        vmax = float(error[finite].max()) if finite.any() else 1.0
    t = np.clip(np.where(finite, error, 0.0) / max(vmax, 1e-12), 0.0, 1.0)
    rgb = np.stack([t, 1.0 - np.abs(2.0 * t - 1.0), 1.0 - t], axis=-1)
    rgb = np.where(finite[..., None], rgb, 0.0)
    return np.rint(rgb * 255).astype(np.uint8)


def export_error_map(prefix, error, vmax: float | None = None) -> None:
    """Write ``prefix``.pfm (NaN kept) and ``prefix``.ppm (colormapped)."""
    write_pfm(f"{prefix}.pfm", np.asarray(error, dtype=np.float32))
    write_ppm(f"{prefix}.ppm", error_colormap(error, vmax))
