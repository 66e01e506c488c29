"""Readers and writers for every artifact the lab produces.

File formats (byte-exact contracts, see FORMAT.md at the repo root):

* ``TPTB`` feature bundles: little-endian binary, float32 payload;
* prediction dumps: one JSON object per line, floats at 17 significant
  digits so round-trips are exact;
* calibration reports: JSON with raw and presentation-scaled values;
* reliability diagrams: CSV for the bin table and a self-contained SVG.

The synthetic bundle generator draws from a counter-based Philox stream in
a fixed, documented order, so a seed pins the bundle bit-for-bit.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .adaptation import PredictionRecord
from .errors import FormatError, ValidationError
from .features import FeatureBundle
from .metrics import BinStat, CalibrationReport

MAGIC = b"TPTB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIfI")  # magic, version, D, C, P, S, N, tau, names


# ---------------------------------------------------------------------------
# TPTB feature bundles


def write_bundle(bundle: FeatureBundle, path) -> None:
    """Serialize a bundle; the float32 storage arrays are written verbatim."""
    for name in bundle.class_names + bundle.metadata:
        if "\n" in name:
            raise ValidationError("name table entries must not contain newlines")
    name_table = "\n".join(list(bundle.class_names) + list(bundle.metadata))
    name_bytes = name_table.encode("utf-8")
    header = _HEADER.pack(
        MAGIC, VERSION, bundle.dim_d, bundle.num_classes, bundle.prompt_dim,
        bundle.num_samples, bundle.views_per_sample,
        np.float32(bundle.temperature), len(name_bytes))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(name_bytes)
        fh.write(bundle.base_text_features_f32.astype("<f4").tobytes())
        fh.write(bundle.jacobians_f32.astype("<f4").tobytes())
        for i in range(bundle.num_samples):
            fh.write(struct.pack("<I", int(bundle.labels[i])))
            fh.write(bundle.image_features_f32[i].astype("<f4").tobytes())


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def take_f32(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype="<f4")


def read_bundle(path) -> FeatureBundle:
    """Parse and validate a TPTB file.

    Malformed input raises :class:`FormatError` carrying the byte offset;
    structurally sound files that violate data invariants (non-unit rows,
    bad labels) raise :class:`ValidationError`.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    header = cur.take(_HEADER.size, "header")
    magic, version, d, c, p, s, n, tau, name_len = _HEADER.unpack(header)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if min(d, c, p, s, n) < 1:
        raise FormatError("all header counts must be >= 1", offset=8)
    name_offset = cur.offset
    try:
        name_table = cur.take(name_len, "name table").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("name table is not valid UTF-8",
                          offset=name_offset) from exc
    lines = name_table.split("\n") if name_table else []
    if len(lines) < c:
        raise FormatError(
            f"name table holds {len(lines)} entries, need {c} class names",
            offset=name_offset)
    class_names, metadata = lines[:c], lines[c:]
    base = cur.take_f32(c * d, "base text features").reshape(c, d)
    jac = cur.take_f32(c * d * p, "jacobians").reshape(c, d, p)
    labels = np.empty(s, dtype=np.int64)
    images = np.empty((s, n, d), dtype=np.float32)
    for i in range(s):
        (labels[i],) = struct.unpack("<I", cur.take(4, f"label of sample {i}"))
        images[i] = cur.take_f32(n * d, f"image features of sample {i}").reshape(n, d)
    if cur.offset != len(data):
        raise FormatError(
            f"{len(data) - cur.offset} trailing bytes after last sample",
            offset=cur.offset)
    return FeatureBundle.from_arrays(class_names, tau, base, jac, labels,
                                     images, metadata)


# ---------------------------------------------------------------------------
# synthetic bundles


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a seeded synthetic bundle.

    ``dominant_dim_text`` / ``dominant_dim_image`` inject a shared
    large-magnitude (negative) component into the chosen coordinate of every
    text or image feature, emulating the dominant-dimension structure of
    real contrastive embeddings; leave them None for a null bundle.
    """

    dim_d: int = 64
    num_classes: int = 20
    prompt_dim: int = 8
    num_samples: int = 500
    views_per_sample: int = 8
    dominant_dim_text: Optional[int] = None
    dominant_dim_image: Optional[int] = None
    dominant_magnitude: float = 5.0
    class_separation: float = 1.0
    view_noise: float = 0.1
    label_noise: float = 0.0
    temperature: float = 20.0
    seed: int = 0


def _validate_spec(spec: SynthSpec) -> None:
    if min(spec.dim_d, spec.num_classes, spec.prompt_dim,
           spec.num_samples, spec.views_per_sample) < 1:
        raise ValidationError("all synth dimensions must be >= 1")
    for dim in (spec.dominant_dim_text, spec.dominant_dim_image):
        if dim is not None and not 0 <= dim < spec.dim_d:
            raise ValidationError(f"dominant dimension {dim} out of range")
    if spec.dominant_magnitude < 0 or spec.view_noise < 0 or spec.class_separation < 0:
        raise ValidationError("magnitudes must be nonnegative")
    if not 0.0 <= spec.label_noise <= 1.0:
        raise ValidationError("label_noise must lie in [0, 1]")
    if not spec.temperature > 0:
        raise ValidationError("temperature must be positive")


def synth_bundle(spec: SynthSpec) -> FeatureBundle:
    """Generate a deterministic synthetic bundle from a Philox stream.

    Draw order (fixed; documented in FORMAT.md): class semantic directions,
    prompt jacobians, then per sample its class index, the label-noise coin,
    the core image vector, and the view perturbations.
    """
    _validate_spec(spec)
    d, c, p = spec.dim_d, spec.num_classes, spec.prompt_dim
    s, n = spec.num_samples, spec.views_per_sample
    rng = np.random.Generator(np.random.Philox(key=spec.seed))

    sem = rng.standard_normal((c, d))
    text = sem.copy()
    if spec.dominant_dim_text is not None:
        text[:, spec.dominant_dim_text] -= spec.dominant_magnitude
    jac = rng.standard_normal((c, d, p)) / math.sqrt(p)

    labels = np.empty(s, dtype=np.int64)
    images = np.empty((s, n, d))
    for i in range(s):
        k = int(rng.integers(0, c))
        label = k
        if spec.label_noise > 0.0 and rng.random() < spec.label_noise:
            label = int(rng.integers(0, c))
        labels[i] = label
        core = spec.class_separation * sem[k] + rng.standard_normal(d)
        if spec.dominant_dim_image is not None:
            core[spec.dominant_dim_image] -= spec.dominant_magnitude
        images[i, 0] = core
        for v in range(1, n):
            images[i, v] = core + spec.view_noise * rng.standard_normal(d)

    text /= np.linalg.norm(text, axis=1, keepdims=True)
    images /= np.linalg.norm(images, axis=2, keepdims=True)
    names = [f"class_{j:03d}" for j in range(c)]
    return FeatureBundle.from_arrays(names, spec.temperature, text, jac,
                                     labels, images)


# ---------------------------------------------------------------------------
# prediction dumps (JSON lines)

_PREDICTION_KEYS = ("sample_id", "method", "true_label", "predicted_label",
                    "confidence", "logit_min", "logit_max", "logit_mean",
                    "correct")


def _f17(x: float) -> str:
    return format(float(x), ".17g")


def write_predictions(records, path, method: str) -> None:
    """Write one JSON line per record, sorted by sample_id.

    Floats carry 17 significant digits, so reading the file back recovers
    them exactly.
    """
    ordered = sorted(records, key=lambda r: r.sample_id)
    with open(path, "w", encoding="utf-8") as fh:
        for r in ordered:
            fh.write(
                f'{{"sample_id": {int(r.sample_id)}, '
                f'"method": {json.dumps(method)}, '
                f'"true_label": {int(r.true_label)}, '
                f'"predicted_label": {int(r.predicted_label)}, '
                f'"confidence": {_f17(r.confidence)}, '
                f'"logit_min": {_f17(r.logit_min)}, '
                f'"logit_max": {_f17(r.logit_max)}, '
                f'"logit_mean": {_f17(r.logit_mean)}, '
                f'"correct": {"true" if r.correct else "false"}}}\n')


def read_predictions(path):
    """Parse a prediction dump; returns ``(records, methods)``.

    ``methods`` is the per-line method label (one run writes a single
    value). A malformed line raises :class:`FormatError` naming it.
    """
    records, methods = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError("invalid JSON in prediction dump",
                                  line=lineno) from exc
            if not isinstance(obj, dict) or set(obj) != set(_PREDICTION_KEYS):
                raise FormatError("prediction line has wrong fields", line=lineno)
            try:
                records.append(PredictionRecord(
                    sample_id=int(obj["sample_id"]),
                    true_label=int(obj["true_label"]),
                    predicted_label=int(obj["predicted_label"]),
                    confidence=float(obj["confidence"]),
                    logit_min=float(obj["logit_min"]),
                    logit_max=float(obj["logit_max"]),
                    logit_mean=float(obj["logit_mean"]),
                    correct=bool(obj["correct"]),
                ))
            except (TypeError, ValueError) as exc:
                raise FormatError("prediction line has malformed values",
                                  line=lineno) from exc
            methods.append(str(obj["method"]))
    return records, methods


# ---------------------------------------------------------------------------
# reports and reliability diagrams


def _bin_dict(b: BinStat) -> dict:
    return {
        "lower": b.lower, "upper": b.upper, "count": b.count,
        "mean_confidence": b.mean_confidence, "mean_accuracy": b.mean_accuracy,
        "gap": b.gap,
    }


def report_dict(report: CalibrationReport) -> dict:
    """Report as a JSON-ready dict: raw fractions plus scaled values
    (percent; AURC x1000), the units calibration tables usually print.
    """
    out = {
        "accuracy": {"raw": report.accuracy, "percent": 100.0 * report.accuracy},
        "ece": {"raw": report.ece, "percent": 100.0 * report.ece},
        "aece": {"raw": report.aece, "percent": 100.0 * report.aece},
        "mce": {"raw": report.mce, "percent": 100.0 * report.mce},
        "aurc": {"raw": report.aurc, "scaled_1e3": 1000.0 * report.aurc},
        "num_bins": report.num_bins,
        "bin_stats_equal_width": [_bin_dict(b) for b in report.bin_stats_equal_width],
        "bin_stats_equal_mass": [_bin_dict(b) for b in report.bin_stats_equal_mass],
        "diagnostics": asdict(report.diagnostics) if report.diagnostics else None,
    }
    return out


def write_report(report: CalibrationReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_dict(report), fh, indent=2)
        fh.write("\n")


def reliability_csv(bins, path) -> None:
    """Bin table as CSV; empty bins leave the mean columns blank."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lower", "bin_upper", "count",
                         "mean_conf", "mean_acc", "gap"])
        for b in bins:
            if b.count:
                writer.writerow([_f17(b.lower), _f17(b.upper), b.count,
                                 _f17(b.mean_confidence), _f17(b.mean_accuracy),
                                 _f17(b.gap)])
            else:
                writer.writerow([_f17(b.lower), _f17(b.upper), 0, "", "", ""])


def reliability_svg(bins, path, title: str = "reliability") -> None:
    """Confidence histogram stacked above the reliability diagram.

    Self-contained deterministic SVG: the top panel shows per-bin counts,
    the bottom panel per-bin accuracy bars with mean-confidence ticks and
    the identity diagonal.
    """
    width, panel_h, margin, gap_h = 640, 260, 50, 40
    height = 2 * panel_h + gap_h + 2 * margin
    plot_w = width - 2 * margin
    nbins = len(bins)
    bar_w = plot_w / max(nbins, 1)
    max_count = max((b.count for b in bins), default=0) or 1

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="{margin / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]

    def rect(x, y, w, h, fill, opacity=1.0):
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
            f'fill="{fill}" fill-opacity="{opacity}" stroke="black" '
            f'stroke-width="0.5"/>')

    # top panel: confidence histogram
    top_y0 = margin + panel_h
    for i, b in enumerate(bins):
        h = panel_h * (b.count / max_count)
        rect(margin + i * bar_w, top_y0 - h, bar_w, h, "#7f97c4")
    parts.append(
        f'<line x1="{margin}" y1="{top_y0}" x2="{margin + plot_w}" '
        f'y2="{top_y0}" stroke="black"/>')

    # bottom panel: accuracy bars, confidence ticks, diagonal
    bot_y0 = margin + panel_h + gap_h + panel_h
    for i, b in enumerate(bins):
        if b.count:
            h = panel_h * b.mean_accuracy
            rect(margin + i * bar_w, bot_y0 - h, bar_w, h, "#c47f7f", 0.9)
            ty = bot_y0 - panel_h * b.mean_confidence
            parts.append(
                f'<line x1="{margin + i * bar_w:.2f}" y1="{ty:.2f}" '
                f'x2="{margin + (i + 1) * bar_w:.2f}" y2="{ty:.2f}" '
                f'stroke="#333399" stroke-width="2"/>')
    parts.append(
        f'<line x1="{margin}" y1="{bot_y0}" x2="{margin + plot_w}" '
        f'y2="{bot_y0 - panel_h}" stroke="black" stroke-dasharray="4 3"/>')
    parts.append(
        f'<line x1="{margin}" y1="{bot_y0}" x2="{margin + plot_w}" '
        f'y2="{bot_y0}" stroke="black"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
