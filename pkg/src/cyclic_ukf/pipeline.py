"""Batch pipeline: masks or contours in, filtered contours/masks/metrics out.

Input layouts
-------------
Mask directory::

    seq/meta.json            {"heart_rate_bpm": .., "n_frames": .., "pixel_spacing_mm": ..}
    seq/frame_000.pgm ...
    seq/ref/frame_000.pgm    optional reference masks

Contour JSON file::

    {"meta": {...same keys...}, "frames": [{"index": 0, "points": [[x, y], ...]}, ...]}

``meta`` may also carry ``width``/``height`` (canvas size in pixels).

Outputs (all inside the output directory)::

    contours.json            filtered contours, same schema as the input JSON
    masks/frame_000.pgm ...  filtered contours rasterised
    trajectory.csv           per point and frame: measured and filtered x, y
    summary.json             gate decision and configuration
    metrics.csv              frame, dice, hausdorff_mm      (with a reference)
    reliability.csv          threshold, reliability          (with a reference)
"""

import csv
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import geometry, metrics, pgm
from .dynamics import NoiseParams, SequenceMeta
from .errors import CyclicUKFError, InputError, PGMFormatError
from .ukf import UTParams, filter_sequence

FRAME_RE = re.compile(r"^frame_(\d+)\.pgm$")
META_FIELDS = ("heart_rate_bpm", "n_frames", "pixel_spacing_mm")
GATE_MODES = ("always", "never", "dice_threshold")


# ---------------------------------------------------------------- config


@dataclass
class PipelineConfig:
    noise: NoiseParams = field(default_factory=NoiseParams)
    ut: UTParams = field(default_factory=UTParams)
    n_samples: int = geometry.DEFAULT_SAMPLES
    gate: str = "always"
    threshold: float = 0.9
    freeze_process_noise: bool = False
    backend: Optional[str] = None

    def __post_init__(self):
        if self.gate not in GATE_MODES:
            raise ValueError(f"gate must be one of {GATE_MODES}, got {self.gate!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.n_samples < 3:
            raise ValueError(f"samples must be >= 3, got {self.n_samples}")

    @classmethod
    def from_mapping(cls, values):
        """Build from flat keys (q1, q2, r, omega_var, alpha, beta, kappa,
        samples, gate, threshold, freeze_process_noise, backend)."""
        known = {
            "q1", "q2", "r", "omega_var", "alpha", "beta", "kappa",
            "samples", "gate", "threshold", "freeze_process_noise", "backend",
        }
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
        noise = NoiseParams(
            **{k: float(values[k]) for k in ("q1", "q2", "r", "omega_var") if k in values}
        )
        ut = UTParams(**{k: float(values[k]) for k in ("alpha", "beta", "kappa") if k in values})
        kwargs = {"noise": noise, "ut": ut}
        if "samples" in values:
            kwargs["n_samples"] = int(values["samples"])
        if "gate" in values:
            kwargs["gate"] = str(values["gate"])
        if "threshold" in values:
            kwargs["threshold"] = float(values["threshold"])
        if "freeze_process_noise" in values:
            kwargs["freeze_process_noise"] = bool(values["freeze_process_noise"])
        if "backend" in values:
            kwargs["backend"] = values["backend"]
        return cls(**kwargs)

    def to_dict(self):
        return {
            "q1": self.noise.q1,
            "q2": self.noise.q2,
            "r": self.noise.r,
            "omega_var": self.noise.omega_var,
            "alpha": self.ut.alpha,
            "beta": self.ut.beta,
            "kappa": self.ut.kappa,
            "samples": self.n_samples,
            "gate": self.gate,
            "threshold": self.threshold,
            "freeze_process_noise": self.freeze_process_noise,
        }


def load_config_file(path):
    """Flat ``key = value`` TOML file as a dict."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


# ---------------------------------------------------------------- quality gate


@dataclass
class GateDecision:
    apply_filter: bool
    reason: str
    frame_dice: Optional[list] = None


def gate_always(masks, reference):
    return GateDecision(True, "gate mode 'always'")


def gate_never(masks, reference):
    return GateDecision(False, "gate mode 'never'")


class DiceThresholdGate:
    """Filter the whole sequence if any frame's Dice against the reference
    falls below ``threshold``.

    Stands in for a learned per-frame quality classifier: any callable
    ``(masks, reference) -> GateDecision`` can replace it.
    """

    def __init__(self, threshold=0.9):
        self.threshold = threshold

    def __call__(self, masks, reference):
        if reference is None:
            raise InputError("gate mode 'dice_threshold' needs reference masks")
        values = [metrics.dice(m, r) for m, r in zip(masks, reference)]
        low = [k for k, v in enumerate(values) if v < self.threshold]
        if low:
            reason = f"{len(low)} frame(s) below Dice {self.threshold}: {low}"
        else:
            reason = f"all frames at or above Dice {self.threshold}"
        return GateDecision(bool(low), reason, values)


def make_gate(mode, threshold=0.9):
    if mode == "always":
        return gate_always
    if mode == "never":
        return gate_never
    if mode == "dice_threshold":
        return DiceThresholdGate(threshold)
    raise ValueError(f"unknown gate mode {mode!r}")


# ---------------------------------------------------------------- input


@dataclass
class SequenceInput:
    meta: SequenceMeta
    width: int
    height: int
    masks: Optional[list] = None  # boolean (H, W) arrays
    contours: Optional[list] = None  # (n, 2) arrays
    reference_masks: Optional[list] = None
    reference_contours: Optional[list] = None

    @property
    def n_frames(self):
        return len(self.masks) if self.masks is not None else len(self.contours)


def meta_from_dict(raw, where="meta"):
    missing = [f for f in META_FIELDS if f not in raw]
    if missing:
        raise InputError(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        return SequenceMeta(
            heart_rate=float(raw["heart_rate_bpm"]),
            n_frames=int(raw["n_frames"]),
            pixel_spacing=float(raw["pixel_spacing_mm"]),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from None


def meta_to_dict(meta, width=None, height=None):
    out = {
        "heart_rate_bpm": meta.heart_rate,
        "n_frames": meta.n_frames,
        "pixel_spacing_mm": meta.pixel_spacing,
    }
    if width is not None:
        out["width"] = int(width)
        out["height"] = int(height)
    return out


def frame_files(directory):
    """``[(index, path)]`` of ``frame_###.pgm`` files sorted by index."""
    found = []
    for name in os.listdir(directory):
        m = FRAME_RE.match(name)
        if m:
            found.append((int(m.group(1)), Path(directory) / name))
    return sorted(found)


def read_mask_dir(directory):
    frames = frame_files(directory)
    masks = []
    for index, path in frames:
        try:
            masks.append(pgm.read_mask(path))
        except (OSError, PGMFormatError) as exc:
            raise InputError(f"frame {index} ({path.name}): {exc}") from None
    return masks


def read_contour_json(path):
    """``(meta, frames, raw_meta)`` from a contour JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    meta = meta_from_dict(doc.get("meta", {}), f"{path}: meta")
    frames = sorted(doc.get("frames", []), key=lambda f: f["index"])
    contours = [np.asarray(f["points"], dtype=float).reshape(-1, 2) for f in frames]
    return meta, contours, doc["meta"]


def write_contour_json(path, meta, contours, width=None, height=None):
    doc = {
        "meta": meta_to_dict(meta, width, height),
        "frames": [
            {"index": k, "points": [[float(x), float(y)] for x, y in pts]}
            for k, pts in enumerate(contours)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def canvas_from_contours(contours, raw_meta):
    if "width" in raw_meta and "height" in raw_meta:
        return int(raw_meta["width"]), int(raw_meta["height"])
    top = np.max([c.max(axis=0) for c in contours], axis=0)
    return int(math.ceil(top[0])) + 2, int(math.ceil(top[1])) + 2


def load_reference(path, width, height):
    """Reference masks and full-resolution contours from a directory or JSON."""
    path = Path(path)
    if path.is_dir():
        masks = read_mask_dir(path)
        contours = []
        for k, m in enumerate(masks):
            try:
                contours.append(geometry.extract_boundary(m))
            except CyclicUKFError as exc:
                raise InputError(f"reference frame {k}: {exc}") from None
        return masks, contours
    _, contours, _ = read_contour_json(path)
    masks = [geometry.mask_from_contour(c, width, height) for c in contours]
    return masks, contours


def load_sequence(path, reference=None):
    """Read a mask directory or contour JSON into a :class:`SequenceInput`.

    ``reference`` defaults to ``<path>/ref`` for mask directories.
    """
    path = Path(path)
    if path.is_dir():
        meta_path = path / "meta.json"
        try:
            with open(meta_path) as fh:
                raw = json.load(fh)
        except (OSError, ValueError) as exc:
            raise InputError(f"{meta_path}: {exc}") from None
        meta = meta_from_dict(raw, str(meta_path))
        masks = read_mask_dir(path)
        if not masks:
            raise InputError(f"{path}: no frame_###.pgm files")
        height, width = masks[0].shape
        seq = SequenceInput(meta, width, height, masks=masks)
        if reference is None and (path / "ref").is_dir():
            reference = path / "ref"
    elif path.is_file():
        meta, contours, raw = read_contour_json(path)
        width, height = canvas_from_contours(contours, raw)
        seq = SequenceInput(meta, width, height, contours=contours)
    else:
        raise InputError(f"{path}: no such file or directory")
    if reference is not None:
        seq.reference_masks, seq.reference_contours = load_reference(
            reference, seq.width, seq.height
        )
    return seq


# ---------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    path: str
    issues: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.issues


def _check_meta(raw, where, issues):
    for name in META_FIELDS:
        if name not in raw:
            issues.append(f"{where}: missing field '{name}'")
    try:
        if "heart_rate_bpm" in raw and not float(raw["heart_rate_bpm"]) > 0:
            issues.append(f"{where}: 'heart_rate_bpm' must be > 0")
        if "pixel_spacing_mm" in raw and not float(raw["pixel_spacing_mm"]) > 0:
            issues.append(f"{where}: 'pixel_spacing_mm' must be > 0")
        if "n_frames" in raw:
            n = raw["n_frames"]
            if not isinstance(n, int) or isinstance(n, bool) or n < 2:
                issues.append(f"{where}: 'n_frames' must be an integer >= 2")
    except (TypeError, ValueError) as exc:
        issues.append(f"{where}: {exc}")


def _check_frames_dir(directory, label, issues, expected=None):
    frames = frame_files(directory)
    if not frames:
        issues.append(f"{label}: no frame_###.pgm files")
        return []
    indices = [i for i, _ in frames]
    if indices != list(range(indices[0], indices[0] + len(indices))):
        issues.append(f"{label}: frame indices are not consecutive: {indices}")
    dims = []
    for index, path in frames:
        try:
            with open(path, "rb") as fh:
                head = fh.read(512)
            width, height, _, offset = pgm.read_header(head)
            size = os.path.getsize(path)
            if size - offset < width * height:
                issues.append(f"{label} frame {index} ({path.name}): truncated pixel data")
            dims.append((index, (width, height)))
        except (OSError, PGMFormatError) as exc:
            issues.append(f"{label} frame {index} ({path.name}): {exc}")
    if dims:
        first = expected or dims[0][1]
        for index, wh in dims:
            if wh != first:
                issues.append(
                    f"{label} frame {index}: size {wh[0]}x{wh[1]} differs from {first[0]}x{first[1]}"
                )
    return dims


def validate_input(path):
    """Check an input sequence without modifying it; never raises."""
    path = Path(path)
    report = ValidationReport(str(path))
    issues = report.issues
    if path.is_dir():
        meta_path = path / "meta.json"
        raw = None
        try:
            with open(meta_path) as fh:
                raw = json.load(fh)
            if not isinstance(raw, dict):
                issues.append("meta.json: expected a JSON object")
                raw = None
        except FileNotFoundError:
            issues.append("meta.json: file missing")
        except (OSError, ValueError) as exc:
            issues.append(f"meta.json: {exc}")
        if raw is not None:
            _check_meta(raw, "meta.json", issues)
        dims = _check_frames_dir(path, "input", issues)
        n = len(frame_files(path))
        if 0 < n < 2:
            issues.append("input: need at least 2 frames")
        if raw is not None and isinstance(raw.get("n_frames"), int) and n and raw["n_frames"] != n:
            issues.append(f"meta.json: n_frames={raw['n_frames']} but {n} frame file(s) found")
        ref = path / "ref"
        if ref.is_dir():
            expected = dims[0][1] if dims else None
            _check_frames_dir(ref, "ref", issues, expected)
            n_ref = len(frame_files(ref))
            if n_ref != n:
                issues.append(f"ref: {n_ref} reference frame(s) for {n} input frame(s)")
    elif path.is_file():
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, ValueError) as exc:
            issues.append(f"{path.name}: {exc}")
            return report
        if not isinstance(doc, dict) or not isinstance(doc.get("meta"), dict):
            issues.append(f"{path.name}: missing 'meta' object")
        else:
            _check_meta(doc["meta"], "meta", issues)
        frames = doc.get("frames") if isinstance(doc, dict) else None
        if not isinstance(frames, list) or not frames:
            issues.append(f"{path.name}: missing or empty 'frames' list")
            return report
        last = None
        for pos, frame in enumerate(frames):
            index = frame.get("index") if isinstance(frame, dict) else None
            if not isinstance(index, int):
                issues.append(f"frame #{pos}: missing integer 'index'")
                continue
            if last is not None and index <= last:
                issues.append(f"frame {index}: index not increasing (after {last})")
            last = index
            pts = frame.get("points")
            try:
                arr = np.asarray(pts, dtype=float)
                if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
                    issues.append(f"frame {index}: 'points' must be >= 3 [x, y] pairs")
                elif not np.all(np.isfinite(arr)):
                    issues.append(f"frame {index}: non-finite coordinates")
            except (TypeError, ValueError):
                issues.append(f"frame {index}: 'points' must be >= 3 [x, y] pairs")
        if len(frames) < 2:
            issues.append(f"{path.name}: need at least 2 frames")
        meta = doc.get("meta") if isinstance(doc, dict) else None
        if isinstance(meta, dict) and isinstance(meta.get("n_frames"), int):
            if meta["n_frames"] != len(frames):
                issues.append(f"meta: n_frames={meta['n_frames']} but {len(frames)} frame(s) found")
    else:
        issues.append(f"{path}: no such file or directory")
    return report


# ---------------------------------------------------------------- run


@dataclass
class PipelineResult:
    measured: np.ndarray  # (N, K, 2) resampled input contours
    filtered: np.ndarray  # (N, K, 2) output contours
    decision: GateDecision
    masks: list
    dice: Optional[list] = None
    hausdorff_mm: Optional[list] = None


def sample_contours(seq, n_samples):
    """Resample every frame to ``n_samples`` points; ``(N, K, 2)``."""
    sampled = []
    for k in range(seq.n_frames):
        try:
            if seq.masks is not None:
                raw = geometry.extract_boundary(seq.masks[k])
            else:
                raw = seq.contours[k]
            sampled.append(geometry.resample_uniform(raw, n_samples).points)
        except CyclicUKFError as exc:
            raise InputError(f"frame {k}: {exc}") from None
    return np.stack(sampled, axis=1)


def process(seq, config=None, gate=None):
    """Run the pipeline in memory (no files written)."""
    config = config or PipelineConfig()
    if seq.n_frames != seq.meta.n_frames:
        raise InputError(f"meta n_frames={seq.meta.n_frames} but {seq.n_frames} frame(s) given")
    measured = sample_contours(seq, config.n_samples)
    gate = gate or make_gate(config.gate, config.threshold)
    input_masks = seq.masks
    if input_masks is None:
        input_masks = [geometry.mask_from_contour(c, seq.width, seq.height) for c in seq.contours]
    decision = gate(input_masks, seq.reference_masks)
    if decision.apply_filter:
        filtered = filter_sequence(
            measured,
            seq.meta,
            config.noise,
            config.ut,
            freeze_process_noise=config.freeze_process_noise,
            backend=config.backend,
        )
    else:
        filtered = measured.copy()
    masks = [
        geometry.mask_from_contour(filtered[:, k], seq.width, seq.height)
        for k in range(seq.n_frames)
    ]
    result = PipelineResult(measured, filtered, decision, masks)
    if seq.reference_masks is not None:
        if len(seq.reference_masks) != seq.n_frames:
            raise InputError(
                f"{len(seq.reference_masks)} reference frame(s) for {seq.n_frames} input frame(s)"
            )
        result.dice, result.hausdorff_mm = score_frames(
            [filtered[:, k] for k in range(seq.n_frames)],
            masks, seq.reference_masks, seq.reference_contours, seq.meta.pixel_spacing
        )
    return result


def score_frames(contours, masks, ref_masks, ref_contours, pixel_spacing):
    """Per-frame Dice (masks) and Hausdorff in mm (contour point sets)."""
    dice_values, hd_values = [], []
    for k, (mask, ref) in enumerate(zip(masks, ref_masks)):
        try:
            dice_values.append(metrics.dice(mask, ref))
            hd_values.append(metrics.hausdorff(contours[k], ref_contours[k], pixel_spacing))
        except CyclicUKFError as exc:
            raise InputError(f"metrics, frame {k}: {exc}") from None
    return dice_values, hd_values


def write_trajectory(path, measured, filtered):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point", "frame", "x_measured", "y_measured", "x_filtered", "y_filtered"])
        n_points, n_frames, _ = measured.shape
        for i in range(n_points):
            for k in range(n_frames):
                writer.writerow(
                    [i, k]
                    + [repr(float(v)) for v in measured[i, k]]
                    + [repr(float(v)) for v in filtered[i, k]]
                )


def write_metrics(output, dice_values, hd_values, thresholds=None):
    output = Path(output)
    metrics.write_frame_metrics(output / "metrics.csv", dice_values, hd_values)
    metrics.write_reliability(
        output / "reliability.csv", metrics.reliability_curve(dice_values, thresholds)
    )


def run_pipeline(seq, config, output):
    """Process ``seq`` and write every artifact under ``output``."""
    result = process(seq, config)
    output = Path(output)
    (output / "masks").mkdir(parents=True, exist_ok=True)
    n_frames = result.filtered.shape[1]
    write_contour_json(
        output / "contours.json",
        seq.meta,
        [result.filtered[:, k] for k in range(n_frames)],
        seq.width,
        seq.height,
    )
    for k, mask in enumerate(result.masks):
        pgm.write_mask(output / "masks" / f"frame_{k:03d}.pgm", mask)
    write_trajectory(output / "trajectory.csv", result.measured, result.filtered)
    summary = {
        "filtered": result.decision.apply_filter,
        "gate_reason": result.decision.reason,
        "gate_dice": result.decision.frame_dice,
        "n_points": int(result.filtered.shape[0]),
        "n_frames": int(n_frames),
        "config": config.to_dict(),
    }
    if result.dice is not None:
        write_metrics(output, result.dice, result.hausdorff_mm)
        summary["mean_dice"] = float(np.mean(result.dice))
        summary["mean_hausdorff_mm"] = float(np.mean(result.hausdorff_mm))
    with open(output / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return result


__all__ = [
    "PipelineConfig",
    "GateDecision",
    "DiceThresholdGate",
    "make_gate",
    "SequenceInput",
    "load_sequence",
    "validate_input",
    "process",
    "run_pipeline",
    "write_contour_json",
    "read_contour_json",
]
