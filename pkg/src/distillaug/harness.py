"""Experiment harness: dataset file formats, teacher pretraining, the
magnitude sweep comparing plain augmentation against augmentation plus
distillation, and CSV/SVG emission.

Sweep cells are keyed by (magnitude, mode, seed). Both modes of a cell start
from the same seed-derived initialization, so per-seed comparisons are
paired. Output rows are sorted by key before emission, so the files do not
depend on execution order.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import smallnet, trainer
from .imageops import Image
from .policy import RandAugmentPolicy

__all__ = [
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "load_idx",
    "write_idx",
    "load_cifar_binary",
    "write_cifar_binary",
    "stratified_subset",
    "infer_class_count",
    "pretrain_teacher",
    "SweepConfig",
    "SweepRow",
    "SweepResult",
    "run_sweep",
    "render_csv",
    "render_gain_csv",
    "emit_plot",
    "MODE_RA",
    "MODE_RAKD",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MODE_RA = "RA"
MODE_RAKD = "RA+KD"
MODES = (MODE_RA, MODE_RAKD)

CIFAR_RECORD = 3073  # 1 label byte + 3 channel planes of 32*32


def load_idx(images_bytes: bytes, labels_bytes: bytes, split: str = "train") -> trainer.Dataset:
    """Parse the big-endian IDX pair (0x803 image file, 0x801 label file)
    into a Dataset of single-channel images."""
    if len(images_bytes) < 16:
        raise ValueError("truncated image file header")
    magic, count, rows, cols = struct.unpack(">IIII", images_bytes[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"bad image magic 0x{magic:08x}, want 0x{IDX_IMAGES_MAGIC:08x}")
    body = images_bytes[16:]
    if len(body) != count * rows * cols:
        raise ValueError(
            f"image payload holds {len(body)} bytes, want {count}x{rows}x{cols}"
        )
    if len(labels_bytes) < 8:
        raise ValueError("truncated label file header")
    lmagic, lcount = struct.unpack(">II", labels_bytes[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise ValueError(f"bad label magic 0x{lmagic:08x}, want 0x{IDX_LABELS_MAGIC:08x}")
    if lcount != count:
        raise ValueError(f"{count} images but {lcount} labels")
    labels = np.frombuffer(labels_bytes, dtype=np.uint8, offset=8)
    if labels.size != count:
        raise ValueError(f"label payload holds {labels.size} bytes, want {count}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols, 1)
    images = tuple(Image(pixels[i]) for i in range(count))
    return trainer.Dataset(images, labels.astype(np.int64), split)


def write_idx(data: trainer.Dataset) -> tuple[bytes, bytes]:
    """Serialize a single-channel Dataset back to (images_bytes, labels_bytes)."""
    if len(data) == 0:
        raise ValueError("refusing to write an empty dataset")
    h, w, c = data.images[0].pixels.shape
    if c != 1:
        raise ValueError("the IDX image format holds single-channel images")
    images_bytes = struct.pack(">IIII", IDX_IMAGES_MAGIC, len(data), h, w)
    images_bytes += b"".join(im.pixels.tobytes() for im in data.images)
    labels_bytes = struct.pack(">II", IDX_LABELS_MAGIC, len(data))
    labels_bytes += np.asarray(data.labels, dtype=np.uint8).tobytes()
    return images_bytes, labels_bytes


def load_cifar_binary(data: bytes, split: str = "train") -> trainer.Dataset:
    """Parse concatenated 3073-byte records (label byte, then 32x32 planes of
    R, G, B) into 32x32x3 interleaved images."""
    if len(data) % CIFAR_RECORD != 0:
        raise ValueError(f"{len(data)} bytes is not a multiple of {CIFAR_RECORD}")
    n = len(data) // CIFAR_RECORD
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if n and labels.max() >= 10:
        raise ValueError(f"label {labels.max()} out of range for 10 classes")
    planes = raw[:, 1:].reshape(n, 3, 32, 32)
    pixels = planes.transpose(0, 2, 3, 1)
    images = tuple(Image(pixels[i]) for i in range(n))
    return trainer.Dataset(images, labels, split)


def write_cifar_binary(data: trainer.Dataset) -> bytes:
    """Inverse of load_cifar_binary for 32x32x3 datasets."""
    out = bytearray()
    for im, label in zip(data.images, data.labels):
        if im.pixels.shape != (32, 32, 3):
            raise ValueError(f"records hold 32x32x3 images, got {im.pixels.shape}")
        out.append(int(label))
        out += im.pixels.transpose(2, 0, 1).tobytes()
    return bytes(out)


def infer_class_count(*datasets: trainer.Dataset) -> int:
    labels = [d.labels for d in datasets if len(d)]
    if not labels:
        raise ValueError("no labels to infer a class count from")
    return int(max(arr.max() for arr in labels)) + 1


def stratified_subset(data: trainer.Dataset, size: int | None, seed: int) -> trainer.Dataset:
    """Deterministic class-proportional subsample of ``size`` elements.
    Remainders go to the classes with the largest fractional quota (ties to
    the lower class index). Returns ``data`` unchanged when size is None or
    not smaller than the dataset."""
    if size is None or size >= len(data):
        return data
    if size < 1:
        raise ValueError(f"subset size must be >= 1, got {size}")
    rng = np.random.default_rng([seed, len(data)])
    classes = np.unique(data.labels)
    exact = {c: size * np.sum(data.labels == c) / len(data) for c in classes}
    quota = {c: int(exact[c]) for c in classes}
    short = size - sum(quota.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - quota[c]), c))[:short]:
        quota[c] += 1
    chosen = []
    for c in classes:
        idx = np.flatnonzero(data.labels == c)
        chosen.extend(idx[rng.permutation(idx.size)[: quota[c]]])
    return data.subset(np.sort(np.asarray(chosen)))


def pretrain_teacher(
    data: trainer.Dataset,
    test: trainer.Dataset,
    cfg: trainer.TrainConfig,
    out_path: str | Path,
    class_count: int | None = None,
    log=None,
) -> tuple[smallnet.ModelParams, trainer.TrainHistory]:
    """Train a model from scratch (no teacher above it) and write its params
    file. ``cfg.kd.lam`` must be 0."""
    if cfg.kd.lam != 0:
        raise ValueError("teacher pretraining must run without a teacher; set kd lam to 0")
    if class_count is None:
        class_count = infer_class_count(data, test)
    shape = data.images[0].pixels.shape
    init = smallnet.init_params(cfg.seed, shape, class_count)
    params, history = trainer.train(None, init, data, test, cfg)
    Path(out_path).write_bytes(smallnet.save_params(params))
    if log is not None:
        log(f"teacher: {len(data)} samples, {cfg.epochs} epochs, "
            f"final test error {history.records[-1].test_error:.4f} -> {out_path}")
    return params, history


@dataclass(frozen=True)
class SweepConfig:
    """Grid definition for the magnitude sweep. ``base`` supplies everything
    except magnitude, seed, and the per-mode KD switch."""

    magnitudes: tuple[int, ...]
    modes: tuple[str, ...]
    seeds: tuple[int, ...]
    base: trainer.TrainConfig
    teacher_path: str | Path | None = None
    subset_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "magnitudes", tuple(self.magnitudes))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.magnitudes:
            raise ValueError("magnitudes must be non-empty")
        for mode in self.modes:
            if mode not in MODES:
                raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
        if not self.modes:
            raise ValueError("modes must be non-empty")
        pol = self.base.policy
        if not isinstance(pol, RandAugmentPolicy):
            raise ValueError("the sweep varies a shared magnitude; base policy must be randaugment")
        for m in self.magnitudes:
            if not 0 <= m <= pol.space.max_level:
                raise ValueError(
                    f"magnitude {m} out of range 0..{pol.space.max_level} for {pol.space.value}"
                )


@dataclass(frozen=True)
class SweepRow:
    magnitude: int
    mode: str
    seed: int
    final_error: float
    mean_final_loss: float
    wall_seconds: float


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def mean_error(self, mode: str, magnitude: int) -> float:
        vals = [r.final_error for r in self.rows if r.mode == mode and r.magnitude == magnitude]
        if not vals:
            raise KeyError(f"no rows for ({mode}, M={magnitude})")
        return float(np.mean(vals))

    def gain_table(self) -> list[tuple[int, float, float, float]]:
        """Per magnitude: (M, mean RA error, mean RA+KD error, gain). Only
        defined when both modes are present."""
        mags = sorted({r.magnitude for r in self.rows})
        table = []
        for m in mags:
            ra = self.mean_error(MODE_RA, m)
            kd = self.mean_error(MODE_RAKD, m)
            table.append((m, ra, kd, ra - kd))
        return table


def run_sweep(
    cfg: SweepConfig,
    data: trainer.Dataset,
    test: trainer.Dataset,
    csv_path: str | Path | None = None,
    plot_path: str | Path | None = None,
    clock=None,
    progress=None,
) -> SweepResult:
    """Train every (magnitude, mode, seed) cell and return the result table.

    When ``csv_path`` is given the per-cell CSV is written there, and, if
    both modes ran, a companion ``<stem>_gain.csv`` with per-magnitude mean
    errors and gains. ``clock`` defaults to time.perf_counter and exists so
    callers needing byte-stable output can inject a fixed clock (wall time is
    the one non-deterministic column)."""
    if clock is None:
        clock = time.perf_counter
    teacher = None
    if MODE_RAKD in cfg.modes:
        if cfg.teacher_path is None:
            raise ValueError("RA+KD mode needs teacher_path")
        teacher = smallnet.load_params(Path(cfg.teacher_path).read_bytes())
    train_data = stratified_subset(data, cfg.subset_size, cfg.base.seed)
    class_count = infer_class_count(train_data, test)
    shape = train_data.images[0].pixels.shape

    rows = []
    for magnitude in cfg.magnitudes:
        for mode in cfg.modes:
            for seed in cfg.seeds:
                run_cfg = replace(
                    cfg.base,
                    seed=seed,
                    policy=replace(cfg.base.policy, m=magnitude),
                    kd=cfg.base.kd if mode == MODE_RAKD else replace(cfg.base.kd, lam=0.0),
                )
                init = smallnet.init_params(seed, shape, class_count)
                cell_teacher = teacher if mode == MODE_RAKD else None
                t0 = clock()
                _, history = trainer.train(cell_teacher, init, train_data, test, run_cfg)
                final = history.records[-1]
                rows.append(
                    SweepRow(magnitude, mode, seed, final.test_error,
                             final.mean_loss, clock() - t0)
                )
                if progress is not None:
                    progress(f"M={magnitude} {mode} seed={seed}: "
                             f"error {final.test_error:.4f} loss {final.mean_loss:.4f}")
    rows.sort(key=lambda r: (r.magnitude, r.mode, r.seed))
    result = SweepResult(rows)
    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.write_text(render_csv(result))
        if set(cfg.modes) == set(MODES):
            gain_path = csv_path.with_name(csv_path.stem + "_gain.csv")
            gain_path.write_text(render_gain_csv(result))
    if plot_path is not None:
        emit_plot(result, plot_path)
    return result


def render_csv(result: SweepResult) -> str:
    lines = ["magnitude,mode,seed,final_error,mean_final_loss,wall_seconds"]
    for r in result.rows:
        lines.append(
            f"{r.magnitude},{r.mode},{r.seed},"
            f"{r.final_error:.6f},{r.mean_final_loss:.6f},{r.wall_seconds:.6f}"
        )
    return "\n".join(lines) + "\n"


def render_gain_csv(result: SweepResult) -> str:
    lines = ["magnitude,mean_error_ra,mean_error_rakd,gain"]
    for m, ra, kd, gain in result.gain_table():
        lines.append(f"{m},{ra:.6f},{kd:.6f},{gain:.6f}")
    return "\n".join(lines) + "\n"


# fixed geometry for the sweep plot
_W, _H = 640, 440
_L, _R, _T, _B = 70, 600, 40, 380
_COLORS = {MODE_RA: "#1f77b4", MODE_RAKD: "#d62728"}


def emit_plot(result: SweepResult, path: str | Path) -> None:
    """Write an SVG of test error vs. magnitude: one polyline per mode (mean
    over seeds) with min/max whiskers per point. Each polyline carries its
    series in data-means for machine checking."""
    if not result.rows:
        raise ValueError("empty sweep result")
    mags = sorted({r.magnitude for r in result.rows})
    modes = sorted({r.mode for r in result.rows})
    ymax = max(r.final_error for r in result.rows) * 1.05
    if ymax <= 0:
        ymax = 1.0

    def sx(m):
        if len(mags) == 1:
            return (_L + _R) / 2
        return _L + (_R - _L) * (m - mags[0]) / (mags[-1] - mags[0])

    def sy(e):
        return _B - (_B - _T) * (e / ymax)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<line x1="{_L}" y1="{_B}" x2="{_R}" y2="{_B}" stroke="black"/>',
        f'<line x1="{_L}" y1="{_T}" x2="{_L}" y2="{_B}" stroke="black"/>',
        f'<text x="{(_L + _R) / 2:.1f}" y="{_B + 34}" text-anchor="middle">distortion magnitude</text>',
        f'<text x="18" y="{(_T + _B) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(_T + _B) / 2:.1f})">test error</text>',
    ]
    for m in mags:
        parts.append(
            f'<text x="{sx(m):.1f}" y="{_B + 16}" text-anchor="middle">{m}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{_L - 6}" y="{sy(ymax * frac) + 4:.1f}" text-anchor="end">'
            f"{ymax * frac:.3f}</text>"
        )
    for li, mode in enumerate(modes):
        color = _COLORS.get(mode, "#555555")
        means, points = [], []
        for m in mags:
            vals = [r.final_error for r in result.rows if r.mode == mode and r.magnitude == m]
            if not vals:
                continue
            mean = float(np.mean(vals))
            means.append(f"{m}:{mean:.6f}")
            points.append(f"{sx(m):.1f},{sy(mean):.1f}")
            parts.append(
                f'<line x1="{sx(m):.1f}" y1="{sy(min(vals)):.1f}" '
                f'x2="{sx(m):.1f}" y2="{sy(max(vals)):.1f}" '
                f'stroke="{color}" stroke-width="1" opacity="0.6"/>'
            )
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" '
            f'data-mode="{mode}" data-means="{";".join(means)}" '
            f'points="{" ".join(points)}"/>'
        )
        parts.append(
            f'<text x="{_R - 120}" y="{_T + 16 + 18 * li}" fill="{color}">{mode}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
