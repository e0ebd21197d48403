"""Constellation-image datasets: histogram rendering of IQ frames, global
normalization, balanced generation over the three schemes, and a
language-neutral on-disk format (JSON manifest + raw float32/uint8 blobs).
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import modem
from .seeding import TAG_FRAME, derive_seed

FORMAT_VERSION = 1
PIXEL_BLOB = "pixels.f32le"
LABEL_BLOB = "labels.u8"


class DatasetFormatError(ValueError):
    """On-disk dataset is corrupt, truncated, or of an unsupported version."""


@dataclass(frozen=True)
class ConstellationImage:
    pixels: np.ndarray  # [G, G] float32 in [0, 1]
    label: int
    gamma_data_db: float


@dataclass
class Dataset:
    pixels: np.ndarray  # [n, G, G] float32, image-major
    labels: np.ndarray  # [n] uint8
    class_names: tuple[str, ...]
    grid: int
    frames_per_class: int
    samples_per_frame: int
    gamma_data_db: float
    master_seed: int
    normalization: dict  # current global {"mean": ..., "variance": ...}

    def __len__(self) -> int:
        return self.pixels.shape[0]


def iq_histogram(frame: modem.IqFrame, grid: int, half_range: float) -> np.ndarray:
    """Raw 2-D bin counts of the frame's (I, Q) points.

    The image spans [-half_range, half_range] on both axes; out-of-range
    points land in the edge bins, so the counts always sum to N. Rows run
    top-down over Q (row 0 = most positive Q), columns left-right over I.
    """
    if grid < 8:
        raise ValueError("grid must be >= 8")
    if half_range <= 0:
        raise ValueError("half_range must be > 0")
    i = np.asarray(frame.i_samples)
    q = np.asarray(frame.q_samples)
    if i.size == 0:
        raise ValueError("empty frame")
    width = 2.0 * half_range
    col = np.clip(np.floor((i + half_range) / width * grid).astype(np.int64), 0, grid - 1)
    row = grid - 1 - np.clip(
        np.floor((q + half_range) / width * grid).astype(np.int64), 0, grid - 1
    )
    counts = np.zeros((grid, grid), dtype=np.int64)
    np.add.at(counts, (row, col), 1)
    return counts


def render_constellation(
    frame: modem.IqFrame, grid: int, half_range: float
) -> ConstellationImage:
    """Max-normalized constellation image of one frame (peak bin = 1.0)."""
    counts = iq_histogram(frame, grid, half_range)
    pixels = (counts / counts.max()).astype(np.float32)
    return ConstellationImage(pixels=pixels, label=frame.label, gamma_data_db=frame.gamma_data_db)


def _global_stats(pixels: np.ndarray) -> tuple[float, float]:
    flat = pixels.astype(np.float64, copy=False)
    return float(flat.mean()), float(flat.var())


def normalize_dataset(ds: Dataset, target_mean: float, target_var: float) -> Dataset:
    """Affinely rescale all pixels so the global mean/variance hit the targets."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    mean, var = _global_stats(ds.pixels)
    if var == 0.0:
        raise ValueError("dataset pixel variance is zero; cannot normalize")
    gain = np.sqrt(target_var / var)
    shifted = (ds.pixels.astype(np.float64) - mean) * gain + target_mean
    return dataclasses.replace(
        ds,
        pixels=shifted.astype(np.float32),
        normalization=_normalization_record(shifted.astype(np.float32)),
    )


def _normalization_record(pixels: np.ndarray) -> dict:
    mean, var = _global_stats(pixels)
    return {"mean": mean, "variance": var}


def build_dataset(
    modem_cfg: modem.ModemConfig,
    frames_per_class: int,
    grid: int,
    master_seed: int,
    half_range: float = 1.5,
) -> Dataset:
    """Balanced dataset over the three schemes.

    Each frame's seed is derived from (master_seed, class, frame_index), so
    generation can be split across workers without changing the result.
    """
    if frames_per_class < 1:
        raise ValueError("frames_per_class must be >= 1")
    images = []
    labels = []
    for cls, scheme in enumerate(modem.CLASS_NAMES):
        for idx in range(frames_per_class):
            cfg = dataclasses.replace(
                modem_cfg,
                scheme=scheme,
                seed=derive_seed(master_seed, TAG_FRAME, cls, idx),
            )
            frame = modem.generate_frame(cfg)
            images.append(render_constellation(frame, grid, half_range).pixels)
            labels.append(cls)
    pixels = np.stack(images)
    return Dataset(
        pixels=pixels,
        labels=np.asarray(labels, dtype=np.uint8),
        class_names=modem.CLASS_NAMES,
        grid=grid,
        frames_per_class=frames_per_class,
        samples_per_frame=modem_cfg.num_symbols,
        gamma_data_db=modem_cfg.gamma_data_db,
        master_seed=master_seed,
        normalization=_normalization_record(pixels),
    )


def save_dataset(ds: Dataset, path) -> None:
    """Write manifest.json plus raw pixel/label blobs into directory `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "class_names": list(ds.class_names),
        "G": ds.grid,
        "frames_per_class": ds.frames_per_class,
        "samples_per_frame": ds.samples_per_frame,
        "gamma_data_db": ds.gamma_data_db,
        "master_seed": ds.master_seed,
        "normalization": ds.normalization,
        "pixel_blob": PIXEL_BLOB,
        "label_blob": LABEL_BLOB,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (path / PIXEL_BLOB).write_bytes(ds.pixels.astype("<f4").tobytes(order="C"))
    (path / LABEL_BLOB).write_bytes(ds.labels.astype(np.uint8).tobytes(order="C"))


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise DatasetFormatError(f"no manifest.json under {path}") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format version: {manifest.get('version')!r}"
        )
    grid = int(manifest["G"])
    labels = np.frombuffer((path / manifest["label_blob"]).read_bytes(), dtype=np.uint8)
    n = labels.size
    pixel_bytes = (path / manifest["pixel_blob"]).read_bytes()
    expected = n * grid * grid * 4
    if len(pixel_bytes) != expected:
        raise DatasetFormatError(
            f"pixel blob holds {len(pixel_bytes)} bytes, manifest implies {expected}"
        )
    pixels = np.frombuffer(pixel_bytes, dtype="<f4").reshape(n, grid, grid)
    return Dataset(
        pixels=pixels.astype(np.float32),
        labels=labels.copy(),
        class_names=tuple(manifest["class_names"]),
        grid=grid,
        frames_per_class=int(manifest["frames_per_class"]),
        samples_per_frame=int(manifest["samples_per_frame"]),
        gamma_data_db=float(manifest["gamma_data_db"]),
        master_seed=int(manifest["master_seed"]),
        normalization=dict(manifest["normalization"]),
    )
