"""Synthetic text-referred volumes, augmentation and foreground/background patch sampling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DimensionError, GenerationError, InputError

# Clean intensity of each shape class before offsets and noise.
SIGNATURES = {
    "sphere": 0.80,
    "cube": 0.50,
    "slab": 0.65,
    "cylinder": 0.35,
}
BACKGROUND = 0.15

AUGMENTATIONS = ("rotate90", "flip", "erase", "scale-intensity", "contrast", "brightness")


@dataclass
class VolumeSample:
    volume: np.ndarray  # (C_in, D, H, W), values in [0, 1]
    mask: np.ndarray  # (D, H, W) uint8 in {0, 1}
    prompt: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.volume.ndim != 4:
            raise DimensionError(f"volume must be (C, D, H, W), got {self.volume.shape}")
        if self.mask.shape != self.volume.shape[1:]:
            raise DimensionError(f"mask {self.mask.shape} does not match volume {self.volume.shape[1:]}")
        if not np.isin(self.mask, (0, 1)).all():
            raise InputError("mask must be binary")

    @property
    def target(self) -> str:
        return self.meta.get("target", "foreground")


@dataclass
class TaskSpec:
    classes: tuple[str, ...] = ("sphere", "cube")
    volume_shape: tuple[int, int, int] = (32, 32, 32)
    shapes_per_volume: tuple[int, int] = (2, 3)
    noise: float = 0.1
    fraction: tuple[float, float] = (0.01, 0.20)
    offset: float = 0.05
    jitter: float = 0.03
    template: str = "segment the {}"

    def __post_init__(self):
        unknown = [c for c in self.classes if c not in SIGNATURES]
        if len(self.classes) < 2:
            raise GenerationError("task needs at least two shape classes")
        if unknown:
            raise GenerationError(f"unknown shape classes {unknown}; known: {sorted(SIGNATURES)}")


def _rasterize(kind: str, shape, rng: np.random.Generator):
    """Return a boolean mask of one randomly sized and placed shape."""
    D, H, W = shape
    m = min(shape)
    zz, yy, xx = np.meshgrid(np.arange(D), np.arange(H), np.arange(W), indexing="ij")
    if kind == "sphere":
        r = rng.uniform(0.16, 0.22) * m
        c = [rng.uniform(r, n - 1 - r) for n in shape]
        return (zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2 <= r * r
    if kind in ("cube", "slab"):
        if kind == "cube":
            half = np.full(3, rng.uniform(0.13, 0.19) * m)
        else:
            half = np.full(3, rng.uniform(0.2, 0.25) * m)
            half[rng.integers(3)] = rng.uniform(0.045, 0.0625) * m
        c = [rng.uniform(h, n - 1 - h) for h, n in zip(half, shape)]
        return ((np.abs(zz - c[0]) <= half[0]) & (np.abs(yy - c[1]) <= half[1])
                & (np.abs(xx - c[2]) <= half[2]))
    if kind == "cylinder":
        r = rng.uniform(0.1, 0.14) * m
        hh = rng.uniform(0.15, 0.22) * m
        axis = int(rng.integers(3))
        ext = [r, r, r]
        ext[axis] = hh
        c = [rng.uniform(e, n - 1 - e) for e, n in zip(ext, shape)]
        grids = [zz - c[0], yy - c[1], xx - c[2]]
        along = grids.pop(axis)
        return (grids[0] ** 2 + grids[1] ** 2 <= r * r) & (np.abs(along) <= hh)
    raise GenerationError(f"unknown shape class {kind!r}")


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for axis in range(3):
        out |= np.roll(mask, 1, axis) | np.roll(mask, -1, axis)
    return out


def _layout(kinds, spec: TaskSpec, rng: np.random.Generator) -> dict[str, np.ndarray] | None:
    """Place each shape in turn, one voxel apart; None when a shape finds no room in 100 tries."""
    total = int(np.prod(spec.volume_shape))
    lo, hi = spec.fraction
    occupied = np.zeros(spec.volume_shape, dtype=bool)
    masks: dict[str, np.ndarray] = {}
    for kind in kinds:
        for _ in range(100):
            m = _rasterize(kind, spec.volume_shape, rng)
            if lo <= m.sum() / total <= hi and not (m & occupied).any():
                break
        else:
            return None
        masks[kind] = m
        occupied |= _dilate(m)
    return masks


def synth_sample(rng: np.random.Generator, spec: TaskSpec, layouts: int = 20) -> VolumeSample:
    n_shapes = int(rng.integers(spec.shapes_per_volume[0], spec.shapes_per_volume[1] + 1))
    n_shapes = min(n_shapes, len(spec.classes))
    kinds = [spec.classes[i] for i in rng.permutation(len(spec.classes))[:n_shapes]]
    for _ in range(layouts):
        masks = _layout(kinds, spec, rng)
        if masks is not None:
            break
    else:
        raise GenerationError(
            f"could not place {', '.join(kinds)} without overlap in {spec.volume_shape} after {layouts} layouts"
        )
    offset = rng.uniform(-spec.offset, spec.offset)
    vol = np.full(spec.volume_shape, BACKGROUND + offset)
    intensities = {}
    for kind, m in masks.items():
        value = SIGNATURES[kind] + offset + rng.uniform(-spec.jitter, spec.jitter)
        vol[m] = value
        intensities[kind] = value
    if spec.noise > 0:
        vol = vol + rng.normal(0.0, spec.noise, size=vol.shape)
    vol = np.clip(vol, 0.0, 1.0)
    target = kinds[int(rng.integers(len(kinds)))]
    return VolumeSample(
        volume=vol[None].astype(np.float32),
        mask=masks[target].astype(np.uint8),
        prompt=spec.template.format(target),
        meta={
            "target": target,
            "intensity": intensities[target],
            "labels": {k: v.astype(np.uint8) for k, v in masks.items()},
        },
    )


def synth_dataset(seed: int, n: int, task_spec: TaskSpec | None = None) -> list[VolumeSample]:
    """``n`` seeded samples, each with 2-3 shapes of distinct classes and a prompt for one of them."""
    spec = task_spec or TaskSpec()
    rng = np.random.default_rng(seed)
    return [synth_sample(rng, spec) for _ in range(n)]


# --------------------------------------------------------------------------- augmentation
def _geometric(arr: np.ndarray, op: tuple, spatial0: int) -> np.ndarray:
    kind, a, b = op
    if kind == "flip":
        return np.flip(arr, axis=spatial0 + a).copy()
    return np.rot90(arr, k=b, axes=(spatial0 + a[0], spatial0 + a[1])).copy()


def augment(sample: VolumeSample, rng: np.random.Generator, policy=("flip", "rotate90")) -> VolumeSample:
    """Random transforms; geometric ones hit volume, mask and label maps alike."""
    unknown = set(policy) - set(AUGMENTATIONS)
    if unknown:
        raise InputError(f"unknown augmentations {sorted(unknown)}")
    vol, mask = sample.volume, sample.mask
    labels = dict(sample.meta.get("labels", {}))
    ops = []
    if "flip" in policy:
        for axis in range(3):
            if rng.random() < 0.5:
                ops.append(("flip", axis, None))
    if "rotate90" in policy:
        square = [(i, j) for i, j in ((0, 1), (0, 2), (1, 2)) if mask.shape[i] == mask.shape[j]]
        if square:
            plane = square[int(rng.integers(len(square)))]
            k = int(rng.integers(4))
            if k:
                ops.append(("rot", plane, k))
    for op in ops:
        vol = _geometric(vol, op, 1)
        mask = _geometric(mask, op, 0)
        labels = {k: _geometric(v, op, 0) for k, v in labels.items()}
    vol = vol.copy() if vol is sample.volume else vol
    if "erase" in policy and rng.random() < 0.5:
        size = [max(1, int(n * rng.uniform(0.1, 0.25))) for n in mask.shape]
        start = [int(rng.integers(0, n - s + 1)) for n, s in zip(mask.shape, size)]
        sl = tuple(slice(s0, s0 + s) for s0, s in zip(start, size))
        vol[(slice(None), *sl)] = rng.uniform(0.0, 1.0)
    if "scale-intensity" in policy:
        vol = vol * rng.uniform(0.9, 1.1)
    if "contrast" in policy:
        mean = vol.mean()
        vol = (vol - mean) * rng.uniform(0.8, 1.2) + mean
    if "brightness" in policy:
        vol = vol + rng.uniform(-0.05, 0.05)
    if any(p in policy for p in ("scale-intensity", "contrast", "brightness")):
        vol = np.clip(vol, 0.0, 1.0)
    meta = dict(sample.meta)
    if labels:
        meta["labels"] = labels
    return replace(sample, volume=vol.astype(sample.volume.dtype), mask=mask, meta=meta)


def _apply(sample: VolumeSample, op: tuple) -> VolumeSample:
    labels = {k: _geometric(v, op, 0) for k, v in sample.meta.get("labels", {}).items()}
    meta = dict(sample.meta, labels=labels) if labels else dict(sample.meta)
    return replace(sample, volume=_geometric(sample.volume, op, 1), mask=_geometric(sample.mask, op, 0),
                   meta=meta)


def flip(sample: VolumeSample, axis: int) -> VolumeSample:
    return _apply(sample, ("flip", axis, None))


def rotate90(sample: VolumeSample, plane=(1, 2), k: int = 1) -> VolumeSample:
    """Rotate by k quarter turns in a plane of spatial axes (0 = depth)."""
    return _apply(sample, ("rot", plane, k))


# --------------------------------------------------------------------------- patch sampling
def _crop(sample: VolumeSample, start, dims) -> VolumeSample:
    sl = tuple(slice(s, s + d) for s, d in zip(start, dims))
    labels = {k: v[sl] for k, v in sample.meta.get("labels", {}).items()}
    meta = dict(sample.meta, origin=tuple(int(s) for s in start))
    if labels:
        meta["labels"] = labels
    return replace(sample, volume=sample.volume[(slice(None), *sl)], mask=sample.mask[sl], meta=meta)


def sample_patches(sample: VolumeSample, patch_dims, rng: np.random.Generator, n: int = 2) -> list[VolumeSample]:
    """``n`` patches alternating foreground-containing and background-only (1:1).

    Falls back, with a warning, to background-only patches when the mask is
    empty and to foreground patches when no background-only patch exists.
    """
    shape = sample.mask.shape
    patch_dims = tuple(int(p) for p in patch_dims)
    if any(p > s or p < 1 for p, s in zip(patch_dims, shape)):
        raise DimensionError(f"patch {patch_dims} does not fit volume {shape}")
    fg = np.argwhere(sample.mask > 0)
    span = [s - p + 1 for s, p in zip(shape, patch_dims)]

    # Integral volume for O(1) foreground counts per patch origin.
    integ = np.pad(sample.mask.astype(np.int64).cumsum(0).cumsum(1).cumsum(2), ((1, 0),) * 3)
    a, b, c = patch_dims
    counts = (integ[a:, b:, c:] - integ[:-a, b:, c:] - integ[a:, :-b, c:] - integ[a:, b:, :-c]
              + integ[:-a, :-b, c:] + integ[:-a, b:, :-c] + integ[a:, :-b, :-c] - integ[:-a, :-b, :-c])
    bg_origins = np.argwhere(counts[: span[0], : span[1], : span[2]] == 0)

    want_fg, want_bg = (n + 1) // 2, n // 2
    if len(fg) == 0:
        warnings.warn("mask is empty; sampling background patches only", RuntimeWarning, stacklevel=2)
        want_fg, want_bg = 0, n
    elif len(bg_origins) == 0:
        warnings.warn("no background-only patch exists; sampling foreground patches only",
                      RuntimeWarning, stacklevel=2)
        want_fg, want_bg = n, 0

    fg_patches, bg_patches = [], []
    for _ in range(want_fg):
        vox = fg[int(rng.integers(len(fg)))]
        start = [int(rng.integers(max(0, v - p + 1), min(v, s - p) + 1))
                 for v, p, s in zip(vox, patch_dims, shape)]
        fg_patches.append(_crop(sample, start, patch_dims))
    for _ in range(want_bg):
        if len(bg_origins):
            start = bg_origins[int(rng.integers(len(bg_origins)))]
        else:
            start = [int(rng.integers(s)) for s in span]
        bg_patches.append(_crop(sample, start, patch_dims))
    out = []
    while fg_patches or bg_patches:
        if fg_patches:
            out.append(fg_patches.pop(0))
        if bg_patches:
            out.append(bg_patches.pop(0))
    return out


def resample_isotropic(sample: VolumeSample, spacing=(1.0, 1.0, 1.0)) -> VolumeSample:
    """Hook for isotropic resampling; synthetic volumes are already isotropic."""
    return sample
