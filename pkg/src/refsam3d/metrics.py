"""Overlap and surface-distance metrics for binary 3D masks.

Distances are Euclidean in physical units (voxel index times spacing).
Surfaces use 6-connectivity: a foreground voxel is on the surface when any
face neighbour is background, and voxels outside the grid count as background.
Nearest-surface distances come from an exact Euclidean distance transform;
``tests`` pin this path to an all-pairs oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError, UndefinedMetricError

_FACES = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray  # bool (D, H, W)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 3:
            raise InputError(f"mask must be 3D, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise InputError("mask values must be 0 or 1")
            arr = arr.astype(bool)
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise InputError(f"spacing must be three positive reals, got {self.spacing}")
        object.__setattr__(self, "bits", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.bits.shape  # type: ignore[return-value]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def coords(self) -> np.ndarray:
        """(N, 3) integer voxel indices in row-major order."""
        return np.argwhere(self.bits)


def as_mask(m, spacing=(1.0, 1.0, 1.0)) -> BinaryMask:
    return m if isinstance(m, BinaryMask) else BinaryMask(np.asarray(m), spacing)


def _pair(pred, gt, need_spacing: bool = True) -> tuple[BinaryMask, BinaryMask]:
    p, g = as_mask(pred), as_mask(gt)
    if p.dims != g.dims:
        raise InputError(f"mask dims differ: {p.dims} vs {g.dims}")
    if need_spacing and p.spacing != g.spacing:
        raise InputError(f"mask spacing differs: {p.spacing} vs {g.spacing}")
    return p, g


def dice(pred, gt) -> float:
    """2|P and G| / (|P| + |G|); two empty masks score 1."""
    p, g = _pair(pred, gt, need_spacing=False)
    denom = p.count + g.count
    if denom == 0:
        return 1.0
    return 2.0 * int((p.bits & g.bits).sum()) / denom


def surface_voxels(mask) -> BinaryMask:
    m = as_mask(mask)
    interior = ndimage.binary_erosion(m.bits, structure=_FACES, border_value=0)
    return BinaryMask(m.bits & ~interior, m.spacing)


def _distances_to(src: BinaryMask, dst: BinaryMask) -> np.ndarray:
    """Distance from each ``src`` voxel (row-major order) to the nearest ``dst`` voxel."""
    edt = ndimage.distance_transform_edt(~dst.bits, sampling=dst.spacing)
    return edt[src.bits]


def surface_distances(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Directed nearest-surface distances pred->gt and gt->pred."""
    p, g = _pair(pred, gt)
    sp, sg = surface_voxels(p), surface_voxels(g)
    if sp.count == 0 or sg.count == 0:
        return np.full(sp.count, np.inf), np.full(sg.count, np.inf)
    return _distances_to(sp, sg), _distances_to(sg, sp)


def nsd(pred, gt, tau: float = 1.0) -> float:
    """Share of both surfaces lying within ``tau`` of the other surface.

    Pooled over the two surfaces: (#pred-surface within tau + #gt-surface
    within tau) / (|pred surface| + |gt surface|). Two empty masks score 1;
    exactly one empty mask scores 0.
    """
    if not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    d_pg, d_gp = surface_distances(pred, gt)
    total = d_pg.size + d_gp.size
    if total == 0:
        return 1.0
    return float(((d_pg <= tau).sum() + (d_gp <= tau).sum()) / total)


def hausdorff(pred, gt, percentile: float = 100.0) -> float:
    """max of the two directed surface-distance percentiles (100 = classic Hausdorff)."""
    if not 0 < percentile <= 100:
        raise InputError(f"percentile must be in (0, 100], got {percentile}")
    p, g = _pair(pred, gt)
    if p.count == 0 or g.count == 0:
        raise UndefinedMetricError("Hausdorff distance is undefined when a mask is empty")
    d_pg, d_gp = surface_distances(p, g)
    return float(max(np.percentile(d_pg, percentile), np.percentile(d_gp, percentile)))


@dataclass
class MetricRow:
    case_id: str
    cls: str
    dice: float
    nsd: float
    hd: float
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        hd = None if math.isnan(self.hd) else self.hd
        return {"case_id": self.case_id, "class": self.cls, "dice": self.dice, "nsd": self.nsd,
                "hd": hd, "flags": list(self.flags)}


def evaluate_case(case_id: str, cls: str, pred, gt, tau: float = 1.0, percentile: float = 100.0) -> MetricRow:
    """All metrics for one case; an undefined Hausdorff becomes NaN with a flag instead of an error."""
    p, g = _pair(pred, gt)
    flags = []
    if p.count == 0:
        flags.append("empty-pred")
    if g.count == 0:
        flags.append("empty-gt")
    try:
        hd = hausdorff(p, g, percentile)
    except UndefinedMetricError:
        hd = float("nan")
        flags.append("hd-undefined")
    return MetricRow(case_id, cls, dice(p, g), nsd(p, g, tau), hd, flags)


def format_table(rows: list[MetricRow]) -> str:
    head = f"{'case_id':<16} {'class':<10} {'dice':>7} {'nsd':>7} {'hd':>8}  flags"
    lines = [head, "-" * len(head)]
    for r in rows:
        hd = "nan" if math.isnan(r.hd) else f"{r.hd:.3f}"
        lines.append(f"{r.case_id:<16} {r.cls:<10} {r.dice:7.4f} {r.nsd:7.4f} {hd:>8}  {','.join(r.flags)}")
    if rows:
        finite = [r.hd for r in rows if not math.isnan(r.hd)]
        mean_hd = f"{np.mean(finite):.3f}" if finite else "nan"
        lines.append("-" * len(head))
        lines.append(f"{'mean':<16} {'':<10} {np.mean([r.dice for r in rows]):7.4f} "
                     f"{np.mean([r.nsd for r in rows]):7.4f} {mean_hd:>8}")
    return "\n".join(lines)
