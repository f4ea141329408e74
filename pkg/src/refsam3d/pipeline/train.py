"""Training loop: AdamW over trainable parameters, linear LR decay, JSONL log, checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import EvaluationError, InputError, RefSAM3DError
from ..io import save_checkpoint
from ..numerics.tensor import no_grad
from .config import ModelConfig
from .data import VolumeSample, augment, sample_patches
from .loss import loss as seg_loss
from .optim import AdamW, linear_lr

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    dice: float

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "lr": self.lr, "loss": self.loss, "dice": self.dice})


@dataclass
class TrainingReport:
    records: list[EpochRecord] = field(default_factory=list)
    steps: int = 0
    step_losses: list[float] = field(default_factory=list)
    frozen_hash: str = ""
    checkpoints: list[Path] = field(default_factory=list)
    log_path: Path | None = None

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]


class FrozenParameterChanged(RefSAM3DError):
    pass


def frozen_hash(model) -> str:
    """SHA-256 over names, shapes and bytes of every frozen parameter."""
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        if p.frozen:
            h.update(name.encode())
            h.update(str(p.data.shape).encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def hard_dice(logits: np.ndarray, mask: np.ndarray) -> float:
    """Dice of the thresholded prediction (logit > 0); both empty counts as 1."""
    pred = logits > 0
    gt = mask > 0
    denom = pred.sum() + gt.sum()
    return 1.0 if denom == 0 else float(2.0 * (pred & gt).sum() / denom)


def _units(sample: VolumeSample, cfg: ModelConfig, rng: np.random.Generator) -> list[VolumeSample]:
    """Training units from one sample: the whole volume, or 1:1 patches when it is larger."""
    patch = tuple(cfg.encoder.volume_shape)
    if sample.mask.shape == patch:
        return [sample]
    return sample_patches(sample, patch, rng, cfg.train.patches_per_volume)


def _dump_batch(out_dir: Path | None, epoch: int, step: int, batch: Sequence[VolumeSample]) -> Path | None:
    if out_dir is None:
        return None
    path = out_dir / f"nonfinite_epoch{epoch}_step{step}.npz"
    np.savez(path, volume=np.stack([s.volume for s in batch]), mask=np.stack([s.mask for s in batch]),
             prompts=np.array([s.prompt for s in batch]))
    return path


def train(model, dataset: Sequence[VolumeSample], cfg: ModelConfig | None = None,
          out_dir: str | Path | None = None, max_steps: int | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainingReport:
    """Fit the trainable parameters of ``model`` on ``dataset``.

    Writes ``train_log.jsonl`` and a checkpoint every ``checkpoint_every``
    epochs (plus ``final.ckpt``) when ``out_dir`` is given. ``max_steps``
    stops early after that many optimizer steps.
    """
    cfg = cfg or model.cfg
    if len(dataset) == 0:
        raise InputError("training dataset is empty")
    tc = cfg.train
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = TrainingReport(frozen_hash=frozen_hash(model))
    log_file = None
    if out is not None:
        report.log_path = out / "train_log.jsonl"
        log_file = open(report.log_path, "w", encoding="utf-8")
    opt = AdamW(model.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2), eps=tc.adam_eps,
                weight_decay=tc.weight_decay)
    seeds = np.random.SeedSequence(tc.seed).spawn(2)
    order_rng = np.random.default_rng(seeds[0])
    aug_rng = np.random.default_rng(seeds[1])
    dtype = model.dtype
    try:
        for epoch in range(tc.epochs):
            lr = linear_lr(tc.lr, epoch, tc.epochs) if tc.schedule == "linear" else tc.lr
            opt.lr = lr
            units = []
            for i in order_rng.permutation(len(dataset)):
                s = dataset[int(i)]
                if tc.augment:
                    s = augment(s, aug_rng, tc.augment)
                units.extend(_units(s, cfg, aug_rng))
            losses, dices = [], []
            for start in range(0, len(units), tc.batch_size):
                batch = units[start:start + tc.batch_size]
                vol = np.stack([s.volume for s in batch]).astype(dtype)
                mask = np.stack([s.mask for s in batch])[:, None]
                opt.zero_grad()
                logits = model(vol, [s.prompt for s in batch])
                value = seg_loss(logits, mask)
                lv = float(value.item())
                if not np.isfinite(lv):
                    dump = _dump_batch(out, epoch, report.steps, batch)
                    raise EvaluationError(
                        f"non-finite loss {lv} at epoch {epoch}, step {report.steps}, prompts "
                        f"{[s.prompt for s in batch]}" + (f"; batch dumped to {dump}" if dump else "")
                    )
                value.backward()
                opt.step()
                report.steps += 1
                report.step_losses.append(lv)
                losses.append(lv)
                dices.extend(hard_dice(logits.data[b, 0], mask[b, 0]) for b in range(len(batch)))
                if max_steps is not None and report.steps >= max_steps:
                    break
            rec = EpochRecord(epoch, float(lr), float(np.mean(losses)), float(np.mean(dices)))
            report.records.append(rec)
            if log_file is not None:
                log_file.write(rec.to_json() + "\n")
                log_file.flush()
            log.info("epoch %d lr %.3g loss %.4f dice %.4f", epoch, lr, rec.loss, rec.dice)
            if on_epoch is not None:
                on_epoch(rec)
            stop = max_steps is not None and report.steps >= max_steps
            if (epoch + 1) % tc.checkpoint_every == 0 or epoch + 1 == tc.epochs or stop:
                _verify_frozen(model, report.frozen_hash, epoch)
                if out is not None and ((epoch + 1) % tc.checkpoint_every == 0):
                    path = out / f"epoch{epoch + 1:04d}.ckpt"
                    save_checkpoint(model, path)
                    report.checkpoints.append(path)
            if stop:
                break
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        path = out / "final.ckpt"
        save_checkpoint(model, path)
        report.checkpoints.append(path)
    return report


def _verify_frozen(model, expected: str, epoch: int) -> None:
    got = frozen_hash(model)
    if got != expected:
        raise FrozenParameterChanged(f"frozen parameters changed by epoch {epoch + 1}")


def predict(model, sample: VolumeSample, prompt: str | None = None) -> np.ndarray:
    """Binary mask (D, H, W) for one sample and prompt, without building a graph."""
    with no_grad():
        logits = model(sample.volume[None].astype(model.dtype), prompt or sample.prompt)
    return (logits.data[0, 0] > 0).astype(np.uint8)


def evaluate(model, samples: Sequence[VolumeSample]) -> dict:
    """Prompted-class Dice and, when other labeled shapes exist, best off-class Dice per sample."""
    prompted, off, wins = [], [], []
    for s in samples:
        pred = predict(model, s)
        d = hard_dice(pred.astype(float) - 0.5, s.mask)
        prompted.append(d)
        others = [m for k, m in s.meta.get("labels", {}).items() if k != s.target]
        if others:
            o = max(hard_dice(pred.astype(float) - 0.5, m) for m in others)
            off.append(o)
            wins.append(d > o)
    return {
        "dice": float(np.mean(prompted)),
        "per_sample": prompted,
        "off_class": off,
        "win_rate": float(np.mean(wins)) if wins else float("nan"),
    }
