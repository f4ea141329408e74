"""Component and stage ablations on the synthetic referring task.

Every variant sees the same data and the same list of training seeds; only
the named switches differ. Scores are averaged over the seeds because single
runs of near-equivalent variants differ by seed noise alone.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .data import TaskSpec, synth_dataset
from .model import build_model
from .train import evaluate, train

log = logging.getLogger(__name__)

ABLATION_SEEDS = (0, 1, 2)


def ablation_config() -> ModelConfig:
    """Default desk model on 16^3 volumes (a 4^3 token grid); about 2 CPU-minutes per run."""
    cfg = ModelConfig()
    cfg.encoder.patch_k = cfg.encoder.depth_patch = 4
    cfg.encoder.volume_shape = (16, 16, 16)
    cfg.train.lr = 1e-3
    cfg.train.epochs = 6
    cfg.data.n_train = 200
    cfg.data.n_val = 100
    return cfg


def component_variants(num_stages: int) -> dict[str, dict]:
    return {
        "full": {},
        "no-projector": {"use_projector": False},
        "no-hierarchical-fusion": {"stages": (num_stages,)},
        "no-text-prompt": {"use_text": False},
    }


def stage_variants(num_stages: int) -> dict[str, dict]:
    out = {"all-stages": {}}
    out.update({f"stage-{i}": {"stages": (i,)} for i in range(1, num_stages + 1)})
    return out


@dataclass
class AblationResult:
    name: str
    dice: float  # mean over seeds
    win_rate: float
    final_loss: float
    per_seed: list[float] = field(default_factory=list)


def variant_config(base: ModelConfig, prompt_overrides: dict) -> ModelConfig:
    cfg = copy.deepcopy(base)
    for key, value in prompt_overrides.items():
        setattr(cfg.prompt, key, value)
    cfg.validate()
    return cfg


def make_task(cfg: ModelConfig, n_val: int | None = None):
    """Training set from ``data.seed``, held-out set from ``data.seed + 1``."""
    spec = TaskSpec(classes=cfg.data.classes, volume_shape=tuple(cfg.encoder.volume_shape), noise=cfg.data.noise)
    train_set = synth_dataset(cfg.data.seed, cfg.data.n_train, spec)
    val_set = synth_dataset(cfg.data.seed + 1, n_val or cfg.data.n_val, spec)
    return train_set, val_set


def run_variants(base: ModelConfig, variants: dict[str, dict], train_set=None, val_set=None,
                 seeds=ABLATION_SEEDS, cache: dict | None = None) -> dict[str, AblationResult]:
    """Train and score each variant; ``cache`` reuses runs whose overrides were already trained."""
    if train_set is None:
        train_set, val_set = make_task(base)
    results = {}
    for name, overrides in variants.items():
        key = repr(sorted(overrides.items()))
        if cache is not None and key in cache:
            hit = cache[key]
            results[name] = AblationResult(name, hit.dice, hit.win_rate, hit.final_loss, hit.per_seed)
            continue
        dices, wins, losses = [], [], []
        for seed in seeds:
            cfg = variant_config(base, overrides)
            cfg.train.seed = seed
            model = build_model(cfg, np.dtype(cfg.train.dtype))
            report = train(model, train_set, cfg)
            ev = evaluate(model, val_set)
            dices.append(ev["dice"])
            wins.append(ev["win_rate"])
            losses.append(report.records[-1].loss)
            log.info("%s seed %d: dice %.4f win %.3f", name, seed, ev["dice"], ev["win_rate"])
        results[name] = AblationResult(name, float(np.mean(dices)), float(np.mean(wins)),
                                       float(np.mean(losses)), dices)
        if cache is not None:
            cache[key] = results[name]
    return results


def _gaps(res: dict[str, AblationResult], pairs) -> tuple[bool, str]:
    parts, ok = [], True
    for hi, lo in pairs:
        gap = res[hi].dice - res[lo].dice
        ok &= gap > 0
        parts.append(f"{hi} {res[hi].dice:.4f} - {lo} {res[lo].dice:.4f} = {gap:+.4f}")
    return bool(ok), "; ".join(parts)


def check_component_ordering(res: dict[str, AblationResult]) -> tuple[bool, str]:
    """full > no-projector > no-hierarchical-fusion and full > no-text-prompt, by mean Dice."""
    return _gaps(res, [("full", "no-projector"), ("no-projector", "no-hierarchical-fusion"),
                       ("full", "no-text-prompt")])


def check_stage_ordering(res: dict[str, AblationResult]) -> tuple[bool, str]:
    """all-stages >= every single-stage variant, by mean Dice."""
    singles = [k for k in res if k.startswith("stage-")]
    parts = [f"all-stages {res['all-stages'].dice:.4f}"]
    parts += [f"{k} {res[k].dice:.4f}" for k in singles]
    ok = all(res["all-stages"].dice >= res[k].dice for k in singles)
    return ok, ", ".join(parts)
