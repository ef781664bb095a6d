"""Two-stage training driver: schedule expansion, mining boundary, tracing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import AugmentPolicy
from .color import LabStats
from .config import PipelineConfig
from .core import PatchRecord
from .errors import DataError, NumericalError
from .model import ScorerConfig, loss_and_grad, normalize_patches
from .model import init_params
from .optim import AdamState, adam_step, init_adam
from .sampler import PatchBanks, assemble_batch, register_bank, stage_plans

# callback(params, iteration) -> BG-Hard records mined with the boundary model
HnmCallback = Callable[[dict, int], list[PatchRecord]]


@dataclass
class TraceRow:
    iteration: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    params: dict
    opt: AdamState
    boundary_params: dict
    boundary_opt: AdamState
    trace: list[TraceRow] = field(default_factory=list)


def expand_schedule(config: PipelineConfig) -> np.ndarray:
    """Per-iteration learning rates from the phase schedule."""
    return np.concatenate([np.full(n, lr) for n, lr in config.lr_schedule])


def batch_to_arrays(records: list[PatchRecord], patch_size: int):
    if any(r.size != patch_size for r in records):
        raise DataError("batch contains patches of the wrong size")
    x = normalize_patches(np.stack([r.pixels for r in records]))
    y = np.array([1 if r.label == "mitosis" else 0 for r in records], dtype=np.int64)
    return x, y


def train(banks: PatchBanks, config: PipelineConfig, scorer: ScorerConfig,
          mode: str = "supervised",
          hnm_callback: HnmCallback | None = None,
          policy: AugmentPolicy | None = None,
          stats_pool: list[LabStats] | None = None,
          on_iteration: Callable[[TraceRow], None] | None = None) -> TrainResult:
    """Run the full two-stage schedule over the given banks.

    Stage 1 samples backgrounds from BG-Rand. At the boundary iteration the
    mining callback (if any) populates BG-Hard and a parameter snapshot is
    taken; stage 2 then samples backgrounds from BG-Hard. Deterministic for a
    fixed seed and fixed banks.
    """
    if scorer.patch_size != config.patch_size:
        raise DataError(f"scorer patch size {scorer.patch_size} != pipeline patch "
                        f"size {config.patch_size}")
    if not banks.fg_lab:
        raise DataError("fg_lab bank is empty")
    if not banks.bg_rand:
        raise DataError("bg_rand bank is empty")
    if policy is None:
        policy = AugmentPolicy(contrast_transfer_prob=config.contrast_transfer_prob)

    lrs = expand_schedule(config)
    plan1, plan2 = stage_plans(config, mode)
    boundary = config.hnm_iteration

    rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    params = init_params(scorer, seed=config.rng_seed)
    opt = init_adam(params)
    boundary_params: dict = {}
    boundary_opt = opt
    trace: list[TraceRow] = []

    for it in range(len(lrs)):
        if it == boundary:
            boundary_params = dict(params)
            boundary_opt = opt
            if hnm_callback is not None:
                register_bank(banks, hnm_callback(params, it))
        plan = plan1 if it < boundary else plan2
        records = assemble_batch(banks, plan, config, rng, policy, stats_pool)
        x, y = batch_to_arrays(records, config.patch_size)
        loss, grads, new_buffers = loss_and_grad(params, x, y, scorer)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at iteration {it}")
        params = {**params, **new_buffers}
        params, opt = adam_step(params, grads, opt, float(lrs[it]))
        row = TraceRow(it, float(lrs[it]), loss)
        trace.append(row)
        if on_iteration is not None:
            on_iteration(row)

    if not boundary_params:  # boundary at the very end of a degenerate schedule
        boundary_params = dict(params)
        boundary_opt = opt
    return TrainResult(params, opt, boundary_params, boundary_opt, trace)
