"""Gradual block pruning driver and competitor baselines.

Blocks are replaced back to front (highest index first) by lightweight
grouped-convolution blocks. Each stage initializes every untouched layer
from the previous stage's final parameters, gives the fresh LWC a standard
fan-in-scaled random init, and retrains the binarized model under the
combined cross-entropy + distillation loss against the frozen original
(unprunned) teacher. Competitors: the same final topology trained in one
shot without distillation, and trained from scratch with the two-stage
protocol and cross-entropy only.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import dataio, topology
from .layers import Model
from .train import (LossConfig, TrainConfig, TrainState, evaluate,
                    train_model, pretrain_then_binarize)


class StageError(RuntimeError):
    """A pruning stage failed; carries the stage index."""

    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class PruneStage:
    stage: int                          # block index replaced at this stage
    config: topology.NetConfig
    snapshot: dict[str, np.ndarray]     # final parameters + buffers
    metrics: dict[str, float] = field(default_factory=dict)


def _transfer_params(dst: Model, src_snapshot: dict[str, np.ndarray]) -> None:
    """Copy every parameter/buffer whose name and shape match; layers
    introduced by the replacement keep their fresh initialization."""
    params = {k: v for k, v in src_snapshot.items() if not k.startswith("buf.")}
    buffers = {k[4:]: v for k, v in src_snapshot.items()
               if k.startswith("buf.")}
    for layer in dst.layers:
        for k in layer.params:
            key = f"{layer.name}.{k}"
            if key in params and params[key].shape == layer.params[k].shape:
                np.copyto(layer.params[k], params[key])
        for k in layer.buffers:
            key = f"{layer.name}.{k}"
            if key in buffers and buffers[key].shape == layer.buffers[k].shape:
                np.copyto(layer.buffers[k], buffers[key])


def measure_model(model: Model, cfg: topology.NetConfig,
                  dataset: dataio.Dataset) -> dict[str, float]:
    test = dataset.subset("test")
    acc = evaluate(model, test.normalize(), test.labels, "binary")
    return {
        "accuracy": acc,
        "size_bits": float(topology.count_model_size(cfg).total_bits),
        "bops": float(topology.count_bops(cfg)),
    }


def prune_gradual(teacher: Model, dataset: dataio.Dataset, p_b: int,
                  groups: dict[int, int], loss_cfg: LossConfig,
                  stage_cfg: TrainConfig, seed: int = 0,
                  resume_from: PruneStage | None = None,
                  max_stages: int | None = None) -> list[PruneStage]:
    """Algorithm: for b = N_b down to p_b, replace block b with an LWC and
    retrain to the stage budget under (1-lambda)*CE + lambda*KD against the
    frozen teacher. Returns one PruneStage per replacement performed.

    resume_from continues after a previously completed stage; max_stages
    caps how many replacements run in this call (for interruptible runs).
    """
    n_b = len(teacher.cfg.blocks)
    if not 1 <= p_b <= n_b:
        raise ValueError(f"p_b={p_b} outside [1, {n_b}]")
    if resume_from is not None:
        cfg = resume_from.config
        prev_snapshot = resume_from.snapshot
        start_b = resume_from.stage - 1
    else:
        cfg = teacher.cfg
        prev_snapshot = teacher.snapshot()
        start_b = n_b
    stages: list[PruneStage] = []
    todo = list(range(start_b, p_b - 1, -1))
    if max_stages is not None:
        todo = todo[:max_stages]
    for b in todo:
        try:
            cfg = topology.replace_block(cfg, b, groups.get(b, 1))
            student = Model(cfg, seed=seed + b)
            _transfer_params(student, prev_snapshot)
            train_model(student, dataset, stage_cfg, mode="binary",
                        loss_cfg=loss_cfg, teacher=teacher)
        except (topology.TopologyError, RuntimeError) as e:
            raise StageError(b, str(e)) from e
        prev_snapshot = student.snapshot()
        stages.append(PruneStage(b, cfg, prev_snapshot,
                                 measure_model(student, cfg, dataset)))
    return stages


def prune_oneshot_depth(teacher: Model, dataset: dataio.Dataset, p_b: int,
                        groups: dict[int, int], stage_cfg: TrainConfig,
                        seed: int = 0) -> PruneStage:
    """Competitor: all targeted blocks replaced at once, retrained with
    cross-entropy only (lambda forced to 0)."""
    n_b = len(teacher.cfg.blocks)
    cfg = teacher.cfg
    for b in range(n_b, p_b - 1, -1):
        cfg = topology.replace_block(cfg, b, groups.get(b, 1))
    student = Model(cfg, seed=seed)
    _transfer_params(student, teacher.snapshot())
    train_model(student, dataset, stage_cfg, mode="binary",
                loss_cfg=LossConfig(lam=0.0, classes=cfg.classes))
    return PruneStage(p_b, cfg, student.snapshot(),
                      measure_model(student, cfg, dataset))


def train_from_scratch(pruned_cfg: topology.NetConfig,
                       dataset: dataio.Dataset, pretrain_cfg: TrainConfig,
                       binary_cfg: TrainConfig, seed: int = 0) -> PruneStage:
    """Competitor: the pruned topology trained from random init with the
    standard two-stage protocol and cross-entropy only."""
    model, _, _ = pretrain_then_binarize(pruned_cfg, dataset, pretrain_cfg,
                                         binary_cfg, seed=seed)
    return PruneStage(0, pruned_cfg, model.snapshot(),
                      measure_model(model, pruned_cfg, dataset))


def emit_tradeoff(stages: list[PruneStage],
                  baseline: dict[str, float] | None = None) -> str:
    """Deterministic CSV: one row per stage plus an optional baseline row.
    Fixed decimal formatting, no locale dependence."""
    lines = ["stage,size_bits,bops,accuracy"]
    if baseline is not None:
        lines.append("baseline,%d,%d,%.4f" % (int(baseline["size_bits"]),
                                              int(baseline["bops"]),
                                              baseline["accuracy"]))
    for st in stages:
        lines.append("%d,%d,%d,%.4f" % (st.stage,
                                        int(st.metrics["size_bits"]),
                                        int(st.metrics["bops"]),
                                        st.metrics["accuracy"]))
    return "\n".join(lines) + "\n"
