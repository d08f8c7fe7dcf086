"""Training driver: forward/backward over the layer stack, the two-stage
real -> binary protocol, and evaluation.

Stage 1 pretrains a real-valued model (real weights, ReLU) on the encoded
binary input; stage 2 reuses the trained weights as the latent weights of
the fully-binarized model (sign(w) forward, Heaviside activations) and
retrains. Normalization statistics carry over between stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dataio, encoders, losses
from .layers import Ctx, Model, EncoderLayer, BinConv2d, BinLinear
from .optim import AdamOpt, ScheduleConfig
from .topology import NetConfig


class TrainingError(RuntimeError):
    """Non-finite loss or other unrecoverable training failure."""


@dataclass
class LossConfig:
    temperature: float = 8.0    # distillation temperature T
    lam: float = 0.0            # KD mixing weight lambda in [0, 1]
    classes: int = 10

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr_init: float = 1e-3
    lr_final: float = 1e-8
    rectified: bool = True
    seed: int = 0
    augment: dataio.AugmentConfig | None = None
    log_every: int = 0          # 0: one record per epoch
    # Encoder thresholds see far fewer effective updates than weights (their
    # gradient is averaged over every pixel), so they get a faster clock.
    latent_lr_scale: float = 25.0


@dataclass
class TrainState:
    """Mutable training snapshot: parameters, stats, moments, position."""

    model: Model
    optimizer: AdamOpt
    mode: str                   # "real" | "binary"
    step: int = 0
    log: list[dict] = field(default_factory=list)

    @property
    def lr(self) -> float:
        return self.optimizer.lr


def make_optimizer(model: Model, schedule: ScheduleConfig, mode: str,
                   rectified: bool = True,
                   latent_lr_scale: float = 1.0) -> AdamOpt:
    params = model.named_params()
    constraints = {}
    lr_scales = {}
    for layer in model.layers:
        if isinstance(layer, EncoderLayer) and "latent" in layer.params:
            constraints["encoder.latent"] = _project_latent
            lr_scales["encoder.latent"] = latent_lr_scale
        elif isinstance(layer, (BinConv2d, BinLinear)) and mode == "binary":
            constraints[f"{layer.name}.weight"] = _clip_unit
    return AdamOpt(params, schedule, rectified=rectified,
                   constraints=constraints, lr_scales=lr_scales)


def _project_latent(p: np.ndarray) -> None:
    np.maximum(p, encoders.EPSILON_MIN, out=p)


def _clip_unit(p: np.ndarray) -> None:
    np.clip(p, -1.0, 1.0, out=p)


def forward_backward(model: Model, images: np.ndarray, labels: np.ndarray,
                     mode: str, loss_cfg: LossConfig | None = None,
                     teacher_logits: np.ndarray | None = None,
                     check_binary: bool = False):
    """One training step's forward and backward pass.

    Returns (total loss, logits, flat gradient dict). With a LossConfig
    carrying lam > 0 and teacher logits, the loss is the convex mix of
    cross-entropy and the distillation KL.
    """
    ctx = Ctx(mode=mode, training=True, check_binary=check_binary)
    logits = model.forward(images, ctx)
    ce, dce = losses.cross_entropy(logits, labels)
    if loss_cfg is not None and loss_cfg.lam > 0.0:
        if teacher_logits is None:
            raise ValueError("teacher logits required when lambda > 0")
        distr, ddistr = losses.distributional_loss(
            teacher_logits, logits, loss_cfg.temperature)
        loss = losses.total_loss(ce, distr, loss_cfg.lam)
        dlogits = ((1.0 - loss_cfg.lam) * dce
                   + loss_cfg.lam * ddistr).astype(logits.dtype)
    else:
        loss, dlogits = ce, dce
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss} (mode={mode}, "
            f"logit range [{logits.min()}, {logits.max()}])")
    model.backward(dlogits)
    return loss, logits, model.collect_grads()


def predict_logits(model: Model, images: np.ndarray, mode: str,
                   batch_size: int = 256) -> np.ndarray:
    ctx = Ctx(mode=mode, training=False)
    outs = [model.forward(images[i:i + batch_size], ctx)
            for i in range(0, len(images), batch_size)]
    return np.concatenate(outs, axis=0)


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray,
             mode: str, batch_size: int = 256) -> float:
    """Top-1 accuracy in percent."""
    logits = predict_logits(model, images, mode, batch_size)
    return float(100.0 * np.mean(logits.argmax(axis=1) == labels))


def train_model(model: Model, dataset: dataio.Dataset, cfg: TrainConfig,
                mode: str, loss_cfg: LossConfig | None = None,
                teacher: Model | None = None,
                state: TrainState | None = None,
                start_epoch: int = 0,
                stop_after_epoch: int | None = None) -> TrainState:
    """Train for cfg.epochs with cosine LR decay over the whole budget.

    If a frozen teacher model is given (with loss_cfg.lam > 0), its softened
    outputs supply the distillation target; the teacher always runs in
    deterministic binary eval mode and is never mutated.

    start_epoch / stop_after_epoch allow an interrupted run to pick up
    exactly where it left off: the shuffle stream is replayed for skipped
    epochs so batch order stays identical to an uninterrupted run.
    """
    train = dataset.subset("train")
    images_u = train.images
    labels = train.labels
    n = len(labels)
    batches = max(1, n // cfg.batch_size)
    total_steps = cfg.epochs * batches

    if state is None:
        opt = make_optimizer(model,
                             ScheduleConfig(cfg.lr_init, cfg.lr_final,
                                            total_steps),
                             mode, cfg.rectified,
                             latent_lr_scale=cfg.latent_lr_scale)
        state = TrainState(model=model, optimizer=opt, mode=mode)
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        if epoch < start_epoch:
            continue
        if stop_after_epoch is not None and epoch >= stop_after_epoch:
            break
        epoch_loss = 0.0
        correct = 0
        seen = 0
        for bi in range(batches):
            idx = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            raw = images_u[idx]
            if cfg.augment is not None:
                raw = np.stack([
                    dataio.augment(img, cfg.augment,
                                   dataio.sample_rng(cfg.seed, epoch, int(i)))
                    for img, i in zip(raw, idx)])
            x = dataset.normalize(raw)
            y = labels[idx]
            t_logits = None
            if teacher is not None and loss_cfg is not None and loss_cfg.lam > 0:
                t_logits = predict_logits(teacher, x, "binary",
                                          cfg.batch_size)
            loss, logits, grads = forward_backward(
                model, x, y, mode, loss_cfg, t_logits)
            lr = state.optimizer.step(grads)
            state.step += 1
            epoch_loss += loss * len(y)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += len(y)
            if cfg.log_every and state.step % cfg.log_every == 0:
                state.log.append({"step": state.step, "lr": lr,
                                  "loss": loss})
        state.log.append({
            "step": state.step,
            "epoch": epoch + 1,
            "lr": state.optimizer.lr,
            "loss": epoch_loss / seen,
            "train_accuracy": 100.0 * correct / seen,
        })
    return state


def save_train_checkpoint(path, model: Model, state: TrainState | None,
                          provenance: str, seed: int,
                          extra_meta: dict | None = None) -> None:
    """Write a full training snapshot: config, latent parameters, packed
    binary weight snapshots, normalization stats, optimizer moments."""
    from . import checkpoint
    from .bitcore import BitTensor
    from .layers import sign01

    arrays: dict[str, np.ndarray] = {}
    arrays.update(model.named_params())
    arrays.update({f"buf.{k}": v for k, v in model.named_buffers().items()})
    for layer in model.layers:
        if isinstance(layer, (BinConv2d, BinLinear)):
            packed = BitTensor.pack(sign01(layer.params["weight"]))
            arrays[f"packed.{layer.name}"] = packed.data.reshape(-1)
    meta = {
        "net_config": model.cfg.to_dict(),
        "provenance": provenance,
        "seed": seed,
        "plane_order": "channel-major",
        "conv_padding_value": -1,
    }
    if state is not None:
        arrays.update(state.optimizer.state_arrays())
        meta["mode"] = state.mode
        meta["step"] = state.step
        meta["opt_step_count"] = state.optimizer.step_count
        meta["schedule"] = {
            "lr_init": state.optimizer.schedule.lr_init,
            "lr_final": state.optimizer.schedule.lr_final,
            "total_steps": state.optimizer.schedule.total_steps,
        }
        meta["rectified"] = state.optimizer.rectified
        meta["latent_lr_scale"] = state.optimizer.lr_scales.get(
            "encoder.latent", 1.0)
    if extra_meta:
        meta.update(extra_meta)
    checkpoint.save_checkpoint(path, meta, arrays)


def load_train_checkpoint(path) -> tuple[Model, TrainState | None, dict]:
    """Rebuild the model (and optimizer state, when present) from disk."""
    from . import checkpoint
    meta, arrays = checkpoint.load_checkpoint(path)
    cfg = NetConfig.from_dict(meta["net_config"])
    model = Model(cfg, seed=int(meta.get("seed", 0)))
    params = {k: v for k, v in arrays.items()
              if not k.startswith(("buf.", "opt.", "packed."))}
    buffers = {k[4:]: v for k, v in arrays.items() if k.startswith("buf.")}
    model.load_arrays(params, buffers)
    state = None
    if "mode" in meta:
        sched = meta["schedule"]
        opt = make_optimizer(model,
                             ScheduleConfig(sched["lr_init"],
                                            sched["lr_final"],
                                            sched["total_steps"]),
                             meta["mode"], meta.get("rectified", True),
                             latent_lr_scale=meta.get("latent_lr_scale", 1.0))
        if f"opt.m.{next(iter(model.named_params()))}" in arrays:
            opt.load_state_arrays(arrays, int(meta["opt_step_count"]))
        state = TrainState(model=model, optimizer=opt, mode=meta["mode"],
                           step=int(meta["step"]))
    return model, state, meta


def pretrain_then_binarize(cfg: NetConfig, dataset: dataio.Dataset,
                           pretrain_cfg: TrainConfig,
                           binary_cfg: TrainConfig,
                           seed: int = 0) -> tuple[Model, TrainState, TrainState]:
    """Two-stage protocol: real-valued pretrain, then fully-binarized
    retrain initialized from the stage-1 weights."""
    model = Model(cfg, seed=seed)
    state1 = train_model(model, dataset, pretrain_cfg, mode="real")
    # Stage-1 weights become stage-2 latents in the same storage; only the
    # forward interpretation (sign/Heaviside) changes.
    state2 = train_model(model, dataset, binary_cfg, mode="binary")
    return model, state1, state2
