"""Command-line front end.

Subcommands: train, prune, encode, export-thresholds, curves, eval, plus a
make-data helper for generating the synthetic desk-scale dataset. Report
paths write fixed-format CSVs and render matplotlib figures alongside them.

Exit codes: 0 ok, 1 usage error, 2 data/config error, 3 numeric failure.

Packed plane file format (little-endian):
    magic b"BNPL", u16 version (1), u16 planes-per-channel M,
    u32 C, H, W, u8 source-tag length, tag bytes,
    then ceil(C*M*H*W / 8) bytes: the (C*M, H, W) bit planes flattened
    row-major and packed little bit order within each byte.
"""

from __future__ import annotations

import json
import os
import struct
import sys

import click
import numpy as np
import yaml

from . import adcsim, dataio, encoders, plots, pruning, topology
from .bitcore import BitTensor
from .checkpoint import CheckpointError, checkpoint_hash
from .dataio import DataError
from .layers import Model
from .pruning import StageError, measure_model
from .topology import NetConfig, TopologyError
from .train import (LossConfig, TrainConfig, TrainingError, evaluate,
                    load_train_checkpoint, save_train_checkpoint,
                    train_model, pretrain_then_binarize, TrainState,
                    make_optimizer)
from .optim import ScheduleConfig

_PLANES_MAGIC = b"BNPL"


def write_planes_file(enc: encoders.EncodedPlanes, path) -> None:
    c, m = enc.channels, enc.planes_per_channel
    _, h, w = enc.planes.shape
    bits = enc.planes.bits().reshape(-1)
    packed = np.packbits(bits, bitorder="little")
    tag = enc.source.encode()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_PLANES_MAGIC)
        f.write(struct.pack("<HHIIIB", 1, m, c, h, w, len(tag)))
        f.write(tag)
        f.write(packed.tobytes())
    os.replace(tmp, path)


def read_planes_file(path) -> encoders.EncodedPlanes:
    with open(path, "rb") as f:
        if f.read(4) != _PLANES_MAGIC:
            raise DataError(f"bad planes magic in {path} at byte offset 0")
        version, m, c, h, w, taglen = struct.unpack("<HHIIIB", f.read(17))
        if version != 1:
            raise DataError(f"unsupported planes version {version}")
        tag = f.read(taglen).decode()
        packed = np.frombuffer(f.read(), dtype=np.uint8)
    total = c * m * h * w
    bits = np.unpackbits(packed, count=total,
                         bitorder="little").reshape(c * m, h, w)
    return encoders.EncodedPlanes(BitTensor.pack(bits, "plane01"), c, m, tag)


# ---------------------------------------------------------------------------
# Run configuration (training budgets and network description in one file)


def load_run_config(path) -> dict:
    with open(path) as f:
        d = yaml.safe_load(f)
    if not isinstance(d, dict) or "network" not in d:
        raise TopologyError(f"run config {path} lacks a 'network' section")
    return d


def _train_cfg(section: dict | None, seed: int,
               augment: dict | None) -> TrainConfig:
    section = section or {}
    aug = None
    if augment:
        aug = dataio.AugmentConfig(**augment)
    return TrainConfig(
        epochs=int(section.get("epochs", 10)),
        batch_size=int(section.get("batch_size", 64)),
        lr_init=float(section.get("lr_init", 1e-3)),
        lr_final=float(section.get("lr_final", 1e-8)),
        rectified=bool(section.get("rectified", True)),
        seed=seed,
        augment=aug,
    )


def _write_log(path, records) -> None:
    with open(path, "a") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def _atomic_text(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------


@click.group()
@click.option("--seed", type=int, default=0, show_default=True,
              help="Global RNG seed.")
@click.option("--threads", type=int, default=0,
              help="Advisory thread budget (kernels are deterministic "
                   "regardless).")
@click.pass_context
def cli(ctx, seed, threads):
    """Fully-binarized network toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["threads"] = threads


@cli.command("make-data")
@click.option("--classes", type=int, default=10, show_default=True)
@click.option("--count", "n", type=int, default=6000, show_default=True)
@click.option("--size", type=int, default=32, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def cmd_make_data(ctx, classes, n, size, out):
    """Generate the synthetic class-separable dataset file."""
    ds = dataio.make_synthetic(classes, n, size, ctx.obj["seed"])
    dataio.save_dataset(ds, out)
    click.echo(f"wrote {out}: {len(ds)} samples, {classes} classes")


@cli.command("train")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--resume", is_flag=True,
              help="Continue binary-stage training from an existing "
                   "checkpoint at --out.")
@click.pass_context
def cmd_train(ctx, config_path, data_path, out, resume):
    """Two-stage train (real pretrain, then fully-binarized) per config."""
    seed = ctx.obj["seed"]
    run = load_run_config(config_path)
    seed = int(run.get("seed", seed)) if ctx.obj["seed"] == 0 else seed
    dataset = dataio.load_dataset(data_path)
    net_cfg = NetConfig.from_dict(run["network"])
    binary_cfg = _train_cfg(run.get("binary"), seed, run.get("augment"))
    log_path = str(out) + ".log"

    if resume:
        model, state, meta = load_train_checkpoint(out)
        if state is None or state.mode != "binary":
            raise CheckpointError("checkpoint is not resumable")
        state = train_model(model, dataset, binary_cfg, "binary", state=state)
        _write_log(log_path, state.log)
    else:
        pretrain_cfg = _train_cfg(run.get("pretrain"), seed,
                                  run.get("augment"))
        model, state1, state = pretrain_then_binarize(
            net_cfg, dataset, pretrain_cfg, binary_cfg, seed=seed)
        if os.path.exists(log_path):
            os.remove(log_path)
        _write_log(log_path, [dict(r, stage="pretrain") for r in state1.log])
        _write_log(log_path, [dict(r, stage="binary") for r in state.log])
    save_train_checkpoint(out, model, state, provenance="binarized",
                          seed=seed)
    test = dataset.subset("test")
    acc = evaluate(model, test.normalize(), test.labels, "binary")
    click.echo(f"checkpoint {out} written; test accuracy {acc:.2f}%")


def _stage_ckpt(out_dir, b):
    return os.path.join(out_dir, f"stage_{b}.ckpt")


@cli.command("prune")
@click.option("--teacher", "teacher_path", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["gradual", "oneshot", "scratch"]),
              default="gradual", show_default=True)
@click.option("--pb", type=int, default=1, show_default=True,
              help="Lowest block index to prune down to.")
@click.option("--groups", default="1,2,8", show_default=True,
              help="Comma list of LWC group counts for blocks 1..N_b.")
@click.option("--stage-epochs", type=int, default=8, show_default=True)
@click.option("--pretrain-epochs", type=int, default=6, show_default=True,
              help="Pretrain budget for --mode scratch.")
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--lam", type=float, default=0.5, show_default=True)
@click.option("--temperature", type=float, default=8.0, show_default=True)
@click.option("--resume", is_flag=True,
              help="Continue from existing per-stage checkpoints.")
@click.option("--max-stages", type=int, default=0,
              help="Stop after this many stages (0 = all).")
@click.pass_context
def cmd_prune(ctx, teacher_path, data_path, out_dir, mode, pb, groups,
              stage_epochs, pretrain_epochs, batch_size, lam, temperature,
              resume, max_stages):
    """Block pruning: gradual (with KD) or competitor baselines."""
    seed = ctx.obj["seed"]
    os.makedirs(out_dir, exist_ok=True)
    dataset = dataio.load_dataset(data_path)
    teacher, _, _ = load_train_checkpoint(teacher_path)
    n_b = len(teacher.cfg.blocks)
    gmap = {i + 1: int(g) for i, g in enumerate(groups.split(","))}
    loss_cfg = LossConfig(temperature=temperature, lam=lam,
                          classes=teacher.cfg.classes)
    stage_cfg = TrainConfig(epochs=stage_epochs, batch_size=batch_size,
                            seed=seed)
    baseline = measure_model(teacher, teacher.cfg, dataset)

    stages: list[pruning.PruneStage] = []
    if mode == "gradual":
        last = None
        if resume:
            done = sorted((b for b in range(pb, n_b + 1)
                           if os.path.exists(_stage_ckpt(out_dir, b))),
                          reverse=True)
            for b in reversed(done):
                m, _, meta = load_train_checkpoint(_stage_ckpt(out_dir, b))
                last = pruning.PruneStage(b, m.cfg, m.snapshot(),
                                          meta.get("metrics", {}))
                stages.append(last)
        remaining = (last.stage - 1 if last else n_b) - pb + 1
        budget = remaining if not max_stages else min(max_stages, remaining)
        for _ in range(budget):
            st = pruning.prune_gradual(teacher, dataset, pb, gmap, loss_cfg,
                                       stage_cfg, seed=seed,
                                       resume_from=last, max_stages=1)[0]
            stage_model = Model(st.config, seed=seed)
            stage_model.restore(st.snapshot)
            save_train_checkpoint(_stage_ckpt(out_dir, st.stage), stage_model,
                                  None, provenance=f"prune-stage-{st.stage}",
                                  seed=seed, extra_meta={"metrics": st.metrics})
            stages.append(st)
            last = st
    elif mode == "oneshot":
        st = pruning.prune_oneshot_depth(teacher, dataset, pb, gmap,
                                         stage_cfg, seed=seed)
        stages = [st]
        stage_model = Model(st.config, seed=seed)
        stage_model.restore(st.snapshot)
        save_train_checkpoint(os.path.join(out_dir, "oneshot.ckpt"),
                              stage_model, None, provenance="prune-oneshot",
                              seed=seed, extra_meta={"metrics": st.metrics})
    else:  # scratch
        cfg = teacher.cfg
        for b in range(n_b, pb - 1, -1):
            cfg = topology.replace_block(cfg, b, gmap.get(b, 1))
        st = pruning.train_from_scratch(
            cfg, dataset, TrainConfig(epochs=pretrain_epochs,
                                      batch_size=batch_size, seed=seed),
            stage_cfg, seed=seed)
        stages = [st]
        stage_model = Model(st.config, seed=seed)
        stage_model.restore(st.snapshot)
        save_train_checkpoint(os.path.join(out_dir, "scratch.ckpt"),
                              stage_model, None, provenance="prune-scratch",
                              seed=seed, extra_meta={"metrics": st.metrics})

    stages.sort(key=lambda s: -s.stage)
    csv_text = pruning.emit_tradeoff(stages, baseline)
    csv_path = os.path.join(out_dir, "tradeoff.csv")
    _atomic_text(csv_path, csv_text)
    rows = [{"stage": "baseline", **baseline}]
    rows += [{"stage": s.stage, **s.metrics} for s in stages]
    plots.plot_tradeoff(rows, os.path.join(out_dir, "tradeoff.png"))
    click.echo(csv_text, nl=False)


def _encoder_from_checkpoint(ckpt_path):
    model, _, _ = load_train_checkpoint(ckpt_path)
    enc = model.encoder
    return enc.thresholds(), enc.spec


@cli.command("encode")
@click.option("--image", "image_path", required=True,
              type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True),
              help="Use the checkpoint's (possibly learned) thresholds.")
@click.option("--ft", is_flag=True, help="Fixed linear thermometer.")
@click.option("--base2", is_flag=True, help="Base-2 fixed-point planes.")
@click.option("--planes", type=int, default=8, show_default=True)
@click.option("--nb", type=int, default=8, show_default=True)
@click.option("--gamma", type=float, default=None,
              help="Gamma inversion exponent (ft/base2 paths).")
@click.option("--out", required=True, type=click.Path())
@click.option("--dump", type=click.Path(), default=None,
              help="Also write a human-readable plane dump.")
def cmd_encode(image_path, ckpt_path, ft, base2, planes, nb, gamma, out,
               dump):
    """Encode one PGM/PPM image into packed bit planes."""
    if sum(map(bool, (ckpt_path, ft, base2))) != 1:
        raise click.UsageError(
            "exactly one of --checkpoint, --ft, --base2 is required")
    raw = dataio.read_pnm(image_path)
    img = raw.astype(np.float64) / 255.0
    if base2:
        enc = encoders.encode_base2(raw.astype(np.int64), nb)
    else:
        if ckpt_path:
            thresholds, spec = _encoder_from_checkpoint(ckpt_path)
            if spec.gamma is not None:
                img = encoders.gamma_inverse(img, spec.gamma)
            source = encoders.TAG_GLT if spec.method == "glt" else encoders.TAG_FT
            enc = encoders.encode_thermometer(img, thresholds, source)
        else:
            if gamma is not None:
                img = encoders.gamma_inverse(img, gamma)
            enc = encoders.encode_fixed_thermometer(img, planes, nb)
    write_planes_file(enc, out)
    if dump:
        bits = enc.planes.bits()
        with open(dump, "w") as f:
            f.write(f"# source={enc.source} channels={enc.channels} "
                    f"planes={enc.planes_per_channel}\n")
            for p in range(bits.shape[0]):
                f.write(f"plane {p}\n")
                for row in bits[p]:
                    f.write("".join(map(str, row)) + "\n")
    click.echo(f"wrote {out} ({os.path.getsize(out)} bytes)")


@cli.command("export-thresholds")
@click.option("--checkpoint", "ckpt_path", required=True,
              type=click.Path(exists=True))
@click.option("--nb", type=int, default=8, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--text", "text_path", type=click.Path(), default=None)
def cmd_export_thresholds(ckpt_path, nb, out, text_path):
    """Write the Nb-bit threshold code table consumed by the ADC simulator."""
    thresholds, _ = _encoder_from_checkpoint(ckpt_path)
    codes = encoders.quantize_thresholds(thresholds, nb)
    encoders.export_threshold_table(codes, nb, out)
    if text_path:
        encoders.export_threshold_table_text(codes, nb, text_path)
    click.echo(f"wrote {out}")


@cli.command("curves")
@click.option("--checkpoint", "ckpt_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(),
              help="CSV of (channel, level, threshold); a PNG figure is "
                   "rendered alongside.")
def cmd_curves(ckpt_path, out):
    """Emit encoding curves: bit-count level versus learned threshold."""
    thresholds, spec = _encoder_from_checkpoint(ckpt_path)
    lines = ["channel,level,threshold"]
    for ch in range(thresholds.shape[0]):
        for i in range(thresholds.shape[1]):
            lines.append("%d,%d,%.10f" % (ch, i + 1, thresholds[ch, i]))
    _atomic_text(out, "\n".join(lines) + "\n")
    fig_path = os.path.splitext(str(out))[0] + ".png"
    plots.plot_encoding_curves(thresholds, spec.adc_bits, fig_path)
    click.echo(f"wrote {out} and {fig_path}")


@cli.command("eval")
@click.option("--checkpoint", "ckpt_path", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True))
def cmd_eval(ckpt_path, data_path):
    """Report train/test accuracy, model size, and BOPs."""
    model, _, _ = load_train_checkpoint(ckpt_path)
    dataset = dataio.load_dataset(data_path)
    train = dataset.subset("train")
    test = dataset.subset("test")
    acc_tr = evaluate(model, train.normalize(), train.labels, "binary")
    acc_te = evaluate(model, test.normalize(), test.labels, "binary")
    size = topology.count_model_size(model.cfg)
    bops = topology.count_bops(model.cfg)
    click.echo(f"train_accuracy {acc_tr:.2f}")
    click.echo(f"test_accuracy {acc_te:.2f}")
    click.echo(f"size_bits {size.total_bits} (binary {size.binary_bits}, "
               f"real {size.real_bits})")
    click.echo(f"bops {bops}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except (DataError, CheckpointError, TopologyError, OSError,
            yaml.YAMLError) as e:
        click.echo(f"data error: {e}", err=True)
        return 2
    except (TrainingError, StageError, FloatingPointError,
            encoders.LatentDomainError, encoders.InitError) as e:
        click.echo(f"numeric failure: {e}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
