"""Command-line pipeline driver.

Each subcommand is one pipeline stage; stages communicate only through
files (.cvrv clips, .cvc containers, CVCM/CVAN/CVCL/CVMM models, text
manifests), so any stage's output feeds the next with no hidden state.
Results go to stdout as tab-separated ``key:value`` records; logs go to
stderr.  Every training run writes ``<out>.resolved.cfg`` beside its
output and can be replayed bit-identically from it.

Exit codes: 0 success, 2 usage error, 3 validation error (bad config
values, mismatched inputs), 4 runtime failure (corrupt files, divergence,
I/O).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import augment as aug_mod
from . import classify as cls_mod
from . import codec as codec_mod
from . import container as cont
from . import memory as mem_mod
from . import metrics as metrics_mod
from . import synthetic
from .autodiff import ShapeError
from .codec import CorruptCodeError, DivergenceError
from .config import ConfigError, resolve, write_resolved

EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


def emit(**fields):
    """One tab-separated key:value record on stdout."""
    print("\t".join(f"{k}:{_fmt(v)}" for k, v in fields.items()))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def log(msg):
    print(msg, file=sys.stderr)


def _parse_dims(text, n):
    parts = text.lower().split("x")
    if len(parts) != n:
        raise ConfigError(f"expected {n} x-separated dims, got {text!r}")
    return tuple(int(p) for p in parts)


def _dataset_paths(directory):
    labels_path = os.path.join(directory, "labels.tsv")
    if not os.path.exists(labels_path):
        raise ConfigError(f"no labels.tsv in {directory} (run gen-data first)")
    names, labels = [], []
    with open(labels_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            name, label = line.rstrip("\n").split("\t")
            names.append(name)
            labels.append(int(label))
    return names, np.asarray(labels)


def _load_clips(directory):
    names, labels = _dataset_paths(directory)
    clips = np.stack([metrics_mod.read_raw_video(os.path.join(directory, n))
                      for n in names]).astype(np.float32)
    return clips, labels, names


def _codec_config(cfg):
    strides = cfg["codec.time_strides"]
    if set(strides) == {1} and len(strides) != cfg["codec.E_s"]:
        # unit strides stretch to any block count; only real temporal
        # schedules must match codec.E_s exactly
        strides = (1,) * cfg["codec.E_s"]
    return codec_mod.CodecConfig(
        spatial_blocks=cfg["codec.E_s"], enc_res_blocks=cfg["codec.E_c"],
        dec_res_blocks=cfg["codec.D_c"], latent_channels=cfg["codec.V_e"],
        num_codebooks=cfg["codec.T_C"], codebook_size=cfg["codec.K"],
        time_strides=strides, patching=cfg["codec.patching"])


def _embed_dataset(codec, clips):
    return np.stack([codec.embed_codes(codec.encode(c).indices)
                     for c in clips])


# -- subcommands --------------------------------------------------------------


def cmd_gen_data(args):
    cfg = resolve(args.config, args.set)
    os.makedirs(args.out, exist_ok=True)
    clips, labels, _ = synthetic.make_dataset(
        cfg["data.seed"], cfg["data.clips"], frames=cfg["data.frames"],
        height=cfg["data.height"], width=cfg["data.width"],
        num_objects=cfg["data.objects"])
    with open(os.path.join(args.out, "labels.tsv"), "w") as fh:
        for i, (clip, label) in enumerate(zip(clips, labels)):
            name = f"clip_{i:04d}.cvrv"
            metrics_mod.write_raw_video(clip, os.path.join(args.out, name))
            fh.write(f"{name}\t{label}\n")
    write_resolved(cfg, os.path.join(args.out, "gen-data.resolved.cfg"))
    emit(clips=len(clips), dir=args.out)


def cmd_train_codec(args):
    cfg = resolve(args.config, args.set)
    clips, _, _ = _load_clips(args.data)
    model, losses = codec_mod.train_codec(
        clips, _codec_config(cfg), steps=cfg["codec.steps"],
        batch_size=cfg["codec.batch"], lr=cfg["codec.lr"],
        optimizer=cfg["codec.optimizer"], seed=cfg["data.seed"],
        log_every=args.log_every)
    codec_mod.save_model(model, args.out)
    write_resolved(cfg, args.out + ".resolved.cfg")
    emit(steps=cfg["codec.steps"], final_l1=losses[-1]["l1"],
         final_total=losses[-1]["total"], model=args.out)


def cmd_compress(args):
    codec = codec_mod.load_model(args.model)
    clip = metrics_mod.read_raw_video(args.input)
    codes = codec.encode(clip.astype(np.float32))
    books = [codec.codebooks[g].data
             for g in range(codec.config.num_codebooks)]
    nbytes = cont.write_container(codes, books, args.out)
    emit(out=args.out, bytes=nbytes,
         rate=cont.measured_rate(args.out))


def cmd_decompress(args):
    codec = codec_mod.load_model(args.model)
    codes, _books = cont.read_container(args.input)
    if bytes(codes.codec_id) != codec.codec_id():
        raise ConfigError(
            f"container {args.input} was written by a different codec "
            f"(id {codes.codec_id.hex()} != {codec.codec_id().hex()})")
    clip = codec.decode(codes)
    metrics_mod.write_raw_video(clip, args.out)
    emit(out=args.out, frames=clip.shape[0])


def cmd_train_aug(args):
    cfg = resolve(args.config, args.set)
    codec = codec_mod.load_model(args.model)
    clips, _, _ = _load_clips(args.data)
    net, losses = aug_mod.train_augmentation_network(
        codec, cfg["aug.family"], clips, steps=cfg["aug.steps"],
        batch_size=cfg["aug.batch"], lr=cfg["aug.lr"],
        seed=cfg["data.seed"], log_every=args.log_every)
    aug_mod.save_augnet(net, args.out)
    write_resolved(cfg, args.out + ".resolved.cfg")
    emit(family=cfg["aug.family"], steps=cfg["aug.steps"],
         final_l1=losses[-1], net=args.out)


def cmd_augment(args):
    cfg = resolve(args.config, args.set)
    codec = codec_mod.load_model(args.model)
    net = aug_mod.load_augnet(args.net)
    codes, _books = cont.read_container(args.input)
    if args.params is not None:
        spec = aug_mod.AugSpec(net.family,
                               tuple(float(v) for v in args.params.split(",")))
    else:
        rng = np.random.default_rng(cfg["data.seed"])
        spec = aug_mod.sample_augmentation_params(
            net.family, rng, frame_size=codes.video_shape[1])
    if cfg["aug.requantize"] or args.out_codes:
        emb, new_codes = aug_mod.apply_latent_augmentation(
            codes, spec, net, codec, requantize=True)
        if args.out_codes:
            books = [codec.codebooks[g].data
                     for g in range(codec.config.num_codebooks)]
            cont.write_container(new_codes, books, args.out_codes)
    else:
        emb = aug_mod.apply_latent_augmentation(codes, spec, net, codec)
    if args.out_video:
        metrics_mod.write_raw_video(codec.decode_embedding(emb),
                                    args.out_video)
    emit(family=net.family,
         params=",".join(f"{p:g}" for p in spec.params),
         out_codes=args.out_codes or "-", out_video=args.out_video or "-")


def cmd_train_cls(args):
    cfg = resolve(args.config, args.set)
    clips, labels, _ = _load_clips(args.data)
    if cfg["cls.source"] == "codes":
        codec = codec_mod.load_model(args.model)
        data = _embed_dataset(codec, clips)
        in_ch = codec.config.latent_channels
        size = data.shape[2]
    else:
        data, in_ch, size = clips, clips.shape[-1], clips.shape[2]
    model = cls_mod.build_classifier(
        cls_mod.ClassifierConfig(source=cfg["cls.source"], in_channels=in_ch,
                                 num_classes=cfg["cls.classes"],
                                 head=cfg["cls.head"], frame_size=size,
                                 code_size=size),
        seed=cfg["data.seed"])
    model, history = cls_mod.train_classifier(
        model, data, labels, steps=cfg["cls.steps"],
        batch_size=cfg["cls.batch"], lr=cfg["cls.lr"], seed=cfg["data.seed"],
        log_every=args.log_every)
    cls_mod.save_classifier(model, args.out)
    write_resolved(cfg, args.out + ".resolved.cfg")
    emit(steps=cfg["cls.steps"], final_loss=history["loss"][-1],
         final_acc=history["accuracy"][-1], model=args.out)


def cmd_eval_cls(args):
    cfg = resolve(args.config, args.set)
    model = cls_mod.load_classifier(args.cls)
    codec = codec_mod.load_model(args.model)
    clips, labels, names = _load_clips(args.data)
    codes_list = [codec.encode(c) for c in clips]
    aug_nets = {}
    if args.aug_crop:
        aug_nets["crop"] = aug_mod.load_augnet(args.aug_crop)
    if args.aug_flip:
        aug_nets["flip"] = aug_mod.load_augnet(args.aug_flip)
    logits, preds = cls_mod.eval_multicrop(
        model, codes_list, codec, aug_nets=aug_nets,
        n_spatial=cfg["cls.n_spatial"], m_temporal=cfg["cls.m_temporal"],
        flip_pool=cfg["cls.flip_pool"], frame_size=clips.shape[2])
    for name, label, lg, pred in zip(names, labels, logits, preds):
        emit(clip=name, label=int(label), pred=int(pred),
             logits=",".join(f"{v:.6g}" for v in lg))
    emit(accuracy=float(np.mean(preds == labels)), clips=len(names))


def cmd_train_mem(args):
    cfg = resolve(args.config, args.set)
    codec = codec_mod.load_model(args.model)
    seed = cfg["data.seed"]
    streams = [mem_mod.make_stream(seed * 7919 + i, cfg["mem.chunks"], codec)
               for i in range(cfg["mem.streams"])]
    model, history = mem_mod.train_past_future(
        streams, cfg["mem.kind"], steps=cfg["mem.steps"],
        lr=cfg["mem.lr"], batch_size=cfg["mem.batch"], seed=seed,
        log_every=args.log_every)
    mem_mod.save_memory_model(model, args.out)
    write_resolved(cfg, args.out + ".resolved.cfg")
    emit(kind=cfg["mem.kind"], steps=cfg["mem.steps"],
         final_loss=history["loss"][-1], model=args.out)


def cmd_eval_mem(args):
    cfg = resolve(args.config, args.set)
    codec = codec_mod.load_model(args.model)
    model = mem_mod.load_memory_model(args.mem)
    seed = cfg["data.seed"]
    streams = [mem_mod.make_stream(seed * 104729 + 500 + i,
                                   cfg["mem.chunks"], codec)
               for i in range(cfg["mem.streams"])]
    acc = mem_mod.eval_past_future(model, streams,
                                   samples_per_stream=cfg["mem.eval_samples"],
                                   seed=seed)
    emit(kind=model.memory_kind, accuracy=acc,
         streams=len(streams), chunks=cfg["mem.chunks"])


def cmd_metrics(args):
    a = metrics_mod.read_raw_video(args.a)
    b = metrics_mod.read_raw_video(args.b)
    m = metrics_mod.quality_metrics(a, b)
    emit(psnr=m["psnr"], ssim=m["ssim"], mae=m["mae"])


def cmd_rate(args):
    if args.container:
        shape = _parse_dims(args.input, 4) if args.input else None
        emit(rate=cont.measured_rate(args.container, shape))
        return
    if not (args.input and args.codes and args.codebooks and args.K):
        raise ConfigError("rate needs --container, or --input, --codes, "
                          "--codebooks and --K")
    rate = codec_mod.compression_rate(
        _parse_dims(args.input, 4), code_shape=_parse_dims(args.codes, 3),
        num_codebooks=args.codebooks, codebook_size=args.K)
    emit(rate=rate)


def cmd_bench(args):
    cfg = resolve(args.config, args.set)
    codec = codec_mod.load_model(args.model)
    f = cfg["data.frames"]
    h = cfg["data.height"]
    tt, th, tw, _ = codec.config.code_shape((f, h, cfg["data.width"], 3))
    seed = cfg["data.seed"]
    pix = cls_mod.build_classifier(
        cls_mod.ClassifierConfig(source="pixels", in_channels=3,
                                 frame_size=h), seed=seed)
    cod = cls_mod.build_classifier(
        cls_mod.ClassifierConfig(source="codes",
                                 in_channels=codec.config.latent_channels,
                                 code_size=th), seed=seed)
    rng = np.random.default_rng(seed)
    b = cfg["bench.batch"]
    xp = rng.random((b, f, h, cfg["data.width"], 3), dtype=np.float32)
    xc = rng.random((b, tt, th, tw, codec.config.latent_channels),
                    dtype=np.float32)
    rp = cls_mod.bench_forward(pix, xp, repeats=cfg["bench.repeats"])
    rc = cls_mod.bench_forward(cod, xc, repeats=cfg["bench.repeats"])
    for r in (rp, rc):
        emit(source=r["source"], mean_s=r["mean"], std_s=r["std"],
             repeats=r["repeats"], shape="x".join(map(str, r["batch_shape"])))
    emit(ratio=rp["mean"] / rc["mean"])


# -- parser -------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="videocodes",
        description="compressed-vision pipeline: codec, containers, latent "
                    "augmentation, downstream tasks")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--log-every", type=int, default=0)
        return sp

    sp = add("gen-data", cmd_gen_data, help="write seeded synthetic clips")
    sp.add_argument("--out", required=True)

    sp = add("train-codec", cmd_train_codec, help="train the VQ codec")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("compress", cmd_compress, help="clip -> .cvc container")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("decompress", cmd_decompress, help=".cvc container -> clip")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("train-aug", cmd_train_aug, help="train a latent augmentation")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("augment", cmd_augment, help="apply a latent augmentation")
    sp.add_argument("--model", required=True)
    sp.add_argument("--net", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--params", help="comma-separated normalized parameters")
    sp.add_argument("--out-codes")
    sp.add_argument("--out-video")

    sp = add("train-cls", cmd_train_cls, help="train a classifier")
    sp.add_argument("--model", help="codec model (codes source)")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval-cls", cmd_eval_cls, help="multi-view evaluation")
    sp.add_argument("--model", required=True)
    sp.add_argument("--cls", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--aug-crop")
    sp.add_argument("--aug-flip")

    sp = add("train-mem", cmd_train_mem, help="train the Past-Future task")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval-mem", cmd_eval_mem, help="evaluate the Past-Future task")
    sp.add_argument("--model", required=True)
    sp.add_argument("--mem", required=True)

    sp = add("metrics", cmd_metrics, help="psnr/ssim/mae between two clips")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)

    sp = add("rate", cmd_rate, help="compression-rate calculator")
    sp.add_argument("--input", help="FxHxWxC input shape")
    sp.add_argument("--codes", help="TxHxW code shape")
    sp.add_argument("--codebooks", type=int)
    sp.add_argument("--K", type=int)
    sp.add_argument("--container", help="measure a real .cvc file instead")

    sp = add("bench", cmd_bench, help="pixel vs codes forward-pass timing")
    sp.add_argument("--model", required=True)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return 0
    except (cont.ContainerError, CorruptCodeError, DivergenceError,
            OSError) as exc:
        log(f"error: {exc}")
        return EXIT_RUNTIME
    except (ConfigError, ShapeError, ValueError) as exc:
        log(f"invalid input: {exc}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
