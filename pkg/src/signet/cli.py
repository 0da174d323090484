"""Command-line surface: gen-synth, train, eval, cross-eval, verify, inspect.

Exit codes: 0 success (or verify accept), 1 error, 2 verify reject.
Everything is reproducible from the seed; wall-clock timing goes to
stderr so artifact files stay byte-identical across reruns.
"""

import argparse
import os
import sys

import numpy as np
from PIL import Image

from . import _kernels as kernels
from . import evaluation, persist, synth, training
from .checkpoint import CheckpointError
from .config import RunConfig, resolve_config
from .data import (
    DatasetError,
    SplitSpec,
    build_protocol,
    dataset_std,
    load_dataset,
    load_image,
    materialize_pairs,
    preprocess,
    split_writers,
)
from .model import ARCH_PRESETS, activation_maps, build_signet, embed, pair_distance
from .tensor import Tensor

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECT = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to exit code 1."""

    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _log(message):
    print(message, file=sys.stderr)


_DEFAULTS = RunConfig()


def _opt(parser, flag, field, **kwargs):
    kwargs.setdefault("help", "")
    kwargs["help"] += f" (default: {getattr(_DEFAULTS, field)})"
    parser.add_argument(flag, dest=field, default=None, **kwargs)


def _add_common(parser):
    parser.add_argument("--config", default=None, metavar="PATH",
                        help="key = value config file (default: none)")
    _opt(parser, "--seed", "seed", type=int, help="global RNG seed")
    _opt(parser, "--arch", "arch", choices=("full", "tiny"),
         help="architecture preset")
    _opt(parser, "--threads", "threads", type=int,
         help="worker cap for compiled kernels, 0 = all cores")
    parser.add_argument("--out", default=".", metavar="DIR",
                        help="output directory (default: .)")


def build_parser():
    parser = _Parser(prog="signet",
                     description="Writer-independent offline signature verification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic signature corpus")
    _add_common(p)
    _opt(p, "--writers", "writers", type=int, help="number of writers")
    _opt(p, "--genuine", "genuine_per_writer", type=int, help="genuine images per writer")
    _opt(p, "--forged", "forged_per_writer", type=int, help="forged images per writer")
    _opt(p, "--height", "synth_height", type=int, help="image height")
    _opt(p, "--width", "synth_width", type=int, help="image width")
    _opt(p, "--genuine-amplitude", "genuine_amplitude", type=float,
         help="genuine jitter amplitude")
    _opt(p, "--forgery-amplitude", "forgery_amplitude", type=float,
         help="forgery perturbation amplitude")
    _opt(p, "--style", "style", choices=sorted(synth.STYLES),
         help="stroke statistics preset")

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_common(p)
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")
    p.add_argument("--resume", default=None, metavar="CKPT",
                   help="continue from a checkpoint (default: fresh model)")
    _opt(p, "--epochs", "epochs", type=int, help="training epochs")
    _opt(p, "--batch-size", "batch_size", type=int, help="mini-batch size")
    _opt(p, "--learning-rate", "learning_rate", type=float, help="initial LR")
    _opt(p, "--weight-decay", "weight_decay", type=float, help="L2 coefficient")
    _opt(p, "--margin", "margin", type=float, help="contrastive margin")
    _opt(p, "--pairing", "pairing", choices=("skilled", "unskilled"),
         help="dissimilar-pair source for training")
    _opt(p, "--train-writers", "train_writers", type=int,
         help="writers in the training split, 0 = 3/4 of all")

    p = sub.add_parser("eval", help="threshold-sweep evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset root")
    _opt(p, "--step", "sweep_step", type=float, help="threshold sweep step")

    p = sub.add_parser("cross-eval", help="accuracy matrix of models x corpora")
    _add_common(p)
    p.add_argument("--checkpoints", required=True, nargs="+", metavar="CKPT")
    p.add_argument("--data", required=True, nargs="+", metavar="DIR")
    _opt(p, "--step", "sweep_step", type=float, help="threshold sweep step")
    _opt(p, "--train-writers", "train_writers", type=int,
         help="writers in each corpus's training split, 0 = 3/4")

    p = sub.add_parser("verify", help="accept/reject a signature pair")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--threshold", required=True, type=float, metavar="D",
                   help="accept when distance <= D")
    p.add_argument("image_a")
    p.add_argument("image_b")

    p = sub.add_parser("inspect", help="export conv activation maps")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--image", required=True, metavar="PATH")
    p.add_argument("--layer", required=True, type=int,
                   help="index of a conv layer in the stack")
    p.add_argument("--top-k", type=int, default=5,
                   help="how many highest-energy channels to export (default: 5)")

    return parser


def _setup(args, overrides):
    cfg = resolve_config(args.config, overrides)
    n = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    kernels.set_num_threads(n)
    return cfg


def _pick_m(cfg, k):
    m = cfg.train_writers if cfg.train_writers > 0 else max(1, round(0.75 * k))
    if not 0 < m < k:
        raise CliError(f"train writers M={m} must satisfy 0 < M < K={k}")
    return m


def _meta_float(meta, key):
    try:
        return float(meta[key])
    except KeyError:
        raise CheckpointError(f"checkpoint metadata is missing {key!r}") from None


def cmd_gen_synth(args):
    cfg = _setup(args, {
        "seed": args.seed, "writers": args.writers,
        "genuine_per_writer": args.genuine_per_writer,
        "forged_per_writer": args.forged_per_writer,
        "synth_height": args.synth_height, "synth_width": args.synth_width,
        "genuine_amplitude": args.genuine_amplitude,
        "forgery_amplitude": args.forgery_amplitude, "style": args.style,
        "arch": args.arch, "threads": args.threads,
    })
    spec = synth.CorpusSpec(
        num_writers=cfg.writers,
        genuine_per_writer=cfg.genuine_per_writer,
        forged_per_writer=cfg.forged_per_writer,
        height=cfg.synth_height,
        width=cfg.synth_width,
        genuine_amplitude=cfg.genuine_amplitude,
        forgery_amplitude=cfg.forgery_amplitude,
        seed=cfg.seed,
        style=cfg.style,
    )
    report = synth.gen_corpus(spec, args.out)
    if report.written == 0:
        print(f"corpus unchanged: {report.image_files} image files in {args.out}")
    else:
        print(f"wrote corpus: {report.image_files} image files in {args.out} "
              f"({report.written} written, {report.unchanged} unchanged)")
    return EXIT_OK


def _train_setup(cfg, data_dir):
    index = load_dataset(data_dir, log=_log)
    k = len(index.writers)
    m = _pick_m(cfg, k)
    split = SplitSpec(k=k, m=m, seed=cfg.seed)
    arch = ARCH_PRESETS[cfg.arch]()
    train_w, _ = split_writers(index, split)
    std = dataset_std(index, train_w, arch.input_height, arch.input_width)
    index.std = std
    return index, split, arch, std


def cmd_train(args):
    cfg = _setup(args, {
        "seed": args.seed, "arch": args.arch, "threads": args.threads,
        "epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.learning_rate, "weight_decay": args.weight_decay,
        "margin": args.margin, "pairing": args.pairing,
        "train_writers": args.train_writers,
    })
    if cfg.epochs < 1:
        raise CliError(f"--epochs must be >= 1, got {cfg.epochs}")
    os.makedirs(args.out, exist_ok=True)
    index, split, arch, std = _train_setup(cfg, args.data)
    train_pairs, _ = build_protocol(index, split, cfg.pairing)
    _log(f"training pairs: {len(train_pairs)} "
         f"({split.m} of {split.k} writers, {cfg.pairing} pairing)")
    materialize_pairs(train_pairs, arch.input_height, arch.input_width, std)

    start_epoch = 0
    if args.resume:
        model, meta, opt_acc = persist.load_model(args.resume)
        opt_state = training.RmspropState(
            learning_rate=_meta_float(meta, "train.lr"),
            rho=cfg.rho, epsilon=cfg.epsilon, weight_decay=cfg.weight_decay,
            acc=opt_acc,
        )
        start_epoch = int(meta.get("train.epochs_completed", 0))
        if start_epoch >= cfg.epochs:
            raise CliError(
                f"checkpoint already trained for {start_epoch} epochs "
                f">= --epochs {cfg.epochs}"
            )
        _log(f"resuming at epoch {start_epoch + 1}")
    else:
        model = build_signet(arch, cfg.seed)
        opt_state = training.RmspropState.for_model(
            model, learning_rate=cfg.learning_rate, rho=cfg.rho,
            epsilon=cfg.epsilon, weight_decay=cfg.weight_decay,
        )
    _log(f"model parameters: {model.num_parameters()}")

    train_cfg = training.TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed,
        lr_decay_epochs=cfg.decay_epochs(), lr_decay_factor=cfg.lr_decay_factor,
    )
    loss_params = training.ContrastiveLossParams(
        alpha=cfg.loss_alpha, beta=cfg.loss_beta, margin=cfg.margin,
    )
    meta = {
        "preprocess.std": repr(std),
        "split.seed": str(split.seed),
        "split.k": str(split.k),
        "split.m": str(split.m),
        "pairing": cfg.pairing,
        "dataset.name": index.name,
    }
    _, history = training.train(
        model, train_pairs, train_cfg, loss_params, opt_state,
        out_dir=args.out, checkpoint_meta=meta, start_epoch=start_epoch, log=_log,
    )
    training.write_history(history, os.path.join(args.out, "history.tsv"))
    print(f"trained {len(history.mean_loss)} epochs; "
          f"final mean loss = {history.mean_loss[-1]!r}")
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint.sgnt')}")
    return EXIT_OK


def _test_pairs_for(model, meta, data_dir):
    index = load_dataset(data_dir)
    split = SplitSpec(
        k=int(_meta_float(meta, "split.k")),
        m=int(_meta_float(meta, "split.m")),
        seed=int(_meta_float(meta, "split.seed")),
    )
    if len(index.writers) != split.k:
        raise CliError(
            f"dataset has {len(index.writers)} writers but the checkpoint "
            f"was trained with a K={split.k} split"
        )
    _, test_pairs = build_protocol(index, split, "skilled")
    if not test_pairs:
        raise CliError("empty test split")
    std = _meta_float(meta, "preprocess.std")
    materialize_pairs(test_pairs, model.config.input_height,
                      model.config.input_width, std)
    return test_pairs


def cmd_eval(args):
    cfg = _setup(args, {
        "seed": args.seed, "arch": args.arch, "threads": args.threads,
        "sweep_step": args.sweep_step,
    })
    model, meta, _ = persist.load_model(args.checkpoint)
    test_pairs = _test_pairs_for(model, meta, args.data)
    _log(f"evaluation pairs: {len(test_pairs)}")
    records = evaluation.compute_distances(model, test_pairs)
    report = evaluation.threshold_sweep(records, step=cfg.sweep_step)
    print(evaluation.format_report(report), end="")
    os.makedirs(args.out, exist_ok=True)
    evaluation.write_report(report, os.path.join(args.out, "report.txt"))
    evaluation.write_curve(report, os.path.join(args.out, "sweep.tsv"))
    return EXIT_OK


def cmd_cross_eval(args):
    cfg = _setup(args, {
        "seed": args.seed, "arch": args.arch, "threads": args.threads,
        "sweep_step": args.sweep_step, "train_writers": args.train_writers,
    })
    models = []
    seen = {}
    for path in args.checkpoints:
        model, meta, _ = persist.load_model(path)
        name = os.path.splitext(os.path.basename(path))[0]
        if name == "checkpoint":
            name = os.path.basename(os.path.dirname(os.path.abspath(path))) or name
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name}#{seen[name]}"
        models.append((name, model, _meta_float(meta, "preprocess.std")))
    datasets = []
    splits = []
    for root in args.data:
        index = load_dataset(root)
        k = len(index.writers)
        splits.append(SplitSpec(k=k, m=_pick_m(cfg, k), seed=cfg.seed))
        datasets.append((index.name, index))
    cells = evaluation.cross_dataset_matrix(
        models, datasets, splits, step=cfg.sweep_step, log=_log,
    )
    model_names = [m[0] for m in models]
    dataset_names = [d[0] for d in datasets]
    grid = evaluation.format_matrix(model_names, dataset_names, cells)
    print(grid, end="")
    os.makedirs(args.out, exist_ok=True)
    evaluation.write_matrix(model_names, dataset_names, cells,
                            os.path.join(args.out, "matrix.tsv"))
    return EXIT_OK


def cmd_verify(args):
    _setup(args, {"seed": args.seed, "arch": args.arch, "threads": args.threads})
    model, meta, _ = persist.load_model(args.checkpoint)
    std = _meta_float(meta, "preprocess.std")
    h, w = model.config.input_height, model.config.input_width
    batch = np.stack([
        preprocess(load_image(args.image_a), h, w, std),
        preprocess(load_image(args.image_b), h, w, std),
    ])
    e = embed(model, Tensor(batch))
    d = float(pair_distance(
        Tensor(e.data[0:1]), Tensor(e.data[1:2])
    ).data[0])
    accept = d <= args.threshold
    print(f"distance = {d!r}")
    print("ACCEPT" if accept else "REJECT")
    return EXIT_OK if accept else EXIT_REJECT


def cmd_inspect(args):
    _setup(args, {"seed": args.seed, "arch": args.arch, "threads": args.threads})
    model, meta, _ = persist.load_model(args.checkpoint)
    std = _meta_float(meta, "preprocess.std")
    h, w = model.config.input_height, model.config.input_width
    image = preprocess(load_image(args.image), h, w, std)
    result = activation_maps(model, image, args.layer)
    if args.top_k < 1:
        raise CliError(f"--top-k must be >= 1, got {args.top_k}")
    os.makedirs(args.out, exist_ok=True)
    written = []
    for rank, channel in enumerate(result.ranking[: args.top_k]):
        m = result.maps[channel].astype(np.float64)
        span = m.max() - m.min()
        if span > 0:
            norm = (m - m.min()) / span * 255.0
        else:
            norm = np.zeros_like(m)
        path = os.path.join(
            args.out, f"activation_layer{args.layer}_rank{rank}_ch{int(channel)}.png"
        )
        Image.fromarray(np.rint(norm).astype(np.uint8), mode="L").save(path)
        written.append(path)
    print(f"wrote {len(written)} activation maps to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "cross-eval": cmd_cross_eval,
    "verify": cmd_verify,
    "inspect": cmd_inspect,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (DatasetError, CheckpointError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def console_entry():
    sys.exit(main())
