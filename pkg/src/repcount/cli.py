"""Command-line entry point: ``repcount {gen-data,train,infer,eval,render}``.

Every command reads an optional JSON config (see ``config.py``), applies the
flag overrides, validates the result and only then starts working. Output
files are written via temp-file-and-rename, so a failed command leaves no
half-written artifacts behind. Errors print ``error: ...`` to stderr and the
process exits with status 1.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import counting, data, metrics, network, render, similarity
from ._io import atomic_write_text


LOSS_CSV = "loss_history.csv"
PROBS_CSV = "probabilities.csv"
CHECKPOINT = "checkpoint.racw"


class CommandError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------

def _resolve_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    return config_mod.override(
        cfg,
        seed=args.seed,
        lam=getattr(args, "lam", None),
        similarity=getattr(args, "similarity", None),
        stride=getattr(args, "stride", None),
        target=getattr(args, "target", None),
        epochs=getattr(args, "epochs", None),
        learning_rate=getattr(args, "lr", None),
    )


def _out_dir(args, default) -> Path:
    out = Path(args.out if args.out else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(args, cfg) -> Path:
    path = Path(args.checkpoint or cfg.paths.checkpoint)
    if not path.is_file():
        raise CommandError(f"checkpoint not found: {path}")
    return path


def _check_threshold(t):
    if not 0 <= t <= 1:
        raise CommandError(f"threshold must lie in [0, 1], got {t}")
    return t


def loss_history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "sse", "treco", "total"])
    for epoch, rep in enumerate(history):
        w.writerow([epoch, repr(rep.sse), repr(rep.treco), repr(rep.total)])
    return buf.getvalue()


def probabilities_csv(probs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "probability"])
    for t, p in enumerate(probs):
        w.writerow([t, repr(float(p))])
    return buf.getvalue()


def read_probabilities_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame", "probability"]:
        raise CommandError(f"{path}: expected header 'frame,probability'")
    try:
        values = [float(r[1]) for r in rows[1:]]
    except (IndexError, ValueError):
        raise CommandError(f"{path}: malformed probability row") from None
    return np.array(values)


# -- commands ---------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    n = cfg.data.n if args.n is None else args.n
    if n < 0:
        raise CommandError("--n must be >= 0")
    out = _out_dir(args, cfg.paths.data_dir)
    triples = data.generate_dataset(cfg.data.spec, n, cfg.data.seed)
    manifest = data.write_dataset(triples, out)
    print(f"wrote {n} sequences, manifest {manifest}")
    return 0


def _load_dataset(args, cfg):
    source = Path(args.data or cfg.paths.data_dir)
    pairs = data.read_manifest(source)
    if not pairs:
        raise CommandError(f"{source}: manifest lists no sequences")
    return pairs


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset(args, cfg)
    dims = {seq.D for seq, _ in dataset}
    if dims != {cfg.network.input_dim}:
        raise CommandError(f"network input_dim={cfg.network.input_dim} but data has D={sorted(dims)}")
    state = None
    if args.resume:
        state = network.load_checkpoint(args.resume)
        if state.config != cfg.network:
            raise CommandError("--resume checkpoint was trained with a different network config")
    out = _out_dir(args, cfg.paths.out_dir)

    # per-epoch progress is logged by network.train itself under -v
    state, history = network.train(dataset, cfg.network, cfg.train, state=state)
    network.save_checkpoint(state, out / CHECKPOINT)
    atomic_write_text(out / LOSS_CSV, loss_history_csv(history))
    atomic_write_text(out / "run_config.json", json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(f"trained {len(history)} epochs (adam step {state.step}); checkpoint {out / CHECKPOINT}")
    return 0


def cmd_infer(args) -> int:
    cfg = _resolve_config(args)
    threshold = _check_threshold(cfg.train.prominence_threshold if args.threshold is None else args.threshold)
    state = network.load_checkpoint(_checkpoint_path(args, cfg))
    seq = data.read_embeddings(args.embeddings)
    if seq.D != state.config.input_dim:
        raise CommandError(f"checkpoint expects D={state.config.input_dim}, embeddings have D={seq.D}")
    stride = args.stride or cfg.train.stride
    probs = network.predict(state, seq, stride)
    count, _ = counting.count_repetitions(probs, threshold)
    out = _out_dir(args, cfg.paths.out_dir)
    atomic_write_text(out / PROBS_CSV, probabilities_csv(probs))
    print(count)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    thresholds = args.threshold or [cfg.train.prominence_threshold]
    for t in thresholds:
        _check_threshold(t)
    stride = args.stride or cfg.train.stride
    state = None if args.oracle else network.load_checkpoint(_checkpoint_path(args, cfg))
    dataset = _load_dataset(args, cfg)
    if state is not None and {seq.D for seq, _ in dataset} != {state.config.input_dim}:
        raise CommandError("checkpoint input_dim does not match the dataset")
    results = metrics.evaluate(state, dataset, thresholds, stride=stride,
                               sigma=cfg.train.gaussian_sigma, oracle=args.oracle)
    out = _out_dir(args, cfg.paths.out_dir)
    for res in results:
        name = f"eval_stride{stride}_thr{res.threshold:g}.json"
        atomic_write_text(out / name, res.to_json() + "\n")
        print(f"threshold={res.threshold:g} stride={stride} n={res.n} "
              f"MAE={res.mae:.4f} OBOA={res.oboa:.4f}")
    return 0


def cmd_render(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg.paths.out_dir)
    if args.what == "tsm-reference":
        if not args.annotations:
            raise CommandError("tsm-reference needs --annotations")
        track = data.read_annotations(args.annotations)
        smoothing = cfg.train.tsm_smoothing if args.smoothing is None else args.smoothing
        img = render.heatmap(similarity.reference_tsm(track, smoothing))
    elif args.what == "tsm-predicted":
        if not args.embeddings:
            raise CommandError("tsm-predicted needs --embeddings")
        seq = data.read_embeddings(args.embeddings)
        measure = cfg.network.similarity
        if args.checkpoint:
            state = network.load_checkpoint(args.checkpoint)
            emb, _, _ = network.forward(state, seq)
            measure = state.config.similarity if args.similarity is None else measure
        else:
            emb = seq.frames
        img = render.heatmap(similarity.predicted_tsm(emb, measure))
    else:
        threshold = _check_threshold(cfg.train.prominence_threshold if args.threshold is None else args.threshold)
        if args.probs:
            probs = read_probabilities_csv(args.probs)
        elif args.checkpoint and args.embeddings:
            state = network.load_checkpoint(args.checkpoint)
            probs = network.predict(state, data.read_embeddings(args.embeddings), args.stride or cfg.train.stride)
        else:
            raise CommandError("probs needs --probs CSV or --checkpoint with --embeddings")
        _, kept = counting.count_repetitions(probs, threshold)
        img = render.probability_trace(probs, [p.index for p in kept])
    path = out / f"{args.what}.ppm"
    render.write_ppm(path, img)
    print(path)
    return 0


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config")
    common.add_argument("--seed", type=int, help="overrides network and data seeds")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")

    parser = argparse.ArgumentParser(prog="repcount", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset and manifest")
    p.add_argument("--n", type=int, help="number of sequences (overrides data.n)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint plus loss CSV")
    p.add_argument("--data", metavar="PATH", help="manifest file or dataset directory")
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the similarity loss")
    p.add_argument("--similarity", choices=similarity.MEASURES)
    p.add_argument("--stride", type=int)
    p.add_argument("--target", choices=counting.TARGET_MODES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="count repetitions in one embedding file")
    p.add_argument("--checkpoint", metavar="CKPT")
    p.add_argument("--embeddings", metavar="FILE", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="MAE/OBOA over a dataset, per threshold")
    p.add_argument("--checkpoint", metavar="CKPT")
    p.add_argument("--data", metavar="PATH", help="manifest file or dataset directory")
    p.add_argument("--threshold", type=float, action="append")
    p.add_argument("--stride", type=int)
    p.add_argument("--oracle", action="store_true", help="use ground-truth targets as predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="write a PPM heatmap or probability trace")
    p.add_argument("what", choices=("tsm-predicted", "tsm-reference", "probs"))
    p.add_argument("--checkpoint", metavar="CKPT")
    p.add_argument("--embeddings", metavar="FILE")
    p.add_argument("--annotations", metavar="FILE")
    p.add_argument("--probs", metavar="CSV")
    p.add_argument("--threshold", type=float)
    p.add_argument("--smoothing", type=float, help="reference TSM blur sigma")
    p.add_argument("--similarity", choices=similarity.MEASURES)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    if getattr(args, "stride", None) is not None and args.stride < 1:
        parser.error("--stride must be >= 1")
    try:
        return args.func(args)
    except (CommandError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
