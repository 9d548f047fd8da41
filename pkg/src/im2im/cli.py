"""Command-line entry point for training, evaluation, inference and self-checks.

Exit codes: 0 success, 1 validation error, 2 numeric failure (divergence or a
failed certification), 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import gradcheck as gc
from . import metrics as M
from . import training as tr
from .checkpoint import CheckpointError, load_checkpoint
from .data import DatasetError, make_synthetic, read_image, write_image
from .manifest import dataset_fingerprint, utc_now, write_manifest
from .models import NOMINAL_FIELD, PATCH_VARIANTS, forward, patchgan_spec, receptive_field
from .rng import RngStream
from .tensor import Tensor
from .training import ConfigError, NumericDivergenceError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="im2im", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="run a training experiment from a config file")
    p.add_argument("config", help="flat key=value config file")
    p.add_argument("--resume", default=None, help="state_epNNNNN directory to resume from")

    p = sub.add_parser("evaluate", help="precision/recall/FID for a generator checkpoint")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="val")
    p.add_argument(
        "--embedding-file",
        action="append",
        default=None,
        help="external n x d feature file; give once for both sets or twice (generated, real)",
    )

    p = sub.add_parser("infer", help="translate input image(s) with a generator checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="one PNG or a directory of PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("make-dataset", help="write a synthetic paired/unpaired dataset")
    p.add_argument("--task", required=True, choices=("paired", "unpaired"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference certification of all ops")
    p.add_argument("--ops", default="all", help="'all' or a comma-separated op list")
    p.add_argument("--trials", type=int, default=gc.DEFAULT_TRIALS)

    p = sub.add_parser("receptive-field", help="analytical receptive field of a PatchGAN variant")
    p.add_argument("--variant", required=True, choices=PATCH_VARIANTS)

    return parser


def _cmd_train(args) -> int:
    started = utc_now()
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"im2im: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    cfg = tr.parse_config(text)
    fingerprint = dataset_fingerprint(cfg.dataset)
    state, files = tr.train(cfg, resume_from=args.resume)
    manifest = write_manifest(
        cfg.out_dir,
        command="train",
        config=asdict(cfg),
        files=files,
        started=started,
        finished=utc_now(),
        fingerprint=fingerprint,
    )
    print(f"trained {cfg.task} task to epoch {state.epoch} ({state.step} steps)")
    print(f"loss csv: {Path(cfg.out_dir) / 'loss.csv'}")
    print(f"manifest: {manifest}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    started = utc_now()
    out = Path(args.out)
    emb_files = args.embedding_file or []
    if len(emb_files) > 2:
        raise ConfigError("--embedding-file may be given at most twice (generated, real)")
    if emb_files:
        gen_mat = M.read_feature_file(emb_files[0])
        real_mat = M.read_feature_file(emb_files[-1])
        phi_g = M.FeatureSet(gen_mat, "generated")
        phi_r = M.FeatureSet(real_mat, "real")
        report = M.build_report(
            phi_g, phi_r, k=args.k, embedder_name="external-file", seed=args.seed
        )
        fingerprint = ""
    else:
        if not args.checkpoint or not args.dataset:
            raise ConfigError("evaluate requires --checkpoint and --dataset (or --embedding-file)")
        report = M.evaluate(
            args.checkpoint,
            args.dataset,
            k=args.k,
            n_samples=args.n,
            seed=args.seed,
            split=args.split,
        )
        fingerprint = dataset_fingerprint(args.dataset)
    text = M.report_text(report)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.txt"
    report_path.write_text(text)
    print(text, end="")
    write_manifest(
        out,
        command="evaluate",
        config={
            "checkpoint": args.checkpoint or "",
            "dataset": args.dataset or "",
            "k": args.k,
            "n": args.n,
            "seed": args.seed,
            "split": args.split,
            "embedding_files": ",".join(emb_files),
        },
        files=[report_path],
        started=started,
        finished=utc_now(),
        fingerprint=fingerprint,
    )
    return EXIT_OK


def _cmd_infer(args) -> int:
    started = utc_now()
    net = load_checkpoint(args.checkpoint).eval()
    if net.spec.kind != "generator":
        raise ConfigError(f"checkpoint {args.checkpoint} is not a generator")
    source = Path(args.input)
    if source.is_dir():
        inputs = sorted(source.glob("*.png"))
        if not inputs:
            raise DatasetError(f"no PNG files in {source}")
    elif source.is_file():
        inputs = [source]
    else:
        raise DatasetError(f"input not found: {source}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(args.seed)
    written = []
    for path in inputs:
        img = read_image(path)
        fake = forward(net, Tensor(img[None]), rng=rng, bn_mode="running", bn_update=False)
        target = out / path.name
        write_image(target, fake.data[0])
        written.append(target)
        print(f"wrote {target}")
    write_manifest(
        out,
        command="infer",
        config={"checkpoint": args.checkpoint, "input": args.input, "seed": args.seed},
        files=written,
        started=started,
        finished=utc_now(),
        fingerprint=dataset_fingerprint(source),
    )
    return EXIT_OK


def _cmd_make_dataset(args) -> int:
    started = utc_now()
    root = make_synthetic(args.task, args.n, args.size, args.seed, args.out)
    files = sorted(p for p in root.rglob("*.png"))
    print(f"wrote {len(files)} images under {root}")
    write_manifest(
        root,
        command="make-dataset",
        config={"task": args.task, "n": args.n, "size": args.size, "seed": args.seed},
        files=files,
        started=started,
        finished=utc_now(),
        fingerprint=dataset_fingerprint(root),
    )
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    names = None if args.ops == "all" else [s.strip() for s in args.ops.split(",") if s.strip()]
    if args.trials < 1:
        raise ConfigError(f"--trials must be >= 1, got {args.trials}")
    results = gc.run_gradcheck(names, trials=args.trials)
    failed = False
    for name, err in results.items():
        ok = err < gc.TOLERANCE
        failed |= not ok
        print(f"{name:20s} max_rel_err={err:.3e}  {'PASS' if ok else 'FAIL'} (tol {gc.TOLERANCE:g})")
    return EXIT_NUMERIC if failed else EXIT_OK


def _cmd_receptive_field(args) -> int:
    spec = patchgan_spec(3, args.variant, 8)
    field = receptive_field(spec)
    nominal = NOMINAL_FIELD[args.variant]
    print(f"{args.variant} receptive_field={field} nominal={nominal}")
    return EXIT_OK if field == nominal else EXIT_NUMERIC


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "infer": _cmd_infer,
    "make-dataset": _cmd_make_dataset,
    "gradcheck": _cmd_gradcheck,
    "receptive-field": _cmd_receptive_field,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.verb](args)
    except NumericDivergenceError as exc:
        print(f"im2im: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"im2im: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"im2im: invalid invocation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
