"""Command-line entry point: ``posegen <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 1 runtime or I/O error.  Every error
is reported as one line on stderr of the form ``posegen: <kind>: <reason>``.
"""
import argparse
import logging
import sys
from pathlib import Path

from . import evaluation as E
from .checkpoint import load_checkpoint
from .config import ConfigError, load_config, write_config
from .datagen import MAX_CLASSES, generate_dataset
from .imageio import contact_sheet, load_png, save_png
from .inference import infer_instance, infer_sample
from .trainer import train

log = logging.getLogger("posegen")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS,
                   help="more logging (repeatable)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="seed override for seeded subcommands")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="posegen", parents=[common],
                     description="Unpaired pose-to-appearance generation on a procedural toy domain.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("datagen", parents=[common], help="write a toy two-domain dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-x", type=int, default=600)
    p.add_argument("--n-y", type=int, default=600)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--size", type=int, default=32)

    p = sub.add_parser("train", parents=[common], help="train from a dataset directory")
    p.add_argument("--config", type=Path, help="key = value file; defaults when omitted")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--no-lc", action="store_true", help="drop the latent consistency term")
    p.add_argument("--no-ls", action="store_true", help="drop the class supervision term")
    p.add_argument("--resume", type=Path, metavar="CKPT")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, applied after the file")

    p = sub.add_parser("infer", parents=[common], help="generate images from a checkpoint")
    modes = p.add_subparsers(dest="mode", metavar="MODE", parser_class=_Parser)
    modes.required = True
    for name, text in (("instance", "style from a reference image"), ("sample", "style from a class label")):
        m = modes.add_parser(name, parents=[common], help=text)
        m.add_argument("--ckpt", required=True, type=Path)
        m.add_argument("--pose", required=True, type=Path)
        style = m.add_mutually_exclusive_group(required=True)
        style.add_argument("--ref", type=Path, help="reference appearance image (instance)")
        style.add_argument("--class", dest="class_id", type=int, help="class label (sample)")
        m.add_argument("--out", required=True, type=Path)
        if name == "sample":
            m.add_argument("--n", type=int, default=1)

    p = sub.add_parser("eval", parents=[common], help="compute the evaluation report")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--n-poses", type=int, default=10)
    p.add_argument("--n-samples", type=int, default=20)

    p = sub.add_parser("nn-analysis", parents=[common], help="nearest training neighbours by SSIM")
    p.add_argument("--generated", required=True, type=Path)
    p.add_argument("--train", required=True, type=Path)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("project-latents", parents=[common], help="2D projection of style codes")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--method", choices=("pca", "tsne"), default="pca")
    return parser


def _seed(args, default=0):
    return getattr(args, "seed", default)


def cmd_datagen(args):
    seed = _seed(args)
    if not 2 <= args.classes <= MAX_CLASSES:
        raise UsageError(f"--classes must be in [2, {MAX_CLASSES}], got {args.classes}")
    rows = generate_dataset(args.n_x, args.n_y, args.classes, args.size, seed, args.out)
    resolved = {"n_x": args.n_x, "n_y": args.n_y, "n_classes": args.classes, "size": args.size, "seed": seed}
    (args.out / "resolved.cfg").write_text("".join(f"{k} = {v}\n" for k, v in resolved.items()))
    log.info("wrote %d images to %s", len(rows), args.out)


def cmd_train(args):
    overrides = list(args.set)
    if args.no_lc:
        overrides.append("ablate_lc=true")
    if args.no_ls:
        overrides.append("ablate_ls=true")
    if hasattr(args, "seed"):
        overrides.append(f"seed={args.seed}")
    if args.config is not None and not args.config.is_file():
        raise FileNotFoundError(f"config file not found: {args.config}")
    config = load_config(args.config, overrides)
    result = train(config, args.data, args.out, resume=args.resume)
    log.info("final checkpoint %s", result.final_checkpoint)


def _load_image(path, ckpt):
    if not Path(path).is_file():
        raise FileNotFoundError(f"image not found: {path}")
    return load_png(path, ckpt.config.image_size, ckpt.config.channels)


def cmd_infer(args):
    if args.mode == "instance" and args.ref is None:
        raise UsageError("infer instance needs --ref (not --class)")
    if args.mode == "sample" and args.class_id is None:
        raise UsageError("infer sample needs --class (not --ref)")
    ckpt = load_checkpoint(args.ckpt)
    pose = _load_image(args.pose, ckpt)
    if args.mode == "instance":
        save_png(infer_instance(ckpt, pose, _load_image(args.ref, ckpt)), args.out)
        return
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if not 0 <= args.class_id < ckpt.config.n_classes:
        raise UsageError(f"--class must be in [0, {ckpt.config.n_classes}), got {args.class_id}")
    images = infer_sample(ckpt, pose, args.class_id, args.n, _seed(args))
    args.out.mkdir(parents=True, exist_ok=True)
    for i, im in enumerate(images):
        save_png(im, args.out / f"sample_{i:04d}.png")
    save_png(contact_sheet(images), args.out / "grid.png")
    write_config(ckpt.config, args.out / "resolved.cfg")


def cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    report = E.evaluate(ckpt, args.data, seed=_seed(args), n_poses=args.n_poses, n_samples=args.n_samples)
    report.write(args.report)
    for line in report.lines():
        log.info("%s", line)


def cmd_nn_analysis(args):
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    report = E.nearest_neighbor_audit(args.generated, args.train, k=args.k)
    report.write(args.out)
    log.info("max ssim %.4f", report.max_ssim)


def cmd_project_latents(args):
    ckpt = load_checkpoint(args.ckpt)
    proj = E.project_latents(ckpt, args.data, method=args.method, seed=_seed(args))
    proj.write(args.out)


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "nn-analysis": cmd_nn_analysis,
    "project-latents": cmd_project_latents,
}


def _fail(kind, err):
    reason = " ".join(str(err).split()) or type(err).__name__
    print(f"posegen: {kind}: {reason}", file=sys.stderr)


def dispatch(argv):
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        _fail("usage", err)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    verbose = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(name)s: %(message)s", force=True)
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as err:
        _fail("usage", err)
        return 2
    except OSError as err:
        _fail("io", err)
        return 1
    except Exception as err:  # noqa: BLE001 - every failure becomes one stderr line
        _fail("error", f"{type(err).__name__}: {err}")
        return 1
    return 0


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
