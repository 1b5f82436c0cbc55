"""Batch CLI: dataset splitting, training, evaluation, grad-cam, parameter counts.

Exit codes: 0 success, 1 runtime failure, 2 usage error. All randomness flows
from a single --seed, fanned out to split/init/shuffle/augment sub-seeds.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from vitkit import augment as aug
from vitkit import data as ds
from vitkit import gradcam as gc
from vitkit import training as tr
from vitkit import weights_io as wio
from vitkit.util import derive_seed
from vitkit.vit import ViTModel, parameter_count, preset_config

VARIANTS = ("tiny", "base16", "large16", "huge14")


def _write_run_config(args: argparse.Namespace, out: Path) -> None:
    payload = {k: (str(v) if isinstance(v, Path) else v)
               for k, v in vars(args).items() if k != "func"}
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _config(args, num_classes=None):
    return preset_config(args.variant, image_resolution=args.resolution,
                         num_classes=num_classes)


def _augment_policy(args):
    if args.no_augment or args.augment_n == 0:
        return None
    return aug.AugmentPolicy(n_ops=args.augment_n, magnitude=args.augment_m,
                             seed=derive_seed(args.seed, "augment"))


def _model_for_checkpoint(archive: wio.NamedTensorArchive, variant: str) -> ViTModel:
    """Build a model whose classes/resolution match the checkpoint, then import."""
    num_classes = archive.get("head.b").shape[0]
    seq_len = archive.get("embed.pos").shape[0]
    cfg = preset_config(variant, num_classes=num_classes)
    side = math.isqrt(seq_len - 1)
    cfg = preset_config(variant, num_classes=num_classes,
                        image_resolution=side * cfg.patch_size)
    model = ViTModel(cfg, seed=0)
    wio.import_pretrained(archive, model, strict=True)
    return model


def cmd_split(args) -> int:
    fractions = tuple(Fraction(f) for f in args.fractions)
    manifest = ds.scan_dataset(args.root)
    spec = ds.SplitSpec(fractions=fractions, seed=derive_seed(args.seed, "split"))
    train, val, test = ds.split(manifest, spec)
    out = Path(args.out)
    _write_run_config(args, out)
    for name, part in (("train", train), ("val", val), ("test", test)):
        ds.save_manifest(part, out / f"{name}.tsv")
        print(f"{name}: {len(part)} entries -> {out / f'{name}.tsv'}")
    return 0


def cmd_train(args) -> int:
    if args.train_manifest and args.val_manifest:
        train_data = ds.load_manifest(args.train_manifest, root=args.root)
        val_data = ds.load_manifest(args.val_manifest, root=args.root)
    else:
        manifest = ds.scan_dataset(args.root)
        spec = ds.SplitSpec(seed=derive_seed(args.seed, "split"))
        train_data, val_data, _ = ds.split(manifest, spec)
    cfg = _config(args, num_classes=len(train_data.labels))
    model = ViTModel(cfg, seed=derive_seed(args.seed, "init"))
    if args.pretrained:
        report = wio.import_pretrained(wio.load(args.pretrained), model)
        print(f"pretrained import: {report.summary()}")
    hp = tr.HyperParams(epochs=args.epochs, batch_size=args.batch_size,
                        lr=args.lr, seed=derive_seed(args.seed, "shuffle"))
    policy = _augment_policy(args)
    report = tr.train(model, train_data, val_data, hp, augment=policy,
                      augment_val=None if args.no_augment_val else policy,
                      clip_grad=args.clip_grad)
    out = Path(args.out)
    _write_run_config(args, out)
    tr.write_metrics_csv(report, out / "metrics.csv")
    model.load_state(report.best_state)
    wio.save(model, out / "best.vitw")
    print(f"best epoch {report.best_epoch + 1} val_acc {report.best_val_acc:.6f}")
    print(f"metrics -> {out / 'metrics.csv'}; checkpoint -> {out / 'best.vitw'}")
    return 0


def cmd_eval(args) -> int:
    archive = wio.load(args.checkpoint)
    model = _model_for_checkpoint(archive, args.variant)
    data = ds.load_manifest(args.manifest, root=args.root)
    if len(data.labels) != model.config.num_classes:
        raise ValueError(
            f"checkpoint has {model.config.num_classes} classes, manifest has "
            f"{len(data.labels)}"
        )
    acc, loss = tr.evaluate(model, data, args.batch_size)
    cm = tr.confusion_matrix(model, data, args.batch_size)
    out = Path(args.out)
    _write_run_config(args, out)
    tr.write_confusion_csv(cm, out / "confusion.csv")
    print(f"accuracy {acc:.6f} mean_loss {loss:.6f}")
    print(f"confusion matrix -> {out / 'confusion.csv'}")
    return 0


def cmd_gradcam(args) -> int:
    archive = wio.load(args.checkpoint)
    model = _model_for_checkpoint(archive, args.variant)
    res = model.config.image_resolution
    with Image.open(args.image) as img:
        rgb = np.asarray(img.convert("RGB").resize((res, res), Image.BILINEAR))
    x = (rgb.astype(np.float64) / 255.0 - 0.5) / 0.5
    class_index = args.class_index
    if class_index is None:
        logits = model.forward(x[None]).data[0]
        class_index = int(logits.argmax())
        print(f"using argmax class {class_index}")
    heat = gc.compute_cam(model, x, class_index)
    overlay = gc.render_overlay(heat, rgb, args.alpha)
    out = Path(args.out)
    _write_run_config(args, out)
    gc.write_pgm(heat, out / "cam.pgm")
    gc.write_ppm(overlay, out / "overlay.ppm")
    print(f"heatmap -> {out / 'cam.pgm'}; overlay -> {out / 'overlay.ppm'}")
    return 0


def cmd_params(args) -> int:
    cfg = preset_config(args.variant, image_resolution=args.resolution,
                        num_classes=args.classes)
    print(parameter_count(cfg))
    return 0


def cmd_augment_preview(args) -> int:
    with Image.open(args.image) as img:
        rgb = np.asarray(img.convert("RGB"))
    policy = aug.AugmentPolicy(n_ops=args.augment_n, magnitude=args.augment_m,
                               seed=derive_seed(args.seed, "augment"))
    out = Path(args.out)
    _write_run_config(args, out)
    for i in range(args.count):
        variant = aug.rand_augment(rgb, policy, i)
        Image.fromarray(variant).save(out / f"augmented_{i:03d}.png")
    print(f"wrote {args.count} variants to {out}")
    return 0


def _add_common(p, resolution=True):
    p.add_argument("--variant", choices=VARIANTS, default="tiny")
    if resolution:
        p.add_argument("--resolution", type=int, default=None,
                       help="input resolution (default: variant preset)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", type=Path, default=Path("out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="scan a dataset tree and write 80/10/10 manifests")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--fractions", nargs=3, default=["0.8", "0.1", "0.1"],
                   metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fine-tune or train a ViT")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--train-manifest", type=Path)
    p.add_argument("--val-manifest", type=Path)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.03)
    p.add_argument("--augment-n", type=int, default=2)
    p.add_argument("--augment-m", type=int, default=9)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-augment-val", action="store_true")
    p.add_argument("--pretrained", type=Path)
    p.add_argument("--clip-grad", type=float, default=None, metavar="NORM")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=64)
    _add_common(p, resolution=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcam", help="write a grad-cam heatmap and overlay")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--class-index", type=int, default=None)
    p.add_argument("--alpha", type=float, default=0.5)
    _add_common(p, resolution=False)
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("params", help="print the analytic parameter count")
    p.add_argument("--variant", choices=VARIANTS, default="base16")
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--classes", type=int, default=1000)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("augment-preview", help="write augmented variants of an image")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--augment-n", type=int, default=2)
    p.add_argument("--augment-m", type=int, default=9)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_augment_preview)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "split":
        try:
            fracs = [Fraction(f) for f in args.fractions]
        except (ValueError, ZeroDivisionError):
            parser.error(f"unparseable fractions {args.fractions}")
        if sum(fracs) != 1:
            parser.error(f"fractions {args.fractions} do not sum to 1")
    try:
        return args.func(args)
    except (ds.DatasetError, wio.FormatError, wio.WeightImportError, ValueError,
            IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
