"""Command-line front end: train, infer, eval, gradcheck, sweep.

Heavy imports happen inside the handlers so the MPAE_THREADS cap can be
applied to the numeric libraries before they load.  Exit codes: 0 on
success, 1 for validation problems, 2 for numerical aborts (NaN loss,
failed gradient checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

logger = logging.getLogger("mpae.cli")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _apply_thread_cap():
    cap = os.environ.get("MPAE_THREADS")
    if not cap:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise SystemExit(f"MPAE_THREADS must be a positive integer, got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = cap


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mpae", description="Masked part autoencoder toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on a dataset directory")
    p_train.add_argument("--config", help="config file (key = value lines)")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--resume", help="checkpoint directory to resume from")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
    for loss_name in ("foreground", "background", "semantic", "tv", "entropy"):
        p_train.add_argument(f"--without-{loss_name}", action="store_true",
                             help=f"ablation: drop the {loss_name} term")

    p_infer = sub.add_parser("infer", help="write part masks for a directory of images")
    p_infer.add_argument("--ckpt", required=True, help="checkpoint directory")
    p_infer.add_argument("--images", required=True, help="dataset directory")
    p_infer.add_argument("--out", required=True, help="output directory for masks")
    p_infer.add_argument("--soft", action="store_true",
                         help="also export soft maps as dense array files")

    p_eval = sub.add_parser("eval", help="score predicted masks against annotations")
    p_eval.add_argument("--pred", required=True, help="directory of predicted masks")
    p_eval.add_argument("--gt", required=True, help="annotated dataset directory")
    p_eval.add_argument("--out", required=True, help="report JSON path")
    p_eval.add_argument("--include-background-pixels", action="store_true")
    p_eval.add_argument("--nmi-norm", choices=["sqrt", "mean"], default="sqrt")
    p_eval.add_argument("--baseline-permutations", type=int, default=100)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--components", help="comma-separated subset (default all)")
    p_grad.add_argument("--instances", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=0)

    p_sweep = sub.add_parser("sweep", help="mask-ratio sweep at toy scale")
    p_sweep.add_argument("--ratios", required=True,
                         help="comma-separated ratios, e.g. 0.5,0.75,0.9")
    p_sweep.add_argument("--config", help="config file")
    p_sweep.add_argument("--data", required=True, help="dataset directory")
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _load_config(args):
    from .config import config_from_dict, load_config, parse_config_text

    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({})
    overrides = {}
    for item in getattr(args, "set", []):
        key, sep, raw = item.partition("=")
        if not sep or not key.strip() or not raw.strip():
            from .errors import ValidationError
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides.update(parse_config_text(f"{key} = {raw}"))
    for loss_name in ("foreground", "background", "semantic", "tv", "entropy"):
        if getattr(args, f"without_{loss_name}", False):
            overrides[f"without_{loss_name}"] = True
    if overrides:
        merged = cfg.as_dict()
        merged["input_size"] = list(merged["input_size"])
        merged.update(overrides)
        cfg = config_from_dict(merged)
    return cfg


def _load_scene_images(directory, cfg):
    import numpy as np

    from .datagen import read_dataset
    from .errors import ValidationError

    scenes = list(read_dataset(directory))
    if not scenes:
        raise ValidationError(f"no images found under {directory!r}")
    wrong = [s.name for s in scenes if s.image.shape[:2] != cfg.input_size]
    if wrong:
        raise ValidationError(
            f"{len(wrong)} scenes do not match input_size {cfg.input_size}: "
            f"{wrong[:3]}...")
    return scenes, np.stack([s.image for s in scenes])


def _cmd_train(args):
    from .checkpoint import load_checkpoint
    from .training import train

    cfg = _load_config(args)
    scenes, images = _load_scene_images(args.data, cfg)
    state = None
    if args.resume:
        state = load_checkpoint(args.resume, expected_config=cfg)
    final = train(cfg, images, args.out, state=state)
    logger.info("trained to step %d; checkpoints under %s", final.step, args.out)
    return EXIT_OK


def _cmd_infer(args):
    from .checkpoint import load_checkpoint
    from .config import config_hash
    from .inference import predict_masks, save_part_masks

    state = load_checkpoint(args.ckpt)
    cfg = state.config
    scenes, images = _load_scene_images(args.images, cfg)
    os.makedirs(args.out, exist_ok=True)
    digest = config_hash(cfg)
    for scene, image in zip(scenes, images):
        masks = predict_masks(image, state.params, cfg)
        soft_path = (os.path.join(args.out, scene.name + "_soft.dna")
                     if args.soft else None)
        save_part_masks(os.path.join(args.out, scene.name + ".png"), masks,
                        digest, soft_path=soft_path)
    logger.info("wrote %d mask files to %s", len(scenes), args.out)
    return EXIT_OK


def _cmd_eval(args):
    from .datagen import read_dataset
    from .errors import ValidationError
    from .evaluate import evaluate_masks, write_report
    from .inference import load_part_masks

    gt_scenes = {s.name: s for s in read_dataset(args.gt)}
    if not gt_scenes:
        raise ValidationError(f"no annotated scenes under {args.gt!r}")
    pred_files = sorted(
        f for f in os.listdir(args.pred)
        if f.endswith(".png") and not f.endswith("_soft.png"))
    preds, gts, names, keypoints = [], [], [], []
    config_digest = None
    n_parts = None
    for fname in pred_files:
        stem = os.path.splitext(fname)[0]
        if stem not in gt_scenes:
            logger.warning("no annotation for %s; skipped", stem)
            continue
        labels, sidecar = load_part_masks(os.path.join(args.pred, fname))
        if sidecar is not None:
            config_digest = sidecar.get("config_hash", config_digest)
            n_parts = sidecar.get("n_parts", n_parts)
        preds.append(labels)
        gts.append(gt_scenes[stem].labels)
        names.append(stem)
        keypoints.append(gt_scenes[stem].keypoints)
    if not preds:
        raise ValidationError("no predicted mask lines up with an annotation")
    report = evaluate_masks(
        preds, gts, names=names,
        keypoints=keypoints if any(k is not None for k in keypoints) else None,
        n_parts=n_parts,
        include_background_pixels=args.include_background_pixels,
        nmi_norm=args.nmi_norm,
        baseline_permutations=args.baseline_permutations,
        config_hash_value=config_digest)
    write_report(args.out, report)
    nme_text = "n/a" if report["nme"] is None else f"{report['nme']:.4f}"
    logger.info("NMI %.4f  ARI %.4f  NME %s  (report: %s)",
                report["nmi"], report["ari"], nme_text, args.out)
    return EXIT_OK


def _cmd_gradcheck(args):
    from .gradcheck import format_report, gradcheck

    components = None
    if args.components is not None:
        components = [c.strip() for c in args.components.split(",") if c.strip()]
    report = gradcheck(components=components, instances=args.instances,
                       seed=args.seed)
    print(format_report(report))
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def _cmd_sweep(args):
    from .errors import ValidationError
    from .sweeps import format_sweep_table, sweep_mask_ratio

    cfg = _load_config(args)
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad --ratios value {args.ratios!r}") from exc
    scenes, _ = _load_scene_images(args.data, cfg)
    report = sweep_mask_ratio(cfg, scenes, ratios, args.out)
    print(format_sweep_table(report))
    return EXIT_OK


_HANDLERS = {
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "sweep": _cmd_sweep,
}


def main(argv=None):
    _apply_thread_cap()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _build_parser().parse_args(argv)

    from .errors import NumericalError, ValidationError
    from .errors import FormatError

    try:
        return _HANDLERS[args.command](args)
    except (ValidationError, FormatError) as exc:
        logger.error("error: %s", exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        logger.error("numerical abort: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
