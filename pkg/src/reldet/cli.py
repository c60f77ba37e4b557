"""Command-line entry points.

Subcommands: train | finetune | evaluate | detect | gen-synthetic | serve.
Configuration comes from --config (or the AIRDET_CONFIG env var), refined by
repeatable --set key=value overrides. Usage errors exit with code 2; runtime
failures print a message and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (Config, ConfigError, apply_overrides,
                     config_from_env_or_default, dump_config, load_config)
from .data import load_coco, split_classes
from .model import FewShotDetector
from .params import load_params


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file (default: "
                                    "$AIRDET_CONFIG or built-in defaults)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override")


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True,
                   help="dataset directory containing annotations.json")
    p.add_argument("--base-ids", default="1,2,3,4,5",
                   help="comma-separated base class ids")
    p.add_argument("--novel-ids", default="6,7",
                   help="comma-separated novel class ids")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reldet",
                                 description="few-shot object detection toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write the bundled shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images-per-class", type=int, default=30)
    p.add_argument("--image-size", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="episodic training on base classes")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("finetune", help="fine-tune on novel supports")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="N-way K-shot evaluation")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shots", default=None,
                   help="comma-separated shot counts (default from config)")
    p.add_argument("--seeds", default=None,
                   help="comma-separated support seeds (default from config)")
    p.add_argument("--out", default=None, help="write JSON results here")
    p.add_argument("--csv", default=None, help="write CSV results here")

    p = sub.add_parser("detect", help="one-shot detection on an image file")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="query image file")
    p.add_argument("--support", action="append", required=True,
                   metavar="NAME=IMG:x1,y1,x2,y2",
                   help="support crop; repeat for more shots/classes")
    p.add_argument("--max-dets", type=int, default=100)

    p = sub.add_parser("serve", help="run the operator HTTP service")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True, help="directory of frame images")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--static", default=None,
                   help="directory with the built console (served at /ui)")
    return ap


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) \
        else config_from_env_or_default()
    return apply_overrides(cfg, getattr(args, "overrides", []))


def _load_split(args, cfg: Config):
    root = Path(args.data)
    ann = root / "annotations.json"
    ds = load_coco(ann, root)
    base = [int(x) for x in str(args.base_ids).split(",") if x.strip()]
    novel = [int(x) for x in str(args.novel_ids).split(",") if x.strip()]
    return split_classes(ds, base, novel,
                         min_support_area=cfg.data.min_support_area)


def _load_model(checkpoint: str, cfg: Config | None):
    import yaml
    from .config import parse_config

    ps = load_params(checkpoint)
    if cfg is None:
        stored = ps.meta.get("config")
        cfg = parse_config(yaml.safe_load(stored)) if stored else Config()
    model = FewShotDetector(cfg, np.random.default_rng(0))
    model.load_params(ps)
    return model, cfg


def _cmd_gen_synthetic(args) -> int:
    from .synthetic import generate
    ann = generate(args.out, images_per_class=args.images_per_class,
                   image_size=args.image_size, seed=args.seed)
    print(f"wrote {ann}")
    return 0


def _cmd_train(args) -> int:
    from .train import train
    cfg = _load_cfg(args)
    split = _load_split(args, cfg)
    def log(row):
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    _, ckpt = train(cfg, split, args.out, log_callback=log)
    print(f"checkpoint: {ckpt}")
    return 0


def _cmd_finetune(args) -> int:
    from .data import sample_supports
    from .train import fine_tune, save_checkpoint
    cfg = _load_cfg(args)
    split = _load_split(args, cfg)
    model, cfg = _load_model(args.checkpoint, cfg if args.config
                             or args.overrides else None)
    rng = np.random.default_rng(args.seed)
    supports = {cid: sample_supports(split, cid, args.shots, rng)
                for cid in sorted(split.novel_classes)}
    fine_tune(model, cfg, split, supports, args.iterations, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ckpt_finetuned.rdp"
    save_checkpoint(model, cfg, args.iterations, path)
    print(f"checkpoint: {path}")
    return 0


def _cmd_evaluate(args) -> int:
    from .evaluate import evaluate_model
    cfg = _load_cfg(args)
    model, cfg = _load_model(args.checkpoint, cfg if args.config
                             or args.overrides else None)
    split = _load_split(args, cfg)
    shots = ([int(x) for x in args.shots.split(",")] if args.shots
             else list(cfg.eval.shots))
    seeds = ([int(x) for x in args.seeds.split(",")] if args.seeds
             else list(cfg.eval.seeds))
    results = []
    for k in shots:
        res = evaluate_model(model, cfg, split, k, seeds)
        results.append(res)
        line = ", ".join(f"{n}={res.mean[n]:.4f}±{res.std[n]:.4f}"
                         for n in ("AP", "AP50", "AP75"))
        print(f"k={k}: {line}")
    if args.out:
        doc = [json.loads(r.to_json()) for r in results]
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True))
        print(f"wrote {args.out}")
    if args.csv:
        for r in results:
            p = Path(args.csv)
            path = p if len(results) == 1 else \
                p.with_name(f"{p.stem}_k{r.k}{p.suffix}")
            r.write_csv(path)
            print(f"wrote {path}")
    return 0


def _parse_support(spec: str):
    name, _, rest = spec.partition("=")
    img, _, coords = rest.partition(":")
    parts = coords.split(",")
    if not name or not img or len(parts) != 4:
        raise ConfigError(
            f"support must be NAME=IMG:x1,y1,x2,y2 — got {spec!r}")
    return name, img, [float(v) for v in parts]


def _cmd_detect(args) -> int:
    from PIL import Image
    from .data import crop_support, prepare_query
    from .autodiff import Tensor, no_grad
    from .ops import bilinear_resize

    cfg = _load_cfg(args)
    model, cfg = _load_model(args.checkpoint, cfg if args.config
                             or args.overrides else None)

    def load_image(path):
        arr = np.asarray(Image.open(path).convert("RGB"),
                         dtype=np.float32) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))

    by_name: dict[str, list] = {}
    for spec in args.support:
        name, img_path, box = _parse_support(spec)
        chip = crop_support(load_image(img_path), box,
                            chip_size=cfg.data.chip_size)
        pix = chip.pixels
        if cfg.data.chip_input_size != cfg.data.chip_size:
            with no_grad():
                pix = bilinear_resize(
                    Tensor(pix), (cfg.data.chip_input_size,
                                  cfg.data.chip_input_size)).data
        by_name.setdefault(name, []).append(pix)

    names = sorted(by_name)
    support_sets = {i: np.stack(by_name[n]) for i, n in enumerate(names)}
    raw = load_image(args.image)
    prepared, scale = prepare_query(raw, cfg.data.query_max_side)
    dets = model.detect(prepared, support_sets, max_dets=args.max_dets)
    out = []
    for d in dets:
        box = (d.box / scale).tolist()
        out.append({"box": {"x1": box[0], "y1": box[1],
                            "x2": box[2], "y2": box[3]},
                    "class_id": d.class_id, "class_name": names[d.class_id],
                    "score": d.score})
    print(json.dumps({"image": args.image, "detections": out}, indent=2))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn
    from .service.app import app_from_checkpoint

    cfg = _load_cfg(args)
    app = app_from_checkpoint(args.checkpoint, args.frames,
                              cfg=cfg if args.config or args.overrides else None,
                              static_dir=args.static)
    host = args.host or cfg.service.host
    port = args.port if args.port is not None else cfg.service.port
    uvicorn.run(app, host=host, port=port, log_level="info")
    return 0


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "detect": _cmd_detect,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
