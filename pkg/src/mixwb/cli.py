"""``mixwb`` command line: synth, render-presets, train, infer, eval, ablate, pipeline.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as C
from .color import ColorSpace, WB_PRESETS, preset
from .gridnet import load_checkpoint, save_checkpoint
from .inference import PresetOrderError, correct_image
from .io import read_json, read_png16, write_json, write_png16
from .isp import build_preset_stack
from .metrics import evaluate, format_table, write_report
from .scene import generate_testset
from .training import TrainingDiverged, load_training_set, train

logger = logging.getLogger("mixwb")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage, self.exc = stage, exc


# --- dataset helpers --------------------------------------------------------

def scene_dirs(path) -> list[tuple[str, Path]]:
    """``(scene_id, dir)`` pairs for a dataset root or a single scene dir."""
    path = Path(path)
    if (path / "manifest.json").exists():
        return [(e["scene_id"], path / e["scene_id"]) for e in read_json(path / "manifest.json")["scenes"]]
    if (path / "raw.png").exists():
        return [(path.name, path)]
    raise DataError(f"{path} is neither a dataset (manifest.json) nor a scene (raw.png)")


def load_stack(scene_dir: Path, cfg: dict):
    presets = preset(cfg["render"]["presets"])
    raw = read_png16(scene_dir / "raw.png", ColorSpace.LINEAR_RAW)
    captures = None
    if cfg["render"]["source"] == "captured":
        captures = [read_png16(scene_dir / f"preset_{p.name}.png") for p in presets]
    small = min(int(cfg["render"]["small_size"]), raw.height, raw.width)
    return build_preset_stack(raw, presets, WB_PRESETS["d"], small, cfg["render"]["domain"], captures)


def _ckpt_path(path) -> Path:
    path = Path(path)
    return path / "model.ckpt" if path.is_dir() else path


# --- subcommands ------------------------------------------------------------

def cmd_synth(args, cfg):
    s = cfg["synth"]
    out = Path(args.out)
    return generate_testset(int(s["n"]), int(cfg["seed"]), out, size=int(s["size"]), presets=s["presets"],
                            digest=C.digest(cfg), single_prob=float(s["single_prob"]))


def cmd_render_presets(args, cfg):
    for sid, d in scene_dirs(args.stack):
        stack = load_stack(d, cfg)
        out = Path(args.out) / sid if args.out else d / f"stack_{stack.names}"
        write_png16(out / "full_fixed.png", stack.full_fixed)
        for p, small, full in zip(stack.presets, stack.smalls, stack.mapped_fulls):
            write_png16(out / f"small_{p.name}.png", small)
            write_png16(out / f"preset_{p.name}.png", full)
        for m in stack.mappings:
            write_json(out / f"mapping_{m.target.name}.json", {**m.to_dict(), "config_digest": C.digest(cfg)})


def cmd_train(args, cfg):
    tc = C.train_config(cfg)
    data = load_training_set(args.data, tc.presets)
    out = Path(args.out)
    result = train(data, tc, out_dir=out, digest=C.digest(cfg), log_every=args.log_every)
    write_json(out / "history.json", {"config_digest": C.digest(cfg), "history": result.history})
    write_json(out / "run_config.json", {**cfg, "config_digest": C.digest(cfg)})
    return result


def _infer_dataset(ckpt_path, data, cfg, out, dump_weights=None, single_out=None):
    model = load_checkpoint(_ckpt_path(ckpt_path)).build()
    icfg = C.infer_config(cfg)
    if model.presets != cfg["render"]["presets"]:
        # the checkpoint dictates the preset set; keep the config consistent with it
        cfg = json.loads(json.dumps(cfg))
        cfg["render"]["presets"] = model.presets
    scenes = scene_dirs(data)
    for sid, d in scenes:
        stack = load_stack(d, cfg)
        image, w = correct_image(stack, model, icfg, return_weights=True)
        target = Path(single_out) if single_out and len(scenes) == 1 else Path(out) / f"{sid}.png"
        write_png16(target, image)
        if dump_weights:
            wd = Path(dump_weights) / sid if len(scenes) > 1 else Path(dump_weights)
            for p, wm in zip(stack.presets, w):
                write_png16(wd / f"weight_{p.name}.png", wm)
    return scenes


def cmd_infer(args, cfg):
    out = Path(args.out)
    single = out if out.suffix == ".png" else None
    _infer_dataset(args.ckpt, args.stack, cfg, out if single is None else out.parent, args.dump_weights, single)


def cmd_eval(args, cfg):
    report = evaluate(args.pred, args.gt, args.label, cfg)
    write_report(report, args.out)
    sys.stdout.write(report.to_text())
    return report


ABLATION_ROWS = (
    ("w/o ensembling, w/o EAS", {"infer.ensemble": False, "infer.eas": False}),
    ("w/ ensembling, w/o EAS", {"infer.ensemble": True, "infer.eas": False}),
    ("w/ ensembling, w/ EAS", {"infer.ensemble": True, "infer.eas": True}),
)


def _with(cfg, overrides):
    cfg = json.loads(json.dumps(cfg))
    for k, v in overrides.items():
        C.set_path(cfg, k, v)
    return cfg


def _run_eval(ckpt, data, cfg, out_dir, label):
    pred = Path(out_dir) / "pred"
    _infer_dataset(ckpt, data, cfg, pred)
    report = evaluate(pred, data, label, cfg)
    write_report(report, Path(out_dir) / "report.json")
    return report


def cmd_ablate(args, cfg):
    out = Path(args.out)
    rows = {}
    for i, (label, over) in enumerate(ABLATION_ROWS):
        rows[label] = _run_eval(args.ckpt, args.data, _with(cfg, over), out / f"infer_{i}", label).aggregate
    retrains = []
    if args.train_data:
        if args.no_ls:
            retrains.append(("w/o L_s", {"train.lam": 0.0}))
        for ps in args.preset_sets or []:
            retrains.append((f"WB={{{','.join(ps)}}}", {"train.presets": ps, "render.presets": ps}))
        for p in args.patches or []:
            retrains.append((f"p={p}", {"train.patch_size": p}))
    for label, over in retrains:
        sub = _with(cfg, over)
        tag = label.replace("/", "").replace(" ", "_").replace("=", "").replace("{", "").replace("}", "").replace(",", "")
        tdir = out / f"train_{tag}"
        train(load_training_set(args.train_data, sub["train"]["presets"]), C.train_config(sub), out_dir=tdir,
              digest=C.digest(sub))
        rows[label] = _run_eval(tdir, args.data, sub, out / f"eval_{tag}", label).aggregate
    table = format_table(rows)
    (out / "ablation.txt").write_text(table)
    write_json(out / "ablation.json", {"config_digest": C.digest(cfg), "rows": rows})
    sys.stdout.write(table)
    return rows


def cmd_pipeline(args, cfg):
    out = Path(args.out)
    data = Path(args.data) if args.data else out / "data"

    def stage(name, fn):
        try:
            return fn()
        except Exception as e:  # re-raised with the stage name attached
            raise StageError(name, e) from e

    if args.synth or not args.data:
        stage("synth", lambda: generate_testset(int(cfg["synth"]["n"]), int(cfg["seed"]), data,
                                                size=int(cfg["synth"]["size"]), presets=cfg["synth"]["presets"],
                                                digest=C.digest(cfg), single_prob=float(cfg["synth"]["single_prob"])))
    ckpt = args.ckpt
    if ckpt is None:
        if not args.train_data:
            raise C.ConfigError("pipeline needs --ckpt or --train-data")
        tc = C.train_config(cfg)
        stage("train", lambda: train(load_training_set(args.train_data, tc.presets), tc, out_dir=out / "model",
                                     digest=C.digest(cfg)))
        ckpt = out / "model"
    pred = out / "pred"
    stage("infer", lambda: _infer_dataset(ckpt, data, cfg, pred))
    report = stage("eval", lambda: evaluate(pred, data, args.label, cfg))
    write_report(report, out / "report.json")
    sys.stdout.write(report.to_text())
    return report


# --- parser -----------------------------------------------------------------

class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    def _get_help_string(self, action):
        # config-backed flags default to None and state their real default in the help text
        if action.default is None or "(default:" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def _config_epilog(sections) -> str:
    lines = ["config keys (JSON file via --config; flags override the file):"]
    keys = ["seed"] + [k for k in C.DOCS if k.split(".")[0] in sections]
    for key in keys:
        lines.append(f"  {key} = {json.dumps(C.get_path(C.DEFAULTS, key))}  {C.DOCS[key]}")
    if "infer" in sections:
        for k, v in C.DEFAULTS["infer"]["eas_params"].items():
            lines.append(f"  infer.eas_params.{k} = {json.dumps(v)}")
    return "\n".join(lines)


# (flag, dest config key, type, help)
SHARED_FLAGS = {
    "synth": [("--n", "synth.n", int, "number of scenes"),
              ("--size", "synth.size", int, "scene size in pixels"),
              ("--synth-presets", "synth.presets", str, "preset captures per scene")],
    "render": [("--presets", "render.presets", str, "WB preset set"),
               ("--small-size", "render.small_size", int, "small image size"),
               ("--source", "render.source", str, "mapped or captured")],
    "train": [("--train-presets", "train.presets", str, "training preset set"),
              ("--patch", "train.patch_size", int, "patch size"),
              ("--epochs", "train.epochs", int, "epochs"),
              ("--lr", "train.lr", float, "learning rate"),
              ("--lambda", "train.lam", float, "smoothness weight")],
    "infer": [("--scales", "infer.scales", None, "comma-separated scales")],
}


def _scales(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixwb", description="Mixed-illuminant white balance by learned preset blending.",
                                     formatter_class=_Formatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, sections, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=_Formatter,
                           epilog=_config_epilog(sections))
        p.add_argument("--config", help="JSON config file", default=None)
        p.add_argument("--seed", type=int, default=None, help="seed (default: file, $MIXWB_SEED, then 0)")
        for sec in sections:
            for flag, key, typ, h in SHARED_FLAGS.get(sec, []):
                if name == "train" and flag == "--train-presets":
                    continue  # train takes --presets directly
                p.add_argument(flag, dest=key, type=typ or _scales, default=None, metavar=flag[2:].upper().replace("-", "_"),
                               help=f"{h} (default: {json.dumps(C.get_path(C.DEFAULTS, key))})")
        return p

    p = add("synth", ["synth"], "generate a synthetic mixed-illuminant dataset")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = add("render-presets", ["render"], "render small preset images and mapped full-resolution presets")
    p.add_argument("--stack", required=True, help="scene directory or dataset root")
    p.add_argument("--out", default=None, help="output root (default: <scene>/stack_<presets>)")

    p = add("train", ["train"], "train the weight network")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--presets", dest="train.presets", choices=["tds", "tfdcs"], default=None,
                   help=f"WB preset set (default: {C.DEFAULTS['train']['presets']})")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--log-every", type=int, default=0, help="log every N iterations (0: off)")

    p = add("infer", ["render", "infer"], "correct images with a trained checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint file or directory")
    p.add_argument("--stack", required=True, help="scene directory or dataset root")
    p.add_argument("--no-ensemble", dest="infer.ensemble", action="store_const", const=False, default=None,
                   help="single-scale weights")
    p.add_argument("--no-eas", dest="infer.eas", action="store_const", const=False, default=None,
                   help="skip edge-aware smoothing")
    p.add_argument("--out", required=True, help="output .png (single scene) or directory")
    p.add_argument("--dump-weights", default=None, help="write weight maps as 16-bit PNGs here")

    p = add("eval", [], "score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of <scene_id>.png predictions")
    p.add_argument("--gt", required=True, help="dataset root with <scene_id>/gt.png")
    p.add_argument("--label", default="method", help="method label in the report")
    p.add_argument("--out", required=True, help="report .json path (a .txt table is written next to it)")

    p = add("ablate", ["render", "train", "infer"], "ensembling / EAS / retraining ablations")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--data", required=True, help="evaluation dataset")
    p.add_argument("--train-data", default=None, help="training dataset for the retraining rows")
    p.add_argument("--no-ls", action="store_true", help="add a lambda=0 retraining row")
    p.add_argument("--preset-sets", nargs="*", default=None, help="retrain with these preset sets")
    p.add_argument("--patches", nargs="*", type=int, default=None, help="retrain with these patch sizes")
    p.add_argument("--out", required=True, help="output directory")

    p = add("pipeline", ["synth", "render", "train", "infer"], "synth, render, infer and eval in one run")
    p.add_argument("--data", default=None, help="evaluation dataset (synthesized when absent)")
    p.add_argument("--synth", action="store_true", help="synthesize --data even if given")
    p.add_argument("--ckpt", default=None, help="trained checkpoint")
    p.add_argument("--train-data", default=None, help="train first on this dataset when --ckpt is absent")
    p.add_argument("--label", default="mixwb", help="method label in the report")
    p.add_argument("--out", required=True, help="output directory")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "render-presets": cmd_render_presets,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "pipeline": cmd_pipeline,
}


def _overrides(args) -> dict:
    over = {k: v for k, v in vars(args).items() if "." in k}
    over["seed"] = args.seed
    return over


def _exit_code(exc) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.exc)
    if isinstance(exc, C.ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (TrainingDiverged, FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.simplefilter("default")
    try:
        cfg = C.load_config(args.config, _overrides(args))
        COMMANDS[args.command](args, cfg)
    except C.ConfigError as e:
        print(f"mixwb: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        save_checkpoint(e.checkpoint, Path(getattr(args, "out", ".")) / "last_good.ckpt")
        print(f"mixwb: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, StageError, PresetOrderError, OSError, KeyError, ValueError, FloatingPointError) as e:
        print(f"mixwb: {e}", file=sys.stderr)
        return _exit_code(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
