"""Command-line entry points: synth, train, eval, infer, export-obj.

Options resolve in three layers: built-in defaults, then a `key = value`
config file (--config), then explicit flags.  Every run writes the fully
resolved configuration to `config-echo.txt` in its output directory, and a
run is reproducible from that file alone via --config.

Exit codes: 0 success, 2 I/O or bad input, 3 tree validation failure,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from .dataset import (
    denormalize_tree,
    load_manifest,
    load_split,
    sample_paths,
    write_dataset,
)
from .errors import NumericError, ParseError, SymhrecError, TreeError
from .graphs import build_graph
from .keypoints import frame_of, load_record
from .metrics import EvalResult, evaluate_pair
from .model import decode_free, encode
from .postprocess import refine
from .synthesis import GenConfig
from .training import (
    TrainingConfig,
    history_csv,
    load_checkpoint,
    new_state,
    restore_snapshot,
    save_checkpoint,
    train,
)
from .tree import flatten_tree, load_tree, save_tree, validate_tree


def _parse_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SymhrecError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(text, default):
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(json.loads(text))
    return text


def resolve_options(args, defaults: dict) -> dict:
    """defaults <- config file <- explicit flags."""
    values = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, text in _parse_config_file(config_path).items():
            if key == "command":
                continue
            if key not in defaults:
                raise SymhrecError(f"unknown config key {key!r}")
            values[key] = _coerce(text, defaults[key]) if defaults[key] is not None else text
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def write_config_echo(out_dir, command: str, values: dict):
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"command = {command}"]
    for key in sorted(values):
        v = values[key]
        if isinstance(v, tuple):
            v = json.dumps(list(v))
        lines.append(f"{key} = {v}")
    with open(os.path.join(out_dir, "config-echo.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _require_valid(tree, name):
    issues = validate_tree(tree)
    if issues:
        raise TreeError(f"{name}: " + "; ".join(str(v) for v in issues))


# -- synth -------------------------------------------------------------------

SYNTH_DEFAULTS = {
    "out": None,
    "count": 1563,
    "seed": 0,
    "threads": 1,
    "noise_sigma": 0.0,
    "engine_drop": 0.0,
}


def cmd_synth(args) -> int:
    opts = resolve_options(args, SYNTH_DEFAULTS)
    if not opts["out"]:
        raise SymhrecError("synth requires --out")
    cfg = GenConfig(noise_sigma=opts["noise_sigma"], engine_drop=opts["engine_drop"],
                    seed=opts["seed"])
    write_config_echo(opts["out"], "synth", opts)
    manifest = write_dataset(opts["out"], cfg, opts["count"], opts["seed"],
                             threads=opts["threads"])
    splits = {k: len(v) for k, v in manifest["splits"].items()}
    print(f"wrote {opts['count']} samples to {opts['out']} (splits: {splits})")
    return 0


# -- train -------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "data": None,
    "out": None,
    "seed": 0,
    "epochs": 200,
    "batch_size": 64,
    "learning_rate": 1e-4,
    "weight_decay": 1e-5,
    "lr_step": 50,
    "lr_decay": 0.8,
    "loss_weights": (1.0, 1.0, 1.0),
    "T": 3,
    "feature_dim": 80,
    "decoder_hidden": 200,
    "aug_noise_sigma": 0.0,
    "aug_engine_drop": 0.0,
    "type_features": True,
    "symmetry_free": False,
    "val_iou_resolution": 32,
    "max_depth": 16,
    "resume": "",
}


def cmd_train(args) -> int:
    opts = resolve_options(args, TRAIN_DEFAULTS)
    if not opts["data"] or not opts["out"]:
        raise SymhrecError("train requires --data and --out")
    cfg = TrainingConfig(
        learning_rate=opts["learning_rate"], weight_decay=opts["weight_decay"],
        lr_step=opts["lr_step"], lr_decay=opts["lr_decay"], epochs=opts["epochs"],
        batch_size=opts["batch_size"], loss_weights=tuple(opts["loss_weights"]),
        seed=opts["seed"], T=opts["T"], feature_dim=opts["feature_dim"],
        decoder_hidden=opts["decoder_hidden"], aug_noise_sigma=opts["aug_noise_sigma"],
        aug_engine_drop=opts["aug_engine_drop"], type_features=opts["type_features"],
        val_iou_resolution=opts["val_iou_resolution"], max_depth=opts["max_depth"],
    )
    write_config_echo(opts["out"], "train", opts)
    train_samples = load_split(opts["data"], "train", symmetry_free=opts["symmetry_free"])
    val_samples = load_split(opts["data"], "val", symmetry_free=opts["symmetry_free"])
    state = load_checkpoint(opts["resume"]) if opts["resume"] else new_state(cfg)

    def log(row):
        print(f"epoch {row['epoch']:4d}  lr {row['lr']:.3g}  train {row['train_loss']:.5f}  "
              f"val {row['val_loss']:.5f}  IoU {row['val_iou']:.4f}  SMS {row['val_sms']:.4f}")

    state = train(train_samples, val_samples, cfg, state=state, log=log)
    with open(os.path.join(opts["out"], "history.csv"), "w", encoding="ascii") as f:
        f.write(history_csv(state.history))
    save_checkpoint(os.path.join(opts["out"], "checkpoint.npz"), state)
    save_checkpoint(os.path.join(opts["out"], "checkpoint-best.npz"), state, use_best=True)
    print(f"best epoch {state.best_epoch} (val loss {state.best_val:.5f})")
    return 0


def _model_from_checkpoint(path):
    state = load_checkpoint(path)
    if state.best_snapshot:
        restore_snapshot(state.params, state.best_snapshot)
    return state


# -- eval --------------------------------------------------------------------

EVAL_DEFAULTS = {
    "data": None,
    "out": None,
    "pred": "",
    "checkpoint": "",
    "split": "test",
    "resolution": 64,
    "threads": 1,
    "refine": False,
}


def _pred_tree_path(pred_dir, sid):
    flat = os.path.join(pred_dir, f"{sid}.symh")
    if os.path.exists(flat):
        return flat
    return os.path.join(pred_dir, "samples", sid, "tree.symh")


def _infer_record(state, record, use_refine: bool):
    graph = build_graph(record)
    center, scale = frame_of(record)
    enc = encode(graph, state.params, training=False,
                 type_features=state.config.type_features)
    pred = decode_free(enc.r, state.params, state.config.max_depth)
    pred = denormalize_tree(pred, center, scale)
    report = None
    if use_refine:
        pred, report = refine(pred, record)
    return pred, report


def _infer_one(state, sample, use_refine: bool):
    return _infer_record(state, sample.record_raw, use_refine)


def cmd_eval(args) -> int:
    opts = resolve_options(args, EVAL_DEFAULTS)
    if not opts["data"] or not opts["out"]:
        raise SymhrecError("eval requires --data and --out")
    if not opts["pred"] and not opts["checkpoint"]:
        raise SymhrecError("eval requires --pred or --checkpoint")
    write_config_echo(opts["out"], "eval", opts)
    manifest = load_manifest(opts["data"])
    ids = manifest["splits"][opts["split"]]

    pairs = []
    if opts["pred"]:
        for sid in ids:
            gt_path, _ = sample_paths(opts["data"], sid)
            pred_path = _pred_tree_path(opts["pred"], sid)
            if not os.path.exists(pred_path):
                raise FileNotFoundError(f"no predicted tree for sample {sid}: {pred_path}")
            pred = load_tree(pred_path)
            gt = load_tree(gt_path)
            _require_valid(pred, pred_path)
            _require_valid(gt, gt_path)
            pairs.append((sid, pred, gt))
    else:
        state = _model_from_checkpoint(opts["checkpoint"])
        for s in load_split(opts["data"], opts["split"]):
            gt_path, _ = sample_paths(opts["data"], s.sample_id)
            gt = load_tree(gt_path)
            _require_valid(gt, gt_path)
            pred, _ = _infer_one(state, s, opts["refine"])
            _require_valid(pred, f"prediction for {s.sample_id}")
            pairs.append((s.sample_id, pred, gt))

    def run(pair):
        sid, pred, gt = pair
        return evaluate_pair(sid, pred, gt, opts["resolution"])

    if opts["threads"] > 1:
        with ThreadPoolExecutor(max_workers=opts["threads"]) as pool:
            rows = list(pool.map(run, pairs))
    else:
        rows = [run(p) for p in pairs]
    result = EvalResult(rows=rows)
    os.makedirs(opts["out"], exist_ok=True)
    with open(os.path.join(opts["out"], "metrics.csv"), "w", encoding="ascii") as f:
        f.write(result.to_csv())
    print(f"E_H {result.mean_e_h:.4f}  E_H95 {result.mean_e_h95:.4f}  "
          f"IoU {result.mean_iou:.4f}  SMS {result.mean_sms:.4f}  (n={len(rows)})")
    return 0


# -- infer -------------------------------------------------------------------

INFER_DEFAULTS = {
    "checkpoint": None,
    "keypoints": "",
    "data": "",
    "split": "test",
    "out": None,
    "refine": False,
    "report": "",
}


def cmd_infer(args) -> int:
    opts = resolve_options(args, INFER_DEFAULTS)
    if not opts["checkpoint"] or not opts["out"]:
        raise SymhrecError("infer requires --checkpoint and --out")
    if not opts["keypoints"] and not opts["data"]:
        raise SymhrecError("infer requires --keypoints or --data")
    state = _model_from_checkpoint(opts["checkpoint"])
    if opts["keypoints"]:
        record = load_record(opts["keypoints"])
        pred, report = _infer_record(state, record, opts["refine"])
        _require_valid(pred, "prediction")
        out_dir = os.path.dirname(opts["out"]) or "."
        write_config_echo(out_dir, "infer", opts)
        save_tree(pred, opts["out"])
        if opts["report"]:
            if report is None:
                _, report = refine(pred, record)
            with open(opts["report"], "w", encoding="ascii") as f:
                f.write(report.to_json())
        print(f"wrote {opts['out']}")
        return 0
    write_config_echo(opts["out"], "infer", opts)
    samples = load_split(opts["data"], opts["split"])
    for s in samples:
        pred, report = _infer_one(state, s, opts["refine"])
        _require_valid(pred, f"prediction for {s.sample_id}")
        save_tree(pred, os.path.join(opts["out"], f"{s.sample_id}.symh"))
        if opts["report"]:
            if report is None:
                _, report = refine(pred, s.record_raw)
            with open(os.path.join(opts["out"], f"{s.sample_id}.report.json"),
                      "w", encoding="ascii") as f:
                f.write(report.to_json())
    print(f"wrote {len(samples)} trees to {opts['out']}")
    return 0


# -- export-obj ----------------------------------------------------------------

EXPORT_DEFAULTS = {"tree": None, "out": None}

# quads of the corner layout produced by Obb.corners() (signs in z-fastest
# order); each splits into two triangles
_BOX_QUADS = (
    (0, 1, 3, 2), (4, 6, 7, 5),
    (0, 4, 5, 1), (2, 3, 7, 6),
    (0, 2, 6, 4), (1, 5, 7, 3),
)


def cmd_export_obj(args) -> int:
    opts = resolve_options(args, EXPORT_DEFAULTS)
    if not opts["tree"] or not opts["out"]:
        raise SymhrecError("export-obj requires --tree and --out")
    tree = load_tree(opts["tree"])
    _require_valid(tree, opts["tree"])
    obbs = flatten_tree(tree)
    lines = []
    for o in obbs:
        for v in o.corners():
            lines.append(f"v {v[0]!r} {v[1]!r} {v[2]!r}")
    for b in range(len(obbs)):
        base = 8 * b + 1
        for a, bb, c, d in _BOX_QUADS:
            lines.append(f"f {base + a} {base + bb} {base + c}")
            lines.append(f"f {base + a} {base + c} {base + d}")
    with open(opts["out"], "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {len(obbs) * 8} vertices, {len(obbs) * 12} faces to {opts['out']}")
    return 0


# -- argument wiring -----------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="key = value config file; flags override it")


def build_parser():
    parser = argparse.ArgumentParser(prog="symhrec",
                                     description="hierarchical 3D box structure from 2D keypoints")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a paired dataset")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--engine-drop", dest="engine_drop", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the encoder/decoder")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--pred")
    p.add_argument("--checkpoint")
    p.add_argument("--split")
    p.add_argument("--resolution", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--refine", action="store_const", const=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="decode trees from keypoints")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--keypoints")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--out")
    p.add_argument("--refine", action="store_const", const=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-obj", help="flattened boxes as a triangle mesh")
    _add_common(p)
    p.add_argument("--tree")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_obj)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, TreeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (OSError, SymhrecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
