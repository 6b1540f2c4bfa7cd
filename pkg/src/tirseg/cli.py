"""Command-line front end: one subcommand per pipeline stage.

Every subcommand reads a flat JSON config (``--config``) and/or ``--key value``
overrides, and writes a run manifest recording the resolved config so the run
can be repeated with ``--from-manifest``.

Exit codes: 0 success, 2 config error, 3 I/O or input-data error, 4 numeric
contract violation (non-finite values, failed gradient check).
"""

import argparse
import dataclasses
import json
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .dataprep import LabeledImage, SurrogateConfig, adaptation_pipeline, compose, separate_background, surrogate_fn
from .enhance import build_default_bank, enhance_stack
from .imgio import PGMError, normalize, read_mask, read_pgm, write_mask, write_pgm
from .metrics import average_reports, evaluate_masks, kfold_split
from .synthgen import SceneParams, gen_dataset, item_seeds, load_dataset, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

REQUIRED = object()


class ConfigError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class Key:
    name: str
    default: object
    kind: str  # int | float | bool | str | list | path | posw | optional
    help: str = ""
    role: str = ""  # "in" / "out" for paths recorded in the manifest


def _scene_keys():
    kinds = {int: "int", float: "float"}
    out = []
    for f in dataclasses.fields(SceneParams):
        if f.name != "seed":
            out.append(Key(f.name, f.default, kinds[type(f.default)], "scene parameter"))
    return out


NET_KEYS = [
    Key("widths", [16, 32, 64], "list", "encoder channel widths, one per stage"),
    Key("blocks_per_stage", 1, "int", "residual blocks per stage"),
    Key("aspp_rates", [1, 2, 4, 8], "list", "ASPP dilation rates"),
    Key("aspp_global_pool", True, "bool", "include the global-pool ASPP branch"),
    Key("head", "fixed", "str", "'fixed' kernel bank or 'free' learned kernels"),
    Key("init_seed", 0, "int", "weight initialisation seed"),
]

TRAIN_KEYS = [
    Key("epochs", 30, "int"),
    Key("batch_size", 8, "int"),
    Key("lr", 2e-3, "float", "learning rate"),
    Key("optimizer", "adam", "str", "'adam' or 'sgd'"),
    Key("pos_weight", 1.0, "posw", "target-class BCE weight, or 'auto'"),
    Key("seed", 0, "int", "mini-batch shuffling seed"),
]

SCHEMAS = {
    "gen": [
        Key("out", REQUIRED, "path", "output dataset directory", "out"),
        Key("n", 100, "int", "number of scenes"),
        Key("seed", 0, "int", "dataset seed"),
        Key("snr_jitter", 0.3, "float", "relative half-width of the per-scene SNR draw"),
    ] + _scene_keys(),
    "enhance": [
        Key("image", REQUIRED, "path", "input PGM", "in"),
        Key("out", REQUIRED, "path", "output directory for channel PGMs", "out"),
        Key("maxval", 65535, "int", "PGM maxval of the written channels (255 or 65535)"),
    ],
    "separate": [
        Key("image", REQUIRED, "path", "input PGM", "in"),
        Key("mask", REQUIRED, "path", "target mask PGM", "in"),
        Key("out", REQUIRED, "path", "background-only PGM", "out"),
    ],
    "translate": [
        Key("dataset", REQUIRED, "path", "input dataset manifest", "in"),
        Key("out", REQUIRED, "path", "output dataset directory", "out"),
        Key("reference", None, "optional", "reference PGM for histogram matching", "in"),
        Key("sigma_row", 0.0, "float", "row-offset noise sigma"),
        Key("sigma_px", 0.0, "float", "pixel noise sigma"),
        Key("seed", 0, "int", "translation noise seed"),
    ],
    "compose": [
        Key("background", REQUIRED, "path", "translated background PGM", "in"),
        Key("image", REQUIRED, "path", "original PGM", "in"),
        Key("mask", REQUIRED, "path", "target mask PGM", "in"),
        Key("out", REQUIRED, "path", "composed PGM", "out"),
    ],
    "train": [
        Key("dataset", REQUIRED, "path", "training dataset manifest", "in"),
        Key("out", REQUIRED, "path", "checkpoint directory", "out"),
    ] + NET_KEYS + TRAIN_KEYS,
    "infer": [
        Key("checkpoint", REQUIRED, "path", "checkpoint directory", "in"),
        Key("input", REQUIRED, "path", "a PGM image or a dataset manifest", "in"),
        Key("out", REQUIRED, "path", "output directory", "out"),
    ],
    "eval": [
        Key("dataset", REQUIRED, "path", "ground-truth dataset manifest", "in"),
        Key("out", REQUIRED, "path", "metrics report JSON", "out"),
        Key("predictions", None, "optional", "predictions.json written by infer", "in"),
        Key("checkpoint", None, "optional", "checkpoint to run instead of reading predictions", "in"),
        Key("per_image", False, "bool", "include per-image metrics"),
    ],
    "kfold": [
        Key("dataset", REQUIRED, "path", "dataset manifest", "in"),
        Key("out", REQUIRED, "path", "output directory", "out"),
        Key("k", 4, "int", "number of folds"),
        Key("split_seed", 0, "int", "fold assignment seed"),
    ] + NET_KEYS + TRAIN_KEYS,
    "gradcheck": [
        Key("out", REQUIRED, "path", "report JSON", "out"),
        Key("n_samples", 100, "int", "network parameters sampled for the end-to-end check"),
        Key("seed", 0, "int", "seed for inputs, weights and sampling"),
        Key("layer_tolerance", 1e-4, "float", "max relative error per layer"),
        Key("network_tolerance", 1e-3, "float", "max relative error for the network"),
        Key("head", "fixed", "str", "'fixed' or 'free'"),
    ],
}

DIRECTORY_OUTPUT = {"gen", "enhance", "translate", "train", "infer", "kfold"}

DESCRIPTIONS = {
    "gen": "generate a synthetic labelled dataset",
    "enhance": "write the raw image and every fixed-kernel response as PGMs",
    "separate": "replace target pixels by their row background mean",
    "translate": "surrogate style translation of a dataset, targets preserved",
    "compose": "paste original target pixels onto a translated background",
    "train": "train a segmentation network",
    "infer": "likelihood maps, masks and overlays from a checkpoint",
    "eval": "pixel metrics of predicted masks against ground truth",
    "kfold": "k-fold train/evaluate protocol with averaged metrics",
    "gradcheck": "finite-difference verification of layer and network gradients",
}


# --- config handling ----------------------------------------------------------

def _parse_bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _from_text(key, text):
    """Convert a command-line string to the key's type."""
    try:
        if key.kind == "int":
            return int(text)
        if key.kind == "float":
            return float(text)
        if key.kind == "bool":
            return _parse_bool(text)
        if key.kind == "list":
            return json.loads(text)
        if key.kind == "posw":
            return "auto" if text == "auto" else float(text)
        if key.kind == "optional" and text in ("", "null", "none"):
            return None
        return text
    except ValueError as exc:
        raise ConfigError(f"--{key.name}: {exc}") from None


def _check_value(key, value):
    """Type-check a config value (from JSON or the command line)."""
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "path": lambda v: isinstance(v, str),
        "list": lambda v: isinstance(v, list),
        "posw": lambda v: v == "auto" or (isinstance(v, (int, float)) and not isinstance(v, bool)),
        "optional": lambda v: v is None or isinstance(v, str),
    }[key.kind]
    if not ok(value):
        raise ConfigError(f"{key.name}: expected {key.kind}, got {value!r}")
    if key.kind == "float":
        return float(value)
    return value


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from None


def resolve_config(command, file_config=None, overrides=None):
    """defaults < file_config < overrides; unknown keys and missing required keys are errors."""
    schema = {k.name: k for k in SCHEMAS[command]}
    cfg = {name: k.default for name, k in schema.items()}
    for layer in (file_config or {}, overrides or {}):
        if not isinstance(layer, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(layer) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        for name, value in layer.items():
            cfg[name] = _check_value(schema[name], value)
    missing = [name for name, v in cfg.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    return cfg


def manifest_path(command, cfg):
    if cfg.get("run_manifest"):
        return cfg["run_manifest"]
    if command in DIRECTORY_OUTPUT:
        return os.path.join(cfg["out"], "run_manifest.json")
    return cfg["out"] + ".run.json"


def dump_json(obj, path):
    """Deterministic, atomic JSON write."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# --- subcommands --------------------------------------------------------------

def _net_config(cfg):
    from .segnet import NetConfig

    try:
        return NetConfig(widths=tuple(cfg["widths"]), blocks_per_stage=cfg["blocks_per_stage"],
                         aspp_rates=tuple(cfg["aspp_rates"]), aspp_global_pool=cfg["aspp_global_pool"],
                         head=cfg["head"], seed=cfg["init_seed"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg):
    from .segnet import TrainConfig

    try:
        return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                           optimizer=cfg["optimizer"], pos_weight=cfg["pos_weight"], seed=cfg["seed"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _scene(cfg):
    fields = {f.name for f in dataclasses.fields(SceneParams)} - {"seed"}
    try:
        return SceneParams(**{k: cfg[k] for k in fields})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_gen(cfg):
    if cfg["n"] < 1:
        raise ConfigError("n must be >= 1")
    if not 0 <= cfg["snr_jitter"] < 1:
        raise ConfigError("snr_jitter must lie in [0, 1)")
    ds = gen_dataset(_scene(cfg), cfg["n"], cfg["seed"], out_dir=cfg["out"], snr_jitter=cfg["snr_jitter"])
    return {"items": len(ds.items), "item_seeds": [m["seed"] for m in ds.manifest]}


def run_enhance(cfg):
    if cfg["maxval"] not in (255, 65535):
        raise ConfigError("maxval must be 255 or 65535")
    image = read_pgm(cfg["image"])
    bank = build_default_bank()
    stack = enhance_stack(image, bank)[0]
    os.makedirs(cfg["out"], exist_ok=True)
    channels = []
    for i, chan in enumerate(stack):
        name = f"channel_{i:02d}.pgm"
        write_pgm(normalize(chan), os.path.join(cfg["out"], name), cfg["maxval"])
        entry = {"file": name, "index": i, "min": float(chan.min()), "max": float(chan.max())}
        entry["kernel"] = None if i == 0 else bank[i - 1].to_dict()
        channels.append(entry)
    dump_json({"image": cfg["image"], "channels": channels}, os.path.join(cfg["out"], "kernels.json"))
    return {"channels": len(channels)}


def _labeled(image_path, mask_path):
    return LabeledImage(read_pgm(image_path), read_mask(mask_path))


def run_separate(cfg):
    write_pgm(separate_background(_labeled(cfg["image"], cfg["mask"])), cfg["out"], 65535)
    return {}


def run_compose(cfg):
    item = _labeled(cfg["image"], cfg["mask"])
    write_pgm(compose(read_pgm(cfg["background"]), item), cfg["out"], 65535)
    return {}


def run_translate(cfg):
    try:
        SurrogateConfig(sigma_row=cfg["sigma_row"], sigma_px=cfg["sigma_px"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ds = load_dataset(cfg["dataset"])
    reference = read_pgm(cfg["reference"]) if cfg["reference"] else None
    seeds = item_seeds(cfg["seed"], len(ds.items))
    out_items = []
    for item, s in zip(ds.items, seeds):
        params = SurrogateConfig(reference=reference, sigma_row=cfg["sigma_row"], sigma_px=cfg["sigma_px"], seed=s)
        out_items.append(LabeledImage(adaptation_pipeline(item, surrogate_fn(params)), item.mask))
    entries = [{"index": i, "source": e.get("image"), "translate_seed": s}
               for i, (e, s) in enumerate(zip(ds.manifest, seeds))]
    write_dataset(cfg["out"], out_items, entries)
    return {"items": len(out_items), "item_seeds": seeds}


def run_train(cfg):
    from .segnet import build_network, save_network, train

    ncfg, tcfg = _net_config(cfg), _train_config(cfg)
    ds = load_dataset(cfg["dataset"])
    net, report = train(build_network(ncfg), ds.items, tcfg,
                        log=lambda ep, loss: print(f"epoch {ep + 1}/{tcfg.epochs} loss {loss:.5f}", file=sys.stderr))
    save_network(net, cfg["out"])
    dump_json(report.to_dict(), os.path.join(cfg["out"], "train_report.json"))
    return {"final_loss": report.epoch_loss[-1]}


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


def _predict(net, items):
    from .segnet import binarize, forward

    out = []
    for item in items:
        lm = forward(net, item)
        _check_finite(lm.p_t, "likelihood map")
        out.append((lm, binarize(lm)))
    return out


def run_infer(cfg):
    from .segnet import infer, load_network

    net = load_network(cfg["checkpoint"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    if not cfg["input"].endswith(".json"):
        lm, mask, overlay = infer(net, read_pgm(cfg["input"]))
        _check_finite(lm.p_t, "likelihood map")
        write_pgm(lm.p_t, os.path.join(out, "likelihood.pgm"), 65535)
        write_mask(mask, os.path.join(out, "mask.pgm"))
        write_pgm(overlay, os.path.join(out, "overlay.pgm"), 65535)
        return {"target_pixels": int(mask.sum())}
    ds = load_dataset(cfg["input"])
    os.makedirs(os.path.join(out, "masks"), exist_ok=True)
    os.makedirs(os.path.join(out, "likelihood"), exist_ok=True)
    entries = []
    for i, (lm, mask) in enumerate(_predict(net, [it.image for it in ds.items])):
        m_rel = os.path.join("masks", f"{i:04d}.pgm")
        l_rel = os.path.join("likelihood", f"{i:04d}.pgm")
        write_mask(mask, os.path.join(out, m_rel))
        write_pgm(lm.p_t, os.path.join(out, l_rel), 65535)
        entries.append({"index": i, "mask": m_rel, "likelihood": l_rel})
    dump_json(entries, os.path.join(out, "predictions.json"))
    return {"items": len(entries)}


def _report_dict(report, per_image):
    d = report.to_dict()
    if not per_image:
        d.pop("per_image", None)
    return d


def run_eval(cfg):
    from .segnet import load_network

    if (cfg["predictions"] is None) == (cfg["checkpoint"] is None):
        raise ConfigError("give exactly one of predictions or checkpoint")
    ds = load_dataset(cfg["dataset"])
    truths = [it.mask for it in ds.items]
    if cfg["checkpoint"]:
        preds = [m for _, m in _predict(load_network(cfg["checkpoint"]), [it.image for it in ds.items])]
    else:
        entries = _load_json(cfg["predictions"], "predictions")
        root = os.path.dirname(os.path.abspath(cfg["predictions"]))
        preds = [read_mask(os.path.join(root, e["mask"])) for e in entries]
        if len(preds) != len(truths):
            raise ValueError(f"{len(preds)} predictions for {len(truths)} ground-truth items")
    report = evaluate_masks(preds, truths)
    dump_json(_report_dict(report, cfg["per_image"]), cfg["out"])
    return {"miou": report.miou, "recall": report.recall}


def run_kfold(cfg):
    from .segnet import build_network, train

    ncfg, tcfg = _net_config(cfg), _train_config(cfg)
    ds = load_dataset(cfg["dataset"])
    try:
        folds = kfold_split(len(ds.items), cfg["k"], cfg["split_seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    reports = []
    for i, (tr, te) in enumerate(folds):
        print(f"fold {i + 1}/{len(folds)}: train {len(tr)} test {len(te)}", file=sys.stderr)
        net, _ = train(build_network(ncfg), [ds.items[j] for j in tr], tcfg)
        preds = [m for _, m in _predict(net, [ds.items[j].image for j in te])]
        report = evaluate_masks(preds, [ds.items[j].mask for j in te])
        reports.append(report)
        fold_doc = {"fold": i, "train": tr, "test": te, "metrics": _report_dict(report, False)}
        dump_json(fold_doc, os.path.join(cfg["out"], f"fold_{i}", "report.json"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        avg, skipped = average_reports(reports)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    dump_json({"k": cfg["k"], "average": avg, "undefined_folds": skipped,
               "folds": [_report_dict(r, False) for r in reports]},
              os.path.join(cfg["out"], "average.json"))
    return {"miou": avg["miou"], "recall": avg["recall"]}


def run_gradcheck(cfg):
    from . import nn
    from .segnet import NetConfig, build_network, network_grad_check

    if cfg["n_samples"] < 1:
        raise ConfigError("n_samples must be >= 1")
    rng = np.random.default_rng(cfg["seed"])
    c = 3
    layers = {
        "conv3x3": nn.Conv2d(c, 4, 3, rng=rng),
        "conv3x3_stride2": nn.Conv2d(c, 4, 3, stride=2, padding=1, rng=rng),
        "conv3x3_dilation2": nn.Conv2d(c, 4, 3, dilation=2, rng=rng),
        "resblock": nn.ResBlock(c, c, rng),
        "resblock_projection": nn.ResBlock(c, 5, rng),
        "global_pool_branch": nn.GlobalPoolBranch(c, 2, rng),
        "aspp": nn.ASPP(c, 2, (1, 2), rng),
    }
    results = {}
    for name, layer in layers.items():
        rep = nn.layer_report(layer, rng.normal(size=(2, c, 6, 6)), rng)
        rep["passed"] = rep["max_error"] < cfg["layer_tolerance"]
        results[name] = rep
    try:
        net = build_network(NetConfig(head=cfg["head"], seed=cfg["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    x = rng.normal(size=(1, net.config.input_channels, 8, 8))
    mask = (rng.random((8, 8)) > 0.8).astype(np.uint8)
    rep = network_grad_check(net, x, mask, cfg["n_samples"], seed=cfg["seed"])
    rep["skipped"] = len(rep["skipped"])
    rep["passed"] = rep["max_error"] < cfg["network_tolerance"]
    results["network_8x8"] = rep
    dump_json(results, cfg["out"])
    failed = [k for k, v in results.items() if not v["passed"]]
    if failed:
        raise FloatingPointError(f"gradient check failed for: {', '.join(failed)}")
    return {"checks": len(results)}


RUNNERS = {
    "gen": run_gen, "enhance": run_enhance, "separate": run_separate, "translate": run_translate,
    "compose": run_compose, "train": run_train, "infer": run_infer, "eval": run_eval,
    "kfold": run_kfold, "gradcheck": run_gradcheck,
}


# --- entry point --------------------------------------------------------------

def _format_default(key):
    if key.default is REQUIRED:
        return "required"
    return json.dumps(key.default)


def build_parser():
    parser = argparse.ArgumentParser(prog="tirseg", description="Small thermal target segmentation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name],
                           argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with config keys")
        p.add_argument("--from-manifest", dest="from_manifest", help="rerun with the config of a run manifest")
        p.add_argument("--run-manifest", dest="run_manifest",
                       help="where to write the run manifest (default: inside/next to out)")
        for key in schema:
            p.add_argument(f"--{key.name}", metavar=key.kind.upper(),
                           help=f"{key.help + ' ' if key.help else ''}(default: {_format_default(key)})")
    return parser


def run(argv=None):
    """Parse, execute and write the run manifest.  Returns the exit code."""
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    meta = {k: args.pop(k, None) for k in ("config", "from_manifest", "run_manifest")}
    schema = {k.name: k for k in SCHEMAS[command]}
    t0 = time.perf_counter()
    try:
        base = {}
        if meta["from_manifest"]:
            prior = _load_json(meta["from_manifest"], "manifest")
            if prior.get("subcommand") != command:
                raise ConfigError(f"manifest is for {prior.get('subcommand')!r}, not {command!r}")
            base = prior.get("config", {})
        if meta["config"]:
            base = {**base, **_load_json(meta["config"], "config")}
        overrides = {k: _from_text(schema[k], v) for k, v in args.items()}
        cfg = resolve_config(command, base, overrides)
        cfg_for_path = dict(cfg, run_manifest=meta["run_manifest"])
        summary = RUNNERS[command](cfg)
        manifest = {
            "subcommand": command,
            "config": cfg,
            "seeds": {k: v for k, v in cfg.items() if "seed" in k},
            "inputs": {k: cfg[k] for k in cfg if schema[k].role == "in"},
            "outputs": {k: cfg[k] for k in cfg if schema[k].role == "out"},
            "version": __version__,
            "duration_seconds": time.perf_counter() - t0,
            "summary": summary,
        }
        path = manifest_path(command, cfg_for_path)
        dump_json(manifest, path)
        print(json.dumps({"ok": True, "manifest": path, **{k: v for k, v in summary.items() if k != "item_seeds"}}))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, PGMError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
