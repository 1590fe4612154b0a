"""Command-line front end: ``metattr <command> [options]``.

Every command writes into an output directory that also receives the fully
resolved ``config.json``. Configuration is a JSON file (``--config``) plus
``--set section.key=value`` overrides, on top of an optional named preset
(``--set preset=overfit``); ``TVE_SEED`` overrides the seed.

Exit codes: 0 success, 2 invalid input, 3 training diverged, 4 a verified
threshold was missed.
"""

import argparse
import copy
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import tvet
from .artifacts import (dump_json, load_checkpoint, read_manifest, save_checkpoint, save_heatmap,
                        write_jsonl)
from .attribution import (compute_meta_attribution, exact_heatmap, image_rng, random_control,
                          transfer_explain)
from .data import PRETRAIN_TASK, TASKS, load_split, make_corpus, save_corpus
from .evaluation import (BENCH_METHODS, MODES, bench_table, check_bound, correlation_study,
                         evaluate_mode, forward_passes)
from .explainer import (ExplainerModel, explain_forward, meta_targets,
                        evaluate_loss, pretrain)
from .grid import GridSpec
from .models import ClassifierHead, DivergenceError, PatchClassifier, PatchEncoder, TargetModel

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_THRESHOLD = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "preset": "none",
    "task": PRETRAIN_TASK,
    "grid": {"W": 32, "C": 4, "P": 8, "hop_radius": 2, "metric": "chebyshev"},
    "data": {"n_train": 2000, "n_test": 400, "n_down_train": 600, "n_down_test": 200},
    "backbone": {"d_model": 32, "embed_dim": 16, "n_blocks": 2, "epochs": 20, "batch_size": 64,
                 "lr": 3e-3, "warmup_ratio": 0.05, "weight_decay": 0.05},
    "head": {"epochs": 20, "batch_size": 64, "lr": 1e-2, "warmup_ratio": 0.05, "weight_decay": 0.05},
    "full": {"epochs": 5, "batch_size": 64, "lr": 1e-3, "warmup_ratio": 0.05, "weight_decay": 0.05},
    "explainer": {"d_e": 64, "n_heads": 4, "n_trunk": 1, "steps": 5000,
                  "batch_size": 16, "patches_per_image": 8, "lr": 1e-3, "warmup_ratio": 0.05,
                  "weight_decay": 0.05, "checkpoint_every": 0, "n_images": 0,
                  "max_loss_ratio": 0.01, "max_phi_error": 0.05},
    "eval": {"split": "test", "n_images": 50, "mode": "TVE", "explain_mode": "TVE", "n_seeds": 20,
             "n_samples": 16, "n_pairs": 200},
    "bench": {"n_images": 64, "repeats": 3, "n_classes": 4, "methods": ["TVE", "exact", "mc16"]},
    "paths": {"data": None, "backbone": None, "target": None, "explainer": None, "general": None},
}

PRESETS = {
    "none": {},
    "overfit": {"explainer": {"n_images": 8, "steps": 2000, "lr": 1e-2, "checkpoint_every": 0}},
    "smoke": {"data": {"n_train": 200, "n_test": 40, "n_down_train": 80, "n_down_test": 20},
              "backbone": {"epochs": 2}, "head": {"epochs": 2}, "full": {"epochs": 1},
              "explainer": {"steps": 20, "checkpoint_every": 10, "n_images": 16},
              "eval": {"n_images": 4, "n_seeds": 2, "n_pairs": 8},
              "bench": {"n_images": 2, "repeats": 1, "methods": ["TVE", "exact"]}},
}

EXPLAIN_MODES = ("TVE", "exact", "transferred", "random")


class UsageError(ValueError):
    pass


class ThresholdMiss(RuntimeError):
    pass


# ---------------------------------------------------------------- config

def _merge(base, over, where=""):
    for key, value in over.items():
        path = f"{where}{key}"
        if key not in base:
            raise UsageError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {path!r} must be an object")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value
    return base


def _parse_set(item):
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def _check_types(cfg, ref, where=""):
    for key, default in ref.items():
        path, value = f"{where}{key}", cfg[key]
        if isinstance(default, dict):
            _check_types(value, default, path + ".")
        elif default is None:
            if value is not None and not isinstance(value, str):
                raise UsageError(f"{path} must be a path string")
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise UsageError(f"{path} must be true/false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise UsageError(f"{path} must be a non-negative integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value) or value < 0:
                raise UsageError(f"{path} must be a non-negative number")
            cfg[key] = float(value)
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise UsageError(f"{path} must be a list")
        elif not isinstance(value, type(default)):
            raise UsageError(f"{path} must be a {type(default).__name__}")


def resolve_config(file=None, sets=(), paths=None, env=None):
    """defaults <- preset <- config file <- --set overrides <- TVE_SEED; validated."""
    env = os.environ if env is None else env
    user = {}
    if file:
        try:
            user = json.loads(Path(file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {file}: {exc}") from exc
        if not isinstance(user, dict):
            raise UsageError("config file must hold a JSON object")
    overrides = [_parse_set(s) for s in sets]
    probe = copy.deepcopy(DEFAULTS)
    _merge(probe, copy.deepcopy(user))
    for o in overrides:
        _merge(probe, o)
    preset = probe["preset"]
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = _merge(copy.deepcopy(DEFAULTS), copy.deepcopy(PRESETS[preset]))
    _merge(cfg, user)
    for o in overrides:
        _merge(cfg, o)
    if paths:
        _merge(cfg["paths"], {k: str(v) for k, v in paths.items() if v is not None})
    if "TVE_SEED" in env:
        try:
            cfg["seed"] = int(env["TVE_SEED"])
        except ValueError as exc:
            raise UsageError(f"TVE_SEED must be an integer, got {env['TVE_SEED']!r}") from exc
    _check_types(cfg, DEFAULTS)
    _validate(cfg)
    return cfg


def _validate(cfg):
    GridSpec(**cfg["grid"])
    if cfg["task"] not in TASKS:
        raise UsageError(f"unknown task {cfg['task']!r}; choose from {sorted(TASKS)}")
    if cfg["threads"] < 1:
        raise UsageError("threads must be >= 1")
    for section in ("backbone", "head", "full", "explainer"):
        if cfg[section]["batch_size"] < 1:
            raise UsageError(f"{section}.batch_size must be >= 1")
        if cfg[section]["lr"] <= 0:
            raise UsageError(f"{section}.lr must be positive")
        if not cfg[section]["warmup_ratio"] <= 1:
            raise UsageError(f"{section}.warmup_ratio must be in [0, 1]")
    if cfg["explainer"]["n_heads"] < 2:
        raise UsageError("explainer.n_heads must be >= 2")
    if cfg["eval"]["mode"] not in MODES:
        raise UsageError(f"eval.mode must be one of {MODES}")
    if cfg["eval"]["explain_mode"] not in EXPLAIN_MODES:
        raise UsageError(f"eval.explain_mode must be one of {EXPLAIN_MODES}")
    if cfg["eval"]["split"] not in ("train", "test"):
        raise UsageError("eval.split must be train or test")
    bad = [m for m in cfg["bench"]["methods"] if m not in BENCH_METHODS]
    if bad:
        raise UsageError(f"unknown bench methods {bad}")
    if cfg["bench"]["n_images"] < 1:
        raise UsageError("bench.n_images must be >= 1")
    if cfg["bench"]["n_classes"] < 2:
        raise UsageError("bench.n_classes must be >= 2")


# ---------------------------------------------------------------- helpers

def _need(cfg, key):
    value = cfg["paths"][key]
    if value is None:
        raise UsageError(f"--{key} is required for this command")
    return Path(value)


def _grid(cfg):
    return GridSpec(**cfg["grid"])


def _out_dir(path, force=False):
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"{path} exists and is not empty (use --force)")
    if path.exists() and force:
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _copy_checkpoint(src, dst):
    manifest = read_manifest(src)
    for p in manifest["params"]:
        shutil.copyfile(Path(src) / p["file"], dst / p["file"])
    shutil.copyfile(Path(src) / "manifest.json", dst / "manifest.json")


def _target(path):
    modules, manifest = load_checkpoint(path)
    if "encoder" not in modules or "head" not in modules:
        raise UsageError(f"{path} is not a target-model checkpoint")
    return TargetModel(modules["encoder"], modules["head"]), manifest


def _explainer(path, encoder):
    modules, _ = load_checkpoint(path)
    if "explainer" not in modules:
        raise UsageError(f"{path} holds no explainer")
    model = modules["explainer"]
    if model.grid != encoder.grid or model.embed_dim != encoder.embed_dim:
        raise UsageError(f"explainer at {path} does not match the target's grid/embedding")
    return model


def _split(cfg, task, split, n=0):
    ds, grid = load_split(_need(cfg, "data"), task, split)
    if grid != _grid(cfg):
        raise UsageError(f"dataset grid {grid} differs from config grid {_grid(cfg)}")
    return ds.subset(slice(0, n)) if n else ds


def _train_kw(section):
    return {k: section[k] for k in ("epochs", "batch_size", "lr", "warmup_ratio", "weight_decay")}


def _trace_rows(losses):
    return [{"step": i, "loss": float(v)} for i, v in enumerate(losses)]


def _phi_error(model, encoder, head, images):
    """Mean |φ̂ - φ| over every patch and class of ``head`` on ``images``."""
    errs = []
    for x in images:
        exact, pred = compute_meta_attribution(encoder, x), explain_forward(model, x)
        for y in range(head.n_classes):
            errs.append(np.abs(transfer_explain(pred, head, y).values
                               - transfer_explain(exact, head, y).values).mean())
    return float(np.mean(errs))


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg, out):
    grid = _grid(cfg)
    corpus = make_corpus(grid, cfg["seed"], **cfg["data"])
    manifest = save_corpus(out, corpus, grid, cfg["seed"])
    counts = {}
    for it in manifest["items"]:
        key = f"{it['task']}/{it['split']}"
        counts.setdefault(key, [0] * TASKS[it["task"]])
        counts[key][it["label"]] += 1
    return {"label_counts": counts}


def cmd_train_backbone(cfg, out):
    train = _split(cfg, PRETRAIN_TASK, "train")
    test = _split(cfg, PRETRAIN_TASK, "test")
    b = cfg["backbone"]
    clf = PatchClassifier(grid=_grid(cfg), d_model=b["d_model"], embed_dim=b["embed_dim"],
                          n_blocks=b["n_blocks"], task=PRETRAIN_TASK, random_state=cfg["seed"],
                          **_train_kw(b))
    clf.fit(train.images, train.labels)
    save_checkpoint(out, {"encoder": clf.encoder_, "head": clf.head_}, _grid(cfg), cfg["seed"],
                    task=PRETRAIN_TASK, role="backbone")
    write_jsonl(out / "trace.jsonl", _trace_rows(clf.loss_curve_))
    return {"train_accuracy": clf.train_accuracy_,
            "test_accuracy": float(np.mean(clf.predict(test.images) == test.labels))}


def cmd_finetune_head(cfg, out):
    modules, _ = load_checkpoint(_need(cfg, "backbone"))
    task = cfg["task"]
    train, test = _split(cfg, task, "train"), _split(cfg, task, "test")
    clf = PatchClassifier(encoder=modules["encoder"], train_encoder=False, task=task,
                          random_state=cfg["seed"], **_train_kw(cfg["head"]))
    clf.fit(train.images, train.labels)
    save_checkpoint(out, {"encoder": clf.encoder_, "head": clf.head_}, _grid(cfg), cfg["seed"],
                    task=task, role="classifier-tuned")
    write_jsonl(out / "trace.jsonl", _trace_rows(clf.loss_curve_))
    return {"train_accuracy": clf.train_accuracy_,
            "test_accuracy": float(np.mean(clf.predict(test.images) == test.labels))}


def cmd_finetune_full(cfg, out):
    src = _need(cfg, "target")
    target, manifest = _target(src)
    task = manifest.get("task", cfg["task"])
    if cfg["full"]["epochs"] == 0:
        _copy_checkpoint(src, out)
        write_jsonl(out / "trace.jsonl", [])
        return {"copied": True}
    train, test = _split(cfg, task, "train"), _split(cfg, task, "test")
    clf = PatchClassifier(encoder=target.encoder, head=target.head, train_encoder=True, task=task,
                          random_state=cfg["seed"], **_train_kw(cfg["full"]))
    clf.fit(train.images, train.labels)
    save_checkpoint(out, {"encoder": clf.encoder_, "head": clf.head_}, _grid(cfg), cfg["seed"],
                    task=task, role="full-finetuned")
    write_jsonl(out / "trace.jsonl", _trace_rows(clf.loss_curve_))
    return {"train_accuracy": clf.train_accuracy_,
            "test_accuracy": float(np.mean(clf.predict(test.images) == test.labels))}


def _run_explainer_training(cfg, out, start, encoder, head, images, task):
    e = cfg["explainer"]
    ckpt_dir = out / "checkpoints"

    def on_checkpoint(step, model):
        save_checkpoint(ckpt_dir / f"step_{step:06d}", {"explainer": model}, _grid(cfg), cfg["seed"],
                        step=step)

    model, trace, _ = pretrain(
        start, encoder, images, steps=e["steps"], batch_size=e["batch_size"],
        patches_per_image=e["patches_per_image"], lr=e["lr"], warmup_ratio=e["warmup_ratio"],
        weight_decay=e["weight_decay"], seed=cfg["seed"], checkpoint_every=e["checkpoint_every"],
        threads=cfg["threads"], on_checkpoint=on_checkpoint if e["checkpoint_every"] else None)
    save_checkpoint(out, {"explainer": model}, _grid(cfg), cfg["seed"], task=task, step=e["steps"])
    write_jsonl(out / "trace.jsonl", trace)
    probe = images[:64]
    targets = meta_targets(encoder, probe, threads=cfg["threads"])
    initial, final = evaluate_loss(start, targets, probe), evaluate_loss(model, targets, probe)
    report = {"initial_loss": initial, "final_loss": final,
              "loss_ratio": final / initial if initial > 0 else 0.0, "n_probe_images": len(probe)}
    if head is not None:
        report["mean_abs_phi_error"] = _phi_error(model, encoder, head, probe)
    dump_json(out / "convergence.json", report)
    if cfg["preset"] == "overfit":
        met = report["loss_ratio"] < e["max_loss_ratio"] and report.get("mean_abs_phi_error", 0) <= e["max_phi_error"]
        report["criteria_met"] = met
        dump_json(out / "convergence.json", report)
        if not met:
            raise ThresholdMiss(f"overfit run missed its targets: {report}")
    return report


def cmd_pretrain_explainer(cfg, out):
    modules, _ = load_checkpoint(_need(cfg, "backbone"))
    encoder = modules["encoder"]
    e = cfg["explainer"]
    images = _split(cfg, PRETRAIN_TASK, "train", e["n_images"]).images
    start = ExplainerModel(encoder.grid, encoder.embed_dim, e["d_e"], e["n_heads"], e["n_trunk"],
                           images.shape[1], cfg["seed"])
    return _run_explainer_training(cfg, out, start, encoder, modules.get("head"), images, PRETRAIN_TASK)


def cmd_finetune_explainer(cfg, out):
    target, manifest = _target(_need(cfg, "target"))
    task = manifest.get("task", cfg["task"])
    e = cfg["explainer"]
    src = cfg["paths"]["explainer"]
    if src is not None and e["steps"] == 0:
        _copy_checkpoint(Path(src), out)
        write_jsonl(out / "trace.jsonl", [])
        return {"copied": True}
    images = _split(cfg, task, "train", e["n_images"]).images
    if src is None:
        start = ExplainerModel(target.grid, target.encoder.embed_dim, e["d_e"], e["n_heads"],
                               e["n_trunk"], images.shape[1], cfg["seed"])
    else:
        start = _explainer(Path(src), target.encoder)
    return _run_explainer_training(cfg, out, start, target.encoder, target.head, images, task)


def _eval_images(cfg, task):
    ev = cfg["eval"]
    return _split(cfg, task, ev["split"], ev["n_images"]).images


def cmd_explain(cfg, out):
    target, manifest = _target(_need(cfg, "target"))
    task = manifest.get("task", cfg["task"])
    mode = cfg["eval"]["explain_mode"]
    explainer = None
    if mode == "TVE":
        if cfg["paths"]["explainer"] is None:
            raise UsageError("explain mode TVE requires --explainer")
        explainer = _explainer(_need(cfg, "explainer"), target.encoder)
    images = _eval_images(cfg, task)
    preds = target.predict(images)
    (out / "heatmaps").mkdir()
    for k, x in enumerate(images):
        y = int(preds[k])
        if mode == "TVE":
            hm = transfer_explain(explain_forward(explainer, x), target.head, y)
        elif mode == "exact":
            hm = exact_heatmap(target, x, y)
        elif mode == "transferred":
            hm = transfer_explain(compute_meta_attribution(target.encoder, x), target.head, y)
        else:
            hm = random_control(image_rng(cfg["seed"], k), target.grid, y)
        save_heatmap(out / "heatmaps" / f"img_{k:05d}", hm)
    return {"n_heatmaps": len(images), "mode": mode}


def cmd_evaluate(cfg, out):
    target, manifest = _target(_need(cfg, "target"))
    task = manifest.get("task", cfg["task"])
    ev = cfg["eval"]
    mode = ev["mode"]
    explainer = general = None
    if mode == "woPT":
        e = cfg["explainer"]
        explainer = ExplainerModel(target.grid, target.encoder.embed_dim, e["d_e"], e["n_heads"],
                                   e["n_trunk"], seed=cfg["seed"])
    elif mode not in ("exact", "random"):
        if cfg["paths"]["explainer"] is None:
            raise UsageError(f"mode {mode} requires an explainer checkpoint (--explainer)")
        explainer = _explainer(_need(cfg, "explainer"), target.encoder)
    if mode == "TVE_Hg":
        if cfg["paths"]["general"] is None:
            raise UsageError("mode TVE_Hg requires the general head H_g (--general)")
        modules, _ = load_checkpoint(_need(cfg, "general"))
        general = modules["head"]
    images = _eval_images(cfg, task)
    result = evaluate_mode(mode, images, target, explainer=explainer, general_head=general,
                           n_seeds=ev["n_seeds"], seed=cfg["seed"], threads=cfg["threads"])
    rows = result.to_json(model=Path(cfg["paths"]["target"]).name, dataset=f"{task}/{ev['split']}")
    dump_json(out / "results.json", rows)
    return {r["direction"]: r["auc_mean"] for r in rows}


def cmd_verify_bound(cfg, out):
    target, manifest = _target(_need(cfg, "target"))
    task = manifest.get("task", cfg["task"])
    explainer = _explainer(_need(cfg, "explainer"), target.encoder)
    images = _eval_images(cfg, task)
    exact = [compute_meta_attribution(target.encoder, x) for x in images]
    pred = [explain_forward(explainer, x) for x in images]
    report = check_bound(exact, pred, target.head)
    dump_json(out / "bound.json", report.to_json())
    if report.holds is False:
        raise ThresholdMiss(f"bound violated: {report.to_json()}")
    return report.to_json()


def cmd_correlate(cfg, out):
    target, manifest = _target(_need(cfg, "target"))
    task = manifest.get("task", cfg["task"])
    ev = cfg["eval"]
    result = correlation_study(target, _eval_images(cfg, task), n_samples=ev["n_samples"],
                               seed=cfg["seed"], n_pairs=ev["n_pairs"], threads=cfg["threads"])
    dump_json(out / "correlation.json", result.to_json())
    return {"pearson_r": result.r, "n_pairs": len(result.pairs)}


def cmd_bench(cfg, out):
    """Images/second of each method on random-initialised models of three shapes.

    ``base`` uses the configured grid, ``wide_head`` doubles the number of
    classes, and ``half_grid`` halves P (doubling the patch size) at the same W.
    """
    b, bb, e = cfg["bench"], cfg["backbone"], cfg["explainer"]
    grid = _grid(cfg)
    if grid.P % 2:
        raise UsageError("bench needs an even P to build the half-P variant")
    half = GridSpec(grid.W, grid.C * 2, grid.P // 2, grid.hop_radius, grid.metric)
    variants = {"base": (grid, b["n_classes"]), "wide_head": (grid, 2 * b["n_classes"]),
                "half_grid": (half, b["n_classes"])}
    rng = np.random.default_rng(cfg["seed"])
    images = (rng.normal(size=(b["n_images"], 3, grid.W, grid.W))).astype(np.float32)
    cases, meta = {}, {}
    for name, (g, k) in variants.items():
        enc = PatchEncoder(g, bb["d_model"], bb["embed_dim"], bb["n_blocks"], seed=cfg["seed"]).set_trainable(False)
        target = TargetModel(enc, ClassifierHead(bb["embed_dim"], k, seed=cfg["seed"]).set_trainable(False))
        explainer = ExplainerModel(g, bb["embed_dim"], e["d_e"], e["n_heads"], e["n_trunk"], seed=cfg["seed"])
        for method in b["methods"]:
            # mc16 needs 32 P² evaluations per image; one variant is enough to place it
            if method == "mc16" and name != "base":
                continue
            cases[method, name] = (method, target, explainer)
            meta[method, name] = {"method": method, "model": name, "P": g.P, "n_classes": k,
                                  "forward_passes": forward_passes(method, g)}
    medians = bench_table(cases, images, repeats=b["repeats"])
    rows = [{**meta[key], "images_per_second": medians[key]} for key in cases]
    rate = {(r["method"], r["model"]): r["images_per_second"] for r in rows}
    summary = {}
    if ("TVE", "base") in rate:
        summary["tve_head_width_change"] = abs(rate["TVE", "wide_head"] / rate["TVE", "base"] - 1)
    if ("exact", "base") in rate:
        summary["exact_p_doubling_slowdown"] = rate["exact", "half_grid"] / rate["exact", "base"]
    dump_json(out / "bench.json", {"rows": rows, "summary": summary})
    return summary


COMMANDS = {
    "gen-data": (cmd_gen_data, ()),
    "train-backbone": (cmd_train_backbone, ("data",)),
    "finetune-head": (cmd_finetune_head, ("data", "backbone")),
    "finetune-full": (cmd_finetune_full, ("data", "target")),
    "pretrain-explainer": (cmd_pretrain_explainer, ("data", "backbone")),
    "finetune-explainer": (cmd_finetune_explainer, ("data", "target", "explainer")),
    "explain": (cmd_explain, ("data", "target", "explainer")),
    "evaluate": (cmd_evaluate, ("data", "target", "explainer", "general")),
    "verify-bound": (cmd_verify_bound, ("data", "target", "explainer")),
    "correlate": (cmd_correlate, ("data", "target")),
    "bench": (cmd_bench, ()),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="metattr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, inputs) in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").split("\n")[0] or None)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. explainer.steps=100")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
        for key in inputs:
            p.add_argument(f"--{key}", help=f"{key} directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    fn, inputs = COMMANDS[args.command]
    try:
        sets = list(args.set)
        if args.threads is not None:
            sets.append(f"threads={args.threads}")
        cfg = resolve_config(args.config, sets, {k: getattr(args, k) for k in inputs})
        out = _out_dir(args.out, args.force)
        dump_json(out / "config.json", cfg)
        summary = fn(cfg, out)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ThresholdMiss as exc:
        print(f"threshold missed: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except (ValueError, KeyError, FileNotFoundError, tvet.TVETError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
