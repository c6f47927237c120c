"""Command-line front end.

Verbs, each driven by a JSON config (--config) with a strict schema; unknown
keys are errors so typos fail fast instead of silently using defaults:

* synth-data        write a glyph corpus as IDX files
* pretrain-teacher  train a model without a teacher and save its params
* train             train a student (with a teacher when kd lam > 0)
* sweep             magnitude grid of RA vs RA+KD, CSV + gain table + plot
* eval              error rate of a saved params file on a dataset

--seed and --out override the config's seed and primary output path.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, policy, smallnet, synthetic, trainer
from .distill import KDConfig
from .imageops import DEFAULT_FILL, AugmentSpace

__all__ = ["main", "ConfigError", "build_train_config"]


class ConfigError(ValueError):
    """Raised for malformed config files."""


def _check_keys(obj: dict, ctx: str, required: set, optional: set = frozenset()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{ctx}: expected an object")
    unknown = sorted(set(obj) - required - set(optional))
    if unknown:
        raise ConfigError(f"{ctx}: unknown keys {unknown}")
    missing = sorted(required - set(obj))
    if missing:
        raise ConfigError(f"{ctx}: missing keys {missing}")


def _load_dataset(obj: dict, ctx: str, split: str) -> trainer.Dataset:
    if not isinstance(obj, dict) or "format" not in obj:
        raise ConfigError(f"{ctx}: expected an object with a 'format' key")
    fmt = obj["format"]
    if fmt == "idx":
        _check_keys(obj, ctx, {"format", "images", "labels"})
        return harness.load_idx(
            Path(obj["images"]).read_bytes(), Path(obj["labels"]).read_bytes(), split
        )
    if fmt == "cifar":
        _check_keys(obj, ctx, {"format", "path"})
        return harness.load_cifar_binary(Path(obj["path"]).read_bytes(), split)
    raise ConfigError(f"{ctx}: unknown format {fmt!r}; choose 'idx' or 'cifar'")


def _build_schedule(obj: dict, ctx: str) -> trainer.Schedule:
    _check_keys(obj, ctx, {"kind"}, {"base_lr", "factor", "period_epochs"})
    kind = obj["kind"]
    if kind == "cosine":
        _check_keys(obj, ctx, {"kind"}, {"base_lr"})
        return trainer.Cosine(base_lr=float(obj.get("base_lr", 0.1)))
    if kind == "exponential-every":
        return trainer.ExponentialEvery(
            base_lr=float(obj.get("base_lr", 0.256)),
            factor=float(obj.get("factor", 0.97)),
            period_epochs=float(obj.get("period_epochs", 2.4)),
        )
    raise ConfigError(f"{ctx}: unknown schedule kind {kind!r}")


def _build_optimizer(obj: dict, ctx: str) -> trainer.OptimSpec:
    kind = obj.get("kind")
    if kind == "rmsprop":
        _check_keys(obj, ctx, {"kind"}, {"decay", "momentum", "epsilon", "weight_decay"})
        base = trainer.RMSProp()
        return trainer.RMSProp(
            decay=float(obj.get("decay", base.decay)),
            momentum=float(obj.get("momentum", base.momentum)),
            epsilon=float(obj.get("epsilon", base.epsilon)),
            weight_decay=float(obj.get("weight_decay", base.weight_decay)),
        )
    if kind == "sgd-momentum":
        _check_keys(obj, ctx, {"kind"}, {"momentum", "weight_decay"})
        return trainer.SGDMomentum(
            momentum=float(obj.get("momentum", 0.9)),
            weight_decay=float(obj.get("weight_decay", 0.0)),
        )
    raise ConfigError(f"{ctx}: unknown optimizer kind {kind!r}")


def _build_policy(obj: dict, ctx: str) -> policy.PolicySpec:
    kind = obj.get("kind")
    if kind == "randaugment":
        _check_keys(obj, ctx, {"kind", "n", "m"}, {"space"})
        space_name = obj.get("space", "destruction")
        try:
            space = AugmentSpace(space_name)
        except ValueError:
            raise ConfigError(f"{ctx}: unknown space {space_name!r}") from None
        return policy.RandAugmentPolicy(n=int(obj["n"]), m=int(obj["m"]), space=space)
    if kind == "file":
        _check_keys(obj, ctx, {"kind", "path"})
        try:
            return policy.parse_policy(Path(obj["path"]).read_text())
        except policy.PolicyError as exc:
            raise ConfigError(f"{ctx}: {obj['path']}: {exc}") from None
    raise ConfigError(f"{ctx}: unknown policy kind {kind!r}")


def build_train_config(obj: dict, ctx: str = "train") -> trainer.TrainConfig:
    _check_keys(
        obj,
        ctx,
        {"epochs", "batch_size", "schedule", "kd", "policy", "seed"},
        {"fill", "clean_finetune_epochs", "kd_during_finetune", "optimizer"},
    )
    kd_obj = obj["kd"]
    _check_keys(kd_obj, f"{ctx}.kd", {"lam", "k"}, {"renormalize"})
    try:
        return trainer.TrainConfig(
            epochs=int(obj["epochs"]),
            batch_size=int(obj["batch_size"]),
            schedule=_build_schedule(obj["schedule"], f"{ctx}.schedule"),
            kd=KDConfig(
                lam=float(kd_obj["lam"]),
                k=int(kd_obj["k"]),
                renormalize=bool(kd_obj.get("renormalize", True)),
            ),
            policy=_build_policy(obj["policy"], f"{ctx}.policy"),
            seed=int(obj["seed"]),
            fill=int(obj.get("fill", DEFAULT_FILL)),
            clean_finetune_epochs=int(obj.get("clean_finetune_epochs", 0)),
            kd_during_finetune=bool(obj.get("kd_during_finetune", False)),
            optimizer=_build_optimizer(
                obj.get("optimizer", {"kind": "rmsprop"}), f"{ctx}.optimizer"
            ),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{ctx}: {exc}") from None


def _load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _history_csv(history: trainer.TrainHistory) -> str:
    lines = ["epoch,mean_loss,test_error,lr"]
    for r in history.records:
        lines.append(f"{r.epoch},{r.mean_loss:.6f},{r.test_error:.6f},{r.lr:.6f}")
    return "\n".join(lines) + "\n"


def _cmd_synth_data(cfg: dict, args) -> int:
    _check_keys(cfg, "config", {"out_dir", "train_count", "test_count", "seed"}, {"size"})
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    out_dir = Path(args.out) if args.out else Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    size = int(cfg.get("size", 28))
    for split, count in (("train", int(cfg["train_count"])), ("test", int(cfg["test_count"]))):
        # disjoint streams per split so test glyphs never repeat train ones
        data = synthetic.make_dataset(count, seed + (0 if split == "train" else 1), size, split)
        images, labels = harness.write_idx(data)
        (out_dir / f"{split}-images-idx3-ubyte").write_bytes(images)
        (out_dir / f"{split}-labels-idx1-ubyte").write_bytes(labels)
        print(f"{split}: {count} glyphs -> {out_dir}/{split}-*-ubyte")
    return 0


def _prepare(cfg: dict, args, ctx: str):
    train_obj = dict(cfg["train"])
    if args.seed is not None:
        train_obj["seed"] = args.seed
    tcfg = build_train_config(train_obj, f"{ctx}.train")
    data = _load_dataset(cfg["train_data"], f"{ctx}.train_data", "train")
    test = _load_dataset(cfg["test_data"], f"{ctx}.test_data", "test")
    subset = cfg.get("subset_size")
    if subset is not None:
        data = harness.stratified_subset(data, int(subset), tcfg.seed)
    return tcfg, data, test


def _cmd_pretrain_teacher(cfg: dict, args) -> int:
    _check_keys(
        cfg, "config",
        {"train_data", "test_data", "out", "train"},
        {"subset_size", "class_count"},
    )
    tcfg, data, test = _prepare(cfg, args, "config")
    out = Path(args.out) if args.out else Path(cfg["out"])
    cc = cfg.get("class_count")
    harness.pretrain_teacher(data, test, tcfg, out, cc and int(cc), log=print)
    return 0


def _cmd_train(cfg: dict, args) -> int:
    _check_keys(
        cfg, "config",
        {"train_data", "test_data", "out", "train"},
        {"subset_size", "class_count", "teacher", "history_out"},
    )
    tcfg, data, test = _prepare(cfg, args, "config")
    teacher = None
    if tcfg.kd.lam > 0:
        if "teacher" not in cfg:
            raise ConfigError("config: kd lam > 0 needs a 'teacher' params path")
        teacher = smallnet.load_params(Path(cfg["teacher"]).read_bytes())
    cc = cfg.get("class_count")
    class_count = int(cc) if cc is not None else harness.infer_class_count(data, test)
    shape = data.images[0].pixels.shape
    init = smallnet.init_params(tcfg.seed, shape, class_count)
    params, history = trainer.train(teacher, init, data, test, tcfg)
    out = Path(args.out) if args.out else Path(cfg["out"])
    out.write_bytes(smallnet.save_params(params))
    if "history_out" in cfg:
        Path(cfg["history_out"]).write_text(_history_csv(history))
    final = history.records[-1]
    print(f"trained {tcfg.epochs}+{tcfg.clean_finetune_epochs} epochs on {len(data)} "
          f"samples; final test error {final.test_error:.6f} -> {out}")
    return 0


def _cmd_sweep(cfg: dict, args) -> int:
    _check_keys(
        cfg, "config",
        {"train_data", "test_data", "magnitudes", "modes", "seeds", "out_csv", "train"},
        {"teacher", "subset_size", "plot"},
    )
    train_obj = dict(cfg["train"])
    if args.seed is not None:
        train_obj["seed"] = args.seed
    base = build_train_config(train_obj, "config.train")
    data = _load_dataset(cfg["train_data"], "config.train_data", "train")
    test = _load_dataset(cfg["test_data"], "config.test_data", "test")
    try:
        sweep_cfg = harness.SweepConfig(
            magnitudes=tuple(int(m) for m in cfg["magnitudes"]),
            modes=tuple(cfg["modes"]),
            seeds=tuple(int(s) for s in cfg["seeds"]),
            base=base,
            teacher_path=cfg.get("teacher"),
            subset_size=cfg.get("subset_size") and int(cfg["subset_size"]),
        )
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from None
    out_csv = Path(args.out) if args.out else Path(cfg["out_csv"])
    result = harness.run_sweep(
        sweep_cfg, data, test,
        csv_path=out_csv,
        plot_path=cfg.get("plot"),
        progress=lambda line: print(line, file=sys.stderr),
    )
    print(f"wrote {out_csv}")
    if set(sweep_cfg.modes) == {harness.MODE_RA, harness.MODE_RAKD}:
        print("magnitude  RA        RA+KD     gain")
        for m, ra, kd, gain in result.gain_table():
            print(f"{m:<10}{ra:<10.4f}{kd:<10.4f}{gain:+.4f}")
    return 0


def _cmd_eval(cfg: dict, args) -> int:
    _check_keys(cfg, "config", {"params", "test_data"})
    if args.out:
        raise ConfigError("eval writes no output file; --out is not accepted")
    params = smallnet.load_params(Path(cfg["params"]).read_bytes())
    test = _load_dataset(cfg["test_data"], "config.test_data", "test")
    err = trainer.evaluate(params, test)
    print(f"test error {err:.6f} over {len(test)} samples")
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "pretrain-teacher": _cmd_pretrain_teacher,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="distillaug",
        description="data augmentation with teacher-stabilized training",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override primary output path")
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](_load_config(args.config), args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
