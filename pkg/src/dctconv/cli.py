"""``dctconv`` command line: train, count-params, mask-stats, eval.

Every option can come from a flag or from one JSON file given with
``--config``; flags win when both are set. The JSON file is either a run
config (keys named like the long flags, with ``_`` for ``-``, plus optional
``model`` and ``regime`` objects) or a bare model config (anything with a
``layers`` list).

Exit codes: 0 success, 1 ``--assert-table`` mismatch, 2 invalid
configuration or missing input, 3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data_io import FormatError, load_cifar10, load_cifar100, resolve_data_dir, synthetic_dataset
from .dct_conv import SUBROW, SpectralPointwise
from .model_builder import ConfigError, ModelConfig, build_model, param_count
from .presets import REFERENCE_TOTALS_INFO, Regime, compare_with_tables, get_preset, table_key
from .training import PHASES, TrainData, evaluate, run_phase, stream_seed

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
SELECT = {"all": "all", "only-3x3": "only_3x3", "custom": "custom"}
DATASETS = ("cifar100", "cifar10", "synthetic")


class UsageError(Exception):
    """Bad flags or config; reported with exit code 2."""


@dataclass
class RunConfig:
    """Fully resolved options of one command."""

    preset: str | None = None
    model: ModelConfig | None = None
    regime: Regime | None = None
    synthetic: dict = field(default_factory=dict)
    dataset: str = "synthetic"
    data: str | None = None
    p: float = 0.0
    seed: int = 0
    mask_seed: int | None = None
    epochs: int | None = None
    batch: int | None = None
    mode: str = "orthonormal"
    select: str = "all"
    layers: list = field(default_factory=list)
    phases: list = field(default_factory=lambda: list(PHASES))
    limit: int | None = None
    limit_test: int | None = None
    out: str = "runs/latest"

    def validate(self):
        if self.model is None:
            raise UsageError("no model: give --preset or --config")
        if not (0.0 <= self.p <= 1.0) or math.isnan(self.p):
            raise UsageError(f"--p must be in [0, 1], got {self.p}")
        if self.epochs is not None and self.epochs < 0:
            raise UsageError(f"--epochs must be >= 0, got {self.epochs}")
        if self.batch is not None and self.batch < 1:
            raise UsageError(f"--batch must be >= 1, got {self.batch}")
        for name in ("limit", "limit_test"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be >= 1, got {v}")
        if self.mode not in ("orthonormal", "verbatim"):
            raise UsageError(f"unknown --mode {self.mode!r}")
        if self.select not in SELECT:
            raise UsageError(f"unknown --select {self.select!r}")
        if self.select == "custom" and not self.layers and not any(s.spectral for s in self.model.layers):
            raise UsageError("--select custom needs --layers or layer specs marked spectral")
        if self.dataset not in DATASETS:
            raise UsageError(f"unknown --dataset {self.dataset!r}")
        bad = [p for p in self.phases if p not in PHASES]
        if bad:
            raise UsageError(f"unknown phases {bad}; expected a subset of {list(PHASES)}")
        return self

    @property
    def selection(self):
        return SELECT[self.select]

    @property
    def resolved_mask_seed(self):
        return stream_seed(self.seed, "mask") if self.mask_seed is None else self.mask_seed

    def manifest(self, command):
        return {
            "command": command,
            "version": __version__,
            "preset": self.preset,
            "model": self.model.to_dict(),
            "regime": self.regime.to_dict() if self.regime else None,
            "data": {"dataset": self.dataset, "path": self.data, "synthetic": self.synthetic,
                     "limit": self.limit, "limit_test": self.limit_test},
            "p": self.p,
            "seed": self.seed,
            "mask_seed": self.resolved_mask_seed,
            "epochs": self.epochs if self.epochs is not None else (self.regime.epochs if self.regime else None),
            "batch": self.batch if self.batch is not None else (self.regime.batch_size if self.regime else None),
            "mode": self.mode,
            "select": self.select,
            "layers": self.layers,
            "phases": self.phases,
        }


# -- option resolution ---------------------------------------------------------

FLAG_KEYS = ("preset", "data", "dataset", "p", "seed", "mask_seed", "epochs", "batch", "mode", "select",
             "layers", "phases", "limit", "limit_test", "out")


def _read_config_file(path):
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: expected a JSON object")
    if "layers" in raw:
        return {"model": raw}
    unknown = set(raw) - set(FLAG_KEYS) - {"model", "regime", "synthetic"}
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    return raw


def resolve(args, model: ModelConfig | None = None) -> RunConfig:
    """Merge preset defaults, the JSON config file and flags (in that order).

    ``model``, when given, replaces whatever model the options name.
    """
    file_opts = _read_config_file(args.config) if getattr(args, "config", None) else {}
    opts = dict(file_opts)
    for key in FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v

    rc = RunConfig()
    preset_name = opts.get("preset")
    if preset_name:
        try:
            preset = get_preset(preset_name)
        except KeyError as e:
            raise UsageError(e.args[0]) from None
        rc.preset, rc.model, rc.regime = preset_name, preset.config, preset.regime
        rc.synthetic, rc.dataset = dict(preset.synthetic), preset.dataset
    try:
        if "model" in opts:
            rc.model = ModelConfig.from_dict(opts["model"])
        if "regime" in opts:
            base = rc.regime.to_dict() if rc.regime else {}
            rc.regime = Regime(**{**base, **opts["regime"]})
    except (ConfigError, TypeError) as e:
        raise UsageError(f"invalid config: {e}") from None
    if model is not None:
        rc.model = model
    if rc.regime is None:
        rc.regime = Regime()
    if "synthetic" in opts:
        rc.synthetic = {**rc.synthetic, **opts["synthetic"]}
    for key in ("data", "dataset", "p", "seed", "mask_seed", "epochs", "batch", "mode", "select",
                "layers", "phases", "limit", "limit_test", "out"):
        if key in opts:
            setattr(rc, key, opts[key])
    if isinstance(rc.phases, str):
        rc.phases = [s for s in rc.phases.split(",") if s]
    if isinstance(rc.layers, str):
        rc.layers = [s for s in rc.layers.split(",") if s]
    if rc.data is None and rc.dataset != "synthetic":
        env = resolve_data_dir()
        rc.data = str(env) if env else None
    if rc.model is not None and rc.model.task == "autoencoder":
        rc.synthetic.setdefault("kind", "gaussian_blobs")
    return rc.validate()


def load_data(rc: RunConfig):
    """Train/test :class:`Dataset` pair for ``rc``."""
    if rc.dataset == "synthetic":
        spec = dict(rc.synthetic)
        n_train = spec.pop("n_train", 1000)
        n_test = spec.pop("n_test", 200)
        if rc.limit:
            n_train = min(n_train, rc.limit)
        if rc.limit_test or rc.limit:
            n_test = min(n_test, rc.limit_test or rc.limit)
        spec.setdefault("channels", rc.model.input_shape[0])
        spec.setdefault("size", rc.model.input_shape[-1])
        if rc.model.num_classes and rc.model.task == "classification":
            spec["n_classes"] = rc.model.num_classes
        return synthetic_dataset(n_train=n_train, n_test=n_test, seed=rc.seed, **spec)
    if not rc.data:
        raise UsageError(f"--dataset {rc.dataset} needs --data or DCTCONV_DATA_DIR")
    loader = load_cifar100 if rc.dataset == "cifar100" else load_cifar10
    try:
        train, test = loader(rc.data, "train"), loader(rc.data, "test")
    except (FileNotFoundError, FormatError) as e:
        raise UsageError(str(e)) from None
    return train.subset(rc.limit), test.subset(rc.limit_test or rc.limit)


def _check_data_fits(rc, train):
    want = tuple(rc.model.input_shape)
    got = tuple(train.images.shape[1:])
    if want != got:
        raise UsageError(f"model expects inputs {want} but the dataset has {got}")
    if rc.model.task == "classification" and rc.model.num_classes and train.num_classes > rc.model.num_classes:
        raise UsageError(f"dataset has {train.num_classes} classes, model outputs {rc.model.num_classes}")


# -- commands ------------------------------------------------------------------

def _finite_or_none(v):
    return v if isinstance(v, float) and math.isfinite(v) else None


def _log(quiet):
    if quiet:
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def cmd_train(args) -> int:
    rc = resolve(args)
    train_ds, test_ds = load_data(rc)
    _check_data_fits(rc, train_ds)
    data = TrainData.from_datasets(train_ds, test_ds, rc.model.task)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(rc.manifest("train"), indent=2, sort_keys=True) + "\n")
    log = _log(args.quiet)
    summary, status = {}, EXIT_OK
    for phase in rc.phases:
        try:
            res = run_phase(rc.model, data, rc.regime, phase, rc.p, rc.seed, rc.resolved_mask_seed,
                            rc.selection, rc.mode, rc.epochs, rc.batch, out, log)
        except ConfigError as e:
            raise UsageError(f"invalid config: {e}") from None
        save_checkpoint(res.model, out / "checkpoints" / phase)
        summary[phase] = {"epochs": len(res.records), "final_metric": _finite_or_none(res.final_metric),
                          "diverged": res.diverged}
        if res.diverged:
            status = EXIT_DIVERGED
            break
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"out": str(out), **{k: v["final_metric"] for k, v in summary.items()}}))
    if status == EXIT_DIVERGED:
        print("error: training diverged; see telemetry", file=sys.stderr)
    return status


def _audit_model(rc, spectral=False):
    cfg = rc.model
    if spectral or rc.p > 0:
        cfg = cfg.with_spectral(rc.selection, rc.p, rc.resolved_mask_seed, rc.mode, rc.layers or None)
    try:
        return build_model(cfg, init=False)
    except ConfigError as e:
        raise UsageError(f"invalid config: {e}") from None


def cmd_count_params(args) -> int:
    rc = resolve(args)
    model = _audit_model(rc, args.spectral)
    report = param_count(model)
    print(f"# {model.config.name}")
    print(report.format_table())
    info = REFERENCE_TOTALS_INFO.get(table_key(model.config.name))
    if info:
        print("quoted whole-network figures (informational, not reconciled with the rows): "
              + ", ".join(f"{k} {v:,}" for k, v in info.items()))
    if not args.assert_table:
        return EXIT_OK
    checks = compare_with_tables(report)
    if not checks:
        print(f"no printed table for {model.config.name!r}", file=sys.stderr)
        return EXIT_CONFIG
    failed = [c for c in checks if not c[3]]
    for desc, want, got, ok in checks:
        print(f"{'ok  ' if ok else 'FAIL'} {desc}: expected {want:,} got {got:,}")
    print(f"{len(checks) - len(failed)}/{len(checks)} table entries match")
    return EXIT_MISMATCH if failed else EXIT_OK


def fully_off_probability(count: int, off: int, group: int) -> float:
    """Chance that a fixed set of ``group`` positions is entirely switched off.

    With ``off`` of ``count`` positions chosen uniformly without replacement,
    this is ``C(count - group, off - group) / C(count, off)``.
    """
    if group > off:
        return 0.0
    on = count - off
    # equivalently: none of the `on` kept positions falls inside the group
    logp = sum(math.log((count - group - i) / (count - i)) for i in range(on))
    return math.exp(logp)


def mask_statistics(model) -> list[dict]:
    """Per spectral layer: off-count, and fractions of fully-off filters and slices.

    A filter is one output channel's coefficients. A slice is one
    ``H x W`` plane; for pointwise layers it is one 16-channel subrow.
    """
    rows = []
    for layer in model.spectral_layers():
        bits = layer.mask.bits
        n = bits.shape[0]
        per_filter = bits.reshape(n, -1)
        if isinstance(layer, SpectralPointwise):
            c = bits.shape[1]
            bounds = list(range(0, c, SUBROW)) + [c]
            slices = [per_filter[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]
            slice_off = np.concatenate([~s.any(axis=1) for s in slices])
            slice_size = min(SUBROW, c)
        else:
            slice_off = ~bits.reshape(n * bits.shape[1], -1).any(axis=1)
            slice_size = bits.shape[2] * bits.shape[3]
        count, off = bits.size, layer.mask.off_count
        rows.append({
            "layer": layer.name,
            "shape": list(bits.shape),
            "p": layer.mask.p,
            "count": int(count),
            "off": int(off),
            "filters_off": float(np.mean(~per_filter.any(axis=1))),
            "filters_off_expected": fully_off_probability(count, off, per_filter.shape[1]),
            "slices_off": float(np.mean(slice_off)),
            "slices_off_expected": fully_off_probability(count, off, slice_size),
        })
    return rows


def cmd_mask_stats(args) -> int:
    rc = resolve(args)
    rows = mask_statistics(_audit_model(rc, spectral=True))
    if args.json:
        for r in rows:
            print(json.dumps(r, sort_keys=True))
        return EXIT_OK
    print(f"{'layer':<18} {'shape':<18} {'count':>10} {'off':>10} {'filters off':>12} {'(expected)':>10} "
          f"{'slices off':>11} {'(expected)':>10}")
    for r in rows:
        print(f"{r['layer']:<18} {'x'.join(map(str, r['shape'])):<18} {r['count']:>10,} {r['off']:>10,} "
              f"{r['filters_off']:>12.4f} {r['filters_off_expected']:>10.4f} "
              f"{r['slices_off']:>11.4f} {r['slices_off_expected']:>10.4f}")
    total = sum(r["count"] for r in rows)
    off = sum(r["off"] for r in rows)
    print(f"total coefficients {total:,}, switched off {off:,}")
    return EXIT_OK


def _find_manifest(ckpt: Path):
    for d in (ckpt, ckpt.parent, ckpt.parent.parent):
        f = d / "manifest.json"
        if f.is_file():
            return json.loads(f.read_text())
    return None


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    try:
        model = load_checkpoint(ckpt)
    except (CheckpointError, ConfigError) as e:
        raise UsageError(str(e)) from None
    manifest = _find_manifest(ckpt) or {}
    mdata = manifest.get("data", {})
    # data flags fall back to what the run used
    for key, default in (("dataset", mdata.get("dataset")), ("data", mdata.get("path")),
                         ("limit", mdata.get("limit")), ("limit_test", mdata.get("limit_test")),
                         ("seed", manifest.get("seed"))):
        if getattr(args, key, None) is None and default is not None:
            setattr(args, key, default)
    rc = resolve(args, model.config)
    if mdata.get("synthetic") and not args.preset:
        rc.synthetic = dict(mdata["synthetic"])
    train_ds, test_ds = load_data(rc)
    _check_data_fits(rc, train_ds)
    data = TrainData.from_datasets(train_ds, test_ds, model.config.task)
    x, y = (data.x_test, data.y_test) if args.split == "test" else (data.x_train, data.y_train)
    value = evaluate(model, x, y, model.config.task)
    metric = "accuracy" if model.config.task == "classification" else "mse"
    print(json.dumps({"checkpoint": str(ckpt), "split": args.split, "metric": metric, "value": _finite_or_none(value),
                      "n": int(len(x))}, sort_keys=True))
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------

def _common(p, data=True):
    p.add_argument("--preset", help="named preset (see README)")
    p.add_argument("--config", help="JSON run config or model config")
    p.add_argument("--p", type=float, help="switch-off probability in [0, 1]")
    p.add_argument("--seed", type=int, help="run seed (init, shuffle, dropout, mask streams)")
    p.add_argument("--mask-seed", type=int, help="override the mask seed")
    p.add_argument("--mode", choices=("orthonormal", "verbatim"), help="transform normalization")
    p.add_argument("--select", choices=tuple(SELECT), help="which convolutions become spectral")
    p.add_argument("--layers", help="comma-separated layer names for --select custom")
    if data:
        p.add_argument("--data", help="CIFAR directory or .bin file (default $DCTCONV_DATA_DIR)")
        p.add_argument("--dataset", choices=DATASETS, help="dataset kind (default: preset's)")
        p.add_argument("--limit", type=int, help="use at most this many training (and test) images")
        p.add_argument("--limit-test", type=int, help="use at most this many test images")


def build_parser():
    parser = argparse.ArgumentParser(prog="dctconv", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the three-phase protocol")
    _common(t)
    t.add_argument("--epochs", type=int, help="epochs per phase")
    t.add_argument("--batch", type=int, help="batch size")
    t.add_argument("--phases", help="comma-separated subset of " + ",".join(PHASES))
    t.add_argument("--out", help="output directory (default runs/latest)")
    t.add_argument("--quiet", action="store_true", help="no per-epoch log on stderr")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("count-params", help="per-layer trained-parameter counts")
    _common(c, data=False)
    c.add_argument("--spectral", action="store_true", help="count with spectral layers even at p=0")
    c.add_argument("--assert-table", action="store_true", help="compare with the printed tables")
    c.set_defaults(func=cmd_count_params)

    m = sub.add_parser("mask-stats", help="switch-off statistics for a config and p")
    _common(m, data=False)
    m.add_argument("--json", action="store_true", help="one JSON object per layer")
    m.set_defaults(func=cmd_mask_stats)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint directory")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
