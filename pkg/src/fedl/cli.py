"""Command-line entry point: ``fedl <subcommand> [flags]``.

Reports go to stdout as JSON lines with fields
``{task, dataset, metric, value, seed, config_hash}``; progress goes to
stderr.  Errors are a single stderr line ``error kind=<Type> message=<json>``.

Precedence for every setting: built-in default < ``--config`` file < flag.
The seed defaults to ``$FEDL_SEED`` (or 0) and ``--seed`` overrides it.

Exit codes: 0 ok, 1 usage, 2 data/format/config, 3 verify failure,
4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import OOD, LabeledDataset, SynthConfig, load_csv, load_idx, save_csv, synth_generate
from .errors import DivergenceError, FEDLError
from .experiments import (
    classification_report,
    config_hash,
    data_scaling_experiment,
    run_ablation,
    run_misclassification_detection,
    run_ood_detection,
)
from .fd import FDParams, fd_sample
from .network import FEDLModel, NetworkConfig
from .trainer import TrainConfig, train
from .uncertainty import uncertainties
from .verify import run_suite

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(record: dict, out) -> None:
    out.write(json.dumps(record, sort_keys=True) + "\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_seed() -> int:
    raw = os.environ.get("FEDL_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"FEDL_SEED must be an integer, got {raw!r}") from None


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

# flag dest -> (section, field)
_OVERRIDES = {
    "hidden_dims": ("network", "hidden_dims"),
    "head_hidden_dims": ("network", "head_hidden_dims"),
    "ablation": ("network", "ablation"),
    "power_iterations": ("network", "power_iterations"),
    "epochs": ("train", "max_epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "learning_rate"),
    "lr_step_size": ("train", "lr_step_size"),
    "lr_gamma": ("train", "lr_gamma"),
    "patience": ("train", "early_stop_patience"),
    "val_fraction": ("train", "val_fraction"),
}


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise FileNotFoundError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise FEDLError(f"{path}: invalid JSON: {exc}") from None
    unknown = set(cfg) - {"network", "train", "synth"}
    if unknown:
        raise FEDLError(f"{path}: unknown config section(s) {sorted(unknown)}")
    return cfg


def _resolve(args, input_dim: int, K: int) -> tuple[NetworkConfig, TrainConfig]:
    cfg = _read_config(args.config)
    net = dict(cfg.get("network", {}))
    tr = dict(cfg.get("train", {}))
    for dest, (section, name) in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            (net if section == "network" else tr)[name] = value
    net["input_dim"], net["K"] = input_dim, K
    tr["seed"] = args.seed
    for section, cls in (("network", NetworkConfig), ("train", TrainConfig)):
        allowed = {f.name for f in fields(cls)}
        extra = set(net if section == "network" else tr) - allowed
        if extra:
            raise FEDLError(f"unknown {section} key(s) {sorted(extra)}")
    return NetworkConfig(**net), TrainConfig(**tr)


def _add_training_flags(p):
    p.add_argument("--config", help="JSON file with 'network' and 'train' sections")
    p.add_argument("--hidden-dims", dest="hidden_dims", type=_ints)
    p.add_argument("--head-hidden-dims", dest="head_hidden_dims", type=_ints)
    p.add_argument("--ablation", choices=("none", "fix_p_uniform", "fix_p_normalized", "fix_tau"))
    p.add_argument("--power-iterations", dest="power_iterations", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-step-size", dest="lr_step_size", type=int)
    p.add_argument("--lr-gamma", dest="lr_gamma", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)


def _add_data_flags(p, flag="--data", required=True):
    dest = flag.lstrip("-").replace("-", "_")
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument(flag, dest=dest, help="CSV with feature columns, 'label' and optional 'role'")
    g.add_argument(f"{flag}-idx", dest=f"{dest}_idx", nargs=2, metavar=("IMAGES", "LABELS"),
                   help="IDX image and label files (optionally .gz)")


def _load(args, dest="data") -> LabeledDataset | None:
    path = getattr(args, dest, None)
    idx = getattr(args, f"{dest}_idx", None)
    if path is not None:
        return load_csv(path)
    if idx is not None:
        return load_idx(*idx)
    return None


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------


def cmd_synth(args, out):
    cfg = dict(_read_config(args.config).get("synth", {}))
    for name in ("K", "n_per_class", "dim", "class_separation", "noise_sigma", "n_ambiguous",
                 "n_ood", "ood_offset", "imbalance_rho"):
        value = getattr(args, name)
        if value is not None:
            cfg[name] = value
    cfg["seed"] = args.seed
    ds = synth_generate(SynthConfig(**cfg))
    save_csv(ds, args.out)
    _emit({"task": "synth", "dataset": ds.name, "metric": "rows", "value": len(ds),
           "seed": args.seed, "config_hash": config_hash(cfg)}, out)
    return EXIT_OK


def cmd_train(args, out):
    ds = _load(args)
    net, tc = _resolve(args, ds.dim, ds.K)
    params, hist = train(net, tc, ds, np.random.default_rng(args.seed),
                         log=None if args.quiet else _log)
    ckpt = Checkpoint(net, params, tc, hist.optimizer_state,
                      metadata={"best_epoch": hist.best_epoch, "epochs_run": hist.epochs_run,
                                "stopped_early": hist.stopped_early,
                                "best_val_loss": min(hist.val_loss),
                                "dataset": ds.name},
                      seed=args.seed)
    ckpt.attach_probe(ds.features[: min(16, len(ds))])
    save_checkpoint(args.out, ckpt)
    h = config_hash({"network": net.to_dict(), "train": tc.to_dict()})
    for metric, value in (("best_val_loss", min(hist.val_loss)),
                          ("best_val_acc", hist.val_acc[hist.best_epoch]),
                          ("best_epoch", hist.best_epoch), ("epochs_run", hist.epochs_run)):
        _emit({"task": "train", "dataset": ds.name, "metric": metric, "value": float(value),
               "seed": args.seed, "config_hash": h}, out)
    return EXIT_OK


def _model(args) -> tuple[FEDLModel, Checkpoint]:
    ckpt = load_checkpoint(args.model)
    if not ckpt.probe_matches():
        raise FEDLError("checkpoint probe batch does not reproduce; refusing to use it")
    return ckpt.model, ckpt


def _check_dim(model: FEDLModel, ds: LabeledDataset):
    if ds.dim != model.config.input_dim:
        raise FEDLError(f"data has {ds.dim} features, model expects {model.config.input_dim}")


def _emit_report(rep, seed, out):
    rep.seed = seed
    for rec in rep.records():
        _emit(rec, out)


def cmd_eval(args, out):
    model, ckpt = _model(args)
    ds = _load(args)
    _check_dim(model, ds)
    ds = ds.with_role("clean_id", "ambiguous_id")
    _emit_report(classification_report(model, ds), ckpt.seed, out)
    _emit_report(run_misclassification_detection(model, ds), ckpt.seed, out)
    return EXIT_OK


def cmd_ood(args, out):
    model, ckpt = _model(args)
    ds = _load(args)
    _check_dim(model, ds)
    ood_ds = _load(args, "ood_data")
    if ood_ds is None:
        id_set, ood_set = ds.with_role("clean_id", "ambiguous_id"), ds.with_role(OOD)
    else:
        _check_dim(model, ood_ds)
        id_set, ood_set = ds, ood_ds
    _emit_report(run_ood_detection(model, id_set, ood_set), ckpt.seed, out)
    return EXIT_OK


def cmd_predict(args, out):
    model, _ = _model(args)
    ds = _load(args)
    _check_dim(model, ds)
    fd = model.fd_params(ds.features)
    rep = uncertainties(fd)
    for i in range(len(ds)):
        _emit({"row": i, "alpha": fd.alpha[i].tolist(), "p": fd.p[i].tolist(),
               "tau": float(fd.tau[i]), "predicted_class": int(rep.predicted_class[i]),
               "expected_probs": rep.expected_probs[i].tolist(),
               "total": float(rep.total[i]), "aleatoric": float(rep.aleatoric[i]),
               "epistemic": float(rep.epistemic[i])}, out)
    return EXIT_OK


def cmd_sample(args, out):
    fd = FDParams(np.asarray(args.alpha), np.asarray(args.p), np.float64(args.tau))
    for row in fd_sample(fd, np.random.default_rng(args.seed), args.n):
        out.write(",".join(repr(float(v)) for v in row) + "\n")
    return EXIT_OK


def cmd_scaling(args, out):
    ds = _load(args)
    held = _load(args, "held_out")
    net, tc = _resolve(args, ds.dim, ds.K)
    res = data_scaling_experiment(net, tc, args.sizes, ds, np.random.default_rng(args.seed),
                                  held_out=held, log=None if args.quiet else _log)
    h = config_hash({"network": net.to_dict(), "train": tc.to_dict(), "sizes": args.sizes})
    for size, eu, acc in zip(res.sizes, res.mean_eu, res.accuracy):
        for metric, value in (("mean_eu", eu), ("accuracy", acc)):
            _emit({"task": "scaling", "dataset": f"{ds.name}@{size}", "metric": metric,
                   "value": value, "seed": args.seed, "config_hash": h}, out)
    _emit({"task": "scaling", "dataset": ds.name, "metric": "spearman", "value": res.spearman,
           "seed": args.seed, "config_hash": h}, out)
    for size, msg in res.errors.items():
        _log(f"size={size} diverged: {msg}")
    return EXIT_OK


def cmd_ablate(args, out):
    ds = _load(args)
    test = _load(args, "test")
    net, tc = _resolve(args, ds.dim, ds.K)
    id_set, ood_set = test.with_role("clean_id", "ambiguous_id"), test.with_role(OOD)
    reports = run_ablation(net, tc, ds, id_set, ood_set, log=None if args.quiet else _log)
    for variant, rep in reports.items():
        for rec in rep.records():
            rec["dataset"] = f"{rec['dataset']}[{variant}]"
            _emit(rec, out)
    return EXIT_OK


def cmd_verify(args, out):
    results = run_suite(args.seed)
    for r in results:
        out.write(r.line() + "\n")
    failed = [r.name for r in results if not r.passed]
    out.write(f"SUMMARY passed={len(results) - len(failed)} failed={len(failed)} seed={args.seed}\n")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedl", description="Flexible evidential deep learning toolkit")
    parser.add_argument("--version", action="version", version=f"fedl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--quiet", action="store_true", help="suppress progress on stderr")
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "write a synthetic blob dataset as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    for flag, typ in (("K", int), ("n-per-class", int), ("dim", int), ("class-separation", float),
                      ("noise-sigma", float), ("n-ambiguous", int), ("n-ood", int),
                      ("ood-offset", float), ("imbalance-rho", float)):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=typ)

    p = add("train", cmd_train, "train a model and write a checkpoint")
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    _add_training_flags(p)

    p = add("eval", cmd_eval, "accuracy, Brier and misclassification detection")
    p.add_argument("--model", required=True)
    _add_data_flags(p)

    p = add("ood", cmd_ood, "OOD detection by negative epistemic uncertainty")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    _add_data_flags(p, "--ood-data", required=False)

    p = add("predict", cmd_predict, "per-row FD parameters and uncertainties")
    p.add_argument("--model", required=True)
    _add_data_flags(p)

    p = add("sample", cmd_sample, "draw samples from FD(alpha, p, tau)")
    p.add_argument("--alpha", type=_floats, required=True)
    p.add_argument("--p", type=_floats, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--n", type=int, default=1)

    p = add("scaling", cmd_scaling, "mean epistemic uncertainty versus training-set size")
    _add_data_flags(p)
    _add_data_flags(p, "--held-out", required=False)
    p.add_argument("--sizes", type=_ints, default=[100, 300, 1000, 3000])
    _add_training_flags(p)

    p = add("ablate", cmd_ablate, "train the ablation variants and compare OOD detection")
    _add_data_flags(p)
    _add_data_flags(p, "--test")
    _add_training_flags(p)

    add("verify", cmd_verify, "run the identity and oracle self-checks")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error kind={kind} message={json.dumps(message)}", file=sys.stderr)
    return code


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        if args.seed is None:
            args.seed = _default_seed()
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return args.fn(args, out)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        sys.stderr.close()
        return EXIT_OK
    except DivergenceError as exc:
        return _fail("DivergenceError", str(exc), EXIT_DIVERGED)
    except (FEDLError, OSError, ValueError, TypeError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
