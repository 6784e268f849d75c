"""Command-line front end.

Subcommands: ``diagnose``, ``split``, ``perturb``, ``train``, ``evaluate``,
``sweep``, ``gradcheck``.  Exit codes: 0 success, 1 usage/config error,
2 data error, 3 numerical failure.

Training options can come from a flat ``key = value`` config file; explicit
flags override file values, which override built-in defaults.  Commands that
write an output directory echo the effective configuration into it so a run
is reproducible from that file alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace

from . import seeds
from .data import (
    DatasetError,
    PerturbationSpec,
    diagnose,
    drop_behaviors,
    load_dataset,
    load_split,
    perturb,
    save_dataset,
    split_leave_one_out,
    write_split,
)
from .evaluation import evaluate, robustness_sweep, sweep_csv
from .gradcheck import DEFAULT_TOLERANCE, run_gradcheck
from .losses import Hyperparameters, ObjectiveError
from .training import (
    NonFiniteGradientError,
    TrainConfig,
    format_log,
    load_checkpoint,
    manifest_hash,
    save_checkpoint,
    train,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_HP_FIELDS = {
    "dim": int,
    "num_layers": int,
    "tau": float,
    "lambda_rrm": float,
    "lambda_orm": float,
    "lambda_reg": float,
    "irm_variant": str,
    "orm_scope": str,
    "rrm_denominator": str,
    "lr": float,
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "seed": int,
}
_EXTRA_FIELDS = {
    "eval_every": int,
    "ks": str,
    "disable_rrm": bool,
    "disable_orm": bool,
    "drop_behaviors": str,
}


class ConfigError(Exception):
    """Bad configuration (unknown key, bad value, conflicting flags)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file (``#`` comments, blank lines ok)."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key in _HP_FIELDS:
                caster = _HP_FIELDS[key]
            elif key in _EXTRA_FIELDS:
                caster = _EXTRA_FIELDS[key]
            else:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _parse_bool(raw) if caster is bool else caster(raw)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: bad value {raw!r} for {key!r}"
                ) from None
    return values


@dataclass(frozen=True)
class RunConfig:
    """Resolved training configuration: hyperparameters plus ablations."""

    hp: Hyperparameters
    eval_every: int = 5
    ks: tuple[int, ...] = (10, 20)
    disable_rrm: bool = False
    disable_orm: bool = False
    drop: tuple[str, ...] = ()

    def effective_hp(self) -> Hyperparameters:
        hp = self.hp
        if self.disable_rrm:
            hp = replace(hp, lambda_rrm=0.0)
        if self.disable_orm:
            hp = replace(hp, lambda_orm=0.0)
        return hp


def _parse_ks(raw: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(tok) for tok in raw.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"bad cutoff list {raw!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"bad cutoff list {raw!r}")
    return ks


def resolve_run_config(args) -> RunConfig:
    """Merge defaults, config file, and flags (flags win)."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in (*_HP_FIELDS, *_EXTRA_FIELDS):
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = flag

    hp_kwargs = {k: values[k] for k in _HP_FIELDS if k in values}
    try:
        hp = Hyperparameters(**hp_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    ks = _parse_ks(values["ks"]) if isinstance(values.get("ks"), str) else values.get(
        "ks", (10, 20)
    )
    drop_raw = values.get("drop_behaviors", "")
    drop = tuple(tok.strip() for tok in drop_raw.split(",") if tok.strip()) if isinstance(
        drop_raw, str
    ) else tuple(drop_raw)
    eval_every = values.get("eval_every", 5)
    if eval_every < 1:
        raise ConfigError("eval_every must be >= 1")
    return RunConfig(
        hp=hp,
        eval_every=eval_every,
        ks=ks,
        disable_rrm=bool(values.get("disable_rrm", False)),
        disable_orm=bool(values.get("disable_orm", False)),
        drop=drop,
    )


def echo_config(cfg: RunConfig, out_dir: str) -> None:
    hp = cfg.effective_hp()
    lines = [f"{k} = {getattr(hp, k)}" for k in _HP_FIELDS]
    lines.append(f"eval_every = {cfg.eval_every}")
    lines.append("ks = " + ",".join(str(k) for k in cfg.ks))
    lines.append(f"disable_rrm = {str(cfg.disable_rrm).lower()}")
    lines.append(f"disable_orm = {str(cfg.disable_orm).lower()}")
    lines.append("drop_behaviors = " + ",".join(cfg.drop))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.cfg"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_any_split(path: str):
    """Accept either a raw dataset directory or a pre-split directory."""
    if os.path.isfile(os.path.join(path, "test.tsv")) and os.path.isfile(
        os.path.join(path, "validation.tsv")
    ):
        return load_split(path)
    return split_leave_one_out(load_dataset(path))


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    ds = load_dataset(args.dataset)
    report = diagnose(ds)
    payload = report.to_json_dict()
    if args.behaviors:
        wanted = [b.strip() for b in args.behaviors.split(",") if b.strip()]
        unknown = set(wanted) - set(ds.manifest.behaviors)
        if unknown:
            raise DatasetError(f"unknown behaviors {sorted(unknown)}")
        payload["bar"] = {b: payload["bar"][b] for b in wanted}
        payload["counts"] = {b: payload["counts"][b] for b in wanted}
    _write_json(payload, args.out)
    return EXIT_OK


def cmd_split(args) -> int:
    ds = load_dataset(args.dataset)
    split = split_leave_one_out(ds)
    out = args.out or "split_out"
    write_split(split, out)
    print(
        f"wrote split to {out}: {len(split.test)} test users, "
        f"{len(split.validation)} validation users, "
        f"{split.users_without_holdout} users without holdout"
    )
    return EXIT_OK


def cmd_perturb(args) -> int:
    ds = load_dataset(args.dataset)
    behaviors = (
        tuple(b.strip() for b in args.behaviors.split(",") if b.strip())
        if args.behaviors
        else ds.manifest.auxiliary
    )
    root_seed = args.seed if args.seed is not None else 0
    spec = PerturbationSpec(
        mode=args.mode,
        ratio=args.ratio,
        behaviors=behaviors,
        seed=seeds.stream_seed(root_seed, "perturbation"),
    )
    out = args.out or "perturbed_out"
    save_dataset(perturb(ds, spec), out)
    print(f"wrote perturbed dataset to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_run_config(args)
    split = _load_any_split(args.dataset)
    if cfg.drop:
        if split.train.manifest.target in cfg.drop:
            raise ConfigError("drop_behaviors must not name the target behavior")
        split = replace(split, train=drop_behaviors(split.train, cfg.drop))

    out = args.out or "train_out"
    echo_config(cfg, out)
    hp = cfg.effective_hp()
    state, rows = train(split, TrainConfig(hp=hp, eval_every=cfg.eval_every, ks=cfg.ks))

    active = [b for b in split.train.manifest.behaviors if split.train.edges[b]]
    with open(os.path.join(out, "train_log.csv"), "w", encoding="utf-8") as fh:
        fh.write(format_log(rows, active))
    save_checkpoint(state, split.train.manifest, os.path.join(out, "checkpoint.json"))
    if split.validation:
        report = evaluate(state, split, ks=cfg.ks, pairs=split.validation)
        _write_json(report.to_json_dict(), os.path.join(out, "validation_report.json"))
    print(f"wrote checkpoint and log to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    split = _load_any_split(args.dataset)
    state, meta = load_checkpoint(args.checkpoint)
    expected = manifest_hash(split.train.manifest)
    if meta["manifest_hash"] != expected:
        raise DatasetError(
            "checkpoint manifest hash does not match the dataset; "
            "was it trained on different data?"
        )
    ks = _parse_ks(args.ks) if args.ks else (10, 20)
    report = evaluate(state, split, ks=ks, exclude_train=not args.no_exclusion)
    _write_json(report.to_json_dict(), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve_run_config(args)
    ds = load_dataset(args.dataset)
    if cfg.drop:
        ds = drop_behaviors(ds, cfg.drop)
    ratios = [float(tok) for tok in args.ratios.split(",") if tok.strip()]
    modes = [tok.strip() for tok in args.modes.split(",") if tok.strip()]
    for mode in modes:
        if mode not in ("add", "remove"):
            raise ConfigError(f"unknown perturbation mode {mode!r}")
    out = args.out or "sweep_out"
    echo_config(cfg, out)
    rows = robustness_sweep(
        ds,
        TrainConfig(hp=cfg.effective_hp(), eval_every=cfg.eval_every, ks=cfg.ks),
        ratios=ratios,
        modes=modes,
        seed=cfg.hp.seed,
    )
    csv_text = sweep_csv(rows)
    with open(os.path.join(out, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    sizes = []
    for token in args.sizes.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            u, i, b = (int(part) for part in token.split("x"))
        except ValueError:
            raise ConfigError(f"bad size {token!r}; expected UxIxB") from None
        sizes.append((u, i, b))
    variants = (args.variant,) if args.variant else None
    modes = (args.mode,) if args.mode else None
    scopes = (args.scope,) if args.scope else None
    kwargs = {}
    if variants:
        kwargs["variants"] = variants
    if modes:
        kwargs["modes"] = modes
    if scopes:
        kwargs["scopes"] = scopes
    results = run_gradcheck(seed=args.seed, sizes=tuple(sizes), **kwargs)
    worst = 0.0
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.path}  max_rel_error={r.max_rel_error:.3e}")
        worst = max(worst, r.max_rel_error)
        ok = ok and r.passed
    print(f"{'all paths passed' if ok else 'FAILURES above'}; "
          f"worst max_rel_error={worst:.3e} (tolerance {DEFAULT_TOLERANCE:.0e})")
    return EXIT_OK if ok else EXIT_NUMERIC


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--dim", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda-rrm", dest="lambda_rrm", type=float)
    p.add_argument("--lambda-orm", dest="lambda_orm", type=float)
    p.add_argument("--lambda-reg", dest="lambda_reg", type=float)
    p.add_argument("--irm-variant", dest="irm_variant",
                   choices=("rex", "irm_v1", "irm_v2"))
    p.add_argument("--orm-scope", dest="orm_scope",
                   choices=("all_behaviors", "aux_only"))
    p.add_argument("--rrm-denominator", dest="rrm_denominator",
                   choices=("with_positive", "literal"))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--ks")
    p.add_argument("--disable-rrm", dest="disable_rrm", action="store_true",
                   default=None)
    p.add_argument("--disable-orm", dest="disable_orm", action="store_true",
                   default=None)
    p.add_argument("--drop-behaviors", dest="drop_behaviors",
                   help="comma-separated auxiliary behaviors to drop")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mbrobust", description=__doc__)
    parser.add_argument("--seed", type=int, default=None,
                        help="root seed for every random sub-stream (default 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread pools (default: library defaults)")
    parser.add_argument("--out", help="output file or directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose", help="alignment/direct-target diagnostics")
    p.add_argument("dataset")
    p.add_argument("--behaviors", help="restrict the report to these behaviors")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("split", help="write the leave-one-out split")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("perturb", help="add/remove auxiliary edges")
    p.add_argument("dataset")
    p.add_argument("--mode", required=True, choices=("add", "remove"))
    p.add_argument("--ratio", required=True, type=float)
    p.add_argument("--behaviors", help="defaults to all auxiliary behaviors")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("train", help="train and write a checkpoint")
    p.add_argument("dataset")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="full-ranking evaluation of a checkpoint")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ks")
    p.add_argument("--no-exclusion", dest="no_exclusion", action="store_true",
                   help="rank against all items, training positives included")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="noise-injection robustness sweep")
    p.add_argument("dataset")
    p.add_argument("--ratios", default="0.1,0.3,0.5")
    p.add_argument("--modes", default="add,remove")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--sizes", default="6x6x2,8x8x3")
    p.add_argument("--variant", choices=("rex", "irm_v1", "irm_v2"))
    p.add_argument("--mode", choices=("with_positive", "literal"))
    p.add_argument("--scope", choices=("all_behaviors", "aux_only"))
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.threads is not None:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(limits=args.threads)
        except ImportError:
            log.warning("threadpoolctl unavailable; --threads ignored")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ObjectiveError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteGradientError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
