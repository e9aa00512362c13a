"""Command-line entry point: ``hetids run | validate | dump-env``.

Exit status is 0 on success, 2 on a configuration error (nothing is
written) and 1 on a runtime failure or a failed validation check.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Any

from .core import RngStream, STREAM_ENV, ConfigError, environment_csv, make_environment
from .harness import (
    DEFAULT_HORIZON,
    default_workers,
    run_experiment,
    write_aggregate_csv,
    write_meta_json,
    write_traces_csv,
)
from .policies import POLICY_IDS
from .validation import default_suite

log = logging.getLogger("hetids")

# flag / config-file key -> PolicyConfig field
_POLICY_KEYS = {"delta": "delta", "lambda": "lam", "lam": "lam", "norm_bound": "norm_bound",
                "ensemble_size": "m", "m": "m", "noise_mode": "noise_mode",
                "info_kind": "info_kind", "estimator": "estimator"}
_POLICY_CASTS = {"delta": float, "lam": float, "norm_bound": float, "m": int}


class RunConfig(dict):
    """Merged configuration: ``environment``, ``policy_overrides`` and experiment keys."""


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def _cast(key, value, fn):
    try:
        return fn(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {value!r}", key) from None


def load_config(path) -> RunConfig:
    """Read an ini file with ``[environment]``, ``[policy]`` and
    ``[experiment]`` sections, or the ``config`` echo of a ``meta.json``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found", "config")
    if path.suffix == ".json":
        try:
            blob = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}", "config") from None
        echo = blob.get("config", blob)
        cfg = RunConfig(echo)
        cfg["policy_overrides"] = dict(echo.get("policy_overrides") or {})
        return cfg

    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file: {exc}", "config") from None
    cfg = RunConfig(environment={}, policy_overrides={})
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "environment":
            cfg["environment"] = items
        elif section == "policy":
            for k, v in items.items():
                if k not in _POLICY_KEYS:
                    raise ConfigError(f"unknown policy key {k!r}", k)
                field = _POLICY_KEYS[k]
                cfg["policy_overrides"][field] = _cast(k, v, _POLICY_CASTS.get(field, str))
        elif section == "experiment":
            for k, v in items.items():
                if k == "policies":
                    cfg["policies"] = [p.strip() for p in v.split(",") if p.strip()]
                elif k in ("trials", "horizon", "seed", "workers"):
                    cfg[k] = _cast(k, v, int)
                elif k == "fixed_env":
                    cfg[k] = _bool(v)
                else:
                    raise ConfigError(f"unknown experiment key {k!r}", k)
        else:
            raise ConfigError(f"unknown config section [{section}]", section)
    return cfg


def merge_config(args) -> RunConfig:
    """Config file values overridden by explicit flags."""
    cfg = load_config(args.config) if args.config else RunConfig(environment={}, policy_overrides={})
    env = dict(cfg.get("environment") or {})
    if args.preset:
        env["preset"] = args.preset
    for name in ("rho_low", "rho_high"):
        if getattr(args, name, None) is not None:
            env[name] = getattr(args, name)
    if "preset" not in env and "actions" not in env:
        env["preset"] = "heteroscedastic_linear"
    cfg["environment"] = env

    over = dict(cfg.get("policy_overrides") or {})
    for flag, field in (("delta", "delta"), ("lam", "lam"), ("norm_bound", "norm_bound"), ("ensemble_size", "m")):
        v = getattr(args, flag, None)
        if v is not None:
            over[field] = v
    cfg["policy_overrides"] = over

    if getattr(args, "policies", None):
        cfg["policies"] = [p.strip() for p in args.policies.split(",") if p.strip()]
    for k in ("trials", "horizon", "seed"):
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if getattr(args, "fixed_env", False):
        cfg["fixed_env"] = True
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg = merge_config(args)
    policies = cfg.get("policies") or ["ucb", "w-ucb", "ids-ucb", "dids-ucb"]
    for p in policies:
        if p not in POLICY_IDS:
            raise ConfigError(f"unknown policy {p!r} (known: {', '.join(POLICY_IDS)})", "policies")
    workers = cfg.get("workers") or default_workers()
    result = run_experiment(
        cfg["environment"],
        trials=int(cfg.get("trials", 10)),
        policies=policies,
        base_seed=int(cfg.get("seed", 0)),
        T=int(cfg.get("horizon", DEFAULT_HORIZON)),
        workers=workers,
        fixed_env=bool(cfg.get("fixed_env", False)),
        policy_overrides=cfg["policy_overrides"],
        keep_traces=True,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = [result.traces[(p, k)] for k in range(len(result.meta["seeds"])) for p in policies]
    write_traces_csv(out / "traces.csv", traces)
    write_aggregate_csv(out / "aggregate.csv", result)
    write_meta_json(out / "meta.json", result.meta)
    for p in policies:
        m, b = result.final(p)
        print(f"{p:>10s}  R_T = {m:10.3f} +- {b:.3f}")
    return 0


def cmd_validate(args) -> int:
    trials = args.trials if args.trials is not None else 2000
    delta = args.delta if args.delta is not None else 0.1
    if trials < 1:
        raise ConfigError("trials must be at least 1", "trials")
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)", "delta")
    if trials < 100:
        warnings.warn(
            f"only {trials} trials: the binomial tolerance is wide and the checks have little power",
            stacklevel=1,
        )
    workers = args.workers if args.workers is not None else default_workers()
    reports = []
    for name, check in default_suite(trials, delta, args.seed or 0, workers):
        rep = check()
        print(rep.line())
        reports.append(rep.to_dict())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "validation.json", "w") as fh:
        json.dump({"delta": delta, "trials": trials, "checks": reports}, fh, indent=2)
        fh.write("\n")
    return 0 if all(r["pass"] for r in reports) else 1


def cmd_dump_env(args) -> int:
    cfg = merge_config(args)
    env = make_environment(cfg["environment"], RngStream(int(cfg.get("seed", 0)), STREAM_ENV))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "env.csv").write_text(environment_csv(env))
    print(f"wrote {env.n} actions to {out / 'env.csv'}")
    return 0


# ---------------------------------------------------------------------------


def _common(p, env_flags=True):
    p.add_argument("--config", help="ini file or meta.json to start from")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default: HETIDS_WORKERS or CPU count)")
    if env_flags:
        p.add_argument("--preset")
        p.add_argument("--rho-low", dest="rho_low", type=float)
        p.add_argument("--rho-high", dest="rho_high", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetids", description="Bandits with heteroscedastic noise.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate policies and write traces")
    _common(run)
    run.add_argument("--policies", help="comma separated policy ids")
    run.add_argument("--trials", type=int)
    run.add_argument("--horizon", type=int)
    run.add_argument("--delta", type=float)
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--norm-bound", dest="norm_bound", type=float)
    run.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    run.add_argument("--fixed-env", dest="fixed_env", action="store_true")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="Monte-Carlo coverage checks")
    _common(val, env_flags=False)
    val.add_argument("--trials", type=int)
    val.add_argument("--delta", type=float)
    val.set_defaults(func=cmd_validate)

    dump = sub.add_parser("dump-env", help="write the environment as CSV")
    _common(dump)
    dump.set_defaults(func=cmd_dump_env)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None and os.environ.get("HETIDS_WORKERS"):
        try:
            args.workers = int(os.environ["HETIDS_WORKERS"])
        except ValueError:
            print("error: HETIDS_WORKERS must be an integer (key: workers)", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        key = f" (key: {exc.key})" if exc.key else ""
        print(f"error: {exc}{key}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
