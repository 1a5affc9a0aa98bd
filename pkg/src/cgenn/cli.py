"""Command line entry point: ``cgenn {verify,train,tables,equivariance-report}``.

Every flag can also be given in a JSON file passed with ``--config``; keys are
the flag names with dashes replaced by underscores.  Flags given on the command
line override the file.  Exit codes: 0 success, 1 failed check or training,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .algebra import MetricSignature, algebra_for, blade_name
from .group import DecompositionFailed, NotInvertible, NullVectorSampling
from .layers import Network, load_params
from .theorems import CHECKS, SUITE_SIGNATURES, check_network_equivariance, probe_architecture, run_all
from .train import TASKS, DivergedLoss, TrainConfig, train

OUTPUT_ENV = "CGENN_OUTPUT_DIR"
DEFAULT_OUTPUT = "cgenn-output"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _signature(text: str) -> MetricSignature:
    try:
        return MetricSignature.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgenn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    # defaults are None so values from --config can be told apart from flags
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with default values for any flag")
    common.add_argument("--seed", type=int, default=None)

    verify = sub.add_parser("verify", parents=[common], help="run the theorem checks")
    verify.add_argument("--signature", type=_signature, default=None, help="p,q,r (default: all test signatures)")
    verify.add_argument("--trials", type=_positive, default=None)
    verify.add_argument("--checks", default=None, help=f"comma list from {','.join(CHECKS)}")
    verify.add_argument("--threads", type=_positive, default=None, help="parallel checks (default 1)")
    verify.add_argument("--json", action="store_const", const=True, default=None, help="one JSON object per line")

    tr = sub.add_parser("train", parents=[common], help="train a network on a synthetic task")
    tr.add_argument("--task", choices=sorted(TASKS), default=None)
    tr.add_argument("--epochs", type=_non_negative, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--batch-size", type=_positive, default=None)
    tr.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    tr.add_argument("--n-train", type=_positive, default=None)
    tr.add_argument("--n-val", type=_positive, default=None)
    tr.add_argument("--n-test", type=_positive, default=None)
    tr.add_argument("--head", choices=["scalar", "pseudoscalar"], default=None)
    tr.add_argument("--architecture", type=Path, default=None, help="JSON layer stack")
    tr.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")

    tables = sub.add_parser("tables", parents=[common], help="emit the blade multiplication table as CSV")
    tables.add_argument("--signature", type=_signature, default=None)
    tables.add_argument("--out", type=Path, default=None, help="write to a file instead of stdout")

    eq = sub.add_parser("equivariance-report", parents=[common], help="measure network equivariance residuals")
    eq.add_argument("--signature", type=_signature, default=None, help="p,q,r (default: all test signatures)")
    eq.add_argument("--trials", type=_positive, default=None)
    eq.add_argument("--architecture", type=Path, default=None, help="JSON layer stack (random parameters)")
    eq.add_argument("--params", type=Path, default=None, help="parameter file written by train")
    eq.add_argument("--json", action="store_const", const=True, default=None)
    return parser


DEFAULTS = {
    "verify": {"seed": 0, "trials": 100, "threads": 1, "json": False},
    "train": {"seed": 0},
    "tables": {},
    "equivariance-report": {"seed": 0, "trials": 50, "json": False},
}

PATH_KEYS = {"architecture", "out", "params"}


def resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Merge built-in defaults, the --config file and explicit flags."""
    values = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(loaded, dict):
            parser.error("config file must hold a JSON object")
        known = set(vars(args)) - {"command", "config", "verbose"}
        unknown = set(loaded) - known
        if unknown:
            parser.error(f"unknown config keys for {args.command}: {sorted(unknown)}")
        for key, raw in loaded.items():
            if key == "signature":
                try:
                    raw = MetricSignature.parse(str(raw))
                except ValueError as exc:
                    parser.error(f"config signature: {exc}")
            elif key in PATH_KEYS and raw is not None:
                raw = Path(raw)
            values[key] = raw
    for key, value in vars(args).items():
        if key not in ("command", "config", "verbose") and value is not None:
            values[key] = value
    return values


def _signatures(values: dict) -> list[MetricSignature]:
    sig = values.get("signature")
    return list(SUITE_SIGNATURES) if sig is None else [sig]


def cmd_verify(values: dict, out=None) -> int:
    out = sys.stdout if out is None else out
    names = None
    if values.get("checks"):
        names = [c.strip() for c in str(values["checks"]).split(",") if c.strip()]
        unknown = [c for c in names if c not in CHECKS]
        if unknown:
            raise UsageError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    ok = True
    for sig in _signatures(values):
        reports = run_all(sig, values["trials"], values["seed"], names, values["threads"])
        for report in reports:
            print(report.to_json() if values["json"] else report.to_line(), file=out)
            ok &= report.passed
    return EXIT_OK if ok else EXIT_FAIL


def _load_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def output_dir(values: dict) -> Path:
    if values.get("out") is not None:
        return Path(values["out"])
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


def cmd_train(values: dict, out=None) -> int:
    out = sys.stdout if out is None else out
    if not values.get("task"):
        raise UsageError("a task is required (--task or the config file)")
    fields = {k: values[k] for k in TrainConfig.__dataclass_fields__ if values.get(k) is not None}
    if values.get("architecture") is not None:
        arch = values["architecture"]
        fields["architecture"] = arch if isinstance(arch, dict) else _load_json(arch)
    try:
        config = TrainConfig(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    target = output_dir(values)
    try:
        result = train(config, target)
    except DivergedLoss as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"test_mse={result.test_mse:.6g}", file=out)
    print(target / "metrics.csv", file=out)
    return EXIT_OK


def table_rows(sig: MetricSignature):
    alg = algebra_for(sig)
    n = sig.n
    for a in range(alg.dim):
        signs = alg.sign_row(a)
        for b in range(alg.dim):
            yield blade_name(a, n), blade_name(b, n), int(signs[b]), blade_name(a ^ b, n)


def cmd_tables(values: dict, out=None) -> int:
    out = sys.stdout if out is None else out
    sig = values.get("signature")
    if sig is None:
        raise UsageError("a signature is required")
    target = values.get("out")
    handle = open(target, "w", newline="") if target is not None else out
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["eA", "eB", "sign", "eC"])
        writer.writerows(table_rows(sig))
    finally:
        if target is not None:
            handle.close()
    return EXIT_OK


def cmd_equivariance_report(values: dict, out=None) -> int:
    out = sys.stdout if out is None else out
    rng = np.random.default_rng(values["seed"])
    if values.get("params") is not None:
        try:
            header, params = load_params(values["params"])
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        net = Network.from_spec(header["architecture"])
        runs = [(net.sig, net, params)]
    elif values.get("architecture") is not None:
        arch = values["architecture"]
        net = Network.from_spec(arch if isinstance(arch, dict) else _load_json(arch))
        runs = [(net.sig, net, None)]
    else:
        runs = [(sig, Network.from_spec(probe_architecture(sig)), None) for sig in _signatures(values)]
    ok = True
    for sig, net, params in runs:
        report = check_network_equivariance(sig, values["trials"], rng, net, params)
        print(report.to_json() if values["json"] else report.to_line(), file=out)
        ok &= report.passed
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "verify": cmd_verify,
    "train": cmd_train,
    "tables": cmd_tables,
    "equivariance-report": cmd_equivariance_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    values = resolve(args, parser)
    try:
        return COMMANDS[args.command](values)
    except UsageError as exc:
        print(f"cgenn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotInvertible, NullVectorSampling, DecompositionFailed) as exc:
        print(f"cgenn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
