"""Command-line entry point.

``dplab <protocol> [--config FILE] [--seed N] [--out DIR] [--set key=value ...]``
runs one protocol; ``dplab classify "<prefix>" --mode strict|as-written``
classifies a quantifier prefix.  Exit codes: 0 success, 2 invalid input or
config, 3 quorum failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import yaml

from .exceptions import DPLabError, InvalidArgument, ParseError, QuorumFailure
from .harness import PROTOCOLS, ProtocolConfig, load_config, run_protocol
from .prefix import MODES, classify_prefix

EXIT_OK, EXIT_INVALID, EXIT_QUORUM = 0, 2, 3


def _assign(cfg, dotted, raw):
    """Apply ``section.key=value`` (value parsed as YAML) to a config dict."""
    keys = dotted.split(".")
    cur = cfg
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise InvalidArgument(f"cannot set {dotted}: {k} is not a section")
    cur[keys[-1]] = yaml.safe_load(raw)


def build_config(args):
    if args.config:
        base = load_config(args.config).to_dict()
        if base["protocol"] != args.protocol:
            raise InvalidArgument(f"config is for {base['protocol']!r}, not {args.protocol!r}")
    else:
        base = {"protocol": args.protocol}
    for item in args.set or ():
        if "=" not in item:
            raise InvalidArgument(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _assign(base, key.strip(), raw)
    for name in ("seed", "ensemble_size", "levels"):
        v = getattr(args, name)
        if v is not None:
            base[name] = v
    return ProtocolConfig.from_dict(base)


def make_parser():
    ap = argparse.ArgumentParser(prog="dplab", description="Stability-index protocols and prefix classification.")
    sub = ap.add_subparsers(dest="command", required=True)
    for proto in PROTOCOLS:
        p = sub.add_parser(proto, help=f"run the {proto} protocol")
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--ensemble-size", dest="ensemble_size", type=int)
        p.add_argument("--levels", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry, e.g. params.kappa=0.3 (repeatable)")
        p.add_argument("--out", help="directory for report.json, ssi.csv, sc.csv and metadata.json")
        p.set_defaults(protocol=proto)
    c = sub.add_parser("classify", help="classify a quantifier prefix")
    c.add_argument("prefix")
    c.add_argument("--mode", choices=MODES + ("both",), default="both")
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.command == "classify":
            modes = MODES if args.mode == "both" else (args.mode,)
            for m in modes:
                print(f"{m}: {classify_prefix(args.prefix, m)}")
            return EXIT_OK
        cfg = build_config(args)
        report = run_protocol(cfg)
    except QuorumFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUORUM
    except (InvalidArgument, ParseError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DPLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.out:
        paths = report.write(args.out)
        print(f"wrote {paths['report']}", file=sys.stderr)
    body = report.body()
    summary = {k: body[k] for k in ("protocol", "levels", "ssi", "sc", "verdict", "verdicts")}
    summary["config_hash"] = body["provenance"]["config_hash"]
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
