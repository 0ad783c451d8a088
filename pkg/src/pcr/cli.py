"""``pcr`` command line: gen-data, prep-mask, serve, retrieve, exp-accuracy, exp-leakage."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .core import ConfigError, Database, SchemeConfig, load_config, parse_seed

log = logging.getLogger("pcr")


class UsageError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen_data(args) -> int:
    from .experiments import synthetic_integer_pools

    for name in ("R", "d", "M", "K"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    acc, rej = synthetic_integer_pools(args.R, args.d, args.M, args.K, args.seed)
    np.savetxt(out / "accepted.csv", acc, fmt="%d", delimiter=",")
    np.savetxt(out / "rejected.csv", rej, fmt="%d", delimiter=",")
    print(f"wrote {len(acc)} accepted and {len(rej)} rejected rows to {out}")
    return 0


def cmd_prep_mask(args) -> int:
    from .mask import FieldExpansion, RejectedSet, empirical_dmin, expand, min_gaps

    db = Database.from_csv(args.accepted, args.R)
    rejected = RejectedSet(np.loadtxt(args.rejected, delimiter=",", dtype=np.int64, ndmin=2), args.R)
    params = min_gaps(db, rejected)
    report: dict = {"mask": params.to_dict()}
    if args.scale is not None:
        if args.q2 is None:
            raise UsageError("--scale needs --q2")
        report["expansion"] = expand(db, FieldExpansion(args.scale, args.q2), rejected).to_dict()
    if args.candidates:
        report["empirical"] = empirical_dmin(db, rejected.samples, _ints(args.candidates), args.threshold).to_dict()
    if args.format == "json":
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["k", "d_k"])
        for k, g in enumerate(params.gaps, start=1):
            w.writerow([k, int(g)])
        w.writerow(["d_min", params.d_min])
        if "expansion" in report:
            w.writerow(["expanded_d_min", report["expansion"]["d_min"]])
        _emit(buf.getvalue(), args.out)
    return 0 if params.d_min >= 1 else 1


def _scheme_and_servers(cfg: dict) -> tuple[SchemeConfig, list[tuple[str, int]]]:
    servers = [(s.get("host", "127.0.0.1"), int(s["port"])) for s in cfg.get("servers", [])]
    return cfg["scheme"], servers


def cmd_serve(args) -> int:
    from .transport import ServerState, serve

    cfg = load_config(args.config)
    scheme, servers = _scheme_and_servers(cfg)
    seed_hex = os.environ.get("PCR_SEED_HEX") or cfg.get("seed")
    if not seed_hex:
        raise UsageError("no shared seed: set PCR_SEED_HEX or 'seed' in the config")
    seed = parse_seed(seed_hex)
    if not 1 <= args.index <= scheme.N:
        raise UsageError(f"--index must be in 1..{scheme.N}")
    db_path = Path(cfg["database"])
    if not db_path.is_absolute():
        db_path = Path(args.config).parent / db_path
    db = Database.from_csv(db_path, scheme.R)
    host, port = servers[args.index - 1] if len(servers) >= args.index else ("127.0.0.1", 0)
    host = args.host or host
    port = args.port if args.port is not None else port
    serve(ServerState(scheme, db, seed, args.index, host, port))
    return 0


def cmd_retrieve(args) -> int:
    from .core import cost_of
    from .transport import Client

    cfg = load_config(args.config)
    scheme, servers = _scheme_and_servers(cfg)
    x = _ints(args.x)
    w = _ints(args.w) if args.w else None
    from .core import UserInput

    try:
        UserInput(x, w).validate(scheme)
    except ValueError as e:
        raise UsageError(str(e)) from None
    result = Client(scheme, servers, timeout=args.timeout).retrieve(x, w)
    up, down = result.cost
    print(f"theta_star={result.theta_star}")
    print(f"cost upload={up} download={down} total={up + down} expected={sum(cost_of(scheme))}")
    if not result.consistent:
        print("warning: decoded statistic outside the valid range; servers may disagree on the shared seed")
    if result.mask_ambiguous:
        print("warning: masked distances tie; smallest index returned")
    if args.debug:
        print("revealed=" + ",".join(str(int(v)) for v in result.revealed))
    return 0 if result.consistent else 2


def cmd_exp_accuracy(args) -> int:
    from .experiments import ingest_csv, run_tradeoff, synthetic_dataset, tradeoff_to_csv

    spec = json.loads(Path(args.spec).read_text())
    data = spec.get("dataset", {"synthetic": {}})
    if "path" in data:
        ds = ingest_csv(
            data["path"],
            data["target"],
            data.get("threshold"),
            data.get("column_map"),
            data.get("drop"),
            data.get("dedupe", False),
        )
    else:
        syn = data.get("synthetic", {})
        ds = synthetic_dataset(syn.get("n", 4898), syn.get("d", 11), syn.get("seed", args.seed))
    result = run_tradeoff(
        ds,
        M=spec.get("M", 500),
        queries_per_round=spec.get("queries_per_round", 50),
        rounds=spec.get("rounds", 100),
        R_grid=spec.get("R_grid", (4, 16, 64, 256, 1024, 4096)),
        dmin_grid=spec.get("dmin_grid", (1, 8, 64, 512)),
        scheme=spec.get("scheme", "mask"),
        seed=spec.get("seed", args.seed),
        protocol=spec.get("protocol", True),
        mask_average=spec.get("mask_average", "draw"),
    )
    _emit(result.to_json() + "\n" if args.format == "json" else tradeoff_to_csv(result), args.out)
    return 0


def cmd_exp_leakage(args) -> int:
    from .experiments import reports_to_csv, run_leakage_experiment

    spec = json.loads(Path(args.spec).read_text())
    spec.setdefault("seed", args.seed)
    reports = run_leakage_experiment(spec)
    if args.format == "json":
        _emit(json.dumps([r.row() for r in reports], indent=2) + "\n", args.out)
    else:
        _emit(reports_to_csv(reports), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write uniform integer accepted/rejected CSVs")
    g.add_argument("--R", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--M", type=int, required=True)
    g.add_argument("--K", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    m = sub.add_parser("prep-mask", help="mask gaps, d_min and optional field expansion")
    m.add_argument("--accepted", required=True)
    m.add_argument("--rejected", required=True)
    m.add_argument("--R", type=int, required=True)
    m.add_argument("--scale", type=int)
    m.add_argument("--q2", type=int)
    m.add_argument("--candidates", help="comma-separated gaps for the empirical d_min table")
    m.add_argument("--threshold", type=float, default=1.0)
    m.add_argument("--format", choices=("csv", "json"), default="csv")
    m.add_argument("--out")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_prep_mask)

    s = sub.add_parser("serve", help="run one answer server")
    s.add_argument("--config", required=True)
    s.add_argument("--index", type=int, required=True, help="1-based server index")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_serve)

    r = sub.add_parser("retrieve", help="privately retrieve the nearest accepted index")
    r.add_argument("--config", required=True)
    r.add_argument("--x", required=True, help="comma-separated feature values")
    r.add_argument("--w", help="comma-separated weights (weighted schemes)")
    r.add_argument("--debug", action="store_true", help="also print the revealed statistic")
    r.add_argument("--timeout", type=float, default=10.0)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_retrieve)

    for name, func, helptext in (
        ("exp-accuracy", cmd_exp_accuracy, "accuracy vs quantization grid"),
        ("exp-leakage", cmd_exp_leakage, "database leakage table"),
    ):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--spec", required=True)
        e.add_argument("--format", choices=("csv", "json"), default="csv")
        e.add_argument("--out")
        e.add_argument("--seed", type=int, default=0)
        e.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValueError, FileNotFoundError) as e:
        print(f"pcr {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (ConnectionError, OSError, TimeoutError) as e:
        print(f"pcr {args.command}: connection failed: {e}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
