"""Command line: ``ticketprune run`` executes one experiment, ``ticketprune report`` pools results."""
from __future__ import annotations

import argparse
import csv
import io
import json
import statistics
import sys
import time
from pathlib import Path

from . import kernels
from .experiments import ConfigError, ExperimentConfig, report_row, run_experiment
from .verify import wilson_interval

SUMMARY_FIELDS = [
    "experiment", "runs", "trials", "successes", "rate", "wilson_lo", "wilson_hi",
    "median_error", "max_error", "max_active", "active_bound", "runtime_s",
]


def _parse_override(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _write_csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def cmd_run(args) -> int:
    overrides = {"seed": args.seed, "trials": args.trials, "experiment": args.experiment}
    for item in args.set or []:
        k, v = _parse_override(item)
        overrides[k] = v
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    stem = f"{cfg.experiment}-seed{cfg.seed}"
    start = time.perf_counter()
    report = run_experiment(cfg, workers=args.workers)
    elapsed = time.perf_counter() - start
    try:
        (out / f"{stem}.json").write_text(dumps_report(report))
        (out / f"{stem}.csv").write_text(_write_csv([report_row(report)], list(report_row(report))))
        (out / f"{stem}.timing.json").write_text(json.dumps(
            {"runtime_s": elapsed, "workers": args.workers, "backend": kernels.BACKEND}, indent=2) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write report to {out}: {exc}") from None
    s = report["summary"]
    print(f"{cfg.experiment}: {s['successes']}/{s['trials']} succeeded "
          f"(rate {s['rate']:.3f}, 95% CI [{s['wilson95'][0]:.3f}, {s['wilson95'][1]:.3f}]) "
          f"in {elapsed:.1f}s -> {out / (stem + '.json')}")
    return 0


def _runtime(path: Path) -> float | None:
    side = path.with_name(path.name[:-len(".json")] + ".timing.json") if path.name.endswith(".json") else None
    if side is None or not side.exists():
        return None
    return float(json.loads(side.read_text())["runtime_s"])


def summarise_reports(paths) -> list[dict]:
    """One pooled row per experiment id, in order of first appearance.

    Rates pool successes over trials; the median column is the median of the
    per-run medians. Timing sidecars matched by a shell glob are skipped.
    """
    groups: dict[str, dict] = {}
    for p in map(Path, paths):
        if p.name.endswith(".timing.json"):
            continue
        try:
            rep = json.loads(p.read_text())
            row = report_row(rep)
        except (OSError, json.JSONDecodeError, KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"malformed report {p}: {exc}") from None
        g = groups.setdefault(row["experiment"], {
            "experiment": row["experiment"], "runs": 0, "trials": 0, "successes": 0,
            "medians": [], "max_error": None, "max_active": None, "active_bound": row["active_bound"],
            "runtime_s": 0.0, "runtime_known": True,
        })
        g["runs"] += 1
        g["trials"] += row["trials"]
        g["successes"] += row["successes"]
        if row["median_error"] is not None:
            g["medians"].append(row["median_error"])
        if row["max_error"] is not None:
            g["max_error"] = row["max_error"] if g["max_error"] is None else max(g["max_error"], row["max_error"])
        if row["max_active"] is not None:
            g["max_active"] = row["max_active"] if g["max_active"] is None else max(g["max_active"], row["max_active"])
        rt = _runtime(p)
        if rt is None:
            g["runtime_known"] = False
        else:
            g["runtime_s"] += rt
    rows = []
    for g in groups.values():
        lo, hi = wilson_interval(g["successes"], g["trials"])
        rows.append({
            "experiment": g["experiment"],
            "runs": g["runs"],
            "trials": g["trials"],
            "successes": g["successes"],
            "rate": g["successes"] / g["trials"] if g["trials"] else 0.0,
            "wilson_lo": lo,
            "wilson_hi": hi,
            "median_error": statistics.median(g["medians"]) if g["medians"] else None,
            "max_error": g["max_error"],
            "max_active": g["max_active"],
            "active_bound": g["active_bound"],
            "runtime_s": g["runtime_s"] if g["runtime_known"] else None,
        })
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def markdown_table(rows: list[dict]) -> str:
    lines = ["| " + " | ".join(SUMMARY_FIELDS) + " |", "|" + "---|" * len(SUMMARY_FIELDS)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r[f]) for f in SUMMARY_FIELDS) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    rows = summarise_reports(args.paths)
    text = markdown_table(rows) if args.format == "markdown" else _write_csv(rows, SUMMARY_FIELDS)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ticketprune", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment and write its reports")
    r.add_argument("--config", help="JSON config file")
    r.add_argument("--experiment", help="experiment id (overrides the config)")
    r.add_argument("--seed", type=int)
    r.add_argument("--trials", type=int)
    r.add_argument("--out", default="reports", help="output directory (default: reports)")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field; VALUE is parsed as JSON when possible")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="pool report files into one table")
    s.add_argument("paths", nargs="*")
    s.add_argument("--format", choices=("csv", "markdown"), default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
