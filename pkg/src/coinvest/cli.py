"""Command-line entry point: train, extract, baseline, analyze, simulate.

Runs are driven by a flat JSON config (see ``RunConfig``); ``--seed``,
``--gamma``, ``--gates`` and ``--out`` override the file. Every output gets
provenance (config hash and seed), and a failed command removes whatever
it had already written.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import analysis, baselines, data, model, network, synthmarket

logger = logging.getLogger("coinvest")

BASELINES = ("pcc", "dtw", "vwl")
TASKS = ("density", "top-degree", "components", "distances", "coverage")
MODEL_KEYS = ("n_patterns", "window", "hidden_size", "n_layers", "reg", "lr", "epochs", "features", "kernel_init")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat run configuration. Paths are taken relative to the working directory."""

    quotes: str = ""
    index_symbol: str = "INDEX"
    symbols: list = field(default_factory=list)  # empty: every non-index ticker in the file
    max_symbols: int = 0  # 0: no cap
    start: str = ""
    end: str = ""
    yearly: bool = True
    trials: int = 1
    seed: int = 0
    n_patterns: int = 4
    window: int = 5
    hidden_size: int = 32
    n_layers: int = 1
    reg: float = 1e-4
    lr: float = 1e-3
    epochs: int = 200
    features: list = field(default_factory=lambda: ["close", "volume"])
    kernel_init: str = "symmetric"
    gamma: float = 0.02
    gates: str = "igo"
    absolute: bool = False
    baseline_feature: str = "close"
    p_threshold: float = 0.01
    wl_iterations: int = 3
    out: str = "runs"
    workers: int = 1

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            want = type(f.default) if f.default is not dataclasses.MISSING else list
            ok = isinstance(value, want) and not (want is int and isinstance(value, bool))
            if want is float:
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if not ok:
                raise ConfigError(f"config key {f.name!r} must be {want.__name__}, got {value!r}")
        for name in ("start", "end"):
            if getattr(self, name):
                try:
                    dt.date.fromisoformat(getattr(self, name))
                except ValueError:
                    raise ConfigError(f"{name} must be YYYY-MM-DD, got {getattr(self, name)!r}") from None
        if self.trials < 1 or self.workers < 1 or self.max_symbols < 0:
            raise ConfigError("trials and workers must be >= 1, max_symbols >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        try:
            network.parse_gates(self.gates)
            self.model_config(self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self, seed: int) -> model.ModelConfig:
        kw = {k: getattr(self, k) for k in MODEL_KEYS}
        kw["features"] = tuple(kw["features"])
        return model.ModelConfig(seed=seed, gates=self.gates, **kw)

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | None, overrides: dict) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object of key/value pairs")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(raw)


class Outputs:
    """Tracks written files so a failed command can remove them."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.paths: list[Path] = []

    def path(self, *parts: str) -> Path:
        p = Path(self.cfg.out, *parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def adopt(self, paths: Sequence[str | Path]) -> None:
        self.paths.extend(Path(p) for p in paths)

    def provenance(self, target: Path, seed: int | None = None, **extra) -> None:
        side = target.with_name(target.name + ".meta.json")
        self.paths.append(side)
        record = {"command": self.command, "config_hash": self.cfg.digest(),
                  "seed": self.cfg.seed if seed is None else seed, "version": __version__, **extra}
        side.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")

    def remove_all(self) -> None:
        for p in self.paths:
            p.unlink(missing_ok=True)


# ----------------------------------------------------------------------
# data loading shared by train and baseline
# ----------------------------------------------------------------------


def load_market(cfg: RunConfig) -> tuple[data.AlignedPanel, np.ndarray]:
    """Stock panel and the index close series on a common date axis."""
    if not cfg.quotes:
        raise ConfigError("config needs a 'quotes' path")
    records = data.load_quotes(cfg.quotes)
    present = sorted({r.symbol for r in records})
    if cfg.index_symbol not in present:
        raise data.DataError(f"{cfg.quotes}: index ticker {cfg.index_symbol!r} not found")
    symbols = list(cfg.symbols) or [s for s in present if s != cfg.index_symbol]
    if cfg.max_symbols:
        symbols = symbols[: cfg.max_symbols]
    start = dt.date.fromisoformat(cfg.start) if cfg.start else None
    end = dt.date.fromisoformat(cfg.end) if cfg.end else None
    panel = data.build_panel(records, symbols + [cfg.index_symbol], start, end)
    if cfg.index_symbol not in panel.symbols:
        raise data.DataError(f"index ticker {cfg.index_symbol!r} has no quotes in the date range")
    keep = [n for n, s in enumerate(panel.symbols) if s != cfg.index_symbol]
    if len(keep) < 2:
        raise data.DataError("need at least two stocks besides the index")
    index_close = panel.series(cfg.index_symbol, "close").copy()
    stocks = dataclasses.replace(panel, symbols=tuple(panel.symbols[n] for n in keep),
                                 values=panel.values[keep])
    return stocks, index_close


def splits(cfg: RunConfig, panel: data.AlignedPanel, index_close: np.ndarray):
    """(label, panel, index) per training window: calendar years or the whole range."""
    if not cfg.yearly:
        return [("all", panel, index_close)]
    years = np.array([d.year for d in panel.dates])
    out = []
    for year, part in data.split_years(panel).items():
        out.append((str(year), part, index_close[years == year]))
    return out


# ----------------------------------------------------------------------
# train
# ----------------------------------------------------------------------


def _train_job(job) -> list[str]:
    cfg, label, panel, index_close, trial, command = job
    seed = cfg.seed + trial
    out = Outputs(cfg, command)
    try:
        result = model.train(panel, index_close, cfg.model_config(seed))
        stem = f"{label}_t{trial}"
        # checkpoints are JSON already, so provenance goes inside rather than beside
        result.model.meta.update({"run_hash": cfg.digest(), "seed": seed, "window": label, "trial": trial})
        ckpt = out.path("checkpoints", stem + ".json")
        model.save_checkpoint(result.model, ckpt)
        hist = out.path("histories", stem + ".csv")
        model.write_history(result.history, hist)
        out.provenance(hist, seed, window=label, trial=trial, final_loss=result.final_loss,
                       final_accuracy=result.final_accuracy, majority_accuracy=result.majority_accuracy)
        logger.info("%s: loss %.4f -> %.4f, accuracy %.3f", stem,
                    result.history[0].loss if result.history else float("nan"),
                    result.final_loss, result.final_accuracy)
    except Exception as exc:
        out.remove_all()
        raise RuntimeError(f"training window {label}, trial {trial}: {exc}") from exc
    return [str(p) for p in out.paths]


def cmd_train(cfg: RunConfig, out: Outputs) -> None:
    panel, index_close = load_market(cfg)
    jobs = []
    for label, part, idx in splits(cfg, panel, index_close):
        if part.n_days <= cfg.window + 1:
            raise data.DataError(f"window {label} has {part.n_days} days; need more than {cfg.window + 1}")
        jobs.extend((cfg, label, part, idx, trial, out.command) for trial in range(cfg.trials))
    if cfg.workers == 1 or len(jobs) == 1:
        for job in jobs:
            out.adopt(_train_job(job))
        return
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(_train_job, job) for job in jobs]
        errors = []
        for f in futures:
            try:
                out.adopt(f.result())
            except Exception as exc:
                errors.append(exc)
    if errors:
        raise errors[0]


# ----------------------------------------------------------------------
# extract and baseline
# ----------------------------------------------------------------------


def cmd_extract(cfg: RunConfig, out: Outputs, checkpoints: Sequence[str]) -> None:
    if not checkpoints:
        raise ConfigError("extract needs at least one --checkpoint")
    gates = "".join(network.parse_gates(cfg.gates))
    for path in checkpoints:
        if not Path(path).is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        m = model.load_checkpoint(path)
        weights = network.extract_weights(m, gates, absolute=cfg.absolute)
        meta = {"gates": gates, "absolute": cfg.absolute, "seed": m.config.seed,
                "date_range": m.meta.get("date_range"), "model_hash": m.meta.get("config_hash"), "run_hash": m.meta.get("run_hash"),
                "config_hash": cfg.digest(), "checkpoint": Path(path).name}
        net = network.generate_network(weights, cfg.gamma, m.nodes, meta)
        target = out.path("networks", f"{Path(path).stem}_{gates}.csv")
        out.paths.append(target.with_suffix(".csv.json"))
        network.save_network(net, target)


def baseline_weights(method: str, cfg: RunConfig, panel: data.AlignedPanel) -> dict:
    if method == "pcc":
        return baselines.pcc_weights(panel, cfg.baseline_feature, cfg.p_threshold)
    if method == "dtw":
        return baselines.dtw_weights(panel, cfg.baseline_feature)
    return baselines.vwl_weights(panel, cfg.baseline_feature, cfg.wl_iterations)


def cmd_baseline(cfg: RunConfig, out: Outputs, method: str) -> None:
    panel, index_close = load_market(cfg)
    for label, part, _ in splits(cfg, panel, index_close):
        weights = baseline_weights(method, cfg, part)
        meta = {"method": method, "feature": cfg.baseline_feature, "seed": cfg.seed,
                "date_range": [part.dates[0].isoformat(), part.dates[-1].isoformat()],
                "config_hash": cfg.digest()}
        net = network.generate_network(weights, cfg.gamma, list(part.symbols), meta)
        target = out.path("networks", f"{method}_{label}.csv")
        out.paths.append(target.with_suffix(".csv.json"))
        network.save_network(net, target)


# ----------------------------------------------------------------------
# analyze
# ----------------------------------------------------------------------


def _need(value, flag: str, task: str):
    if not value:
        raise ConfigError(f"analyze {task} needs {flag}")
    return value


def _read_pairs(path) -> list[tuple[str, str]]:
    pairs = []
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row == ["source", "target"]:
                continue
            if len(row) != 2:
                raise ConfigError(f"{path}: expected 'ticker,ticker' rows, got {row}")
            pairs.append((row[0].strip(), row[1].strip()))
    return pairs


def cmd_analyze(cfg: RunConfig, out: Outputs, task: str, args) -> None:
    paths = _need(args.networks, "--networks", task)
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"network not found: {p}")
    nets = {Path(p).stem: network.load_network(p) for p in paths}
    rows: list[list] = []
    if task == "density":
        subsets = [(Path(s).stem, analysis.read_watchlist(s)) for s in _need(args.subset, "--subset", task)]
        header = ["network", "subset", "density"]
        for name, net in nets.items():
            rows.extend([name, label, repr(analysis.edge_density(net, members))] for label, members in subsets)
    elif task == "top-degree":
        caps = analysis.read_caps(args.caps) if args.caps else None
        header = ["network", "k", "tickers", "truncated", "cap_mean", "cap_std", "missing_caps"]
        for name, net in nets.items():
            top = analysis.top_degree(net, args.k)
            mean = std = ""
            missing: tuple = ()
            if caps is not None:
                inf = analysis.influence(top.tickers, caps)
                mean, std, missing = repr(inf.mean), repr(inf.std), inf.missing
            rows.append([name, args.k, " ".join(top.tickers), int(top.truncated), mean, std, " ".join(missing)])
    elif task == "components":
        header = ["network", "nodes", "edges", "members"]
        for name, net in nets.items():
            lcc = analysis.largest_component(net)
            rows.append([name, len(lcc.nodes), len(lcc.edges), " ".join(lcc.nodes)])
    elif task == "distances":
        header = ["source", "target", "mean", "std", "observed", "skipped"]
        ordered = list(nets.values())
        for u, v in _read_pairs(_need(args.pairs, "--pairs", task)):
            try:
                s = analysis.avg_distance(ordered, u, v)
                rows.append([u, v, repr(s.mean), repr(s.std), s.observed, s.skipped])
            except ValueError as exc:
                logger.warning("%s", exc)
                rows.append([u, v, "", "", 0, len(ordered)])
    else:
        watch = analysis.read_watchlist(_need(args.watchlist, "--watchlist", task))
        header = ["network", "watchlist", "coverage"]
        rows.extend([name, Path(args.watchlist).stem, repr(analysis.coverage(net, watch))]
                    for name, net in nets.items())
    target = out.path("reports", f"{task.replace('-', '_')}.csv")
    with target.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    out.provenance(target, networks=[str(p) for p in paths])


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------


def demo_spec() -> synthmarket.PlantedMarket:
    text = resources.files("coinvest").joinpath("demo_market.json").read_text()
    return synthmarket.PlantedMarket.from_dict(json.loads(text))


def cmd_simulate(cfg: RunConfig, out: Outputs, spec_path: str | None, days: int) -> None:
    if spec_path:
        if not Path(spec_path).is_file():
            raise FileNotFoundError(f"market spec not found: {spec_path}")
        spec = synthmarket.PlantedMarket.load(spec_path)
    else:
        spec = demo_spec()
    sample = synthmarket.generate(spec, days, cfg.seed)
    quotes = out.path("quotes.csv")
    data.write_quotes(sample.records(spec.index_symbol), quotes)
    out.provenance(quotes, days=days)
    truth = out.path("truth.csv")
    order = {s: n for n, s in enumerate(spec.stocks)}
    with truth.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target"])
        w.writerows(sorted(sample.truth, key=lambda p: (order[p[0]], order[p[1]])))
    out.provenance(truth, days=days)
    spec_out = out.path("spec.json")
    spec.save(spec_out)
    out.provenance(spec_out, days=days)


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON run config")
    common.add_argument("--seed", type=int, help="base seed (trial t uses seed + t)")
    common.add_argument("--gamma", type=float, help="rare ratio: fraction of pairs kept as edges")
    common.add_argument("--gates", help="gate subset for edge weights, e.g. igo or f")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="coinvest", description="Co-investment network toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one model per window and trial")
    p.add_argument("--workers", type=int, help="parallel training processes")

    p = sub.add_parser("extract", parents=[common], help="edge lists from trained checkpoints")
    p.add_argument("--checkpoint", nargs="+", default=[], help="checkpoint JSON file(s)")

    p = sub.add_parser("baseline", parents=[common], help="edge lists from a comparison method")
    p.add_argument("method", choices=BASELINES)

    p = sub.add_parser("analyze", parents=[common], help="graph metrics over saved networks")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--networks", nargs="+", default=[], help="edge list CSV file(s)")
    p.add_argument("--subset", action="append", help="ticker list file (density; repeatable)")
    p.add_argument("--caps", help="symbol,cap_usd_bn CSV (top-degree)")
    p.add_argument("-k", type=int, default=10, help="number of top-degree nodes")
    p.add_argument("--pairs", help="CSV of ticker pairs (distances)")
    p.add_argument("--watchlist", help="ticker list file (coverage)")

    p = sub.add_parser("simulate", parents=[common], help="write a planted synthetic market")
    p.add_argument("--spec", help="market spec JSON (default: bundled demo)")
    p.add_argument("--days", type=int, default=250)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "gamma": args.gamma, "gates": args.gates, "out": args.out,
                 "workers": getattr(args, "workers", None)}
    out = None
    try:
        cfg = load_config(args.config, overrides)
        command = args.command + (f" {args.method}" if args.command == "baseline" else "") \
            + (f" {args.task}" if args.command == "analyze" else "")
        out = Outputs(cfg, command)
        if args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "extract":
            cmd_extract(cfg, out, args.checkpoint)
        elif args.command == "baseline":
            cmd_baseline(cfg, out, args.method)
        elif args.command == "analyze":
            cmd_analyze(cfg, out, args.task, args)
        else:
            cmd_simulate(cfg, out, args.spec, args.days)
    except Exception as exc:  # report, clean up, exit nonzero
        if out is not None:
            out.remove_all()
        if args.verbose:
            logger.exception("command failed")
        print(f"coinvest {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for p in out.paths:
        if p.exists():
            print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
