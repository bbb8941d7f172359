"""Command line: ``search``, ``evaluate`` and ``compare``.

Exit codes: 0 success, 2 configuration/input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .config import ConfigError, ExperimentConfig, PreparedData, dump_config, load_config, prepare_data
from .data import DataError
from .evaluate import DiscreteNet, check_genotype_space, train_model
from .genotype import Genotype, GenotypeError, load_genotype, save_genotype
from .ops import OperationKind, PARAMETRIC
from .search import NumericalError, SearchConfigError, continue_search, init_state, make_space

log = logging.getLogger("progdarts")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def run_id(mode: str, space: str, seed: int) -> str:
    # deterministic so that reruns produce byte-identical files
    return f"{mode}-{space}-seed{seed}"


def _line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


class RunWriter:
    """Append-only writers for one search run's history and metrics."""

    def __init__(self, out: Path, rid: str, seed: int):
        out.mkdir(parents=True, exist_ok=True)
        self.rid, self.seed = rid, seed
        self.history = open(out / "history.jsonl", "w")
        self.metrics = open(out / "metrics.jsonl", "w")
        self.stages_written = 0
        self.last_epoch = -1

    def _stamp(self, rec: dict) -> dict:
        return {"version": SCHEMA_VERSION, "run_id": self.rid, "seed": self.seed, **rec}

    def flush_stages(self, history) -> None:
        for ev in history.stages[self.stages_written:]:
            rec = self._stamp(ev.to_record())
            self.history.write(_line(rec))
            self.metrics.write(_line(rec))
        self.stages_written = len(history.stages)
        self.history.flush()
        self.metrics.flush()

    def on_epoch(self, state, rec) -> None:
        if rec.epoch <= self.last_epoch:
            raise RuntimeError(f"metrics epoch went backwards: {rec.epoch} after {self.last_epoch}")
        self.last_epoch = rec.epoch
        self.flush_stages(state.history)
        self.metrics.write(_line(self._stamp(rec.to_record())))
        self.metrics.flush()

    def close(self) -> None:
        self.history.close()
        self.metrics.close()


def write_alpha_trace(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["version", "cell", "epoch", "kind", "weight"])
        for epoch, cell, kind, weight in rows:
            w.writerow([SCHEMA_VERSION, cell, epoch, kind, repr(weight)])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def do_search(cfg: ExperimentConfig, seed: int, mode: str, out: Path,
              data: Optional[PreparedData] = None) -> Genotype:
    """Run one search and write genotype.json, history.jsonl, metrics.jsonl."""
    data = data or prepare_data(cfg)
    rid = run_id(mode, cfg.space, seed)
    state = init_state(cfg.search_config(seed), mode)
    writer = RunWriter(out, rid, seed)
    try:
        genotype, history = continue_search(state, (data.search_train, data.search_val), writer.on_epoch)
    finally:
        # also reached on a numerical abort: keep what was logged so far
        writer.flush_stages(state.history)
        writer.close()
    write_alpha_trace(out / "alpha_trace.csv", history.alpha_trace)
    path = out / "genotype.json"
    save_genotype(genotype, path)
    load_genotype(path)  # a written genotype must re-parse
    return genotype


def do_evaluate(cfg: ExperimentConfig, genotype: Genotype, seed: int,
                data: Optional[PreparedData] = None) -> dict:
    check_genotype_space(genotype, make_space(cfg.space))
    data = data or prepare_data(cfg)
    model = DiscreteNet(genotype, cfg.eval_net_config(), seed)
    rep = train_model(model, data.train, cfg.train_config(), seed, data.test)
    return {
        "version": SCHEMA_VERSION,
        "seed": seed,
        "space": cfg.space,
        "train_acc": rep.train_acc,
        "test_acc": rep.test_acc,
        "final_loss": rep.final_loss,
        "num_params": rep.num_params,
        "epochs": rep.epochs,
        "genotype": genotype.to_dict(),
    }


def genotype_counts(g: Genotype, cell: str = "normal") -> dict:
    ops = g.ops(cell)
    return {
        "skip_connect": g.count(OperationKind.skip_connect, cell),
        "noise": g.count(OperationKind.noise, cell),
        "parametric": sum(1 for k in ops if k in PARAMETRIC),
    }


def _compare_job(cfg: ExperimentConfig, seed: int, mode: str, out: str) -> dict:
    run_dir = Path(out) / mode / f"seed{seed}"
    data = prepare_data(cfg)
    g = do_search(cfg, seed, mode, run_dir, data)
    report = do_evaluate(cfg, g, seed, data)
    (run_dir / "evaluation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    row = {"version": SCHEMA_VERSION, "run_id": run_id(mode, cfg.space, seed), "mode": mode, "seed": seed}
    row.update(genotype_counts(g, "normal"))
    row.update({f"{k}_reduce": v for k, v in genotype_counts(g, "reduce").items()})
    row.update({"test_acc": report["test_acc"], "train_acc": report["train_acc"],
                "num_params": report["num_params"]})
    return row


SUMMARY_FIELDS = ["version", "run_id", "mode", "seed", "skip_connect", "noise", "parametric",
                  "skip_connect_reduce", "noise_reduce", "parametric_reduce",
                  "test_acc", "train_acc", "num_params"]
AGGREGATE_FIELDS = ["skip_connect", "noise", "parametric", "test_acc"]


def aggregate(rows: list[dict]) -> dict:
    """Per-mode medians of the genotype counts and retrained accuracy."""
    out = {}
    for mode in sorted({r["mode"] for r in rows}):
        sel = [r for r in rows if r["mode"] == mode]
        out[mode] = {"runs": len(sel)}
        for f in AGGREGATE_FIELDS:
            out[mode][f"median_{f}"] = statistics.median(r[f] for r in sel)
    return out


def do_compare(cfg: ExperimentConfig, out: Path) -> dict:
    if len(cfg.seeds) < 3:
        raise ConfigError(f"seeds: compare needs at least 3 seeds, got {len(cfg.seeds)}")
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(s, m) for s in cfg.seeds for m in ("opp", "darts")]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futs = [pool.submit(_compare_job, cfg, s, m, str(out)) for s, m in jobs]
            rows = [f.result() for f in futs]
    else:
        rows = [_compare_job(cfg, s, m, str(out)) for s, m in jobs]

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(rows)
    summary = {"version": SCHEMA_VERSION, "space": cfg.space, "seeds": list(cfg.seeds),
               "rows": rows, "aggregate": aggregate(rows)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    with open(out / "alpha_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["version", "run_id", "mode", "seed", "cell", "epoch", "kind", "weight"])
        for s, m in jobs:
            with open(out / m / f"seed{s}" / "alpha_trace.csv", newline="") as src:
                r = csv.reader(src)
                next(r)
                for version, cell, epoch, kind, weight in r:
                    w.writerow([version, run_id(m, cfg.space, s), m, s, cell, epoch, kind, weight])
    return summary


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="progdarts", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override the config's seeds")
        sp.add_argument("--out", help="output directory (default: config, then $PROGDARTS_OUT)")
        sp.add_argument("--space", choices=["full", "S2", "S3", "S4"])
        sp.add_argument("--mode", choices=["opp", "darts"])

    common(sub.add_parser("search", help="run one architecture search"))
    ev = sub.add_parser("evaluate", help="retrain a genotype from scratch")
    common(ev)
    ev.add_argument("--genotype", required=True)
    common(sub.add_parser("compare", help="opp vs darts over the config's seeds"))
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.space:
        changes["space"] = args.space
    if args.mode:
        changes["mode"] = args.mode
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
        cfg = _apply_overrides(cfg, args)
        out = cfg.resolve_output_dir(args.out)
        seed = cfg.seeds[0]
        if args.command == "search":
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.yaml").write_text(dump_config(cfg))
            do_search(cfg, seed, cfg.mode, out)
            print(f"genotype written to {out / 'genotype.json'}")
        elif args.command == "evaluate":
            g = load_genotype(args.genotype)
            report = do_evaluate(cfg, g, seed)
            out.mkdir(parents=True, exist_ok=True)
            (out / "evaluation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
            print(f"test_acc={report['test_acc']:.4f} params={report['num_params']}")
        else:
            summary = do_compare(cfg, out)
            for mode, agg in summary["aggregate"].items():
                print(mode, " ".join(f"{k}={v}" for k, v in agg.items()))
    except (ConfigError, SearchConfigError, GenotypeError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
