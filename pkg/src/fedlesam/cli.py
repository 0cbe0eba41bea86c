"""Command-line entry point: ``fedlesam run|sweep|compare|surface|partition-dump``."""

from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import SEED_ENV, RunConfig, load_config
from .metrics import METRIC_COLUMNS, loss_surface_grid, read_metrics_csv, write_metrics_csv, write_surface_csv
from .models import ContractError
from .server import DivergenceError, build_federation, read_checkpoint, run_experiment, write_checkpoint

log = logging.getLogger("fedlesam")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2

MANIFEST = "manifest.json"
METRICS = "metrics.csv"


@dataclass
class RunManifest:
    config_hash: str
    output_dir: str
    config_path: str
    algorithm: str
    status: str = "ok"
    artifacts: list = field(default_factory=list)  # [{"file": name, "role": role}]
    created: float = 0.0
    message: str = ""

    def add(self, name: str, role: str) -> None:
        self.artifacts.append({"file": name, "role": role})

    def files(self, role: str) -> list[str]:
        return [a["file"] for a in self.artifacts if a["role"] == role]

    def write(self) -> Path:
        path = Path(self.output_dir) / MANIFEST
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(**data)


def run_config(rc: RunConfig, config_path, out_dir) -> RunManifest:
    """Run one parsed config into ``out_dir`` and write its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = rc.experiment
    manifest = RunManifest(rc.hash, str(out), str(config_path), cfg.algorithm.name, created=time.time())
    (out / "config.canonical.json").write_text(rc.canonical + "\n")
    manifest.add("config.canonical.json", "config")

    fed = build_federation(cfg)
    if rc.output.partition and fed.partition is not None:
        fed.partition.write_csv(out / "partition.csv")
        manifest.add("partition.csv", "partition")

    try:
        result = run_experiment(cfg, fed=fed, checkpoint_dir=out)
    except DivergenceError as exc:
        write_metrics_csv(exc.metrics, out / METRICS)
        manifest.add(METRICS, "metrics")
        manifest.status = "diverged"
        manifest.message = str(exc)
        _add_checkpoints(manifest, out)
        manifest.write()
        return manifest

    write_metrics_csv(result.metrics, out / METRICS)
    manifest.add(METRICS, "metrics")
    final = f"checkpoint_{result.state.round:05d}.txt"
    if not (out / final).exists():
        write_checkpoint(out / final, result.state.round, result.state.w)
    _add_checkpoints(manifest, out)
    if rc.output.surface:
        grid = loss_surface_grid(cfg.model, result.state.w, fed.full_data, rc.output.surface_resolution,
                                 rc.output.surface_extent, rc.output.surface_seed)
        write_surface_csv(grid, out / "surface.csv")
        manifest.add("surface.csv", "surface")
    manifest.write()
    return manifest


def _add_checkpoints(manifest: RunManifest, out: Path) -> None:
    for path in sorted(out.glob("checkpoint_*.txt")):
        manifest.add(path.name, "checkpoint")


def _run_one(config_path: str, out_dir: str) -> RunManifest:
    return run_config(load_config(config_path), config_path, out_dir)


def compare_manifests(manifests: list[RunManifest]) -> str:
    """Text table of final-round and best-round values, one column per run."""
    if len(manifests) < 2:
        raise ContractError("compare needs at least two manifests")
    tables = []
    for m in manifests:
        files = m.files("metrics")
        if not files:
            raise ContractError(f"{m.output_dir}: manifest lists no metrics file")
        tables.append({row.round: row for row in read_metrics_csv(Path(m.output_dir) / files[0])})
    common = sorted(set.intersection(*(set(t) for t in tables)))
    if not common:
        raise ContractError("runs share no logged rounds; nothing to align")
    last = common[-1]

    labels = [f"{m.algorithm}@{Path(m.output_dir).name}" for m in manifests]
    lines = [["quantity"] + labels]
    lines.append(["round"] + [str(last)] * len(tables))
    higher_better = {"test_acc"}
    for col in METRIC_COLUMNS[1:]:
        lines.append([f"final.{col}"] + [_fmt(getattr(t[last], col)) for t in tables])
        if col == "eta_l":
            continue
        best = []
        for t in tables:
            vals = [getattr(t[r], col) for r in common if getattr(t[r], col) is not None]
            if not vals:
                best.append("")
            else:
                best.append(_fmt(max(vals) if col in higher_better else min(vals)))
        lines.append([f"best.{col}"] + best)
    lines.append(["final.est_error_sqrt"] + [
        _fmt(None if t[last].est_error is None else math.sqrt(t[last].est_error)) for t in tables])
    widths = [max(len(row[i]) for row in lines) for i in range(len(lines[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in lines) + "\n"


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6g}"


def _cmd_run(args) -> int:
    rc = load_config(args.config)
    m = run_config(rc, args.config, args.out)
    print(f"{m.algorithm}: {m.status} -> {Path(m.output_dir) / MANIFEST}")
    if m.status != "ok":
        print(f"error: {m.message}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    paths = sorted(glob.glob(args.pattern))
    if not paths:
        raise ContractError(f"no config matches {args.pattern!r}")
    stems = [Path(p).stem for p in paths]
    if len(set(stems)) != len(stems):
        raise ContractError("sweep configs must have distinct file names")
    for p in paths:  # fail fast on a bad config before running anything
        load_config(p)
    outs = [str(Path(args.out) / s) for s in stems]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            manifests = list(pool.map(_run_one, paths, outs))
    else:
        manifests = [_run_one(p, o) for p, o in zip(paths, outs)]
    status = EXIT_OK
    for m in manifests:
        print(f"{m.algorithm}: {m.status} -> {Path(m.output_dir) / MANIFEST}")
        if m.status != "ok":
            status = EXIT_DIVERGED
    return status


def _cmd_compare(args) -> int:
    sys.stdout.write(compare_manifests([RunManifest.read(p) for p in args.manifests]))
    return EXIT_OK


def _cmd_surface(args) -> int:
    rc = load_config(args.config)
    cfg = rc.experiment
    _, w = read_checkpoint(args.checkpoint)
    if w.shape != (cfg.model.n_params,):
        raise ContractError(
            f"checkpoint has {w.shape[0]} parameters but the config's model needs {cfg.model.n_params}")
    fed = build_federation(cfg)
    res = args.resolution if args.resolution is not None else rc.output.surface_resolution
    extent = args.extent if args.extent is not None else rc.output.surface_extent
    seed = args.seed if args.seed is not None else rc.output.surface_seed
    grid = loss_surface_grid(cfg.model, w, fed.full_data, res, extent, seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_surface_csv(grid, args.out)
    print(f"wrote {grid.shape[0]} grid points to {args.out}")
    return EXIT_OK


def _cmd_partition_dump(args) -> int:
    rc = load_config(args.config)
    fed = build_federation(rc.experiment)
    if fed.partition is None:
        raise ContractError("quadratic data has no sample partition to dump")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fed.partition.write_csv(args.out)
    print(f"wrote {sum(fed.partition.sizes())} assignments for {fed.partition.n_clients} clients to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedlesam",
        description="Deterministic federated-learning simulator for the FedLESAM family.",
        epilog=f"Set {SEED_ENV}=<int> to override the seed of every config.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run every config matching a glob, one subdirectory each")
    p.add_argument("pattern", help="config glob, e.g. 'configs/*.toml'")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare", help="tabulate final/best metrics of several runs")
    p.add_argument("manifests", nargs="+")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("surface", help="export a loss-surface grid around a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--resolution", type=int)
    p.add_argument("--extent", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_surface)

    p = sub.add_parser("partition-dump", help="write the client/sample assignment of a config")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=_cmd_partition_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", invalid="ignore")  # divergence is detected explicitly
    try:
        return args.func(args)
    except (ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
