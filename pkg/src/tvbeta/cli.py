"""Command-line interface: ingestion, fitting, CV, simulation, analysis.

Every subcommand writes into ``--out`` and echoes its effective
configuration to ``config.echo``.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 fits failed beyond tolerance.  On errors a
machine-readable ``error.json`` is written when the output directory is
known.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis, bandwidth, estimator, inference, simlab
from .exceptions import NoDataError, ParameterError, TVBetaError
from .kernel import KernelSpec
from .network import DynamicNetwork, ParamTrajectory, validate

log = logging.getLogger("tvbeta")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_FAILURES = 0, 2, 3, 4


class ConfigError(TVBetaError):
    pass


class DataError(TVBetaError):
    pass


class FitFailures(TVBetaError):
    pass


# --------------------------------------------------------------------------
# ingestion


@dataclass
class IngestReport:
    rows: int = 0
    self_events_dropped: int = 0
    filtered_events_dropped: int = 0
    duplicates_collapsed: int = 0
    empty_buckets_dropped: int = 0
    n: int = 0
    N: int = 0


def _sort_ids(ids):
    ids = list(ids)
    try:
        return sorted(ids, key=lambda s: (0, int(s), s))
    except ValueError:
        return sorted(ids)


def read_events(path, delimiter: str = ","):
    """Parse ``src, dst, timestamp`` rows; a non-numeric first row is a header."""
    events = []
    with open(path, newline="") as fh:
        if delimiter in ("ws", "whitespace"):
            rows = (line.split() for line in fh)
        else:
            rows = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(rows, start=1):
            row = [c.strip() for c in row]
            if not row or all(c == "" for c in row) or row[0].startswith("#"):
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected src,dst,timestamp, got {row!r}")
            try:
                ts = float(row[2])
            except ValueError:
                if lineno == 1:
                    continue
                raise DataError(f"{path}:{lineno}: bad timestamp {row[2]!r}") from None
            if not math.isfinite(ts):
                raise DataError(f"{path}:{lineno}: non-finite timestamp")
            events.append((row[0], row[1], ts))
    return events


def ingest(events, bucket_width: float, nodes=None, origin: float | None = None):
    """Aggregate timestamped events into binary snapshots.

    Parameters
    ----------
    events : iterable of (src, dst, timestamp)
    bucket_width : float
        Width of each aggregation bucket in timestamp units.
    nodes : sequence of ids, optional
        Keep only events between these nodes; they define the node set.
    origin : float, optional
        Left edge of the first bucket (defaults to the earliest timestamp).

    Returns
    -------
    net : DynamicNetwork
        Window ``[0, 1]``; snapshot times are bucket midpoints, rescaled
        affinely so that the span of all buckets maps onto ``[0, 1]``.
    node_ids : list of str
        ``node_ids[k]`` is the original id of node ``k + 1``.
    report : IngestReport
    """
    if not bucket_width > 0:
        raise ConfigError("bucket width must be positive")
    report = IngestReport()
    keep = None if nodes is None else {str(x) for x in nodes}
    cleaned = []
    for src, dst, ts in events:
        report.rows += 1
        src, dst = str(src), str(dst)
        if src == dst:
            report.self_events_dropped += 1
            continue
        if keep is not None and (src not in keep or dst not in keep):
            report.filtered_events_dropped += 1
            continue
        cleaned.append((src, dst, float(ts)))
    if not cleaned:
        raise DataError("no usable events after cleaning")
    node_ids = _sort_ids(keep if keep is not None else {e[0] for e in cleaned} | {e[1] for e in cleaned})
    index = {v: k for k, v in enumerate(node_ids)}
    t0 = min(e[2] for e in cleaned) if origin is None else float(origin)
    if any(e[2] < t0 for e in cleaned):
        raise DataError("events precede the bucket origin")
    buckets: dict[int, set] = {}
    for src, dst, ts in cleaned:
        k = int(math.floor((ts - t0) / bucket_width))
        pair = (index[src], index[dst])
        cell = buckets.setdefault(k, set())
        if pair in cell:
            report.duplicates_collapsed += 1
        cell.add(pair)
    n_buckets = max(buckets) + 1
    report.empty_buckets_dropped = n_buckets - len(buckets)
    span = n_buckets * bucket_width
    ks = sorted(buckets)
    times = [((k + 0.5) * bucket_width) / span for k in ks]
    n = len(node_ids)
    if n < 2:
        raise DataError("fewer than two nodes")
    A = np.zeros((len(ks), n, n), dtype=np.uint8)
    for ell, k in enumerate(ks):
        for i, j in buckets[k]:
            A[ell, i, j] = 1
    report.n, report.N = n, len(ks)
    return DynamicNetwork(A, times, (0.0, 1.0)), node_ids, report


# --------------------------------------------------------------------------
# file formats


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def save_network(net: DynamicNetwork, outdir: Path, node_ids=None):
    """Write ``network.json`` (n, window, times) and ``edges.csv`` (1-based)."""
    write_json(outdir / "network.json", {"n": net.n, "window": list(net.window),
                                         "times": [float(t) for t in net.times]})
    rows = []
    for ell in range(net.N):
        src, dst = np.nonzero(net.snapshots[ell])
        rows.extend((ell, i + 1, j + 1) for i, j in zip(src, dst))
    write_csv(outdir / "edges.csv", ["snapshot", "src", "dst"], rows)
    if node_ids is not None:
        write_csv(outdir / "node_map.csv", ["node", "id"], [(k + 1, v) for k, v in enumerate(node_ids)])


def load_network(indir) -> DynamicNetwork:
    indir = Path(indir)
    try:
        meta = json.loads((indir / "network.json").read_text())
        n, times = int(meta["n"]), meta["times"]
        A = np.zeros((len(times), n, n), dtype=np.uint8)
        with open(indir / "edges.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                A[int(row["snapshot"]), int(row["src"]) - 1, int(row["dst"]) - 1] = 1
    except (OSError, KeyError, ValueError, IndexError) as exc:
        raise DataError(f"cannot read network from {indir}: {exc}") from exc
    return DynamicNetwork(A, times, tuple(meta["window"]))


def _theta_header(n: int) -> list[str]:
    return [f"alpha_{i}" for i in range(1, n + 1)] + [f"beta_{j}" for j in range(1, n)]


def read_theta(path) -> ParamTrajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return ParamTrajectory(data[:, 0], data[:, 1:])


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str = ""
    out: str = "out"
    events: str | None = None
    network: str | None = None
    nodes: str | None = None
    delimiter: str = ","
    bucket_width: float | None = None
    origin: float | None = None
    h: str = "cv"
    h_grid: list = field(default_factory=lambda: [0.05, 0.3, 26])
    cv_policy: str = "inf"
    grid_size: int = 101
    kernel: str = "epanechnikov"
    seed: int = 2024
    tolerate_failures: bool = False
    max_iter: int = 100
    tol: float = 1e-10
    # simulate
    family: str = "table1"
    n: int = 40
    N: int = 100
    window: list = field(default_factory=lambda: [0.1, 0.9])
    rep: int = 0
    study: str = "none"
    reps: int = 20
    n_jobs: int = 1
    # analyze
    theta: str | None = None
    k: str = "auto"
    k_max: int = 8
    threshold: float = 0.05
    cluster_method: str = "kmedoids"
    mds_dim: int = 1
    # changepoint
    scan: list | None = None
    scan_points: int = 61

    def validate(self):
        if self.h != "cv":
            try:
                if float(self.h) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"h must be 'cv' or a positive number, got {self.h!r}") from None
        if len(self.h_grid) != 3 or self.h_grid[2] < 1 or not 0 < self.h_grid[0] <= self.h_grid[1]:
            raise ConfigError("h_grid must be [low, high, count] with 0 < low <= high")
        if self.cv_policy not in ("inf", "skip"):
            raise ConfigError("cv_policy must be 'inf' or 'skip'")
        try:
            KernelSpec(self.kernel)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        if self.grid_size < 2:
            raise ConfigError("grid_size must be >= 2")
        if self.k != "auto":
            try:
                if int(self.k) < 1:
                    raise ValueError
            except ValueError:
                raise ConfigError("k must be 'auto' or a positive integer") from None

    @property
    def h_values(self) -> np.ndarray:
        lo, hi, cnt = self.h_grid
        return np.linspace(float(lo), float(hi), int(cnt))

    @property
    def spec(self) -> KernelSpec:
        return KernelSpec(self.kernel)

    @property
    def opts(self) -> estimator.FitOptions:
        return estimator.FitOptions(max_iter=self.max_iter, tol=self.tol)


def _load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return data


# --------------------------------------------------------------------------
# subcommands


def _input_network(cfg: RunConfig, outdir: Path) -> DynamicNetwork:
    if cfg.network:
        net = load_network(cfg.network)
    elif cfg.events:
        if cfg.bucket_width is None:
            raise ConfigError("--bucket-width is required with --events")
        nodes = Path(cfg.nodes).read_text().split() if cfg.nodes else None
        net, node_ids, report = ingest(read_events(cfg.events, cfg.delimiter), cfg.bucket_width, nodes, cfg.origin)
        write_csv(outdir / "node_map.csv", ["node", "id"], [(k + 1, v) for k, v in enumerate(node_ids)])
        write_json(outdir / "ingest_report.json", asdict(report))
    else:
        raise ConfigError("an input is required: --events or --network")
    problems = validate(net)
    if problems:
        raise DataError("invalid network: " + "; ".join(problems[:5]))
    return net


def _bandwidth(cfg: RunConfig, net: DynamicNetwork, outdir: Path) -> float:
    if cfg.h != "cv":
        return float(cfg.h)
    res = bandwidth.loo_cv(net, cfg.h_values, cfg.opts, cfg.spec, cfg.cv_policy)
    write_csv(outdir / "cv.csv", ["h", "loss", "failures"], zip(res.grid, res.losses, res.failures))
    log.info("cross-validated h = %s", res.h_opt)
    return res.h_opt


def _fit(cfg: RunConfig, net: DynamicNetwork, outdir: Path):
    h = _bandwidth(cfg, net, outdir)
    grid = estimator.default_grid(net, cfg.grid_size)
    traj, reports = estimator.fit_trajectory(net, grid, h, cfg.opts, cfg.spec)
    n = net.n
    se = np.full_like(traj.theta, np.nan)
    for k, rep in enumerate(reports):
        if rep.converged:
            se[k] = inference.variance_estimate(net, rep.t, rep.theta, h, cfg.spec).se
    header = ["time"] + _theta_header(n)
    write_csv(outdir / "theta.csv", header, (np.concatenate([[t], row]) for t, row in zip(traj.grid, traj.theta)))
    write_csv(outdir / "se.csv", header, (np.concatenate([[t], row]) for t, row in zip(traj.grid, se)))
    write_csv(outdir / "fit_report.csv",
              ["time", "converged", "nonexistence", "iterations", "final_residual", "kernel_mass", "message"],
              ((r.t, r.converged, r.nonexistence, r.iterations, r.final_residual, r.kernel_mass, r.message)
               for r in reports))
    failed = sum(not r.converged for r in reports)
    return traj, h, failed


def cmd_ingest(cfg, outdir):
    if not cfg.events or cfg.bucket_width is None:
        raise ConfigError("ingest needs --events and --bucket-width")
    nodes = Path(cfg.nodes).read_text().split() if cfg.nodes else None
    net, node_ids, report = ingest(read_events(cfg.events, cfg.delimiter), cfg.bucket_width, nodes, cfg.origin)
    save_network(net, outdir, node_ids)
    write_json(outdir / "ingest_report.json", asdict(report))
    return 0


def cmd_fit(cfg, outdir):
    net = _input_network(cfg, outdir)
    _, _, failed = _fit(cfg, net, outdir)
    return failed


def cmd_cv(cfg, outdir):
    net = _input_network(cfg, outdir)
    cfg.h = "cv"
    _bandwidth(cfg, net, outdir)
    return 0


def cmd_analyze(cfg, outdir):
    if cfg.theta:
        traj, failed = read_theta(cfg.theta), 0
    else:
        net = _input_network(cfg, outdir)
        traj, _, failed = _fit(cfg, net, outdir)
    n = traj.n
    labels, coords, ratio_rows = {}, {}, []
    for kind in ("alpha", "beta"):
        dist = analysis.trajectory_distance(traj, kind)
        write_csv(outdir / f"distance_{kind}.csv", ["node"] + [str(j) for j in range(1, n + 1)],
                  ([i + 1, *row] for i, row in enumerate(dist.D)))
        coords[kind] = analysis.mds_embed(dist, cfg.mds_dim)
        if cfg.k == "auto":
            sel = analysis.select_k(dist, min(cfg.k_max, n - 1), cfg.threshold, cfg.cluster_method)
            ratio_rows.extend((kind, K, r) for K, r in zip(sel.ks, sel.ratios))
            K = sel.suggested
        else:
            K = int(cfg.k)
        labels[kind] = analysis.cluster(dist, K, cfg.cluster_method, seed=cfg.seed)
    if ratio_rows:
        write_csv(outdir / "select_k.csv", ["kind", "K", "ratio"], ratio_rows)
    write_csv(outdir / "clusters.csv", ["node", "alpha_cluster", "beta_cluster"],
              ((i + 1, labels["alpha"][i], labels["beta"][i]) for i in range(n)))
    dims = range(1, cfg.mds_dim + 1)
    write_csv(outdir / "mds.csv", ["node"] + [f"alpha_mds_{d}" for d in dims] + [f"beta_mds_{d}" for d in dims],
              ((i + 1, *coords["alpha"][i], *coords["beta"][i]) for i in range(n)))
    return failed


def cmd_changepoint(cfg, outdir):
    net = _input_network(cfg, outdir)
    if cfg.h == "cv":
        raise ConfigError("changepoint needs a numeric --h")
    h = float(cfg.h)
    a, b = net.window
    scan = cfg.scan or [a + h, b - h]
    grid = np.linspace(scan[0], scan[1], cfg.scan_points)
    res = estimator.change_point_scan(net, h, scan, grid, cfg.opts, cfg.spec)
    write_csv(outdir / "gap_curve.csv", ["time", "gap"], zip(res.grid, res.gap))
    write_json(outdir / "changepoint.json", {"t_hat": res.t_hat, "skipped": res.skipped, "h": h})
    return len(res.skipped)


def _family(cfg) -> simlab.ParamFamily:
    if cfg.family.startswith("constant"):
        c = float(cfg.family.split(":", 1)[1]) if ":" in cfg.family else 0.0
        return simlab.ParamFamily("constant", cfg.n, c=c)
    return simlab.ParamFamily(cfg.family, cfg.n)


def cmd_simulate(cfg, outdir):
    try:
        family = _family(cfg)
    except (ParameterError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    h = None if cfg.h == "cv" else float(cfg.h)
    design = simlab.SimDesign(cfg.n, cfg.N, h if h is not None else "cv", tuple(cfg.window), cfg.reps, cfg.seed)
    study = cfg.study
    if study == "none":
        net = simlab.generate(design, family, cfg.rep)
        save_network(net, outdir)
        write_csv(outdir / "truth.csv", ["time"] + _theta_header(cfg.n),
                  (np.concatenate([[t], family.theta(t)]) for t in net.times))
        return 0
    if study == "cv":
        results = simlab.cv_study(design, family, cfg.h_values, cfg.opts, cfg.n_jobs)
        write_csv(outdir / "cv_curves.csv", ["rep", "h", "loss"],
                  ((r, h_, l) for r, res in enumerate(results) for h_, l in zip(res.grid, res.losses)))
        write_csv(outdir / "cv_hopt.csv", ["rep", "h_opt"], ((r, res.h_opt) for r, res in enumerate(results)))
        return 0
    if study == "rmse":
        rows, slope = simlab.rmse_sweep(reps=cfg.reps, kind=cfg.family, seed=cfg.seed, opts=cfg.opts,
                                        n_jobs=cfg.n_jobs)
        keys = list(rows[0])
        write_csv(outdir / "rmse.csv", keys, ([r[k] for k in keys] for r in rows))
        write_json(outdir / "rmse_summary.json", {"slope_log_rmse_vs_log_Nn": slope})
        return 0
    if h is None:
        raise ConfigError(f"study {study!r} needs a numeric --h")
    if study == "tables":
        rows = simlab.bias_sd_table(design, family, opts=cfg.opts, n_jobs=cfg.n_jobs)
        keys = list(rows[0])
        write_csv(outdir / "table_bias_sd.csv", keys, ([r[k] for k in keys] for r in rows))
    elif study == "sparse":
        res = simlab.sparse_existence(design, family, opts=cfg.opts, n_jobs=cfg.n_jobs)
        write_csv(outdir / "sparse.csv", ["rep", "pointwise_failures", "smoothed_failures"],
                  ((r, a, b) for r, (a, b) in enumerate(res)))
    elif study == "normality":
        coords = (0, cfg.n)
        res = simlab.normality_diag(design, family, 0.5, coords, opts=cfg.opts, n_jobs=cfg.n_jobs)
        write_csv(outdir / "normality.csv", ["sample", "z_alpha_1", "z_beta_1"], ((k, *z) for k, z in enumerate(res.z)))
        write_json(outdir / "normality_summary.json", {"ks": res.ks, "ks_uncorrected": res.ks_uncorrected,
                                                        "ellipse_coverage": res.ellipse_coverage,
                                                        "failed": res.n_failed})
    else:
        raise ConfigError(f"unknown study {study!r}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "changepoint": cmd_changepoint,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvbeta", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", help="JSON file of configuration keys", default=S)
    common.add_argument("--out", default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--kernel", default=S)
    common.add_argument("--tolerate-failures", action="store_true", default=S)
    common.add_argument("--max-iter", type=int, default=S)
    common.add_argument("--tol", type=float, default=S)
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--events", default=S, help="src,dst,timestamp file")
    data.add_argument("--network", default=S, help="directory written by ingest/simulate")
    data.add_argument("--nodes", default=S, help="file of node ids to keep")
    data.add_argument("--delimiter", default=S, help="field delimiter, or 'ws'")
    data.add_argument("--bucket-width", type=float, default=S)
    data.add_argument("--origin", type=float, default=S)
    bw = argparse.ArgumentParser(add_help=False)
    bw.add_argument("--h", default=S, help="bandwidth or 'cv'")
    bw.add_argument("--h-grid", type=float, nargs=3, default=S, metavar=("LOW", "HIGH", "COUNT"))
    bw.add_argument("--cv-policy", choices=["inf", "skip"], default=S)
    bw.add_argument("--grid-size", type=int, default=S)

    sub.add_parser("ingest", parents=[common, data], help="aggregate events into snapshots")
    sub.add_parser("fit", parents=[common, data, bw], help="kernel-smoothed trajectory")
    sub.add_parser("cv", parents=[common, data, bw], help="leave-one-out bandwidth selection")
    sim = sub.add_parser("simulate", parents=[common, bw], help="simulate networks or run a study")
    sim.add_argument("--family", default=S, help="table1, table5 or constant[:c]")
    sim.add_argument("--n", type=int, default=S)
    sim.add_argument("--N", type=int, default=S)
    sim.add_argument("--window", type=float, nargs=2, default=S)
    sim.add_argument("--rep", type=int, default=S)
    sim.add_argument("--study", default=S, choices=["none", "cv", "rmse", "tables", "sparse", "normality"])
    sim.add_argument("--reps", type=int, default=S)
    sim.add_argument("--n-jobs", type=int, default=S)
    ana = sub.add_parser("analyze", parents=[common, data, bw], help="distances, MDS and clustering")
    ana.add_argument("--theta", default=S, help="theta.csv from a previous fit")
    ana.add_argument("--k", default=S, help="cluster count or 'auto'")
    ana.add_argument("--k-max", type=int, default=S)
    ana.add_argument("--threshold", type=float, default=S)
    ana.add_argument("--cluster-method", choices=["kmedoids", "kmeans-mds"], default=S)
    ana.add_argument("--mds-dim", type=int, default=S)
    cp = sub.add_parser("changepoint", parents=[common, data, bw], help="single change-point scan")
    cp.add_argument("--scan", type=float, nargs=2, default=S, metavar=("A1", "B1"))
    cp.add_argument("--scan-points", type=int, default=S)
    return p


def make_config(args: argparse.Namespace) -> RunConfig:
    values = vars(args).copy()
    values.pop("verbose", None)
    cfg_path = values.pop("config", None)
    merged = _load_config_file(cfg_path) if cfg_path else {}
    merged.update(values)
    if "h" in merged:
        merged["h"] = str(merged["h"])
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    outdir = Path(getattr(args, "out", RunConfig.out))
    try:
        cfg = make_config(args)
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        write_json(outdir / "config.echo", asdict(cfg))
        failed = COMMANDS[cfg.command](cfg, outdir)
        if failed and not cfg.tolerate_failures:
            raise FitFailures(f"{failed} fits failed (pass --tolerate-failures to accept)")
        return EXIT_OK
    except (ConfigError, ParameterError, TypeError) as exc:
        code = EXIT_CONFIG
        err = exc
    except (DataError, NoDataError, TVBetaError, OSError) as exc:
        code = EXIT_FAILURES if isinstance(exc, FitFailures) else EXIT_DATA
        err = exc
    print(f"tvbeta: error: {err}", file=sys.stderr)
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        write_json(outdir / "error.json", {"exit_code": code, "type": type(err).__name__, "message": str(err)})
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
