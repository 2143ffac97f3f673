import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tvbeta.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_FAILURES,
    DataError,
    ingest,
    load_network,
    read_events,
    run,
    save_network,
)
from tvbeta.simlab import ParamFamily, SimDesign, generate

HAND_EVENTS = "src,dst,timestamp\n1,2,5\n1,2,7\n2,1,40\n"


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def read_rows(path: Path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_ingest_hand_example():
    net, ids, report = ingest([("1", "2", 5), ("1", "2", 7), ("2", "1", 40)], 30)
    assert net.N == 2 and net.n == 2 and ids == ["1", "2"]
    assert net.snapshots[0].tolist() == [[0, 1], [0, 0]]
    assert net.snapshots[1].tolist() == [[0, 0], [1, 0]]
    assert report.duplicates_collapsed == 1
    np.testing.assert_allclose(net.times, [0.25, 0.75])
    assert net.window == (0.0, 1.0)


def test_ingest_self_events_and_filter():
    events = [("a", "b", 0), ("c", "c", 1), ("a", "z", 2), ("b", "a", 3)]
    net, ids, report = ingest(events, 10, nodes=["a", "b"])
    assert report.self_events_dropped == 1 and report.filtered_events_dropped == 1
    assert ids == ["a", "b"] and net.N == 1


def test_ingest_empty_buckets_and_affine_times():
    events = [(1, 2, 0.0), (2, 1, 35.0), (1, 2, 90.0)]
    net, _, report = ingest(events, 10)
    assert report.empty_buckets_dropped == 7 and net.N == 3
    raw_mid = np.array([5.0, 35.0, 95.0])
    assert np.all((net.times >= 0) & (net.times <= 1)) and np.all(np.diff(net.times) > 0)
    # affine in raw time: equal raw gaps map to equal rescaled gaps
    slope = (net.times[1] - net.times[0]) / (raw_mid[1] - raw_mid[0])
    np.testing.assert_allclose(net.times, net.times[0] + slope * (raw_mid - raw_mid[0]))


def test_ingest_errors(tmp_path):
    with pytest.raises(DataError, match="no usable"):
        ingest([(1, 1, 0)], 10)
    bad = write(tmp_path / "bad.csv", "1,2,5\n1,2,oops\n")
    with pytest.raises(DataError, match=":2:"):
        read_events(bad)
    short = write(tmp_path / "short.csv", "1,2,5\n3,4\n")
    with pytest.raises(DataError, match=":2:"):
        read_events(short)


def test_read_events_header_and_whitespace(tmp_path):
    assert read_events(write(tmp_path / "e.csv", HAND_EVENTS)) == [("1", "2", 5.0), ("1", "2", 7.0), ("2", "1", 40.0)]
    ws = write(tmp_path / "e.txt", "1 2 5\n\n1  2 7\n")
    assert len(read_events(ws, "ws")) == 2


def test_ingest_round_trip(tmp_path):
    net = generate(SimDesign(6, 12, 0.2, seed=3), ParamFamily("constant", 6, c=-0.5))
    nodes = [str(i) for i in range(1, 7)]
    width, origin = 7.0, 100.0
    # place snapshot l in bucket 2l so that empty buckets appear between them
    events = []
    for ell in range(net.N):
        for i, j in zip(*np.nonzero(net.snapshots[ell])):
            events.append((nodes[i], nodes[j], origin + (2 * ell + 0.5) * width))
    first, _, _ = ingest(events, width, nodes, origin)
    again_events = []
    for ell in range(first.N):
        t_raw = origin + first.times[ell] * (2 * (net.N - 1) + 1) * width
        for i, j in zip(*np.nonzero(first.snapshots[ell])):
            again_events.append((nodes[i], nodes[j], t_raw))
    second, _, _ = ingest(again_events, width, nodes, origin)
    keep = net.snapshots.reshape(net.N, -1).any(axis=1)
    np.testing.assert_array_equal(first.snapshots, net.snapshots[keep])
    np.testing.assert_array_equal(second.snapshots, first.snapshots)
    np.testing.assert_allclose(second.times, first.times, rtol=1e-14)


def test_network_files_round_trip(tmp_path):
    net = generate(SimDesign(5, 4, 0.2, seed=1), ParamFamily("constant", 5))
    save_network(net, tmp_path)
    back = load_network(tmp_path)
    np.testing.assert_array_equal(back.snapshots, net.snapshots)
    np.testing.assert_array_equal(back.times, net.times)
    assert back.window == net.window


def test_cli_ingest_hand_example(tmp_path):
    ev = write(tmp_path / "ev.csv", HAND_EVENTS)
    out = tmp_path / "out"
    assert run(["ingest", "--events", str(ev), "--bucket-width", "30", "--out", str(out)]) == 0
    assert read_rows(out / "edges.csv") == [["snapshot", "src", "dst"], ["0", "1", "2"], ["1", "2", "1"]]
    assert json.loads((out / "network.json").read_text())["times"] == [0.25, 0.75]
    assert read_rows(out / "node_map.csv") == [["node", "id"], ["1", "1"], ["2", "2"]]
    assert json.loads((out / "config.echo").read_text())["bucket_width"] == 30.0


def test_cli_fit_shape_contract(tmp_path):
    sim = tmp_path / "sim"
    assert run(["simulate", "--family", "table1", "--n", "8", "--N", "60", "--seed", "1", "--out", str(sim)]) == 0
    out = tmp_path / "fit"
    code = run(["fit", "--network", str(sim), "--h", "0.3", "--grid-size", "11", "--out", str(out)])
    assert code == 0
    rows = read_rows(out / "theta.csv")
    assert rows[0][:2] == ["time", "alpha_1"] and len(rows[0]) == 1 + 15
    n_grid = len(np.unique(np.concatenate([load_network(sim).times, np.linspace(0.1, 0.9, 11)])))
    assert len(rows) - 1 == n_grid
    assert len(read_rows(out / "se.csv")) == len(rows)
    report = read_rows(out / "fit_report.csv")
    assert report[0][:3] == ["time", "converged", "nonexistence"] and all(r[1] == "1" for r in report[1:])


def test_cli_simulate_deterministic(tmp_path):
    args = ["simulate", "--family", "table5", "--n", "8", "--N", "20", "--seed", "5"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    a.pop("config.echo"), b.pop("config.echo")
    assert a == b


def test_cli_config_file_and_override(tmp_path):
    cfg = write(tmp_path / "cfg.json", json.dumps({"family": "constant", "n": 4, "N": 5, "seed": 9}))
    out = tmp_path / "o"
    assert run(["simulate", "--config", str(cfg), "--N", "7", "--out", str(out)]) == 0
    echo = json.loads((out / "config.echo").read_text())
    assert echo["N"] == 7 and echo["n"] == 4 and echo["seed"] == 9
    assert len(json.loads((out / "network.json").read_text())["times"]) == 7


@pytest.mark.parametrize("argv, code", [
    (["fit", "--h", "-1"], EXIT_CONFIG),
    (["fit", "--h", "0.2"], EXIT_CONFIG),  # no input
    (["fit", "--network", "missing-dir", "--h", "0.2"], EXIT_DATA),
    (["simulate", "--family", "table1", "--n", "10"], EXIT_CONFIG),
])
def test_cli_error_codes(tmp_path, argv, code):
    out = tmp_path / "err"
    assert run(argv + ["--out", str(out)]) == code
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == code and err["message"]


def test_cli_unknown_config_key(tmp_path):
    cfg = write(tmp_path / "cfg.json", json.dumps({"bandwith": 0.2}))
    assert run(["fit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_cli_zero_usable_events(tmp_path):
    ev = write(tmp_path / "ev.csv", "1,1,5\n2,2,6\n")
    out = tmp_path / "o"
    assert run(["ingest", "--events", str(ev), "--bucket-width", "1", "--out", str(out)]) == EXIT_DATA


def test_cli_failures_need_tolerance_flag(tmp_path):
    # node 3 never receives: every smoothed fit is non-existent
    lines = ["src,dst,timestamp"] + [f"{i},{j},{t}" for t in range(10) for i, j in [(1, 2), (2, 1), (3, 1), (1, 2)]]
    ev = write(tmp_path / "ev.csv", "\n".join(lines) + "\n")
    base = ["fit", "--events", str(ev), "--bucket-width", "1", "--h", "0.3", "--grid-size", "5"]
    assert run(base + ["--out", str(tmp_path / "a")]) == EXIT_FAILURES
    assert (tmp_path / "a" / "theta.csv").exists()
    assert run(base + ["--tolerate-failures", "--out", str(tmp_path / "b")]) == 0


def test_cli_analyze_and_changepoint(tmp_path):
    sim = tmp_path / "sim"
    run(["simulate", "--family", "table1", "--n", "12", "--N", "80", "--seed", "2", "--out", str(sim)])
    out = tmp_path / "ana"
    assert run(["analyze", "--network", str(sim), "--h", "0.3", "--grid-size", "21", "--k-max", "5",
                "--out", str(out)]) == 0
    for name in ("distance_alpha.csv", "distance_beta.csv", "clusters.csv", "mds.csv", "select_k.csv", "theta.csv"):
        assert (out / name).exists(), name
    clusters = read_rows(out / "clusters.csv")
    assert clusters[0] == ["node", "alpha_cluster", "beta_cluster"] and len(clusters) == 13
    out2 = tmp_path / "ana2"
    assert run(["analyze", "--theta", str(out / "theta.csv"), "--k", "3", "--out", str(out2)]) == 0
    assert {r[1] for r in read_rows(out2 / "clusters.csv")[1:]} <= {"1", "2", "3"}
    cp = tmp_path / "cp"
    assert run(["changepoint", "--network", str(sim), "--h", "0.15", "--scan-points", "9", "--out", str(cp)]) == 0
    assert read_rows(cp / "gap_curve.csv")[0] == ["time", "gap"]
    assert 0.25 <= json.loads((cp / "changepoint.json").read_text())["t_hat"] <= 0.75


def test_cli_cv(tmp_path):
    sim = tmp_path / "sim"
    run(["simulate", "--family", "table1", "--n", "8", "--N", "40", "--seed", "2", "--out", str(sim)])
    out = tmp_path / "cv"
    assert run(["cv", "--network", str(sim), "--h-grid", "0.2", "0.4", "3", "--out", str(out)]) == 0
    rows = read_rows(out / "cv.csv")
    assert rows[0] == ["h", "loss", "failures"] and len(rows) == 4


def test_module_entry_point(tmp_path):
    ev = write(tmp_path / "ev.csv", HAND_EVENTS)
    proc = subprocess.run([sys.executable, "-m", "tvbeta", "ingest", "--events", str(ev), "--bucket-width", "30",
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
