import csv
import io
import os
import subprocess
import sys

import numpy as np
import pytest

from swept2d.cli import BENCH_COLUMNS, RUN_COLUMNS, main
from swept2d.codec import decode_field
from swept2d.grid import make_topology
from swept2d.kernels import build_kernel
from swept2d.perfmodel import CURVE_COLUMNS, predict_simplified
from swept2d.transport import free_ports, local_roster, write_roster


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_run_increment_snapshot_all_nines(tmp_path, capsys):
    snap = tmp_path / "out.swf"
    code = main(["run", "--kernel", "increment", "--px", "2", "--py", "2", "--n", "8", "--cycles", "1",
                 "--snapshot", str(snap)])
    assert code == 0
    field = decode_field(snap.read_bytes())
    assert field.step == 8 and np.all(field.values == 9.0)
    (row,) = rows(capsys.readouterr().out)
    assert list(row) == list(RUN_COLUMNS)
    assert row["messages_per_rank"] == "8" and row["exchanges_per_rank"] == "4"
    assert row["substeps"] == "8"


@pytest.mark.parametrize("kernel", ["wave", "euler"])
def test_serial_and_swept_snapshots_are_byte_identical(tmp_path, capsys, kernel):
    snaps = {}
    for engine in ("serial", "swept", "classic"):
        path = tmp_path / f"{engine}.swf"
        assert main(["run", "--kernel", kernel, "--engine", engine, "--px", "2", "--py", "3", "--n", "8",
                     "--cycles", "2", "--snapshot", str(path)]) == 0
        snaps[engine] = path.read_bytes()
    assert snaps["serial"] == snaps["swept"] == snaps["classic"]


def test_odd_n_is_usage_error(capsys):
    assert main(["run", "--n", "7"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error[usage]:") and "n" in err.split(":", 1)[1]
    assert err.count("\n") == 1


@pytest.mark.parametrize("argv", [
    ["run", "--engine", "warp"],
    ["run", "--kernel", "nope"],
    ["run", "--px", "two"],
    ["run", "--substeps", "5"],
    ["run", "--param", "cfl"],
    ["run", "--kernel", "wave", "--param", "cfl=0.9"],
    ["run", "--kernel", "increment", "--param", "cfl=0.3"],
    ["bench", "--engines", "swept,warp", "--n-list", "8", "--repeats", "1", "--warmup", "0"],
    ["model", "--latency-presets", "carrier-pigeon", "--s", "1e-9"],
    ["model"],
    ["verify", "--max-px", "0"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error[usage]:")


def test_numeric_error_exits_3(capsys):
    code = main(["run", "--kernel", "euler", "--px", "1", "--py", "1", "--n", "8", "--param", "pulse=-20"])
    assert code == 3
    err = capsys.readouterr().err
    assert err.startswith("error[numeric]:") and "i=" in err


def test_transport_error_exits_4(tmp_path, capsys):
    roster = tmp_path / "roster.txt"
    write_roster(roster, local_roster(make_topology(2, 1, 4)))
    # Rank 1 alone: rank 0 never comes up.
    code = main(["run", "--kernel", "increment", "--px", "2", "--py", "1", "--n", "4", "--transport", "tcp",
                 "--roster", str(roster), "--rank", "1", "--timeout", "0.5"])
    assert code == 4
    assert capsys.readouterr().err.startswith("error[transport]:")


def test_tcp_in_one_process(capsys):
    assert main(["run", "--kernel", "wave", "--transport", "tcp", "--px", "2", "--py", "2", "--n", "8"]) == 0
    (row,) = rows(capsys.readouterr().out)
    assert row["messages_per_rank"] == "8"


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nkernel = increment\npx = 1\npy = 2\nn = 4\ncycles = 3\n\n[params]\n")
    assert main(["run", "--config", str(cfg), "--px", "3"]) == 0
    (row,) = rows(capsys.readouterr().out)
    assert (row["px"], row["py"], row["n"], row["substeps"]) == ("3", "2", "4", "12")
    cfg.write_text("[run]\nkernel = wave\nflux = 3\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "flux" in capsys.readouterr().err
    cfg.write_text("[run]\nkernel = wave\nn = 4\npx = 1\npy = 1\n[params]\ncfl = 0.5\n")
    assert main(["run", "--config", str(cfg)]) == 0


def test_model_csv_and_optimum(capsys):
    assert main(["model", "--latency-presets", "ec2", "--compute-presets", "nehalem-fv", "--n-max", "200"]) == 0
    out = capsys.readouterr()
    table = rows(out.out)
    assert list(table[0]) == list(CURVE_COLUMNS) and len(table) == (200 - 4) // 2 + 1
    best = min(table, key=lambda r: float(r["total"]))
    assert f"n={best['n']} " in out.err
    for r in table[:3]:
        assert float(r["total"]) == pytest.approx(predict_simplified(int(r["n"]), 40e-9, 150e-6), rel=1e-12)
    assert main(["model", "--s", "1e-9", "--tau", "0"]) == 0
    assert "n=4 " in capsys.readouterr().err


def test_bench_columns(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--kernel", "wave", "--n-list", "8,16", "--repeats", "1", "--warmup", "0",
                 "--min-substeps", "16", "--out", str(out)]) == 0
    table = rows(out.read_text())
    assert list(table[0]) == list(BENCH_COLUMNS)
    assert [(r["n"], r["engine"]) for r in table] == [("8", "swept"), ("8", "classic"), ("16", "swept"),
                                                       ("16", "classic")]
    assert table[0]["substeps"] == "16" and table[0]["points_per_rank"] == "64"
    assert all(float(r["us_per_substep"]) > 0 for r in table)


def test_verify_passes(capsys):
    code = main(["verify", "--max-px", "2", "--max-py", "2", "--n-list", "4,8",
                 "--kernels", "increment,wave,wide-stencil"])
    assert code == 0
    assert "48/48" in capsys.readouterr().out


def test_verify_detects_injected_fault(capsys):
    code = main(["verify", "--max-px", "2", "--max-py", "1", "--n-list", "8", "--kernels", "linear",
                 "--inject-fault"])
    assert code == 1
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("divergence")]
    assert lines and all("engine=swept" in l for l in lines)
    assert "rank=" in lines[0] and "i=" in lines[0] and "step=8" in lines[0]


def test_verify_single_rank(capsys):
    assert main(["verify", "--max-px", "1", "--max-py", "1", "--n-list", "4", "--kernels", "increment"]) == 0


def _env():
    env = dict(os.environ)
    src = os.path.join(os.path.dirname(__file__), "..", "src")
    env["PYTHONPATH"] = os.path.abspath(src) + os.pathsep + env.get("PYTHONPATH", "")
    return env


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "swept2d", "model", "--s", "40e-9", "--tau", "150e-6",
                           "--n-max", "20"], capture_output=True, text=True, env=_env(), timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.startswith("n,s,tau,term_compute,term_latency,total")


def test_multi_process_tcp_run(tmp_path):
    topo = make_topology(2, 2, 8)
    roster = tmp_path / "roster.txt"
    write_roster(roster, local_roster(topo, ports=free_ports(4)))
    snap = tmp_path / "tcp.swf"
    procs = []
    for rank in range(4):
        argv = [sys.executable, "-m", "swept2d", "run", "--kernel", "wave", "--px", "2", "--py", "2", "--n", "8",
                "--cycles", "2", "--transport", "tcp", "--roster", str(roster), "--rank", str(rank),
                "--timeout", "60"]
        if rank == 0:
            argv += ["--snapshot", str(snap)]
        procs.append(subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=_env()))
    outs = [p.communicate(timeout=180) for p in procs]
    assert [p.returncode for p in procs] == [0] * 4, [o[1] for o in outs]
    (row,) = rows(outs[0][0])
    assert row["messages_per_rank"] == "16"
    prog, field = build_kernel("wave", 16, 16)
    from swept2d import serial_reference
    from swept2d.codec import encode_field
    assert snap.read_bytes() == encode_field(serial_reference(prog, field, 16))
