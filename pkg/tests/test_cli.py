import json

import numpy as np
import pytest

from contractfl import cli
from contractfl.contracts import AccuracyCurveParams, accuracy_curve

TINY = [
    "--set", "rounds=3",
    "--set", "partition.num_clients=6",
    "--set", "dataset.train_count=400",
    "--set", "dataset.test_count=120",
    "--set", "partition.max_classes_per_client=10",
]


def test_contract_command(capsys, tmp_path):
    rc = cli.main(["contract", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "level" in out and "effort" in out and "reward" in out
    assert "verification: ok" in out
    assert "publisher utility:" in out
    data = json.loads((tmp_path / "contracts.json").read_text())
    assert len(data["menu"]["levels"]) == 5  # desk preset market
    assert data["verification"]["ok"] is True


def test_contract_rows_cover_all_levels(capsys):
    rc = cli.main(["contract", "--preset", "paper-noattack"])
    out = capsys.readouterr().out
    assert rc == 0
    body = [ln for ln in out.splitlines() if ln.strip() and ln.split()[0].isdigit()]
    assert [int(ln.split()[0]) for ln in body] == list(range(1, 11))


def test_simulate_command(capsys, tmp_path):
    rc = cli.main(["simulate", *TINY, "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "final test accuracy:" in out
    assert "rewards paid:" in out
    assert (tmp_path / "settlement.json").exists()
    assert (tmp_path / "ledger.csv").exists()


def test_simulate_rounds_flag_beats_preset(capsys, tmp_path):
    rc = cli.main(["simulate", *TINY, "--rounds", "2", "--out", str(tmp_path)])
    assert rc == 0
    rows = (tmp_path / "rounds.csv").read_text().splitlines()
    assert len(rows) == 3  # header + 2 rounds


def test_baseline_command(capsys, tmp_path):
    rc = cli.main(["baseline", "fedavg", *TINY, "--rounds", "2",
                   "--local-epochs", "2", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "algorithm: fedavg" in out
    assert (tmp_path / "summary.json").exists()


def test_baseline_rejects_unknown_algorithm(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["baseline", "fedsgd"])
    assert exc.value.code == 2


def test_fit_command(capsys, tmp_path):
    params = AccuracyCurveParams()
    rng = np.random.default_rng(0)
    efforts = rng.uniform(100.0, 20000.0, size=40)
    thetas = rng.uniform(0.2, 1.0, size=40)
    acc = accuracy_curve(efforts, thetas, params)
    csv = tmp_path / "samples.csv"
    lines = ["effort,theta,accuracy"]
    lines += [f"{float(e)!r},{float(t)!r},{float(a)!r}"
              for e, t, a in zip(efforts, thetas, acc)]
    csv.write_text("\n".join(lines) + "\n")
    rc = cli.main(["fit", str(csv), "--model", "accuracy_curve",
                   "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "rmse:" in out
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert fit["model"] == "accuracy_curve"
    assert fit["rmse"] < 1e-3


def test_fit_rejects_malformed_csv(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2\n1,2,3,x\n")
    rc = cli.main(["fit", str(bad), "--model", "accuracy_curve"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_partition_stats_command(capsys, tmp_path):
    rc = cli.main(["partition-stats", *TINY, "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "clients: 6" in out
    assert "level counts:" in out
    rows = (tmp_path / "partition.csv").read_text().splitlines()
    assert rows[0] == "client_id,d_k,emd,theta,level,malicious"
    assert len(rows) == 7


def test_unknown_preset_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--preset", "warehouse"])
    assert exc.value.code == 2


def test_bad_override_path_exits_two(capsys):
    rc = cli.main(["simulate", "--set", "market.nope=1"])
    assert rc == 2
    assert "market.nope" in capsys.readouterr().err


def test_bad_config_file_exits_two(capsys, tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{oops")
    rc = cli.main(["contract", "--config", str(p)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_seed_flag_changes_partition(capsys, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["partition-stats", *TINY, "--seed", "1",
                     "--out", str(out1)]) == 0
    assert cli.main(["partition-stats", *TINY, "--seed", "2",
                     "--out", str(out2)]) == 0
    assert (out1 / "partition.csv").read_text() != (out2 / "partition.csv").read_text()
