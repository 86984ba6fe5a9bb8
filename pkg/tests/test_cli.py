import csv
import json

import numpy as np
import pytest

from flyadapt import cli
from flyadapt import config as cf
from flyadapt import sim
from flyadapt import trainer as tr


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    code = cli.main(["repro", "--preset", "smoke", "--paths.out_dir", str(out), "-q"])
    return out, code


def test_repro_smoke_outputs(smoke_run):
    out, code = smoke_run
    assert code == 0
    for rel in ("config.resolved.json", "data/manifest.json", "data/ranges.csv", "model/model.json",
                "model/train_log.csv", "eval/eval.json", "summary.csv", "summary.txt",
                "track/circle_off/control_log.csv", "track/circle_on/adapt_log.csv",
                "plots/lemniscate_on.csv"):
        assert (out / rel).exists(), rel


def test_manifest_matches_config(smoke_run):
    out, _ = smoke_run
    manifest = json.loads((out / "data/manifest.json").read_text())
    cfg = cf.preset("smoke")
    assert manifest["n_train"] == cfg.datagen.n_train
    assert manifest["n_validation"] == cfg.datagen.n_val
    assert len(list((out / "data/train").glob("traj_*.csv"))) == cfg.datagen.n_train
    names = {r["name"] for r in manifest["ranges"]}
    assert {"px", "wz", "u1"} <= names


def test_outputs_embed_config_hash(smoke_run):
    out, _ = smoke_run
    h = json.loads((out / "config.resolved.json").read_text())["config_hash"]
    assert json.loads((out / "model/model.json").read_text())["config_hash"] == h
    for rel in ("summary.csv", "model/train_log.csv", "track/circle_on/control_log.csv",
                "track/circle_on/adapt_log.csv", "data/train/traj_00000.csv", "data/ranges.csv"):
        assert f"config_hash={h}" in (out / rel).read_text(), rel


def test_plotdata_columns_and_reference(smoke_run):
    out, _ = smoke_run
    with open(out / "plots/circle_off.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cli.PLOT_COLUMNS
    data = np.array(rows[1:], dtype=float)
    assert data.shape[1] == len(cli.PLOT_COLUMNS)
    assert np.all(np.diff(data[:, 0]) > 0)
    ref = sim.named_reference("circle").states(data[:, 0])
    np.testing.assert_allclose(data[:, 4:7], ref[:, :3], atol=1e-12)


def test_datagen_deterministic(smoke_run, tmp_path):
    out, _ = smoke_run
    assert cli.main(["datagen", "--preset", "smoke", "--paths.out_dir", str(tmp_path), "-q"]) == 0
    a = (out / "data/validation/traj_00001.csv").read_bytes()
    b = (tmp_path / "data/validation/traj_00001.csv").read_bytes()
    assert a == b


def test_train_log_and_eval_command(smoke_run):
    out, _ = smoke_run
    log = tr.read_log(out / "model/train_log.csv")
    assert len(log) == cf.preset("smoke").train.epochs
    assert cli.main(["eval", "--preset", "smoke", "--paths.out_dir", str(out), "-q"]) == 0
    # an untrained smoke model misses the prediction bounds
    assert cli.main(["eval", "--preset", "smoke", "--paths.out_dir", str(out), "-q", "--check"]) == 3


def test_track_command_with_payload_flag(smoke_run):
    out, _ = smoke_run
    code = cli.main(["track", "--preset", "smoke", "--paths.out_dir", str(out), "-q",
                     "--reference", "hover", "--payload", "0.0"])
    assert code == 0
    report = json.loads((out / "track/hover_off/report.json").read_text())
    assert report["reference"] == "hover" and report["report"]["pos"] >= 0


def test_config_errors_exit_1(tmp_path):
    assert cli.main(["train", "--preset", "smoke", "--paths.out_dir", str(tmp_path), "-q"]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  bogus: 1\n")
    assert cli.main(["datagen", "--config", str(bad), "--paths.out_dir", str(tmp_path), "-q"]) == 1
    assert cli.main(["datagen", "--preset", "smoke", "--control.horizon", "0",
                     "--paths.out_dir", str(tmp_path), "-q"]) == 1


def test_dt_mismatch_is_config_error(smoke_run):
    out, _ = smoke_run
    code = cli.main(["eval", "--preset", "smoke", "--paths.out_dir", str(out), "-q",
                     "--sim.dt", "0.02", "--datagen.dt", "0.02"])
    assert code == 1


def test_numerical_failure_exit_2(smoke_run, tmp_path):
    out, _ = smoke_run
    doc = json.loads((out / "model/model.json").read_text())
    doc["biases"][-1] = [float("nan")] * len(doc["biases"][-1])
    broken = tmp_path / "nan_model.json"
    broken.write_text(json.dumps(doc))
    code = cli.main(["eval", "--preset", "smoke", "--paths.out_dir", str(out), "-q",
                     "--model", str(broken)])
    assert code == 2
