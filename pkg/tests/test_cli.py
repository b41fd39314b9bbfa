import csv
import logging

import pytest
import yaml

from kdlic import cli
from kdlic.checkpoint import load_checkpoint
from kdlic.config import ConfigError, RunConfig, dump_config, from_dict, load_config, override

TINY = {"model": {"N": 4, "M": 6}, "train": {"steps": 3, "batch": 1, "patch": 16}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth-data", "--n", "6", "--size", "16", "--seed", "0", "--out", str(d / "imgs")]) == 0
    (d / "c.yaml").write_text(yaml.safe_dump({**TINY, "grid": {"lambdas": [0.001, 0.01, 0.1], "r": [2, 4], "rho": [1, 10]}}))
    rc = cli.main(["train-teacher", "--config", str(d / "c.yaml"), "--data", str(d / "imgs"), "--out", str(d / "t")])
    assert rc == 0
    return d


def test_config_defaults_and_dump():
    cfg = load_config(None)
    assert cfg == RunConfig() and cfg.grid.lambdas == (0.001, 0.01, 0.1)
    assert from_dict(yaml.safe_load(dump_config(cfg))) == cfg


@pytest.mark.parametrize(
    "raw",
    [
        {"bogus": 1},
        {"train": {"stepz": 3}},
        {"model": {"N": "wide"}},
        {"train": {"patch": 20}},
        {"grid": {"rho": [0]}},
        {"arch": "vq"},
        {"train": {"steps": 1.5}},
        [1, 2],
    ],
)
def test_config_rejects(raw):
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_override_revalidates():
    cfg = override(RunConfig(), steps=10, lambdas=[0.5], train_dir="x")
    assert cfg.train.steps == 10 and cfg.grid.lambdas == (0.5,) and cfg.data.train_dir == "x"
    with pytest.raises(ConfigError):
        override(RunConfig(), batch=0)


def test_teacher_grid_and_logs(workdir):
    names = sorted(p.name for p in (workdir / "t").iterdir())
    assert names == [f"teacher_lam{l}.{ext}" for l in ("0.001", "0.01", "0.1") for ext in ("licd", "log.csv")]


def test_teacher_rerun_identical(workdir):
    rc = cli.main(["train-teacher", "--config", str(workdir / "c.yaml"), "--data", str(workdir / "imgs"), "--out", str(workdir / "t2")])
    assert rc == 0
    for name in ("teacher_lam0.01.log.csv", "teacher_lam0.01.licd"):
        assert (workdir / "t" / name).read_bytes() == (workdir / "t2" / name).read_bytes()


def test_distill_grid_and_provenance(workdir):
    teachers = sorted(str(p) for p in (workdir / "t").glob("*.licd"))
    rc = cli.main(["distill", "--config", str(workdir / "c.yaml"), "--data", str(workdir / "imgs"), "--out", str(workdir / "kd"), "--teachers", *teachers])
    assert rc == 0
    ckpts = sorted((workdir / "kd").glob("*.licd"))
    assert len(ckpts) == 12
    st = load_checkpoint(workdir / "kd" / "kd_r4_rho10_lam0.01.licd")
    assert st.provenance == "teacher_lam0.01.licd" and st.role == "student" and st.meta["lambda"] == 0.01


def test_frozen_logs_parity(workdir, caplog):
    teacher = str(workdir / "t" / "teacher_lam0.01.licd")
    out = str(workdir / "kd")
    with caplog.at_level(logging.INFO, logger="kdlic"):
        rc = cli.main(["train-frozen", "--config", str(workdir / "c.yaml"), "--data", str(workdir / "imgs"), "--out", out, "--teachers", teacher, "--r", "2", "--rho", "10"])
    assert rc == 0
    assert "step parity with kd_r2_rho10_lam0.01.log.csv: 3 steps" in caplog.text


def test_r16_logs_effective_widths(workdir, caplog):
    teacher = str(workdir / "t" / "teacher_lam0.01.licd")
    with caplog.at_level(logging.INFO, logger="kdlic"):
        rc = cli.main(["distill", "--config", str(workdir / "c.yaml"), "--data", str(workdir / "imgs"), "--out", str(workdir / "r16"), "--teachers", teacher, "--r", "16", "--rho", "100"])
    assert rc == 0
    assert "effective widths {'g_a': [3, 1, 1, 1, 6]}" in caplog.text


def test_eval_and_bd(workdir):
    teachers = sorted(str(p) for p in (workdir / "t").glob("*.licd"))
    rd = workdir / "rd.csv"
    assert cli.main(["eval", "--ckpts", *teachers, "--data", str(workdir / "imgs"), "--out", str(rd)]) == 0
    rows = list(csv.DictReader(open(rd)))
    assert len(rows) == 3 and {r["model_id"] for r in rows} == {"teacher"}
    # hand-made curve so the fit is well posed regardless of the 3-step teachers
    (workdir / "a.csv").write_text("model_id,lambda,bpp,psnr_db\nm,1,0.1,25\nm,2,0.3,28\nm,3,0.9,31\n")
    assert cli.main(["bd", "--anchor", str(workdir / "a.csv"), "--test", str(workdir / "a.csv"), "--out", str(workdir / "bd.csv")]) == 0
    line = (workdir / "bd.csv").read_text().splitlines()[1].split(",")
    assert line[:4] == ["m", "m", "0.000000", "0.000000"]


def test_analyze_table1(tmp_path, capsys):
    assert cli.main(["analyze", "--arch", "factorized", "--N", "128", "--M", "192", "--r", "1,2,4,8", "--out", str(tmp_path / "c.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert [r["relative_macs"] for r in rows] == ["1.000", "0.278", "0.084", "0.028"]
    assert "factorized" in capsys.readouterr().out


def test_exit_codes(workdir, tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["eval", "--ckpts", str(workdir / "t" / "teacher_lam0.01.licd"), "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "x.csv")]) == 3
    assert cli.main(["train-teacher", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3
    (tmp_path / "bad.yaml").write_text("train: {steps: -1}\n")
    assert cli.main(["train-teacher", "--config", str(tmp_path / "bad.yaml"), "--data", str(workdir / "imgs"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["train-teacher", "--data", str(workdir / "imgs")]) == 2
    assert cli.main(["no-such-command"]) == 2
    (tmp_path / "junk.licd").write_bytes(b"JUNK" + bytes(20))
    assert cli.main(["eval", "--ckpts", str(tmp_path / "junk.licd"), "--data", str(workdir / "imgs"), "--out", str(tmp_path / "x.csv")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(workdir, tmp_path):
    rc = cli.main(["train-teacher", "--config", str(workdir / "c.yaml"), "--data", str(workdir / "imgs"), "--out", str(tmp_path / "o"), "--lr", "1e12", "--steps", "5", "--lambdas", "0.1"])
    assert rc == 4
