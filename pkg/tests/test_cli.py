import json
import subprocess
import sys

import pytest

from leapsgd.cli import main


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "leapsgd", *args], capture_output=True,
                          text=True, cwd=cwd)


def test_leap_command(capsys):
    assert main(["leap", "bool: z1 + z1*z2*z3 + z2*z3*z4*z5*z6*z7"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["leap"] == 4
    assert set(doc) == {"leap", "ordering", "per_step_new_mass"}


def test_usage_errors(capsys):
    assert main(["leap", "bool: z1*z1"]) == 2
    assert "Boolean exponent" in capsys.readouterr().err
    with pytest.raises(SystemExit) as ei:
        main(["train", "--no-such-flag"])
    assert ei.value.code == 2


def test_bad_config_file(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("[train\nd = 3\n", encoding="utf-8")
    assert main(["--config", str(p), "leap", "bool: z1"]) == 2


def test_train_writes_files(tmp_path, capsys):
    out = tmp_path / "run" / "trace.json"
    rc = main(["train", "--target", "gauss: He2(z1)", "--d", "16", "--M", "4", "--T2", "20",
               "--eval-size", "300", "--seed", "3", "--out", str(out)])
    assert rc == 0
    names = sorted(p.name for p in out.parent.iterdir())
    assert "trace.json" in names and "trace.csv" in names
    assert "trace.off_support.csv" in names
    summary = json.loads(capsys.readouterr().out)
    assert summary["final_step"] == json.loads(out.read_text())["risk_series"][-1]["step"]


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 4\n[train]\ntarget = "bool: z1 + z1*z2"\nmode = "vanilla"\n'
                   'd = 10\nM = 6\nT = 40\neval_size = 200\n', encoding="utf-8")
    out = tmp_path / "t.json"
    assert main(["--config", str(cfg), "train", "--T", "25", "--format", "json",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["T"] == 25 and doc["config"]["d"] == 10 and doc["seed"] == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_error_exit_code(tmp_path, capsys):
    rc = main(["train", "--mode", "vanilla", "--target", "gauss: He1(z1)", "--d", "4",
               "--M", "3", "--kappa", "1", "--eta", "1e200", "--T", "30", "--eval-size", "10",
               "--out", str(tmp_path / "x.json")])
    assert rc == 1


def test_flags_after_subcommand(tmp_path):
    out = tmp_path / "leap.json"
    r = run_cli("leap", "gauss: He3(z1)", "--out", str(out), "--seed", "1")
    assert r.returncode == 0, r.stderr
    assert json.loads(out.read_text())["leap"] == 3


def test_oracle_check_quick(tmp_path):
    out = tmp_path / "oracle.json"
    r = run_cli("oracle-check", "--quick", "--out", str(out))
    assert r.returncode == 0, r.stderr
    doc = json.loads(out.read_text())
    assert doc["passed"] and len(doc["checks"]) == 5


def test_sweep_threads_do_not_change_bytes(tmp_path):
    outs = []
    for n in (1, 2):
        out = tmp_path / f"t{n}"
        r = run_cli("sweep", "--mode", "vanilla", "--target", "gauss: He2(z1)", "--M", "10",
                    "--eta", "0.4*M/d", "--eta-a", "2/M", "--batch", "16", "--T", "40*d*log(d)",
                    "--rho", "1", "--eval-size", "500", "--dims", "8,12,16", "--seeds", "2",
                    "--threads", str(n), "--out", str(out))
        assert r.returncode in (0, 1), r.stderr
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
