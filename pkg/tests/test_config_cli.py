import json
import struct

import numpy as np
import pytest

from cablegff import config
from cablegff.cli import main
from cablegff.experiments import ConfigError

SMALL = """
[run]
replicas = 40
seed = 3
[lattice]
d = 3
box_radius = 6
K_max = 32
[estimate]
experiments = pi1, two_point
r_grid = 1 2 3
x_list = 1,0,0; 2,0,0
[werner]
r = 1
beta = 3
b_grid = 1 4/3 2
[chains]
instances = 30
"""


def _write(tmp_path, text=SMALL, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_config_roundtrip_fixed_point():
    cfg = config.loads(SMALL)
    assert cfg.get("werner", "b_grid") == (1.0, 4 / 3, 2.0)
    assert cfg.get("estimate", "x_list") == ((1, 0, 0), (2, 0, 0))
    again = config.loads(config.dumps(cfg))
    assert again == cfg
    assert config.dumps(again) == config.dumps(cfg)
    assert config.loads(config.dumps(config.defaults())) == config.defaults()


@pytest.mark.parametrize(
    "text, field",
    [
        ("[run]\nreplicas = many\n", "run.replicas"),
        ("[lattice]\nwidth = 3\n", "lattice.width"),
        ("[nonsense]\na = 1\n", "nonsense"),
        ("[estimate]\npool_orbit = perhaps\n", "estimate.pool_orbit"),
    ],
)
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as exc:
        config.loads(text)
    assert exc.value.field == field


def test_config_builds_experiment():
    exp = config.loads(SMALL).experiment()
    assert exp.d == 3 and exp.replicas == 40 and exp.r_grid == (1, 2, 3)
    with pytest.raises(ConfigError):
        config.loads("[estimate]\nexperiments = pi1, telepathy\n").experiments()


def test_estimate_deterministic_across_threads(tmp_path, monkeypatch):
    cfgp = _write(tmp_path)
    monkeypatch.delenv("THREADS", raising=False)
    assert main(["estimate", "--config", cfgp, "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(["estimate", "--config", cfgp, "--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    monkeypatch.setenv("THREADS", "3")
    assert main(["estimate", "--config", cfgp, "--out", str(tmp_path / "c")]) == 0
    a = (tmp_path / "a" / "estimates.csv").read_bytes()
    assert a == (tmp_path / "b" / "estimates.csv").read_bytes() == (tmp_path / "c" / "estimates.csv").read_bytes()
    man = tmp_path / "a" / "estimate_manifest.json"
    assert man.stat().st_mtime_ns <= (tmp_path / "a" / "estimates.csv").stat().st_mtime_ns
    assert json.loads(man.read_text())["config"]["replicas"] == 40


def test_manifest_precedes_failing_estimate(tmp_path):
    bad = SMALL.replace("x_list = 1,0,0; 2,0,0", "x_list = 5,0,0")
    out = tmp_path / "o"
    assert main(["estimate", "--config", _write(tmp_path, bad), "--out", str(out)]) == 2
    assert (out / "estimate_manifest.json").exists()
    assert not (out / "estimates.csv").exists()


def test_exit_codes(tmp_path):
    cfgp = _write(tmp_path)
    out = str(tmp_path / "o")
    assert main(["estimate", "--config", _write(tmp_path, "[run]\nreplicas = 0\n", "zero.cfg"), "--out", out]) == 2
    assert main(["estimate", "--config", str(tmp_path / "missing.cfg"), "--out", out]) == 2
    assert main(["werner", "--config", cfgp, "--out", out, "--route", "gff"]) == 2
    assert main(["werner", "--config", cfgp, "--out", out]) == 0
    with pytest.raises(SystemExit):
        main(["estimate", "--route", "sideways"])


def test_sample_and_report(tmp_path):
    cfgp = _write(tmp_path)
    out = tmp_path / "o"
    assert main(["sample", "--config", cfgp, "--out", str(out), "--kind", "field"]) == 0
    assert main(["sample", "--config", cfgp, "--out", str(out), "--kind", "loops"]) == 0
    assert list(out.glob("field_0*")) and list(out.glob("loops_0*"))
    assert main(["estimate", "--config", cfgp, "--out", str(out)]) == 0
    assert main(["report", "--config", cfgp, "--out", str(out)]) == 0
    text = (out / "report.txt").read_text()
    assert "pi1" in text and "target -2.0" in text


def test_chains_command(tmp_path):
    out = tmp_path / "o"
    assert main(["chains", "--config", _write(tmp_path), "--out", str(out)]) == 0
    assert "chain invariants: PASS" in (out / "chains_report.txt").read_text()


def test_oracle_passes_then_detects_corrupted_cache(tmp_path, capsys):
    out, cache = tmp_path / "o", tmp_path / "cache"
    assert main(["oracle", "--out", str(out), "--cache", str(cache)]) == 0
    assert (out / "oracle_report.txt").read_text().strip().endswith("PASS")
    target = next(cache.glob("kernel_d3_torus_*.bin"))
    blob = bytearray(target.read_bytes())
    hsize = struct.calcsize("<4sIIBIi")
    (ndim,) = struct.unpack("<I", blob[hsize:hsize + 4])
    start = hsize + 4 + 8 * ndim
    q = np.frombuffer(bytes(blob[start:]), dtype="<f8") * 1.001
    blob[start:] = q.astype("<f8").tobytes()
    target.write_bytes(bytes(blob))
    capsys.readouterr()
    assert main(["oracle", "--out", str(out), "--cache", str(cache)]) == 3
    assert "return_prob mismatch: cached table d=3" in capsys.readouterr().out
