import json
import re

import pytest
from click.testing import CliRunner

from levysbtm.cli import main
from levysbtm.runner import RunFailure, execute
from levysbtm.config import ExperimentConfig, validate

SMALL = """
example = "{example}"
n_particles = 40
dt = 0.01
T = {T}
n_r = 4
n_lambda = 2
budget = 2
init_budget = 10
hidden = [6, 6]
engines = "{engines}"
mc_particles = 200
kde_steps = [0, 2, 4]
checkpoint_every = {every}
"""


def _cfg(tmp_path, example="Ex1", engines="both", T=0.04, every=1):
    p = tmp_path / f"{example}_{engines}.toml"
    p.write_text(SMALL.format(example=example, engines=engines, T=T, every=every))
    return p


def test_validate_prints_normalised_config(tmp_path):
    res = CliRunner().invoke(main, ["validate", str(_cfg(tmp_path))])
    assert res.exit_code == 0
    out = json.loads(res.output)
    assert out["n_steps"] == 4 and out["config"]["example"] == "Ex1"


def test_config_errors_exit_two(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("dt = 0.0\n")
    for cmd in ("validate", "run"):
        res = CliRunner().invoke(main, [cmd, str(bad)])
        assert res.exit_code == 2
    bad.write_text("nonsense_field = 1\n")
    res = CliRunner().invoke(main, ["validate", str(bad)])
    assert res.exit_code == 2 and "nonsense_field" in res.output


def test_run_writes_artifacts_and_plots(tmp_path):
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["run", str(_cfg(tmp_path)), "-o", str(out)])
    assert res.exit_code == 0, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"] and manifest["engines"] == ["sbtm", "mc"]
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("step,time,tv,kl") and len(rows) == 6
    tv_svg = (out / "tv.svg").read_text()
    points = re.search(r'<polyline[^>]*points="([^"]*)"', tv_svg).group(1).split()
    assert len(points) == 5
    heat = (out / "heatmap.svg").read_text()
    assert 'data-columns="4"' in heat

    res = CliRunner().invoke(main, ["plot", str(out / "metrics.csv"), "--kind", "tv_series", "-o", str(tmp_path / "a.svg")])
    assert res.exit_code == 0 and (tmp_path / "a.svg").read_text() == tv_svg
    res = CliRunner().invoke(main, ["plot", str(out), "--kind", "heatmap", "-o", str(tmp_path / "h.svg")])
    assert res.exit_code == 0 and (tmp_path / "h.svg").read_text() == heat


def test_mc_only_run_has_no_networks(tmp_path):
    out = tmp_path / "mc"
    res = CliRunner().invoke(main, ["run", str(_cfg(tmp_path, engines="mc")), "-o", str(out)])
    assert res.exit_code == 0, res.output
    assert not (out / "sbtm").exists() and not (out / "metrics.csv").exists()
    assert not list(out.rglob("*.npz"))


def test_kde_panel_for_two_dimensional_example(tmp_path):
    out = tmp_path / "ex3"
    res = CliRunner().invoke(main, ["run", str(_cfg(tmp_path, "Ex3", "sbtm", T=0.04, every=2)), "-o", str(out)])
    assert res.exit_code == 0, res.output
    svg = (out / "kde_panel.svg").read_text()
    assert svg.count('class="panel"') == 3
    res = CliRunner().invoke(main, ["plot", str(out), "--kind", "kde_panel", "--steps", "0,4", "-o", str(tmp_path / "k.svg")])
    assert res.exit_code == 0 and (tmp_path / "k.svg").read_text().count('class="panel"') == 2


def test_plot_rejects_missing_steps(tmp_path):
    out = tmp_path / "ex3b"
    CliRunner().invoke(main, ["run", str(_cfg(tmp_path, "Ex3", "mc", T=0.02, every=2)), "-o", str(out)])
    res = CliRunner().invoke(main, ["plot", str(out), "--kind", "kde_panel", "--steps", "7"])
    assert res.exit_code != 0


def test_rerun_is_bit_identical(tmp_path):
    cfg = _cfg(tmp_path)
    for name in ("r1", "r2"):
        assert CliRunner().invoke(main, ["run", str(cfg), "-o", str(tmp_path / name)]).exit_code == 0
    a = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*.csv"))
    assert a
    for rel in a:
        assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes()


def test_numeric_failure_flags_manifest(tmp_path):
    cfg = validate(ExperimentConfig(example="OU", n_particles=10, dt=0.01, T=0.02, engines="mc",
                                    model_overrides={"theta": -1e308}))
    with pytest.raises(RunFailure) as err:
        execute(cfg, str(tmp_path / "f"))
    manifest = json.loads((err.value.directory / "manifest.json").read_text())
    assert manifest["complete"] is False and "error" in manifest


def test_oracle_commands():
    r = CliRunner().invoke(main, ["oracle", "compensator", "--example", "Ex1", "--n-r", "64", "--n-lambda", "16"])
    assert r.exit_code == 0
    assert json.loads(r.output)["compensator"][0] == pytest.approx(2.9919006118102196, rel=1e-4)
    r = CliRunner().invoke(main, ["oracle", "quadrature", "--example", "Ex3"])
    assert r.exit_code == 0 and json.loads(r.output)["n_small"] > 0
    r = CliRunner().invoke(main, ["oracle", "levy-score", "--example", "Ex1", "--x", "0.0"])
    assert r.exit_code == 0 and len(json.loads(r.output)["levy_score"]) == 1
    r = CliRunner().invoke(main, ["oracle", "levy-score", "--example", "Ex1", "--x", "0", "--x", "1"])
    assert r.exit_code != 0
