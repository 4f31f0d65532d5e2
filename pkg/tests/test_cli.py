import json
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_chaos.cli import WORKERS_ENV, load_config, main, resolve_workers, run
from cavity_chaos.config import (
    PRESETS,
    ConfigError,
    RunConfig,
    emit_config,
    format_presets,
    list_presets,
    parse_config,
    preset_config,
)

FAST = (
    "truncation = 60\n"
    "count = 3\n"
    "total_time = 100\n"
    "transient = 5\n"
    "window_start = 5\n"
    "window_end = 30\n"
    "tau_snap = 10\n"
    "tau_max = 300\n"
)


def test_minimal_config_materializes_defaults():
    c = parse_config("experiment=simulate\ndelta=0.4")
    assert c.experiment == "simulate"
    assert (c.model.kappa, c.model.delta, c.model.truncation) == (0.001, 0.4, 100)
    assert (c.initial.x0, c.initial.p0, c.initial.nbar, c.initial.z0, c.initial.phase) == (0, 25, 10, 1, 0)
    assert c.integrator.dt == 0.005 and c.integrator.mode == "fixed"
    assert c.sweep.grid()[0] == -2 and len(c.sweep.grid()) == 81
    assert c == RunConfig(model=c.model)


@pytest.mark.parametrize(
    "text,line,key",
    [
        ("kappa=-1", 1, "kappa"),
        ("delta = 0.4\nkappa = 0", 2, "kappa"),
        ("z0 = 1.5", 1, "z0"),
        ("truncation = 2.5", 1, "truncation"),
        ("experimnt = simulate", 1, "experimnt"),
        ("[model]\ndelta = 0.1\np0 = 3", 3, "p0"),
        ("delta = 1\ndelta = 2", 2, "delta"),
        ("dt = nan", 1, "dt"),
        ("z0_list = 1, 2", 1, "z0_list"),
        ("mode = euler", 1, "mode"),
    ],
)
def test_errors_name_line_and_key(text, line, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert info.value.key == key
    assert key in str(info.value) and f"line {line}" in str(info.value)


def test_range_error_names_bound():
    with pytest.raises(ConfigError, match=r"kappa must be > 0"):
        parse_config("kappa=-1")


def test_structural_errors():
    for text in ("[nowhere]\n", "[model\n", "just words\n"):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.line == 1
    with pytest.raises(ConfigError, match="min"):
        parse_config("min = 3\nmax = 1")
    with pytest.raises(ConfigError, match="parameter"):
        parse_config("experiment = scatter\nparameter = delta")
    with pytest.raises(ConfigError, match="total_time"):
        parse_config("transient = 100\ntotal_time = 50")


def test_comments_and_sections():
    c = parse_config("# header\n[model]\ndelta = -0.7  # detuning\n[sweep]\nvalues = 1, 2,3\n")
    assert c.model.delta == -0.7
    assert c.sweep.grid() == (1.0, 2.0, 3.0)


def test_experiment_specific_grid_defaults():
    assert parse_config("experiment = scatter").sweep.parameter == "p0"
    c = parse_config("experiment = inversion-map")
    assert (c.sweep.min, c.sweep.max, c.sweep.count) == (-1, 1, 201)


@settings(max_examples=60, deadline=None)
@given(
    delta=st.floats(-3, 3),
    kappa=st.floats(1e-5, 0.09),
    N=st.integers(1, 200),
    z0=st.floats(-1, 1),
    dt=st.floats(1e-4, 0.1),
    values=st.lists(st.floats(-5, 5), max_size=4),
    exp=st.sampled_from(["simulate", "lyapunov", "sweep", "fidelity", "zero-detuning-check"]),
)
def test_emit_parse_round_trip(delta, kappa, N, z0, dt, values, exp):
    text = f"experiment={exp}\ndelta={delta!r}\nkappa={kappa!r}\ntruncation={N}\nz0={z0!r}\ndt={dt!r}\n"
    if values:
        text += "values=" + ",".join(repr(v) for v in values) + "\n"
    c = parse_config(text)
    assert parse_config(emit_config(c)) == c
    assert emit_config(parse_config(emit_config(c))) == emit_config(c)


def test_all_presets_parse_and_round_trip():
    for name in PRESETS:
        c = preset_config(name)
        assert parse_config(emit_config(c)) == c


def test_preset_table():
    table = {r["name"]: r for r in list_presets()}
    assert list(table) == ["fig1", "fig2a", "fig2b", "fig2c", "fig3", "zero-detuning-check"]
    assert table["fig1"]["grid"] == "delta in [-2, 2] x 81"
    assert table["fig2a"]["delta"] == 0.4 and table["fig2a"]["kappa"] == 0.001
    assert table["zero-detuning-check"]["delta"] == 0.0
    assert format_presets() == format_presets()
    with pytest.raises(ConfigError):
        preset_config("fig9")


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers(3, 5) == 3
    assert resolve_workers(None, 5) == 5
    assert resolve_workers(None, 0) >= 1
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert resolve_workers(None, 5) == 2
    assert resolve_workers(4, 5) == 4
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_workers(None, 1)


def test_load_config_layers(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[model]\ndelta = 0.8\n")
    c = load_config(cfg, "fig3", ["z0_list = 1"], "fidelity")
    assert c.experiment == "fidelity" and c.model.delta == 0.8 and c.sweep.z0_list == (1.0,)
    assert c.sweep.ddelta == 1e-4


def _files(d):
    return sorted(p.name for p in d.iterdir())


def test_run_writes_dataset_and_manifest(tmp_path):
    c = parse_config("experiment = simulate\ntau_end = 2\n" + FAST)
    assert run(c, workers=1, out=tmp_path) == 0
    names = _files(tmp_path)
    assert len(names) == 2
    man = json.loads((tmp_path / [n for n in names if n.endswith(".json")][0]).read_text())
    assert man["schema"] == "cavity_chaos.manifest/1"
    assert man["config"]["model"]["truncation"] == 60
    assert parse_config(man["spec"]) == parse_config(emit_config(c))
    assert {"code_version", "wall_time_s", "final_state"} <= set(man)


def test_run_missing_output_dir(tmp_path, capsys):
    c = parse_config("experiment = simulate\ntau_end = 1\n" + FAST)
    assert run(c, workers=1, out=tmp_path / "missing") != 0
    assert not (tmp_path / "missing").exists()
    assert "does not exist" in capsys.readouterr().err


def test_fatal_run_error_gives_nonzero_exit(tmp_path):
    # zero momentum has no closed form
    c = parse_config("experiment = zero-detuning-check\np0 = 0\ntau_end = 1\n" + FAST)
    assert run(c, workers=1, out=tmp_path) == 1
    assert _files(tmp_path) == []


def test_sweep_point_failures_do_not_fail_the_run(tmp_path):
    c = parse_config("experiment = inversion-map\nvalues = 0.0, 1.0\n" + FAST)
    assert run(c, workers=1, out=tmp_path) == 0


def test_worker_count_does_not_change_bytes(tmp_path):
    text = "experiment = scatter\nmin = 20\nmax = 30\n" + FAST
    outs = []
    for w in (1, 2):
        d = tmp_path / f"w{w}"
        d.mkdir()
        assert main(["scatter", "--out", str(d), "--workers", str(w)] + sum((["--set", l] for l in text.splitlines()), [])) == 0
        csv = [p for p in d.iterdir() if p.suffix == ".csv"]
        outs.append((csv[0].name, csv[0].read_bytes()))
    assert outs[0] == outs[1]


def test_main_presets_and_print_config(capsys):
    assert main(["presets"]) == 0
    assert "fig1" in capsys.readouterr().out
    assert main(["sweep", "--preset", "fig1", "--print-config"]) == 0
    out = capsys.readouterr().out
    assert "count = 81" in out and "experiment = sweep" in out


def test_main_reports_config_errors(capsys):
    assert main(["simulate", "--set", "kappa=-1"]) == 2
    assert "kappa" in capsys.readouterr().err
    assert main(["simulate", "--preset", "nope"]) == 2


def test_fig3_preset_writes_three_series(tmp_path):
    assert main(["fidelity", "--preset", "fig3", "--set", "truncation=60", "--set", "tau_end=40", "--out", str(tmp_path), "--workers", "1"]) == 0
    names = _files(tmp_path)
    assert len([n for n in names if n.endswith(".csv")]) == 3
    assert len([n for n in names if n.endswith(".json")]) == 1


def test_console_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cavity_chaos.cli", "presets"], capture_output=True, text=True)
    assert r.returncode == 0 and "fig2c" in r.stdout
