import pytest
from hypothesis import given
from hypothesis import strategies as st

from kglab.config import ConfigError, RunConfig, load_config, parse_config, render_config


def test_defaults_are_valid():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.grid.N == 4801 and cfg.grid.R == 60.0
    assert cfg.make_grid().sponge_width == 10.0
    assert load_config(None) == cfg


def test_sections_override_defaults():
    cfg = parse_config("""
[run]
seed = 7
[grid]
R = 40
N = 1601
sponge_width = 5
[evolve]
sponge = off
preset = soliton+bump   # trailing comment
[shoot]
amplitudes = 0.02, 0.01
t_horizon = auto
""")
    assert cfg.seed == 7
    assert (cfg.grid.R, cfg.grid.N, cfg.grid.sponge_width) == (40.0, 1601, 5.0)
    assert cfg.evolve.sponge is False and cfg.evolve.preset == "soliton+bump"
    assert cfg.shoot.amplitudes == (0.02, 0.01) and cfg.shoot.t_horizon is None


@pytest.mark.parametrize("text", [
    "[mystery]\nx = 1\n",
    "[grid]\nwidth = 3\n",
    "[run]\ncolour = red\n",
    "[grid]\nN = many\n",
    "[evolve]\nsponge = perhaps\n",
    "[run]\nseed = 1.5\n",
    "not an ini file",
])
def test_malformed_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("text", [
    "[grid]\nN = 4800\n",
    "[grid]\nN = 101\nR = 60\n[evolve]\ndt = 0.5\n",
    "[weights]\nA = 5\n",
    "[weights]\nA = 31\n",
    "[weights]\neps = 0\n",
    "[evolve]\ndt = 0.02\n",
    "[evolve]\nmode = sideways\n",
    "[evolve]\npreset = custom\n",
    "[evolve]\nrecord_every = 0\n",
    "[shoot]\namplitudes = 0.2\n",
    "[shoot]\ntheta_exit = 1.5\n",
    "[shoot]\nperturbation = Y0\n",
    "[shoot]\nreshoot_segment = 0\n",
])
def test_out_of_range_values_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.ini"))


@given(st.integers(0, 2**31), st.sampled_from([1601, 2401, 4801]), st.booleans(),
       st.lists(st.floats(0.0, 0.1), min_size=1, max_size=4),
       st.sampled_from(["soliton", "soliton+Y0", "soliton+Y2", "soliton+bump"]))
def test_render_then_parse_round_trips(seed, n, sponge, amps, preset):
    cfg = parse_config(f"""
[run]
seed = {seed}
[grid]
N = {n}
[evolve]
sponge = {"on" if sponge else "off"}
preset = {preset}
[shoot]
amplitudes = {", ".join(repr(a) for a in amps)}
""")
    assert parse_config(render_config(cfg)) == cfg


def test_render_lists_every_key():
    text = render_config(RunConfig())
    for key in ("R =", "N =", "sponge_width = auto", "A =", "eps =", "dt =", "t_end =",
                "theta_exit =", "amplitudes =", "seed =", "output_dir ="):
        assert key in text
