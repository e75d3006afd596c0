import math

import pytest

from brwlab import io
from brwlab.config import load_config, parse_config
from brwlab.errors import ConfigError
from brwlab.moments import evolve_higher_moments, time_grid
from brwlab.operators import LatticeBox

from conftest import pure_birth

BASE = """\
dimension = 1
kernel.total_rate = 1.0
law.b2 = 0.5
"""


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.half_width == 20 and cfg.steps == 100 and cfg.t_max == 2.0
    assert cfg.window == 40 and cfg.sites == ((0,),) and cfg.z_values == (math.inf,)
    assert cfg.model.beta == pytest.approx(0.5)
    assert cfg.alpha is None and cfg.model == cfg.base_model


def test_comments_offsets_and_vaccination():
    cfg = parse_config(
        """
        # explicit kernel
        dimension = 2
        kernel.offset = 1,0 : 0.25   # right
        kernel.offset = -1,0 : 0.25
        kernel.offset = 0,1 : 0.25
        kernel.offset = 0,-1 : 0.25
        law.b0 = 0.1
        law.b3 = 0.2
        vaccination.alpha = 0.5
        output.sites = 0,0; 1,-1
        """
    )
    assert cfg.base_model.kernel.total_rate == pytest.approx(1.0)
    assert cfg.sites == ((0, 0), (1, -1))
    assert cfg.model.law.rates() == {0: 0.1, 3: pytest.approx(0.05)}


@pytest.mark.parametrize(
    "extra, key",
    [
        ("box.halfwidth = 3", "box.halfwidth"),
        ("law.b1 = -0.5", "law.b1"),
        ("time.steps = many", "time.steps"),
        ("time.steps = 1", "time.steps"),
        ("mc.initial = uniform", "mc.initial"),
        ("mc.max_order = 5", "mc.max_order"),
        ("vaccination.alpha = 0", "alpha"),
        ("output.sites = 0,1", "output.sites"),
        ("output.sites = 50", "output.sites"),
        ("box.half_width = 0", "box.half_width"),
        ("mc.initial = window\nmc.window = 5", "mc.window"),
        ("time.t_max = -1", "time.t_max"),
    ],
)
def test_errors_name_the_key(extra, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(BASE + extra + "\n")


def test_error_reports_line_number():
    with pytest.raises(ConfigError, match="line 4"):
        parse_config(BASE + "bogus = 1\n")


def test_structural_errors():
    with pytest.raises(ConfigError, match="dimension"):
        parse_config("kernel.total_rate = 1\n")
    with pytest.raises(ConfigError, match="kernel"):
        parse_config("dimension = 1\nlaw.b2 = 1\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(BASE + "law.b2 = 0.1\n")
    with pytest.raises(ConfigError, match="inadmissible"):
        parse_config(BASE + "law.b0 = -0.1\n")
    with pytest.raises(ConfigError, match="mutually exclusive"):
        parse_config(BASE + "kernel.offset = 1 : 0.5\n")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/run.conf")


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.conf"))
    assert len(files) >= 3
    for path in files:
        assert load_config(path).source == str(path)


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 5.039048123456789e-300, -2.5e17):
        assert float(io.fmt(v)) == v
    assert io.fmt(math.inf) == "inf" and io.fmt(True) == "true" and io.fmt(3) == "3"
    assert io.fmt(None) == ""


def test_moments_csv_layout(tmp_path):
    box = LatticeBox(1, 5)
    fields = evolve_higher_moments(pure_birth(1, 0.5), box, "total", 2, time_grid(1.0, 4))
    path = io.write_moments(tmp_path / "m.csv", fields, [(0,), (1,)])
    rows = io.read_csv(path)
    assert list(rows[0]) == ["flavor", "n", "t", "x1", "value"]
    assert len(rows) == 2 * 5 * 2
    assert float(rows[0]["value"]) == 1.0
    last = rows[-1]
    assert float(last["value"]) == fields[1].at((1,))[-1]
