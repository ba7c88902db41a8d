import glob
import os

import numpy as np
import pytest

from conftest import CONFIGS, config_path
from wkblab.config import load_config, parse_config, parse_override
from wkblab.errors import ConfigurationError

SWEEP = """
[experiment]
kind = wkb_sweep
[potential]
kind = power_decay
c = 1
r = 0.6
[lambda]
lo = 0.5
hi = 2
count = 4
"""


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(CONFIGS, "*.ini"))),
                         ids=os.path.basename)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.kind in os.path.basename(path) or cfg.kind == "wkb_sweep"


def test_defaults_and_grid():
    cfg = parse_config(SWEEP)
    assert cfg.get("numerics", "X_max") == 1e4
    assert cfg.get("checks", "pass_fraction") == 0.95
    np.testing.assert_allclose(cfg.lambda_grid(), [0.5, 1.0, 1.5, 2.0])
    assert cfg.potentials["potential"](0.0) == 1.0


def test_overrides_win():
    cfg = parse_config(SWEEP, overrides=["numerics.X_max=200", "lambda.count=1",
                                         "experiment.output=/tmp/x"])
    assert cfg.get("numerics", "X_max") == 200.0
    assert cfg.lambda_grid().tolist() == [0.5]
    assert cfg.output == "/tmp/x"


def test_relative_output_resolves_against_config_dir():
    cfg = load_config(config_path("band_scan.ini"))
    assert os.path.isabs(cfg.output)
    assert os.path.dirname(os.path.dirname(cfg.output)) == os.path.dirname(os.path.abspath(CONFIGS))


def test_all_problems_reported_together():
    with pytest.raises(ConfigurationError) as exc:
        parse_config(SWEEP, overrides=["lambda.lo=-1", "numerics.tol=abc", "numerics.bogus=1",
                                       "checks.pass_fraction=1.5"])
    msg = str(exc.value)
    for part in ("[lambda] lo", "[numerics] tol", "[numerics] bogus", "[checks] pass_fraction"):
        assert part in msg


def test_missing_sections():
    with pytest.raises(ConfigurationError, match=r"\[experiment\]"):
        parse_config("[potential]\nkind = zero\n")
    with pytest.raises(ConfigurationError, match=r"\[potential\]: missing"):
        parse_config("[experiment]\nkind = wkb_sweep\n[lambda]\nlo = 1\n")
    with pytest.raises(ConfigurationError, match="background"):
        parse_config(SWEEP + "[basis]\nkind = bloch\n")


def test_unknown_kind_and_section():
    with pytest.raises(ConfigurationError):
        parse_config("[experiment]\nkind = teleport\n")
    with pytest.raises(ConfigurationError, match="unknown section"):
        parse_config(SWEEP + "[extra]\na = 1\n")


def test_count_needs_hi():
    with pytest.raises(ConfigurationError, match="hi"):
        parse_config(SWEEP, overrides=["lambda.hi=0.1"])


def test_bad_potential_parameter_named():
    with pytest.raises(ConfigurationError, match=r"\[potential\] r"):
        parse_config(SWEEP.replace("r = 0.6\n", ""))


@pytest.mark.parametrize("text", ["noequals", "nosection=1"])
def test_bad_override(text):
    with pytest.raises(ConfigurationError):
        parse_override(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.ini")
