from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitsde import ConfigError
from splitsde.config import PRESETS, RunConfig, loads, resolve

finite = st.floats(1e-4, 1e3, allow_nan=False)
configs = st.builds(
    RunConfig,
    study=st.sampled_from([None, "are", "timing", "normality", "convergence"]),
    model=st.sampled_from(["lorenz", "ou"]),
    theta0=st.one_of(st.none(), st.lists(finite, min_size=1, max_size=6).map(tuple)),
    estimators=st.lists(st.sampled_from(["EM", "K2", "LL", "LT", "S"]), min_size=1, max_size=5,
                        unique=True).map(tuple),
    N=st.lists(st.integers(1, 10 ** 6), min_size=1, max_size=4).map(tuple),
    h=st.lists(finite, min_size=1, max_size=4).map(tuple),
    M=st.integers(1, 5000),
    seed=st.integers(0, 2 ** 32),
    threads=st.one_of(st.none(), st.integers(1, 64)),
    burn_in=st.floats(0, 100),
    optimizer=st.fixed_dictionaries({}, optional={"max_iters": st.integers(1, 1000),
                                                  "stop_tol": st.floats(1e-12, 1e-2)}),
)


@settings(max_examples=150, deadline=None)
@given(configs)
def test_round_trip(cfg):
    text = cfg.dumps()
    back = loads(text)
    assert back == cfg
    assert back.dumps() == text


def test_comments_and_blank_lines():
    cfg = loads("# header\n\nstudy = are  # inline\nN = 100, 200\nopt.max_iters = 50\n")
    assert cfg.study == "are" and cfg.N == (100, 200) and cfg.optimizer_config().max_iters == 50


@pytest.mark.parametrize("text, fragment", [
    ("N = 100\nbogus = 1\n", "<config>:2: unknown field 'bogus'"),
    ("M = ten\n", "<config>:1: field 'M'"),
    ("h = 0.1,,0.2\n", "<config>:1: field 'h'"),
    ("just words\n", "<config>:1: expected 'key = value'"),
    ("opt.nope = 1\n", "unknown field 'opt.nope'"),
    ("estimators = S, QQ\n", "estimators"),
    ("opt.eta_plus = 0.5\n", "opt.*"),
])
def test_errors_name_line_and_field(text, fragment):
    with pytest.raises(ConfigError, match=None) as info:
        loads(text)
    assert fragment in str(info.value)


def test_precedence():
    file_text = "study = are\npreset = desk\nM = 7\nseed = 3\n"
    cfg = resolve(file_text, {"seed": "9"})
    assert cfg.h == PRESETS[("are", "desk")]["h"]  # from the preset
    assert cfg.M == 7  # file beats preset
    assert cfg.seed == 9  # flag beats file


def test_preset_requires_study():
    with pytest.raises(ConfigError):
        resolve("preset = desk\n")


def test_cli_study_overrides_file():
    assert resolve("study = are\n", study="timing").study == "timing"
