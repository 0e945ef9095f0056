"""Configuration parsing: defaults, diagnostics with line numbers, and the
mode-consistency rules."""

import pytest

from gmcf_mini.config import parse_config
from gmcf_mini.errors import ConfigError

MINIMAL_COUPLED = """\
[runtime]
mode = coupled
models = driver:60.0, les:0.5
"""


def test_minimal_coupled_config_fills_defaults():
    cfg = parse_config(MINIMAL_COUPLED)
    assert cfg.mode == "coupled"
    assert cfg.models == [("driver", 60.0), ("les", 0.5)]
    assert cfg.sor_scheme == "redblack"
    assert cfg.sor_n_iter == 50
    assert cfg.seed == 42
    assert cfg.n_coupled_intervals == 5


def test_sor_bench_with_twinned_workers_accepted():
    cfg = parse_config(
        """
        [runtime]
        mode = sor-bench
        [sor]
        scheme = twinned
        workers = 4
        """
    )
    assert cfg.sor_scheme == "twinned"
    assert cfg.sor_workers == 4


def test_redblack_with_workers_rejected():
    with pytest.raises(ConfigError, match="unsupported combination"):
        parse_config(
            """
            [runtime]
            mode = sor-bench
            [sor]
            scheme = redblack
            workers = 4
            """
        )


def test_unknown_key_names_line():
    text = "[runtime]\nmode = sor-bench\nbogus = 1\n"
    with pytest.raises(ConfigError, match="line 3.*bogus"):
        parse_config(text)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[nope]\nx = 1\n")


def test_type_mismatch_names_key_and_line():
    text = "[runtime]\nmode = sor-bench\n[sor]\nn_iter = soon\n"
    with pytest.raises(ConfigError, match="line 4.*n_iter"):
        parse_config(text)


def test_comments_and_blank_lines_ignored():
    cfg = parse_config(
        "# leading comment\n\n[runtime]\nmode = sor-bench  # inline\nseed = 7\n"
    )
    assert cfg.seed == 7


def test_coupled_requires_two_models():
    with pytest.raises(ConfigError, match="at least 2"):
        parse_config("[runtime]\nmode = coupled\nmodels = les:0.5\n")


def test_bad_model_entry_diagnostic():
    with pytest.raises(ConfigError, match="name:dt_seconds"):
        parse_config("[runtime]\nmode = coupled\nmodels = driver=60\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError, match="outside any section"):
        parse_config("mode = coupled\n")
