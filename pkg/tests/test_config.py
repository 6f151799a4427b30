from pathlib import Path

import pytest

import superscale
from superscale.config import ConfigError, load_scenario, parse_scenario
from superscale.model import KNearest, Range, TcpLike

SCENARIOS = Path(superscale.__file__).parent / "scenarios"

BASE = """\
[model]
lambda = 2.0
file_size = 1.0
range = 1.0

[rate]
kind = "tcp"
C = 1.0
"""


def test_minimal_scenario():
    sc = parse_scenario(BASE)
    assert sc.params.lam == 2.0 and sc.params.rate == TcpLike(1.0)
    assert isinstance(sc.policy, Range) and sc.policy.R == 1.0
    assert sc.network is None and sc.chunks is None
    assert sc.seeds() == [0]


def test_seeds_follow_seed_base():
    sc = parse_scenario(BASE + "\n[run]\nreplications = 3\nseed_base = 10\n")
    assert sc.seeds() == [10, 11, 12]


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_scenarios_load(path):
    sc = load_scenario(path)
    assert sc.name == path.stem


def test_knearest_scenario():
    sc = load_scenario(SCENARIOS / "superscaling.toml")
    assert isinstance(sc.policy, KNearest) and sc.policy.L == 40
    assert sc.params.range is None and sc.params.torus_side == 40.0


@pytest.mark.parametrize(
    "extra,line,needle",
    [
        ("\n[model2]\nx = 1\n", 10, "unknown section"),
        ("\n[run]\nname = \"a\"\nrepetitions = 3\n", 12, "unknown key"),
        ("\n[run]\nreplications = \"three\"\n", 11, "expected int"),
        ("\n[run]\nreplications = 0\n", 11, "must be >= 1"),
        ("\n[chunks]\nK = 10\nmode = \"all\"\n", 12, "one-to-one"),
        ("\n[sim]\nmethod = \"fixed-step\"\n", 10, "needs 'dt'"),
        ("\n[sim]\nwarmup = 5.0\nhorizon = 1.0\n", 11, "smaller than horizon"),
        ("\n[policy]\nkind = \"range\"\nL = 4\n", 12, "only applies"),
        ("\n[network]\ntheta = 1.0\n", 10, "missing required key 'E'"),
        ("\n[run]\nn_f_grid = [1.0, -2.0]\n", 11, "positive"),
    ],
)
def test_errors_name_line_and_field(extra, line, needle):
    with pytest.raises(ConfigError) as exc:
        parse_scenario(BASE + extra, source="s.toml")
    msg = str(exc.value)
    assert msg.startswith("s.toml: ")
    assert f"line {line}:" in msg
    assert needle in msg


def test_bad_rate_and_model_values():
    bad_rate = BASE.replace('kind = "tcp"', 'kind = "udp"')
    with pytest.raises(ConfigError, match=r"line 7: \[rate\]\.kind"):
        parse_scenario(bad_rate)
    with pytest.raises(ConfigError, match="strictly positive"):
        parse_scenario(BASE.replace("lambda = 2.0", "lambda = -1.0"))
    with pytest.raises(ConfigError, match="missing required key 'file_size'"):
        parse_scenario(BASE.replace("file_size = 1.0\n", ""))
    with pytest.raises(ConfigError, match="needs 'L'"):
        parse_scenario(BASE + '\n[policy]\nkind = "knearest"\n')


def test_boolean_is_not_a_number():
    with pytest.raises(ConfigError, match="expected int/float, got bool"):
        parse_scenario(BASE.replace("C = 1.0", "C = true"))


def test_toml_syntax_error_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_scenario("[model]\nlambda = 1\nfile_size = = 2\n")


def test_missing_file():
    with pytest.raises(ConfigError, match="nope.toml"):
        load_scenario("nope.toml")
