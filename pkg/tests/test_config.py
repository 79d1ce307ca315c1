import pytest

from minerva.config import ConfigError, ScenarioConfig
from minerva.harness.scenario import bundled_names, dumps, load_scenario, loads, resolve


def test_bundled_scenarios_load_and_round_trip():
    names = bundled_names()
    assert {"honest_baseline", "committee_overrun", "byzantine_minority", "address_leak", "sharded"} <= set(names)
    for name in names:
        cfg = load_scenario(name)
        assert cfg.run.name == name
        again = loads(dumps(cfg))
        assert again == cfg
        assert dumps(again) == dumps(cfg)


def test_defaults_round_trip():
    cfg = ScenarioConfig()
    assert loads(dumps(cfg)) == cfg
    assert loads("") == cfg


def test_replace_dotted():
    cfg = ScenarioConfig().replace(**{"run.seed": 9, "committee.csize": 10})
    assert cfg.run.seed == 9 and cfg.committee.csize == 10
    with pytest.raises(ConfigError):
        ScenarioConfig().replace(**{"committee.csize": 3})


def test_every_problem_reported():
    text = """
[run]
horizon = 0
colour = "red"
[bogus]
x = 1
"""
    with pytest.raises(ConfigError) as err:
        loads(text)
    assert err.value.problems == ["run.colour: unknown key", "unknown section [bogus]"]
    with pytest.raises(ConfigError) as err:
        loads("[run]\nhorizon = 0\n[committee]\ncsize = 40\ngsize = 40\n[adversary]\nstrategy = 'nope'\n")
    probs = err.value.problems
    assert "run.horizon: must be >= 1" in probs
    assert "committee.csize: larger than the node count" in probs
    assert "committee.gsize: need 1 <= gsize < csize" in probs
    assert any(p.startswith("adversary.strategy") for p in probs)


@pytest.mark.parametrize("text", [
    "[run]\nhash = 'md5'\n",
    "[network]\nnodes = 3\nhash_shares = [1, 2]\n",
    "[network]\nd_min = 4\nd_max = 2\n",
    "[snail]\nfruit_interval = 50\n",
    "[snail]\ntiebreak = 'coin'\n",
    "[rewards]\nalpha = 1\n",
    "[rewards]\nbeta = '3/2'\n",
    "[adversary]\nbudget = 'half'\n",
    "[adversary]\nnodes = ['zz']\n",
    "[run\n",
])
def test_rejections(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_derived_values():
    cfg = loads("[network]\nnodes = 4\nhash_shares = [1, 1, 1, 3]\n[committee]\ncsize = 4\ngsize = 1\n")
    assert cfg.node_ids == ["n00", "n01", "n02", "n03"]
    assert [str(s) for s in cfg.shares] == ["1/6", "1/6", "1/6", "1/2"]
    assert str(loads("[adversary]\nbudget = '12/31'\n").budget) == "12/31"


def test_resolve_missing():
    with pytest.raises(FileNotFoundError):
        resolve("no_such_scenario")
