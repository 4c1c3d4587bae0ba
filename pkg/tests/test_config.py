import pytest

from atdsc.config import ConfigError, load_run_config, parse_assignments


def test_defaults():
    cfg = load_run_config()
    assert cfg.learner.gamma == 0.9 and cfg.learner.iterations == 300_000
    assert cfg.anomaly.c == 8 and cfg.mdp.beta == 0.1
    assert cfg.benchmark.runs == 30


def test_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# demo\nseed = 7\nlearner.iterations = 5000\nbenchmark.hours = 7-9,12\n"
                 "benchmark.methods = atdsc, mnp\nlearner.tau = none\n")
    cfg = load_run_config(p, ["learner.iterations=100"])
    assert cfg.seed == 7
    assert cfg.learner.iterations == 100
    assert cfg.learner.tau is None
    assert cfg.benchmark.hours == (7, 8, 9, 12)
    assert cfg.benchmark.methods == ("ATDSC", "MNP")
    b = cfg.benchmark_config(metric="occupancy", fixed_fc=True, jobs=3)
    assert (b.seed, b.metric, b.fixed_fc, b.jobs, b.learner.iterations) == (7, "occupancy", True, 3, 100)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(tmp_path / "absent.cfg")


@pytest.mark.parametrize("line", ["bogus.key = 1", "learner.gamma = abc", "learner.gamma = 1.5",
                                  "mdp.alpha1 = 0.9", "benchmark.methods = ATDSC,FOO"])
def test_bad_values(line):
    with pytest.raises(ConfigError):
        load_run_config(None, [line])


def test_line_without_equals():
    with pytest.raises(ConfigError):
        parse_assignments(["seed 3"])
