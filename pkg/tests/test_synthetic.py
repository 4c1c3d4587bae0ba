import io

import numpy as np
import pytest

from atdsc.ingestion import BucketConfig, build_area_stats, write_trip_records
from atdsc.mdp import flag_abnormal
from atdsc.synthetic import SynthConfig, generate_synthetic_corpus


def _csv(records):
    buf = io.StringIO()
    write_trip_records(records, buf)
    return buf.getvalue()


def test_same_seed_byte_identical():
    a = generate_synthetic_corpus(SynthConfig(n_zones=4, seed=1))
    b = generate_synthetic_corpus(SynthConfig(n_zones=4, seed=1))
    assert _csv(a.records) == _csv(b.records)
    assert _csv(a.prior_records) == _csv(b.prior_records)
    assert a.graph == b.graph


def test_different_seeds_differ():
    a = generate_synthetic_corpus(SynthConfig(n_zones=4, seed=1))
    b = generate_synthetic_corpus(SynthConfig(n_zones=4, seed=2))
    assert _csv(a.records) != _csv(b.records)


def test_too_few_zones():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SynthConfig(n_zones=1))


def test_pandemic_factor_scales_pickups():
    c = generate_synthetic_corpus(SynthConfig(n_zones=6, months=(4,), pandemic_months=(4,),
                                              pandemic_factor=0.1, seed=4))
    table = build_area_stats(c.records, c.graph, BucketConfig(), c.prior_records)
    cur = table.month_counts(4)
    pri = table.month_counts(4, prior=True)
    ratios = np.array([cur[z] / pri[z] for z in c.graph.zones])
    assert np.all(np.abs(ratios - 0.1) <= 0.02)
    omega, n_normal = flag_abnormal(cur, pri)
    assert n_normal == 0


def test_factor_one_flags_nothing():
    c = generate_synthetic_corpus(SynthConfig(n_zones=6, months=(4,), pandemic_months=(4,),
                                              pandemic_factor=1.0, seed=4))
    table = build_area_stats(c.records, c.graph, BucketConfig(), c.prior_records)
    _, n_normal = flag_abnormal(table.month_counts(4), table.month_counts(4, prior=True))
    assert n_normal == 6


def test_islands_form_separate_component():
    c = generate_synthetic_corpus(SynthConfig(n_zones=7, islands=2, seed=3))
    comp = c.graph.components()
    assert len(set(comp.values())) == 2
    assert comp[6] == comp[7] != comp[1]


def test_records_respect_invariants(corpus):
    zones = set(corpus.graph.zones)
    for r in corpus.records[:2000]:
        assert r.dropoff_time > r.pickup_time
        assert r.pickup_zone in zones and r.dropoff_zone in zones
        assert r.total_payment >= 0 and r.trip_distance >= 0
        assert r.pickup_time.second == 0
