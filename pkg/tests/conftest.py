import numpy as np
import pytest

from atdsc.ingestion import BucketConfig, build_area_stats
from atdsc.mdp import CityModel, MdpModel
from atdsc.synthetic import SynthConfig, generate_synthetic_corpus


def ring_model(m: int = 5, seed: int = 0, chords: bool = True) -> MdpModel:
    """Random expected-value model on a ring of ``m`` zones (ids 1..m)."""
    rng = np.random.default_rng(seed)
    zones = list(range(1, m + 1))
    nb = {z: set() for z in zones}
    for i, z in enumerate(zones):
        w = zones[(i + 1) % m]
        nb[z].add(w)
        nb[w].add(z)
    if chords and m >= 5:
        nb[1].add(3)
        nb[3].add(1)
    return MdpModel.from_arrays(
        zones=zones,
        neighbors=nb,
        inc=rng.uniform(0.3, 1.5, m),
        exp_del=rng.uniform(6, 16, m),
        exp_cru=rng.uniform(2, 14, (m, m)),
        exp_gate=rng.uniform(0.3, 1.0, (m, m)),
        first_gate=rng.uniform(0.3, 1.0, m),
        p_pick=rng.uniform(0, 1, m),
        pickups=rng.integers(1, 50, m).astype(float),
    )


@pytest.fixture
def toy_model():
    return ring_model(5, seed=3)


@pytest.fixture(scope="session")
def corpus():
    return generate_synthetic_corpus(SynthConfig(n_zones=8, months=(1,), seed=11))


@pytest.fixture(scope="session")
def stats(corpus):
    return build_area_stats(corpus.records, corpus.graph, BucketConfig(), corpus.prior_records)


@pytest.fixture(scope="session")
def city(stats, corpus):
    return CityModel(stats, corpus.graph)


def oracle_city(n_zones: int = 4, seed: int = 1) -> CityModel:
    c = generate_synthetic_corpus(SynthConfig(n_zones=n_zones, months=(1,), seed=seed))
    return CityModel(build_area_stats(c.records, c.graph, BucketConfig(), c.prior_records), c.graph)


@pytest.fixture(scope="session")
def oracle_model():
    """The small synthetic instance the learner is checked against exhaustively."""
    from atdsc.ingestion import TimeBucket
    return oracle_city().bucket_model(TimeBucket(1, "weekday", 9))
