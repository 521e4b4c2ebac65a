import datetime as dt
import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

from pricepolarity.corpus import MISSING, PropertyRecord  # noqa: E402


def make_record(rid, ppa=100.0, area=50.0, date=dt.date(2017, 6, 1), key=("Suba", "0-10", "casa"),
                description="casa con piscina", features=None):
    return PropertyRecord(rid, ppa * area, area, date, key[0], key[1], key[2], description,
                          dict(features or {}))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    from pricepolarity import synth

    records, truth = synth.generate_corpus(synth.SynthConfig(n_properties=600, n_neighbourhoods=3, seed=7))
    return records, truth


@pytest.fixture(scope="session")
def small_labeled(small_corpus):
    from pricepolarity import analysis

    return analysis.prepare_corpus(small_corpus[0])


__all__ = ["make_record", "MISSING"]
