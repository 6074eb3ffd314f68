import json

import pytest

from srheat import load_corpus, load_model
from srheat.corpus import ModelSpec, corpus_list, corpus_names
from srheat.errors import ModelError


def test_names_and_listing_agree():
    assert [m["name"] for m in corpus_list()] == list(corpus_names())
    assert len(corpus_names()) == 10


@pytest.mark.parametrize("name", corpus_names())
def test_json_round_trip(name, tmp_path):
    spec = load_corpus(name)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(spec.to_json()))
    again = load_model(path)
    assert again.to_json() == spec.to_json()
    assert again.fields == spec.fields


@pytest.mark.parametrize("name", corpus_names())
def test_heat_model_box_contains_base_point(name):
    spec = load_corpus(name)
    m = spec.heat_model()
    bp = [float(c) for c in spec.base_point]
    assert all(lo < b < hi for lo, b, hi in zip(m.box_lo, bp, m.box_hi))
    m.validate(n_per_axis=5)


def test_unknown_name():
    with pytest.raises(KeyError):
        load_corpus("no_such_model")


def test_malformed_model_rejected():
    data = load_corpus("heisenberg").to_json()
    data["dim"] = 2
    with pytest.raises((ModelError, ValueError)):
        ModelSpec.from_json(data)
