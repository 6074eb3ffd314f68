"""Built-in model corpus and the JSON model-file format.

A model file holds the fields (and optional drift, potential and density)
as lists of ``{"exp": [...], "num": n, "den": d}`` terms, a base point, a
working box and free-form tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np

from ..errors import DimensionMismatch, ModelError
from ..flag import compute_flag, exact_point
from ..polynomials import MultiPoly, PolyVectorField

__all__ = ["ModelSpec", "load_model", "load_corpus", "corpus_names", "corpus_list"]

DRIFT_CLASSES = ("none", "D", "D2")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    dim: int
    fields: tuple
    drift: PolyVectorField | None = None
    potential: MultiPoly | None = None
    density: MultiPoly | None = None
    base_point: tuple = ()
    drift_class: str = "none"
    tags: tuple = ()
    box: tuple | None = None
    description: str = ""

    def __post_init__(self):
        if not self.fields:
            raise ModelError("a model needs at least one field")
        for X in self.fields:
            if X.dim != self.dim:
                raise DimensionMismatch(f"field of dimension {X.dim} in a {self.dim}-dimensional model")
        for p in (self.drift, self.potential, self.density):
            if p is not None and p.dim != self.dim:
                raise DimensionMismatch("drift/potential/density dimension differs from the model")
        if self.drift_class not in DRIFT_CLASSES:
            raise ModelError(f"drift_class must be one of {DRIFT_CLASSES}")
        bp = self.base_point or (0,) * self.dim
        object.__setattr__(self, "base_point", exact_point(bp, self.dim))
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "tags", tuple(self.tags))

    @classmethod
    def from_json(cls, data):
        dim = int(data["dim"])

        def poly(d):
            return None if d is None else MultiPoly.from_json(dim, d)

        def vf(d):
            if d is None:
                return None
            if int(d.get("dim", dim)) != dim:
                raise DimensionMismatch("field dimension differs from the model")
            return PolyVectorField.from_json({"dim": dim, "components": d["components"]})

        box = data.get("box")
        if box is not None:
            box = (tuple(float(v) for v in box["lo"]), tuple(float(v) for v in box["hi"]))
        bp = tuple(Fraction(str(v)) for v in data.get("base_point", [0] * dim))
        return cls(
            name=str(data["name"]),
            dim=dim,
            fields=tuple(vf(f) for f in data["fields"]),
            drift=vf(data.get("drift")),
            potential=poly(data.get("potential")),
            density=poly(data.get("density")),
            base_point=bp,
            drift_class=data.get("drift_class", "none"),
            tags=tuple(data.get("tags", ())),
            box=box,
            description=data.get("description", ""),
        )

    def to_json(self):
        return {
            "name": self.name,
            "dim": self.dim,
            "description": self.description,
            "fields": [X.to_json() for X in self.fields],
            "drift": None if self.drift is None else self.drift.to_json(),
            "potential": None if self.potential is None else self.potential.to_json(),
            "density": None if self.density is None else self.density.to_json(),
            "base_point": [str(c) for c in self.base_point],
            "drift_class": self.drift_class,
            "tags": list(self.tags),
            "box": None if self.box is None else {"lo": list(self.box[0]), "hi": list(self.box[1])},
        }

    def heat_model(self, box=None, weights=None):
        from ..heat.model import HeatModel

        lo, hi = box if box is not None else (self.box or ((-5.0,) * self.dim, (5.0,) * self.dim))
        return HeatModel(self.fields, np.asarray(lo, float), np.asarray(hi, float), self.drift,
                         self.potential, self.density, weights, name=self.name)

    def flag(self, point=None):
        return compute_flag(self.fields, point if point is not None else self.base_point)

    def chart(self, flag=None, trunc_order=None):
        from ..charts import privileged_chart

        flag = flag or self.flag()
        return privileged_chart(self.fields, flag, point=flag.point, trunc_order=trunc_order)

    def nilpotent(self, chart=None):
        from ..nilpotent import nilpotentize

        chart = chart or self.chart()
        return nilpotentize(self.fields, drift=self.drift, chart=chart,
                            drift_in_D2=self.drift_class == "D2", density=self.density)


def load_model(path):
    with open(path, encoding="utf-8") as f:
        return ModelSpec.from_json(json.load(f))


def corpus_names():
    files = resources.files(__name__).iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def load_corpus(name):
    if name not in corpus_names():
        raise KeyError(f"unknown corpus model {name!r}; available: {', '.join(corpus_names())}")
    text = resources.files(__name__).joinpath(f"{name}.json").read_text(encoding="utf-8")
    return ModelSpec.from_json(json.loads(text))


def corpus_list():
    return [{"name": n, "tags": list(load_corpus(n).tags)} for n in corpus_names()]
