"""Reference metrics F1 to F5 with closed forms.

====  ===  =====================================================  =========
id    n    definition                                             kind
====  ===  =====================================================  =========
F1    2    G0 = I, phi = 0                                        Hessian
F2    1    g = exp(x) on a non-periodic chart                     analytic
F3    1    G0 = [2], phi = -cos(2 pi x) / (2 pi)^2                Hessian
F4    2    g11 = 2 + 0.3 sin(2 pi x2), g22 = 2, g12 = 0           metric
F5    2    G0 = 3 I, phi = [cos 2pi x1 + cos 2pi(x1+x2)]/(2pi)^2  Hessian
====  ===  =====================================================  =========
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from .errors import ConfigError
from .geometry import HessianStructure, MetricField, PotentialJet
from .grid import GridSpec

TWO_PI = 2.0 * np.pi

__all__ = ["Fixture", "FIXTURES", "get_fixture", "load_oracles"]


@dataclass(frozen=True)
class Fixture:
    id: str
    dim: int
    kind: str  # "hessian", "metric" or "analytic"
    description: str
    _build: Callable

    @property
    def is_hessian(self) -> bool:
        return self.kind in ("hessian", "analytic")

    def grid(self, N: int) -> GridSpec:
        return GridSpec(self.dim, N)

    def structure(self, N: int = 64) -> HessianStructure:
        if self.kind != "hessian":
            raise ConfigError(f"{self.id} has no periodic potential")
        return self._build(self.grid(N))

    def metric(self, N: int = 64) -> MetricField:
        if self.kind == "analytic":
            raise ConfigError(f"{self.id} exists only in analytic sampling mode")
        built = self._build(self.grid(N))
        return built.metric if isinstance(built, HessianStructure) else built

    def jet(self, x=None) -> PotentialJet:
        if self.kind != "analytic":
            raise ConfigError(f"{self.id} is a grid fixture")
        return self._build(x)


def _f1(grid):
    return HessianStructure(grid, np.eye(2), np.zeros(grid.shape))


def _f2(x=None):
    x = np.linspace(-1.0, 1.0, 33) if x is None else np.atleast_1d(np.asarray(x, float))
    e = np.exp(x)
    return PotentialJet(e[:, None, None], e[:, None, None, None], e[:, None, None, None, None])


def _f3(grid):
    (x,) = grid.coords()
    return HessianStructure(grid, [[2.0]], -np.cos(TWO_PI * x) / TWO_PI**2)


def _f4(grid):
    _, x2 = grid.coords()
    g = np.zeros(grid.shape + (2, 2))
    g[..., 0, 0] = 2.0 + 0.3 * np.sin(TWO_PI * x2)
    g[..., 1, 1] = 2.0
    return MetricField(grid, g)


def _f5(grid):
    x1, x2 = grid.coords()
    phi = (np.cos(TWO_PI * x1) + np.cos(TWO_PI * (x1 + x2))) / TWO_PI**2
    return HessianStructure(grid, 3.0 * np.eye(2), phi)


FIXTURES = {
    "F1": Fixture("F1", 2, "hessian", "flat identity metric", _f1),
    "F2": Fixture("F2", 1, "analytic", "g = exp(x), analytic sampling", _f2),
    "F3": Fixture("F3", 1, "hessian", "g = 2 + cos(2 pi x)", _f3),
    "F4": Fixture("F4", 2, "metric", "non-Hessian, g11 = 2 + 0.3 sin(2 pi x2)", _f4),
    "F5": Fixture("F5", 2, "hessian", "3I + Hessian of two cosine modes", _f5),
}


def get_fixture(fid: str) -> Fixture:
    try:
        return FIXTURES[fid]
    except KeyError:
        raise ConfigError(f"unknown fixture {fid!r}; choose from {sorted(FIXTURES)}") from None


def load_oracles() -> dict:
    """Point values from symbolic differentiation of the closed forms.

    The file is produced by ``tests/assets/make_oracles.py``.
    """
    text = resources.files("hkflow").joinpath("data/oracles.json").read_text()
    return json.loads(text)
