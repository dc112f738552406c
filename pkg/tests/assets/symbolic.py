"""Symbolic-differentiation oracle for the closed-form fixtures.

Independent of the package: every quantity is differentiated exactly with
sympy and lambdified per component.
"""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
import sympy as sp

X = sp.symbols("x1 x2")
TP = 2 * sp.pi


def _potential(fid):
    x1, x2 = X
    if fid == "F1":
        return (x1**2 + x2**2) / 2, (x1, x2)
    if fid == "F2":
        return sp.exp(x1), (x1,)
    if fid == "F3":
        return x1**2 - sp.cos(TP * x1) / TP**2, (x1,)
    if fid == "F5":
        phi = (sp.cos(TP * x1) + sp.cos(TP * (x1 + x2))) / TP**2
        return sp.Rational(3, 2) * (x1**2 + x2**2) + phi, (x1, x2)
    raise KeyError(fid)


class TensorOracle:
    """Components ``{index tuple: expr}`` per quantity, evaluated on demand."""

    def __init__(self, xs, components):
        self.xs = xs
        self.n = len(xs)
        self.components = components
        self._funcs = {
            name: {c: sp.lambdify(xs, e, "numpy") for c, e in comps.items()}
            for name, comps in components.items()
        }

    def __call__(self, name, *coords):
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast_shapes(*(c.shape for c in coords))
        funcs = self._funcs[name]
        rank = len(next(iter(funcs)))
        out = np.empty(shape + (self.n,) * rank)
        for c, f in funcs.items():
            out[(Ellipsis,) + c] = np.broadcast_to(np.asarray(f(*coords), dtype=float), shape)
        return out

    def value(self, name, index, point):
        return float(self.components[name][tuple(index)].subs(dict(zip(self.xs, point))).evalf(30))


def _hessian_components(Phi, xs):
    n = len(xs)
    idx = range(n)
    d = sp.diff
    g = sp.Matrix(n, n, lambda i, j: d(Phi, xs[i], xs[j]))
    ginv = sp.simplify(g.inv())
    logdet = sp.log(g.det())
    p3 = {c: d(Phi, *[xs[a] for a in c]) for c in itertools.product(idx, repeat=3)}
    p4 = {c: d(Phi, *[xs[a] for a in c]) for c in itertools.product(idx, repeat=4)}
    comps = {
        "g": {(i, j): g[i, j] for i in idx for j in idx},
        "logdet": {(): logdet},
        "beta": {(i, j): -d(logdet, xs[i], xs[j]) for i in idx for j in idx},
        "alpha": {(i,): d(logdet, xs[i]) / 2 for i in idx},
        "kappa": {(i, j): d(logdet, xs[i], xs[j]) / 2 for i in idx for j in idx},
        "gamma": {
            (i, j, k): sum(ginv[i, l] * p3[(l, j, k)] for l in idx) / 2
            for i, j, k in itertools.product(idx, repeat=3)
        },
    }
    Q = {}
    for i, j, k, l in itertools.product(idx, repeat=4):
        cubic = sum(ginv[p, q] * p3[(i, k, p)] * p3[(j, l, q)] for p in idx for q in idx)
        Q[(i, j, k, l)] = p4[(i, j, k, l)] / 2 - cubic / 2
    comps["Q"] = Q
    comps["R"] = {c: (Q[c] - Q[(c[1], c[0], c[2], c[3])]) / 2 for c in Q}
    return comps


@lru_cache(maxsize=None)
def oracle(fid) -> TensorOracle:
    if fid == "F4":
        x1, x2 = X
        g = sp.Matrix([[2 + sp.Rational(3, 10) * sp.sin(TP * x2), 0], [0, 2]])
        logdet = sp.log(g.det())
        comps = {
            "g": {(i, j): g[i, j] for i in range(2) for j in range(2)},
            "logdet": {(): logdet},
            "beta": {(i, j): -sp.diff(logdet, X[i], X[j]) for i in range(2) for j in range(2)},
            "T": {
                (k, j, l): sp.diff(g[k, l], X[j]) - sp.diff(g[k, j], X[l])
                for k, j, l in itertools.product(range(2), repeat=3)
            },
        }
        return TensorOracle(X, comps)
    Phi, xs = _potential(fid)
    return TensorOracle(xs, _hessian_components(Phi, xs))
