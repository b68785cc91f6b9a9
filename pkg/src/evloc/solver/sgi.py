"""Concave revenue function Q and its subgradient (tangent) inequalities.

For one demand node in one stage/scenario::

    Q(x) = sum_h w_h (dbar x_h - (dbar - d_h) x_h**2) / (w0 + sum_h w_h x_h)

At binary ``x`` this is the MNL revenue ``sum_h d_h w_h x_h / (w0 + sum_h w_h x_h)``
and ``Q`` is concave on the unit box, so its tangent planes at binary points
describe the revenue hypograph exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INT_TOL = 1e-6
CUT_TOL = 1e-7


@dataclass(frozen=True)
class QEvaluator:
    d: np.ndarray  # revenue-weighted demand per option, d_h = r_h * d_i
    w: np.ndarray  # MNL weights per option
    w0: float  # home-charging weight

    @property
    def dbar(self) -> float:
        return float(np.max(self.d)) if len(self.d) else 0.0


def _parts(d, w, w0, x):
    dbar = d.max(axis=-1, keepdims=True)
    num = np.sum(w * (dbar * x - (dbar - d) * x * x), axis=-1)
    den = w0 + np.sum(w * x, axis=-1)
    return dbar, num, den


def q_value(ev: QEvaluator, x) -> float:
    x = np.asarray(x, dtype=float)
    _, num, den = _parts(np.asarray(ev.d, float), np.asarray(ev.w, float), ev.w0, x)
    return float(num / den)


def q_gradient(ev: QEvaluator, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d, w = np.asarray(ev.d, float), np.asarray(ev.w, float)
    dbar, num, den = _parts(d, w, ev.w0, x)
    return (w * (dbar - 2.0 * (dbar - d) * x) * den - num * w) / den ** 2


@dataclass(frozen=True)
class Cut:
    """Linear row ``q - sum_h coef_h x_h <= rhs``."""
    q: int
    x: np.ndarray
    coef: np.ndarray
    rhs: float
    hook: int


def tangent(ev: QEvaluator, xhat) -> tuple[float, np.ndarray]:
    """Tangent of ``Q`` at ``xhat`` as ``(value, gradient)``."""
    return q_value(ev, xhat), q_gradient(ev, xhat)


def separate_sgi(hooks, x, *, tol: float = CUT_TOL, require_integral: bool = True) -> list[Cut]:
    """Tangent cuts for every hook whose ``q`` exceeds ``Q(xhat)``.

    ``hooks`` is a sequence of objects with ``q`` (variable index), ``x``
    (variable indices over options) and ``evaluator``; ``x`` is the full
    variable vector. An empty list means the point is feasible.
    """
    x = np.asarray(x, dtype=float)
    if not hooks:
        return []
    batch = HookBatch.from_hooks(hooks)
    return batch.separate(x, tol=tol, require_integral=require_integral)


class HookBatch:
    """Array view of a hook list for fast separation."""

    def __init__(self, q, xidx, D, W, W0):
        self.q = np.asarray(q, dtype=np.int64)
        self.xidx = np.asarray(xidx, dtype=np.int64)
        self.D = np.asarray(D, dtype=float)
        self.W = np.asarray(W, dtype=float)
        self.W0 = np.asarray(W0, dtype=float)

    @classmethod
    def from_hooks(cls, hooks):
        return cls(
            [h.q for h in hooks],
            np.array([h.x for h in hooks]),
            np.array([h.evaluator.d for h in hooks]),
            np.array([h.evaluator.w for h in hooks]),
            [h.evaluator.w0 for h in hooks],
        )

    def __len__(self):
        return len(self.q)

    def values(self, x) -> np.ndarray:
        X = np.asarray(x, dtype=float)[self.xidx]
        dbar = self.D.max(axis=1, keepdims=True)
        num = np.sum(self.W * (dbar * X - (dbar - self.D) * X * X), axis=1)
        return num / (self.W0 + np.sum(self.W * X, axis=1))

    def tangents(self, X) -> tuple[np.ndarray, np.ndarray]:
        dbar = self.D.max(axis=1, keepdims=True)
        num = np.sum(self.W * (dbar * X - (dbar - self.D) * X * X), axis=1)
        den = self.W0 + np.sum(self.W * X, axis=1)
        grad = (self.W * (dbar - 2.0 * (dbar - self.D) * X) * den[:, None]
                - num[:, None] * self.W) / den[:, None] ** 2
        return num / den, grad

    def subadditive_cuts(self) -> list[Cut]:
        """Rows ``q <= sum_h d_h w_h / (w0 + w_h) x_h``, one per hook.

        Valid at every binary point, since each open option's denominator
        contains its own weight. Much tighter than tangents where the LP
        spreads the budget thinly over many options.
        """
        coef = self.D * self.W / (self.W0[:, None] + self.W)
        return [Cut(int(self.q[k]), self.xidx[k], coef[k], 0.0, int(k)) for k in range(len(self))]

    def separate(self, x, *, tol=CUT_TOL, require_integral=True) -> list[Cut]:
        x = np.asarray(x, dtype=float)
        X = x[self.xidx]
        if require_integral:
            if np.any(np.abs(X - np.round(X)) > INT_TOL):
                raise ValueError("separation point is not integral")
            X = np.round(X)
        val, grad = self.tangents(X)
        viol = np.flatnonzero(x[self.q] > val + tol)
        cuts = []
        for k in viol:
            g = grad[k]
            cuts.append(Cut(int(self.q[k]), self.xidx[k], g, float(val[k] - g @ X[k]), int(k)))
        return cuts
