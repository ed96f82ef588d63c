"""
Quadrature - Expectation of a grid value function after one observation
Builds H(p) = E_p[V(π')] for every grid prior p with composite Gauss-Legendre over x,
where π' is the posterior after observing X ~ p f1 + (1 - p) f0
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from errors import ConvergenceError, DomainError
from model import DensityPair
from posterior import bayes_update

_log = logging.getLogger(__name__)

ROW_CHUNK = 128

Integrand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadratureConfig:
    order: int = 16
    initial_panels: int = 8
    max_panels: int = 512
    tol: float = 1e-8
    width_sigmas: float = 10.0

    def __post_init__(self):
        if self.order < 2:
            raise DomainError(f"Gauss-Legendre order must be at least 2, got {self.order}")
        if self.initial_panels < 1 or self.max_panels < self.initial_panels:
            raise DomainError("panel counts must satisfy 1 <= initial_panels <= max_panels")
        if not self.tol > 0.0:
            raise DomainError(f"quadrature tolerance must be positive, got {self.tol}")
        if not self.width_sigmas > 0.0:
            raise DomainError(f"integration width must be positive, got {self.width_sigmas}")

    def describe(self) -> Dict[str, float]:
        return {
            "order": self.order,
            "initial_panels": self.initial_panels,
            "max_panels": self.max_panels,
            "tol": self.tol,
            "width_sigmas": self.width_sigmas,
        }


def composite_rule(lo: float, hi: float, panels: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of `panels` equal Gauss-Legendre panels on [lo, hi]"""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _rule_for(pair: DensityPair, panels: int, config: QuadratureConfig) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = pair.support(config.width_sigmas)
    if pair.symmetric:
        nodes, weights = composite_rule(0.0, hi, panels, config.order)
        return nodes, 2.0 * weights
    return composite_rule(lo, hi, panels, config.order)


def _node_terms(pair: DensityPair, priors: np.ndarray, nodes: np.ndarray, weights: np.ndarray):
    """Predictive weight and posterior for every (prior, node) pair"""
    f1 = np.exp(pair.log_density(nodes, True))
    f0 = np.exp(pair.log_density(nodes, False))
    llr = np.asarray(pair.log_likelihood_ratio(nodes), dtype=float)
    p = priors[:, None]
    mass = weights[None, :] * (p * f1[None, :] + (1.0 - p) * f0[None, :])
    post = bayes_update(np.broadcast_to(p, mass.shape), np.broadcast_to(llr[None, :], mass.shape))
    return mass, post


def _integrals(pair: DensityPair, points: np.ndarray, panels: int,
              config: QuadratureConfig, functions: Sequence[Integrand]) -> np.ndarray:
    nodes, weights = _rule_for(pair, panels, config)
    out = np.empty((len(functions), len(points)))
    for start in range(0, len(points), ROW_CHUNK):
        rows = slice(start, start + ROW_CHUNK)
        mass, post = _node_terms(pair, points[rows], nodes, weights)
        for i, fn in enumerate(functions):
            out[i, rows] = np.sum(mass * fn(post), axis=1)
    return out


SMOOTH_INTEGRANDS: Tuple[Integrand, ...] = (
    np.ones_like,
    lambda post: post,
    lambda post: post ** 2,
    lambda post: 4.0 * post * (1.0 - post),
)


class ExpectationOperator:
    """
    Dense G x G matrix T with (T v)_j = E_{p_j}[v(π')] for v linearly interpolated on the grid.
    Panels double until integrals of smooth integrands change by less than config.tol.
    """

    def __init__(self, pair: DensityPair, points: np.ndarray, config: Optional[QuadratureConfig] = None):
        self.pair = pair
        self.points = np.asarray(points, dtype=float)
        self.config = config or QuadratureConfig()
        self.panels, self.achieved_tol = self._converge(SMOOTH_INTEGRANDS)
        self.matrix = self._assemble(self.panels)
        _log.debug("expectation operator: %d panels, %d nodes, tolerance %.2e",
                   self.panels, self.panels * self.config.order, self.achieved_tol)

    def _converge(self, functions: Sequence[Integrand]) -> Tuple[int, float]:
        panels = self.config.initial_panels
        if panels == self.config.max_panels:
            # fixed rule, no refinement requested
            return panels, float("nan")
        previous = _integrals(self.pair, self.points, panels, self.config, functions)
        change = np.inf
        while panels < self.config.max_panels:
            panels = min(2 * panels, self.config.max_panels)
            current = _integrals(self.pair, self.points, panels, self.config, functions)
            change = float(np.max(np.abs(current - previous)))
            if change <= self.config.tol:
                return panels, change
            previous = current
        raise ConvergenceError(
            f"Gauss-Legendre expectation did not converge within {self.config.max_panels} panels",
            achieved_tol=change,
        )

    def _assemble(self, panels: int) -> np.ndarray:
        nodes, weights = _rule_for(self.pair, panels, self.config)
        size = len(self.points)
        step = self.points[1] - self.points[0]
        matrix = np.zeros((size, size))
        for start in range(0, size, ROW_CHUNK):
            priors = self.points[start:start + ROW_CHUNK]
            mass, post = _node_terms(self.pair, priors, nodes, weights)
            idx = np.clip(np.floor(post / step).astype(int), 0, size - 2)
            frac = np.clip((post - self.points[idx]) / step, 0.0, 1.0)
            rows = np.arange(len(priors))[:, None] * size
            flat = np.concatenate([(rows + idx).ravel(), (rows + idx + 1).ravel()])
            vals = np.concatenate([(mass * (1.0 - frac)).ravel(), (mass * frac).ravel()])
            block = np.bincount(flat, weights=vals, minlength=len(priors) * size)
            matrix[start:start + len(priors)] = block.reshape(len(priors), size)
        return matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        """H at every grid prior; values may carry extra trailing columns"""
        return self.matrix @ values
