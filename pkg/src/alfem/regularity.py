"""Meyers-type regularity diagnostics: eta(p), p*(t) and the gradient-estimate constant.

The Laplace W^{1,P} regularity constant ``K_P`` is not computable from the
theory; it is a user input here and any values used in examples are
hypothetical.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RegularityContext:
    P: float
    K_P: float
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.P > 2:
            raise ValueError(f"upper exponent P must exceed 2, got {self.P}")
        if not self.K_P >= 1:
            raise ValueError(f"K_P must be >= 1, got {self.K_P}")
        if not 0 < self.alpha <= self.beta:
            raise ValueError("need 0 < alpha <= beta")


def eta(p: float, P: float) -> float:
    if not P > 2:
        raise ValueError(f"P must exceed 2, got {P}")
    if not 2 <= p <= P:
        raise ValueError(f"p = {p} outside [2, {P}]")
    return (0.5 - 1.0 / p) / (0.5 - 1.0 / P)


def _eta_inverse(e: float, P: float) -> float:
    return 1.0 / (0.5 - e * (0.5 - 1.0 / P))


def p_star(t: float, ctx: RegularityContext) -> float:
    """Largest p in [2, P] with ``K_P**(-eta(p)) >= 1 - t``."""
    if not 0 <= t <= 1:
        raise ValueError(f"t = {t} outside [0, 1]")
    if ctx.K_P == 1 or t >= 1 - 1 / ctx.K_P:
        return float(ctx.P)
    e = -math.log1p(-t) / math.log(ctx.K_P)
    return min(max(_eta_inverse(e, ctx.P), 2.0), float(ctx.P))


def meyers_constant(p: float, ctx: RegularityContext) -> float:
    """Constant of the W^{1,p} gradient bound; valid for ``2 <= p < p*(alpha/beta)``."""
    limit = p_star(ctx.alpha / ctx.beta, ctx)
    if not 2 <= p < limit:
        raise ValueError(f"p = {p} outside the admissible range [2, {limit:.6g}) for alpha/beta = {ctx.alpha / ctx.beta:.6g}")
    kp = ctx.K_P ** eta(p, ctx.P)
    denom = 1.0 - kp * (1.0 - ctx.alpha / ctx.beta)
    if denom <= 0:
        raise ValueError(f"p = {p} too large: denominator {denom:.3g} <= 0")
    return kp / (ctx.beta * denom)


def check_exponents(Q: float, q: float, p: float, P: float, tol: float = 1e-12) -> None:
    """Validate an exponent triple for the main error estimate; raises ValueError."""
    if not Q > 6:
        raise ValueError(f"Q must exceed 6, got {Q}")
    lower = 2 * Q / (Q - 6)
    if not P > lower:
        raise ValueError(f"P must exceed 2Q/(Q-6) = {lower:.6g}")
    if not lower < p <= P:
        raise ValueError(f"p = {p} outside ({lower:.6g}, {P}]")
    if not 2 < q < Q / 3:
        raise ValueError(f"q = {q} outside (2, {Q / 3:.6g})")
    if abs(2 / q + 2 / p - 1) > tol:
        raise ValueError(f"2/q + 2/p = {2 / q + 2 / p!r} != 1")


def conjugate_q(p: float) -> float:
    """q with 2/q + 2/p = 1."""
    return 2 * p / (p - 2)


def pstar_table(ctx: RegularityContext, n: int = 101) -> np.ndarray:
    ts = np.linspace(0.0, 1.0, n)
    return np.column_stack([ts, [p_star(t, ctx) for t in ts]])


def eta_table(P: float, n: int = 101) -> np.ndarray:
    ps = np.linspace(2.0, P, n)
    return np.column_stack([ps, [eta(p, P) for p in ps]])


def write_pstar_csv(path, ctx: RegularityContext, n: int = 101) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p_star"])
        for t, p in pstar_table(ctx, n):
            w.writerow([repr(float(t)), repr(float(p))])
