"""Tabulate eta(p) and p*(t) and the Meyers constant for a hypothetical K_P.

K_P (the W^{1,P} regularity constant of the Laplacian) is not computable
here; K_P = 2 with P = 6 is an illustrative choice.

    python demos/regularity_curves.py
"""
import numpy as np

from alfem.regularity import RegularityContext, eta, meyers_constant, p_star

P, K_P = 6.0, 2.0
ctx = RegularityContext(P=P, K_P=K_P)
print("p      eta(p)")
for p in np.linspace(2, P, 9):
    print(f"{p:5.2f}  {eta(p, P):.4f}")
print(f"\nt      p*(t)     (p* = P from t = 1 - 1/K_P = {1 - 1 / K_P:.2f})")
for t in np.linspace(0, 1, 11):
    print(f"{t:4.2f}  {p_star(t, ctx):.4f}")
for contrast in (1.5, 4.0, 100.0):
    c = RegularityContext(P=P, K_P=K_P, alpha=1.0, beta=contrast)
    limit = p_star(1 / contrast, c)
    p = 2 + 0.5 * (limit - 2)
    print(f"\nbeta/alpha={contrast:g}: admissible p < {limit:.4f}; constant at p={p:.4f} is {meyers_constant(p, c):.4f}")
