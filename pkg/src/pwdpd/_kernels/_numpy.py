"""Pure-NumPy fallback implementation of the polynomial-bank kernel."""

import numpy as np


def bank_eval(terms_p, terms_v, coeffs, u, c):
    a2 = (u * np.conj(u)).real
    y = np.zeros_like(u)
    for i in range(terms_p.shape[0]):
        p = int(terms_p[i])
        v = int(terms_v[i])
        if v == 0:
            basis = u * a2 ** p
        elif v == 1:
            basis = a2 ** p * c
        else:
            basis = u * u * a2 ** (p - 1) * np.conj(c)
        y += coeffs[:, i : i + 1] * basis
    return y
