"""Dual-input memoryless polynomial models for the predistorter and the PAs.

A model is a weighted sum of basis terms indexed by ``(p, v)``: the drive
factor is ``psi_p^0(s) = s |s|^(2p)``, ``psi_p^1(s) = |s|^(2p)`` or
``psi_p^2(s) = s^2 |s|^(2(p-1))``, and the conjugation class ``v`` selects
the second-input multiplier 1, ``c`` or ``conj(c)``. The unique linear term
is ``(p=0, v=0)`` and always comes first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .signalgen import as_samples

FORMAT_VERSION = 1

#: Fixture coefficients of the synthetic PA bank, aligned with
#: ``default_pa_spec()``. Mild compression around unit envelope; the v=2
#: term carries no nominal weight.
NOMINAL_PA_COEFFS = (
    1.0 + 0.0j,       # (0,0) linear gain
    -0.08 + 0.02j,    # (1,0)
    -0.015 + 0.0j,    # (2,0)
    0.0 + 0.002j,     # (3,0)
    0.05 + 0.0j,      # (0,1) crosstalk feedthrough
    0.01 + 0.0j,      # (1,1)
    0.0 + 0.0j,       # (1,2)
)


class ModelError(ValueError):
    """Invalid basis/coefficient structure."""


class IdentificationError(RuntimeError):
    """Least-squares identification failed; carries the condition estimate."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class BasisTerm(NamedTuple):
    p: int
    v: int

    def validate(self) -> "BasisTerm":
        if self.p < 0 or self.v not in (0, 1, 2):
            raise ModelError(f"invalid basis term {self}")
        if self.v == 2 and self.p < 1:
            raise ModelError("v=2 terms start at p=1")
        return self


@dataclass(frozen=True)
class BasisSpec:
    """Ordered basis-term list of a dual-input polynomial.

    ``terms[0]`` must be the linear term ``(0, 0)``; the remaining ``Q``
    terms are the nonlinear outputs. ``order_p`` is the (odd) polynomial
    order, bounding ``p <= (order_p - 1) / 2``.
    """

    terms: tuple
    order_p: int

    def __post_init__(self):
        terms = tuple(BasisTerm(*t).validate() for t in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms or terms[0] != BasisTerm(0, 0):
            raise ModelError("terms[0] must be the linear term (p=0, v=0)")
        if len(set(terms)) != len(terms):
            raise ModelError("duplicate (p, v) terms")
        if self.order_p < 1 or self.order_p % 2 == 0:
            raise ModelError("order_p must be an odd positive integer")
        pmax = (self.order_p - 1) // 2
        for t in terms:
            if t.p > pmax:
                raise ModelError(f"term {t} exceeds order {self.order_p}")

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def n_nonlinear(self) -> int:
        """Q, the number of nonlinear terms."""
        return len(self.terms) - 1

    def term_index(self, p: int, v: int) -> int:
        try:
            return self.terms.index(BasisTerm(p, v))
        except ValueError:
            return -1


def default_dpd_spec() -> BasisSpec:
    """Default predistorter basis: Q = 6 dominant terms up to order 7."""
    return BasisSpec(
        terms=((0, 0), (1, 0), (2, 0), (3, 0), (0, 1), (1, 1), (1, 2)),
        order_p=7,
    )


def default_pa_spec() -> BasisSpec:
    """Ground-truth PA basis: same term set, order 7."""
    return default_dpd_spec()


@dataclass(frozen=True)
class PaModel:
    """A PA behavioral model: a basis spec plus aligned coefficients."""

    spec: BasisSpec
    coeffs: np.ndarray

    def __post_init__(self):
        co = np.asarray(self.coeffs, dtype=np.complex128).copy()
        if co.ndim != 1 or co.size != len(self.spec):
            raise ModelError("coefficient vector must align with the basis spec")
        if not np.all(np.isfinite(co)):
            raise ModelError("coefficients must be finite")
        if co[0] == 0:
            raise ModelError("PA linear gain must be nonzero")
        co.flags.writeable = False
        object.__setattr__(self, "coeffs", co)

    def leading_coeff(self, v: int) -> complex:
        """Coefficient of the (p=0-or-1, v) leading term used in the
        crosstalk linearization: (0,0), (0,1); zero when absent."""
        i = self.spec.term_index(0, v)
        return complex(self.coeffs[i]) if i >= 0 else 0.0j


def eval_basis(term, s, c):
    """Evaluate one basis term: psi_p^v(s) times (1, c, conj(c))[v]."""
    p, v = BasisTerm(*term).validate()
    s = np.asarray(s, dtype=np.complex128)
    c = np.asarray(c, dtype=np.complex128)
    a2 = (s * np.conj(s)).real
    if v == 0:
        return s * a2 ** p
    if v == 1:
        return a2 ** p * c
    return s * s * a2 ** (p - 1) * np.conj(c)


def build_regressor(spec: BasisSpec, s, c) -> np.ndarray:
    """Regression matrix: row n, column i = eval_basis(terms[i], s[n], c[n])."""
    sa = as_samples(s)
    ca = as_samples(c)
    if sa.size != ca.size:
        raise ModelError(f"length mismatch: s has {sa.size} samples, c has {ca.size}")
    cols = [eval_basis(t, sa, ca) for t in spec.terms]
    return np.stack(cols, axis=1)


def eval_poly(spec: BasisSpec, coeffs, s, c) -> np.ndarray:
    """Per-sample polynomial output sum_i coeffs[i] * basis_i(s, c)."""
    co = np.asarray(coeffs, dtype=np.complex128)
    if co.size != len(spec):
        raise ModelError("coefficient vector must align with the basis spec")
    return build_regressor(spec, s, c) @ co


def ls_identify(
    spec: BasisSpec,
    s,
    c,
    y,
    *,
    cond_cap: float = 1e10,
    strict: bool = False,
) -> np.ndarray:
    """Least-squares coefficient identification from input/output blocks.

    Minimizes ``sum |y - Psi(s, c) phi|^2`` through an SVD (rank-revealing);
    singular values below ``sigma_max / cond_cap`` are treated as a
    rank deficiency: with ``strict`` this raises, otherwise the minimal-norm
    solution on the retained subspace is returned.
    """
    ya = as_samples(y)
    R = build_regressor(spec, s, c)
    if R.shape[0] < R.shape[1]:
        raise IdentificationError(
            f"need at least {R.shape[1]} samples, got {R.shape[0]}", np.inf
        )
    u, sv, vh = np.linalg.svd(R, full_matrices=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if strict and cond > cond_cap:
        raise IdentificationError("regressor is rank-deficient", cond)
    keep = sv > sv[0] / cond_cap
    inv = np.zeros_like(sv)
    inv[keep] = 1.0 / sv[keep]
    return vh.conj().T @ (inv * (u.conj().T @ ya))


def synthesize_pa_bank(
    n_pas: int,
    seed: int,
    spec: BasisSpec = None,
    nominal: Sequence[complex] = NOMINAL_PA_COEFFS,
) -> list:
    """Synthetic PA bank: nominal coefficients, each perturbed per PA by a
    multiplicative (1 + delta) with delta real/imag parts uniform in +/-5%."""
    spec = spec or default_pa_spec()
    nominal = np.asarray(nominal, dtype=np.complex128)
    if nominal.size != len(spec):
        raise ModelError("nominal coefficients must align with the PA spec")
    gen = np.random.default_rng(np.random.PCG64(seed))
    bank = []
    for _ in range(n_pas):
        delta = gen.uniform(-0.05, 0.05, nominal.size) + 1j * gen.uniform(
            -0.05, 0.05, nominal.size
        )
        bank.append(PaModel(spec, nominal * (1.0 + delta)))
    return bank


def _complex_pairs(arr: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in arr]


def _from_pairs(pairs) -> np.ndarray:
    return np.array([complex(re, im) for re, im in pairs], dtype=np.complex128)


def save_pa_model(model: PaModel, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": "pa_model",
        "order_P": model.spec.order_p,
        "terms": [[t.p, t.v] for t in model.spec.terms],
        "coeffs": _complex_pairs(model.coeffs),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_pa_model(path) -> PaModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "pa_model":
        raise ModelError(f"{path}: not a pa_model document")
    if int(doc.get("version", -1)) != FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported document version {doc.get('version')}")
    spec = BasisSpec(tuple((p, v) for p, v in doc["terms"]), order_p=int(doc["order_P"]))
    return PaModel(spec, _from_pairs(doc["coeffs"]))
