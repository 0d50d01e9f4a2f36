"""Post-weighting layouts and the first-order nonlinear-radiation operator.

After DPD training, per-PA complex coefficients multiply the predistorter's
Q nonlinear outputs before distribution to the PAs. The fully-featured (FF)
layout gives every (output, PA) pair its own coefficient; the low-complexity
(LC) layout shrinks the coefficient count per output in a geometric sequence
``S*r^nu, S*r^(nu+1), ...`` (values below one clamp to one), sharing each
coefficient across a contiguous group of PAs. Nonlinear outputs are ranked
by increasing polynomial term (p, then v).

The radiation seen at an angle splits into the desired linear part, a term
linear in the post-weighting coefficients (the operator assembled here), and
a coefficient-independent residual measured from the exact simulation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from math import ceil, floor
from pathlib import Path

import numpy as np

from .arraysim import (
    ArrayModel,
    XtalkMode,
    beam_output,
    linear_beam_gain,
    simulate_pa_inputs,
    stack_subarray_blocks,
    steering_vector,
)
from .dpdtrain import TrainingResult
from .polymodel import FORMAT_VERSION, eval_basis


class LayoutError(ValueError):
    """Invalid post-weighting layout parameters."""


FF = "ff"
LC = "lc"


@dataclass(frozen=True)
class PwLayout:
    """Assignment of post-weighting coefficients to (output, PA) slots."""

    scheme: str
    S: int
    Q: int
    r: Fraction
    nu: int
    counts_per_output: tuple
    assignment: tuple  # assignment[q][l] -> compact coefficient index
    n_gamma: int
    n_adders: int
    n_rf: int
    m_split: int

    def compact_index(self, q: int, l: int) -> int:
        return self.assignment[q][l]


def _geometric_counts(S: int, Q: int, r: Fraction, nu: int):
    counts = []
    m_split = 0
    for q in range(Q):
        value = S * r ** (nu + q)
        if value >= 1:
            counts.append(int(floor(value)))
            m_split += 1
        else:
            counts.append(1)
    return counts, m_split


def build_layout(scheme: str, S: int, Q: int, r=None, nu: int = None) -> PwLayout:
    """Construct an FF or LC layout; FF is the r=1, nu=0 structure."""
    if S < 1 or Q < 1:
        raise LayoutError("S and Q must be >= 1")
    scheme = scheme.lower()
    if scheme == FF:
        if r is not None or nu is not None:
            raise LayoutError("FF takes no r/nu parameters")
        r, nu = Fraction(1), 0
    elif scheme == LC:
        if r is None or nu is None:
            raise LayoutError("LC requires r and nu")
        r = Fraction(r)
        if not (0 < r <= 1):
            raise LayoutError("LC ratio must satisfy 0 < r <= 1")
        if nu < 0:
            raise LayoutError("nu must be a nonnegative integer")
    else:
        raise LayoutError(f"unknown scheme {scheme!r}")

    counts, m_split = _geometric_counts(S, Q, r, nu)
    assignment = []
    offset = 0
    for q, n_q in enumerate(counts):
        groups = np.array_split(np.arange(S), n_q)
        row = np.empty(S, dtype=np.int64)
        for gi, grp in enumerate(groups):
            row[grp] = offset + gi
        assignment.append(tuple(int(i) for i in row))
        offset += n_q
    n_gamma = sum(counts)
    # one adder per product folded into the next-coarser partial sum, plus
    # the linear-branch adder of every RF chain
    n_adders = n_gamma + counts[0] - counts[-1]
    return PwLayout(
        scheme=scheme,
        S=S,
        Q=Q,
        r=r,
        nu=int(nu),
        counts_per_output=tuple(counts),
        assignment=tuple(assignment),
        n_gamma=n_gamma,
        n_adders=n_adders,
        n_rf=counts[0],
        m_split=m_split,
    )


def n_gamma_closed_form(S: int, Q: int, r, nu: int):
    """Coefficient count from the two-case geometric-series formula."""
    r = Fraction(r)
    if r == 1:
        return S * Q
    if S * r ** (Q + nu - 1) >= 1:
        value = S * r**nu * (1 - r**Q) / (1 - r)
    else:
        m = 0
        for q in range(Q, -1, -1):
            if q == 0 or S * r ** (q + nu - 1) >= 1:
                m = q
                break
        value = S * r**nu * (1 - r**m) / (1 - r) + (Q - m)
    if value.denominator != 1:
        raise LayoutError(f"non-integral coefficient count {value}")
    return int(value)


def n_adders_closed_form(S: int, Q: int, r, nu: int):
    """Adder count: coefficients plus first-output coefficients minus the
    last-output coefficients (shared partial sums)."""
    r = Fraction(r)
    first = S * r**nu
    first_count = int(floor(first)) if first >= 1 else 1
    return n_gamma_closed_form(S, Q, r, nu) + first_count - ceil(S * r ** (nu + Q - 1))


def expand_gamma(layout: PwLayout, compact) -> np.ndarray:
    """Full per-(output, PA) coefficient vector, output-major, PA fast."""
    g = np.asarray(compact, dtype=np.complex128)
    if g.size != layout.n_gamma:
        raise LayoutError(
            f"compact vector has {g.size} entries, layout needs {layout.n_gamma}"
        )
    full = np.empty(layout.S * layout.Q, dtype=np.complex128)
    for q in range(layout.Q):
        for l in range(layout.S):
            full[q * layout.S + l] = g[layout.assignment[q][l]]
    return full


def duplication_matrix(layout: PwLayout) -> np.ndarray:
    """0/1 matrix D with expand_gamma(g) = D @ g; one 1 per row."""
    d = np.zeros((layout.S * layout.Q, layout.n_gamma))
    for q in range(layout.Q):
        for l in range(layout.S):
            d[q * layout.S + l, layout.assignment[q][l]] = 1.0
    return d


def nonlinear_output_order(spec) -> tuple:
    """Indices of the spec's nonlinear terms, ranked ascending (p, then v)."""
    nl = [i for i, t in enumerate(spec.terms) if (t.p, t.v) != (0, 0)]
    return tuple(sorted(nl, key=lambda i: (spec.terms[i].p, spec.terms[i].v)))


@dataclass(frozen=True)
class RadiationOperator:
    """First-order radiation model at one angle: z_nl ~ T gamma + z_res."""

    T: np.ndarray
    z_res: np.ndarray
    angle: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.T)) and np.all(np.isfinite(self.z_res))):
            raise LayoutError("operator entries must be finite")
        if self.T.shape[0] != self.z_res.size:
            raise LayoutError("operator and residual sample counts differ")

    @property
    def n_gamma(self) -> int:
        return self.T.shape[1]

    @property
    def n_samples(self) -> int:
        return self.T.shape[0]


def weighted_output_columns(dpd: TrainingResult, s_k) -> np.ndarray:
    """N x Q matrix of the DPD's nonlinear outputs (basis times coefficient),
    columns in dominance order."""
    order = nonlinear_output_order(dpd.spec)
    s = np.asarray(s_k, dtype=np.complex128)
    cols = [
        eval_basis(dpd.spec.terms[i], s, dpd.c_k) * dpd.phi_k[i] for i in order
    ]
    return np.stack(cols, axis=1)


def dpd_chain_pa_inputs(model: ArrayModel, dpds, s_all, gammas=None, layout=None):
    """Per-PA predistorted signals for all subarrays (K*S x N).

    With ``gammas`` (one compact vector per subarray, or None entries) the
    PA of index (k, l) receives the linear DPD output plus the
    post-weighted nonlinear outputs; a None gamma means all-ones weighting,
    which reduces to the plain DPD output.
    """
    s = stack_subarray_blocks(model, s_all)
    K, S = model.geometry.K, model.geometry.S
    x = np.empty((K * S, s.shape[1]), dtype=np.complex128)
    for k in range(K):
        dpd = dpds[k]
        cols = weighted_output_columns(dpd, s[k])
        lin = dpd.linear_coeff * s[k]
        gamma_k = None if gammas is None else gammas[k]
        if gamma_k is None:
            x[k * S : (k + 1) * S] = lin + cols.sum(axis=1)
        else:
            if layout is None:
                raise LayoutError("gamma weighting requires a layout")
            full = expand_gamma(layout, gamma_k).reshape(layout.Q, S)
            for l in range(S):
                x[k * S + l] = lin + cols @ full[:, l]
    return x


def simulate_dpd_chain(model: ArrayModel, dpds, s_all) -> np.ndarray:
    """Exact PA-bank outputs with every subarray transmitting its trained
    DPD output (the gamma = ones operating point)."""
    x = dpd_chain_pa_inputs(model, dpds, s_all)
    return simulate_pa_inputs(model, x, XtalkMode.FIXED_POINT_EXACT)


def nonlinear_radiation(model: ArrayModel, y: np.ndarray, k: int, angle: float,
                        linear_coeff: complex, s_k) -> np.ndarray:
    """Beam output minus the desired linear term at ``angle``."""
    g = linear_beam_gain(model, k, angle)
    return beam_output(model, y, k, angle) - g * linear_coeff * np.asarray(s_k)


def assemble_radiation_operator(
    model: ArrayModel,
    k: int,
    layout: PwLayout,
    dpds,
    s_all,
    angle: float,
    y_dpd: np.ndarray = None,
) -> RadiationOperator:
    """Build T (N x n_gamma) and the coefficient-independent residual.

    The full-layout operator entry (n; q, l) is the per-PA linear beam gain
    times the q-th weighted DPD output sample; compact layouts right-multiply
    by the duplication matrix. The residual is the exactly simulated
    nonlinear radiation of the all-ones chain minus T applied to all-ones.
    """
    dpd = dpds[k]
    if layout.Q != dpd.spec.n_nonlinear or layout.S != model.geometry.S:
        raise LayoutError("layout does not match the DPD spec / geometry")
    s = stack_subarray_blocks(model, s_all)
    if y_dpd is None:
        y_dpd = simulate_dpd_chain(model, dpds, s_all)
    sl = model.geometry.subarray_slice(k)
    h = steering_vector(model.geometry, k, angle)
    gain_row = h * model.weights.w[sl] * model.linear_gains()[sl]
    cols = weighted_output_columns(dpd, s[k])
    t_full = (cols[:, :, None] * gain_row[None, None, :]).reshape(
        cols.shape[0], layout.Q * layout.S
    )
    z_nl = nonlinear_radiation(model, y_dpd, k, angle, dpd.linear_coeff, s[k])
    z_res = z_nl - t_full.sum(axis=1)
    t = t_full @ duplication_matrix(layout)
    return RadiationOperator(T=t, z_res=z_res, angle=float(angle))


def save_layout(layout: PwLayout, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": "pw_layout",
        "scheme": layout.scheme,
        "S": layout.S,
        "Q": layout.Q,
        "r": str(layout.r),
        "nu": layout.nu,
        "counts_per_output": list(layout.counts_per_output),
        "assignment": [list(row) for row in layout.assignment],
        "n_gamma": layout.n_gamma,
        "n_adders": layout.n_adders,
        "n_rf": layout.n_rf,
        "m_split": layout.m_split,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_layout(path) -> PwLayout:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "pw_layout":
        raise LayoutError(f"{path}: not a pw_layout document")
    if int(doc.get("version", -1)) != FORMAT_VERSION:
        raise LayoutError(f"{path}: unsupported document version")
    if doc["scheme"] == FF:
        rebuilt = build_layout(FF, doc["S"], doc["Q"])
    else:
        rebuilt = build_layout(LC, doc["S"], doc["Q"], Fraction(doc["r"]), doc["nu"])
    stored = (doc["counts_per_output"], [list(r) for r in doc["assignment"]])
    if stored != (list(rebuilt.counts_per_output), [list(r) for r in rebuilt.assignment]):
        raise LayoutError(f"{path}: stored assignment disagrees with parameters")
    return rebuilt
