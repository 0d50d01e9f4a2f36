"""Crosstalk-coefficient estimation and iterative beam-oriented DPD training.

Per subarray the training is two-stage. First the effective per-subarray
crosstalk weights ``lambda_k`` are estimated from one beam measurement with
undistorted transmit signals, by splitting the linear-in-lambda beam model
into real and imaginary parts and solving the stacked system. Then the
predistorter coefficients are identified iteratively: each pass measures the
beam output of the current predistorted signal, fits a post-inverse from the
gain-normalized measurement (and the crosstalk-compensation signal) back to
the predistorter output, and regenerates the predistorted signal.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arraysim import (
    ArrayModel,
    XtalkMode,
    beam_output,
    linear_beam_gain,
    simulate_subarrays,
    stack_subarray_blocks,
)
from .polymodel import BasisSpec, FORMAT_VERSION, ls_identify, eval_poly, _complex_pairs, _from_pairs

_DIVERGENCE_PATIENCE = 5

_op_counts = None


@contextmanager
def count_operations():
    """Collect dominant multiply counts of the training inner steps."""
    global _op_counts
    prev = _op_counts
    _op_counts = {}
    try:
        yield _op_counts
    finally:
        _op_counts = prev


def _record_ops(key: str, n: int) -> None:
    if _op_counts is not None:
        _op_counts[key] = _op_counts.get(key, 0) + int(n)


class EstimationError(RuntimeError):
    """Crosstalk-coefficient estimation failed."""


class TrainingError(RuntimeError):
    """DPD training diverged; carries the relative-change trace."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class LambdaEstimate:
    """Estimated per-subarray crosstalk weights and the stacked LS residual."""

    lambda_k: np.ndarray
    residual: float

    def __post_init__(self):
        lam = np.asarray(self.lambda_k, dtype=np.complex128)
        if not np.all(np.isfinite(lam)) or not (self.residual >= 0):
            raise EstimationError("lambda estimate must be finite with residual >= 0")
        object.__setattr__(self, "lambda_k", lam)


@dataclass(frozen=True)
class TrainingResult:
    """Converged (or capped) DPD identification output for one subarray."""

    subarray: int
    angle: float
    spec: BasisSpec
    phi_k: np.ndarray
    c_k: np.ndarray
    lambda_k: np.ndarray
    g0: complex
    iterations: int
    phi_trace: tuple
    converged: bool

    @property
    def linear_coeff(self) -> complex:
        return complex(self.phi_k[0])


def compute_c_k(x_all, weights, geometry, lambda_k) -> np.ndarray:
    """Crosstalk-compensation signal: the lambda-weighted sum over subarrays
    of their beam-weighted signal sums, per sample."""
    x = np.asarray(x_all, dtype=np.complex128)
    lam = np.asarray(lambda_k, dtype=np.complex128)
    K, S = geometry.K, geometry.S
    if x.shape[0] != K or lam.size != K:
        raise EstimationError("x_all and lambda_k must have one entry per subarray")
    wsum = weights.w.reshape(K, S).sum(axis=1)
    _record_ops("c_k_mults", x.shape[1] * (K * S + K))
    return (lam * wsum) @ x


def _partial_poly_by_v(model: ArrayModel, sl: slice, u: np.ndarray):
    """Per-PA drive-only partial sums sum_p phi_klp^v psi_p^v(u) for v=0,1,2."""
    coeffs = model._coeff_matrix[sl]
    a2 = (u * np.conj(u)).real
    acc = {v: np.zeros_like(u) for v in (0, 1, 2)}
    for i, term in enumerate(model.pa_spec.terms):
        if term.v == 0:
            basis = u * a2**term.p
        elif term.v == 1:
            basis = a2**term.p
        else:
            basis = u * u * a2 ** (term.p - 1)
        acc[term.v] += coeffs[:, i : i + 1] * basis
    return acc


def assemble_g_terms(model: ArrayModel, k: int, angle: float, x_all):
    """Beam-measurement model pieces: z = g0 + G1 lambda + G2 conj(lambda).

    ``g0`` collects the crosstalk-independent PA responses; the rows of
    ``G1``/``G2`` scale the per-subarray weighted signal sums (conjugated for
    ``G2``) by the beam-combined crosstalk sensitivities.
    """
    from .arraysim import steering_vector

    x = stack_subarray_blocks(model, x_all)
    geometry = model.geometry
    sl = geometry.subarray_slice(k)
    h = steering_vector(geometry, k, angle)
    u = model.weights.w[sl, None] * x[k][None, :]
    acc = _partial_poly_by_v(model, sl, u)
    g0 = h @ acc[0]
    u1 = h @ acc[1]
    u2 = h @ acc[2]
    wsum = model.weights.w.reshape(geometry.K, geometry.S).sum(axis=1)
    sig = x.T * wsum[None, :]  # row n holds sum_l w_il x_i[n] per subarray
    return g0, u1[:, None] * sig, u2[:, None] * np.conj(sig)


def estimate_lambda(
    model: ArrayModel,
    k: int,
    angle: float,
    s_all,
    *,
    cond_cap: float = 1e10,
    strict: bool = False,
) -> LambdaEstimate:
    """Estimate lambda_k from one beam measurement with x set to the messages.

    The measured output comes from the exact fixed-point simulation; the
    stacked real/imaginary system is solved by pseudo-inverse.
    """
    y = simulate_subarrays(model, s_all, XtalkMode.FIXED_POINT_EXACT)
    z = beam_output(model, y, k, angle)
    g0, g1, g2 = assemble_g_terms(model, k, angle, s_all)
    stacked = np.block(
        [
            [np.real(g1 + g2), np.imag(-g1 + g2)],
            [np.imag(g1 + g2), np.real(g1 - g2)],
        ]
    )
    rhs = np.concatenate([np.real(z - g0), np.imag(z - g0)])
    sv = np.linalg.svd(stacked, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if strict and cond > cond_cap:
        raise EstimationError(
            f"stacked estimation system is rank-deficient (condition {cond:.3e})"
        )
    sol, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
    K = model.geometry.K
    lam = sol[:K] + 1j * sol[K:]
    residual = float(np.linalg.norm(stacked @ sol - rhs))
    return LambdaEstimate(lam, residual)


@dataclass(frozen=True)
class TrainOptions:
    tol: float = 1e-6
    max_iter: int = 50


def train_bo_dpd(
    model: ArrayModel,
    k: int,
    angle: float,
    s_all,
    spec: BasisSpec,
    lambda_est: LambdaEstimate,
    opts: TrainOptions = TrainOptions(),
) -> TrainingResult:
    """Iterative post-inverse identification of the DPD coefficients.

    While subarray ``k`` trains, the other subarrays transmit their raw
    messages. Each iteration measures the exact beam output at the training
    angle, divides by the aggregate linear beam gain, fits the DPD basis from
    (normalized measurement, compensation signal) back to the current
    predistorted signal, and regenerates that signal. Convergence is the
    relative change of the coefficient vector.
    """
    s = stack_subarray_blocks(model, s_all)
    geometry = model.geometry
    g0 = linear_beam_gain(model, k, angle)
    lam = lambda_est.lambda_k
    phi = np.zeros(len(spec), dtype=np.complex128)
    phi[0] = 1.0
    x_all = s.copy()
    c_k = compute_c_k(x_all, model.weights, geometry, lam)
    trace = []
    grow_streak = 0
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        y = simulate_subarrays(model, x_all, XtalkMode.FIXED_POINT_EXACT)
        z = beam_output(model, y, k, angle)
        phi_new = ls_identify(spec, z / g0, c_k, x_all[k])
        _record_ops("post_inverse_mults", z.size * len(spec) ** 2)
        rel = float(np.linalg.norm(phi_new - phi) / np.linalg.norm(phi))
        trace.append(rel)
        phi = phi_new
        x_all[k] = eval_poly(spec, phi, s[k], c_k)
        c_k = compute_c_k(x_all, model.weights, geometry, lam)
        if not np.all(np.isfinite(x_all[k])):
            raise TrainingError(
                f"training diverged at iteration {iterations}: non-finite DPD output",
                trace,
            )
        if len(trace) >= 2 and trace[-1] > trace[-2]:
            grow_streak += 1
            if grow_streak >= _DIVERGENCE_PATIENCE:
                raise TrainingError(
                    f"training diverged: relative change grew for "
                    f"{_DIVERGENCE_PATIENCE} consecutive iterations",
                    trace,
                )
        else:
            grow_streak = 0
        if rel < opts.tol:
            converged = True
            break
    return TrainingResult(
        subarray=k,
        angle=angle,
        spec=spec,
        phi_k=phi,
        c_k=c_k,
        lambda_k=lam.copy(),
        g0=g0,
        iterations=iterations if opts.max_iter > 0 else 0,
        phi_trace=tuple(trace),
        converged=converged,
    )


def training_cost(Q: int, K: int, S: int):
    """Documented per-iteration cost model of the dominant matrix operations:
    the post-inverse fit and the compensation-signal products."""
    return (Q + 1) ** 2, K * K * S


def save_training_result(result: TrainingResult, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": "training_result",
        "subarray": result.subarray,
        "angle": result.angle,
        "order_P": result.spec.order_p,
        "terms": [[t.p, t.v] for t in result.spec.terms],
        "phi_k": _complex_pairs(result.phi_k),
        "lambda_k": _complex_pairs(result.lambda_k),
        "g0": [result.g0.real, result.g0.imag],
        "iterations": result.iterations,
        "trace": [float(r) for r in result.phi_trace],
        "converged": bool(result.converged),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_training_summary(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "training_result":
        raise ValueError(f"{path}: not a training_result document")
    if int(doc.get("version", -1)) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported document version")
    doc["phi_k"] = _from_pairs(doc["phi_k"])
    doc["lambda_k"] = _from_pairs(doc["lambda_k"])
    return doc
