"""Constrained quadratic minimization of the post-weighting coefficients.

The objective is the sum over swept angles of the time-averaged radiated
nonlinear power in the first-order model, a convex Hermitian quadratic in
the coefficient vector. The beam-direction constraint fixes the weighted
first-order term; by default it binds the time-averaged operator row (one
scalar multiplier, matching the closed form), optionally the whole row
space of the beam-direction operator ("stacked" mode, multiplier vector).
The closed-form KKT solution is verified in tests against an independent
null-space-elimination solver, which is also exposed for the CLI --verify
path.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .polymodel import FORMAT_VERSION, _complex_pairs
from .postweight import RadiationOperator

#: Condition cap for H + ridge*I; beyond this the solve refuses or auto-ridges.
CONDITION_CAP = 1e12


class SolverError(RuntimeError):
    """Quadratic solve failed (singular system or degenerate constraint)."""


class ProblemError(ValueError):
    """Assembled problem violates its structural invariants."""


@dataclass(frozen=True)
class QuadraticProblem:
    """Hermitian form, linear term, constant, and beam-direction constraint.

    ``t0``/``t0p`` hold the time-averaged constraint row and its all-ones
    value. In stacked mode ``c_rows``/``c_rhs`` hold an orthonormal basis of
    the beam-direction operator's row space and its all-ones image.
    """

    H: np.ndarray
    b: np.ndarray
    c0: float
    t0: np.ndarray
    t0p: complex
    c_rows: np.ndarray = None
    c_rhs: np.ndarray = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.complex128)
        n = H.shape[0]
        scale = float(np.linalg.norm(H, 2)) if n else 0.0
        if H.shape != (n, n):
            raise ProblemError("H must be square")
        if scale and np.max(np.abs(H - H.conj().T)) > 1e-12 * max(scale, 1.0):
            raise ProblemError("H must be Hermitian")
        H = 0.5 * (H + H.conj().T)
        eigs = np.linalg.eigvalsh(H)
        if eigs.size and eigs[0] < -1e-10 * max(scale, 1.0):
            raise ProblemError(f"H must be positive semidefinite (min eig {eigs[0]:.3e})")
        if not self.c0 >= 0:
            raise ProblemError("c0 must be nonnegative")
        object.__setattr__(self, "H", H)

    @property
    def n_gamma(self) -> int:
        return self.H.shape[0]

    @property
    def stacked(self) -> bool:
        return self.c_rows is not None


@dataclass(frozen=True)
class OptResult:
    """Optimal coefficients, multiplier, and solve diagnostics."""

    gamma_hat: np.ndarray
    eta_hat: object  # complex scalar, or multiplier vector in stacked mode
    objective_at_opt: float
    constraint_residual: float
    ridge_used: float
    condition_estimate: float


def assemble_problem(
    operators: Sequence[RadiationOperator],
    op0: RadiationOperator,
    stacked: bool = False,
) -> QuadraticProblem:
    """Accumulate the quadratic data over the swept angles.

    Expectations are empirical means over time samples; angle contributions
    add. The constraint data comes from the beam-direction operator.
    """
    if not operators:
        raise ProblemError("need at least one swept angle")
    n = op0.n_gamma
    n_samp = op0.n_samples
    H = np.zeros((n, n), dtype=np.complex128)
    b = np.zeros(n, dtype=np.complex128)
    c0 = 0.0
    for op in operators:
        if op.n_gamma != n or op.n_samples != n_samp:
            raise ProblemError("operators disagree in coefficient count or samples")
        H += op.T.conj().T @ op.T / op.n_samples
        b += op.T.conj().T @ op.z_res / op.n_samples
        c0 += float(np.vdot(op.z_res, op.z_res).real) / op.n_samples
    t0 = op0.T.mean(axis=0)
    t0p = complex(t0.sum())
    c_rows = c_rhs = None
    if stacked:
        _, sv, vh = np.linalg.svd(op0.T, full_matrices=False)
        rank = int(np.sum(sv > sv[0] * 1e-12)) if sv.size and sv[0] > 0 else 0
        if rank == 0:
            raise ProblemError("beam-direction operator is zero; no constraint rows")
        c_rows = vh[:rank]
        c_rhs = c_rows @ np.ones(n)
    return QuadraticProblem(H=H, b=b, c0=c0, t0=t0, t0p=t0p, c_rows=c_rows, c_rhs=c_rhs)


def evaluate_objective(p: QuadraticProblem, gamma) -> float:
    g = np.asarray(gamma, dtype=np.complex128)
    return float((g.conj() @ p.H @ g).real + 2.0 * (g.conj() @ p.b).real + p.c0)


def _constraint_data(p: QuadraticProblem):
    if p.stacked:
        return p.c_rows, p.c_rhs
    return p.t0[None, :], np.array([p.t0p])


def _constraint_residual(p: QuadraticProblem, gamma) -> float:
    C, d = _constraint_data(p)
    return float(np.max(np.abs(C @ gamma - d)))


def _auto_ridge_value(p: QuadraticProblem) -> float:
    return 1e-10 * float(np.trace(p.H).real) / p.n_gamma


def solve_kkt(
    p: QuadraticProblem,
    ridge: float = 0.0,
    *,
    auto_ridge: bool = True,
) -> OptResult:
    """Closed-form equality-constrained minimizer via the stationarity system.

    Solves ``H' gamma + b = eta^H-weighted constraint rows`` together with
    the constraint, with ``H' = H + ridge I``. A numerically singular ``H'``
    gets the automatic ridge (with a warning) when ``auto_ridge`` is set,
    otherwise the solve refuses and advises an explicit ridge.
    """
    eigs = np.linalg.eigvalsh(p.H)
    emax = float(eigs[-1]) if eigs.size else 0.0

    def condition_of(rdg: float) -> float:
        lo = eigs[0] + rdg
        return np.inf if lo <= 0 else (emax + rdg) / lo

    cond = condition_of(ridge)
    if cond > CONDITION_CAP:
        if not auto_ridge:
            raise SolverError(
                f"H is numerically singular (condition {cond:.3e}); pass a ridge"
            )
        ridge = ridge + _auto_ridge_value(p)
        cond = condition_of(ridge)
        warnings.warn(
            f"applying automatic ridge {ridge:.3e} to a singular quadratic form",
            RuntimeWarning,
            stacklevel=2,
        )
        if cond > CONDITION_CAP:
            raise SolverError(
                f"H stays numerically singular after auto-ridge (condition {cond:.3e})"
            )
    Hp = p.H + ridge * np.eye(p.n_gamma)
    C, d = _constraint_data(p)
    cnorm = float(np.linalg.norm(C))
    if cnorm < 1e6 * np.finfo(float).eps * max(1.0, np.sqrt(emax)):
        raise SolverError("degenerate constraint: beam-direction row is numerically zero")
    hi_b = np.linalg.solve(Hp, p.b)
    hi_c = np.linalg.solve(Hp, C.conj().T)
    gram = C @ hi_c
    try:
        eta = np.linalg.solve(gram, d + C @ hi_b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"constraint normal system is singular: {exc}") from exc
    gamma = hi_c @ eta - hi_b
    # stationarity of the Lagrangian must hold to roundoff
    stat = Hp @ gamma + p.b - C.conj().T @ eta
    scale = max(
        float(np.linalg.norm(Hp @ gamma)),
        float(np.linalg.norm(p.b)),
        float(np.linalg.norm(C.conj().T @ eta)),
        1e-300,
    )
    if float(np.linalg.norm(stat)) > 1e-10 * scale:
        raise SolverError(
            f"stationarity residual {np.linalg.norm(stat):.3e} exceeds 1e-10 of scale"
        )
    resid = _constraint_residual(p, gamma)
    if resid > 1e-9 * (1.0 + abs(p.t0p)):
        raise SolverError(f"constraint residual {resid:.3e} out of tolerance")
    eta_out = eta if p.stacked else complex(eta[0])
    return OptResult(
        gamma_hat=gamma,
        eta_hat=eta_out,
        objective_at_opt=evaluate_objective(p, gamma),
        constraint_residual=resid,
        ridge_used=float(ridge),
        condition_estimate=float(cond),
    )


def oracle_solve(p: QuadraticProblem, ridge: float = 0.0) -> np.ndarray:
    """Independent verifier: eliminate the constraint onto its null space and
    minimize the reduced unconstrained quadratic by least squares."""
    C, d = _constraint_data(p)
    u, sv, vh = np.linalg.svd(C, full_matrices=True)
    rank = int(np.sum(sv > (sv[0] * 1e-12 if sv.size and sv[0] > 0 else np.inf)))
    if rank == 0:
        raise SolverError("degenerate constraint: zero row")
    gamma_p = vh[:rank].conj().T @ ((u.conj().T @ d)[:rank] / sv[:rank])
    Z = vh[rank:].conj().T
    Hp = p.H + ridge * np.eye(p.n_gamma)
    if Z.shape[1] == 0:
        return gamma_p
    A = Z.conj().T @ Hp @ Z
    rhs = Z.conj().T @ (Hp @ gamma_p + p.b)
    uu, *_ = np.linalg.lstsq(A, -rhs, rcond=None)
    return gamma_p + Z @ uu


def save_opt_result(result: OptResult, path, label: str = "") -> None:
    eta = result.eta_hat
    eta_ser = (
        _complex_pairs(np.atleast_1d(np.asarray(eta, dtype=np.complex128)))
        if np.ndim(eta)
        else [complex(eta).real, complex(eta).imag]
    )
    doc = {
        "version": FORMAT_VERSION,
        "kind": "opt_result",
        "label": label,
        "gamma_hat": _complex_pairs(result.gamma_hat),
        "eta_hat": eta_ser,
        "objective_at_opt": result.objective_at_opt,
        "constraint_residual": result.constraint_residual,
        "ridge_used": result.ridge_used,
        "condition_estimate": result.condition_estimate,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
