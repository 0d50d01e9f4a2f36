"""Ground-truth forward simulation of PA subarrays under crosstalk.

The array is a uniform line of K*S PAs (K contiguous subarrays of S). Each
PA amplifies its beam-weighted drive together with a crosstalk signal that
is a linear combination of all other PA outputs. Two solvers are provided
for the implicit crosstalk relation: the linear approximation that keeps
only the PAs' leading terms, and the exact fixed point used as ground truth.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .polymodel import PaModel
from .signalgen import as_samples


class ArrayModelError(ValueError):
    """Invalid array/crosstalk construction."""


class SimulationError(RuntimeError):
    """Fixed-point simulation failed to converge; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class XtalkMode(enum.Enum):
    """How the per-PA crosstalk signal is obtained during simulation."""

    LINEARIZED = "linearized"
    FIXED_POINT_EXACT = "fixed_point_exact"


#: Fixed-point stopping rule: max |c_next - c| below this, or error at the cap.
FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 100


@dataclass(frozen=True)
class ArrayGeometry:
    K: int
    S: int
    spacing: float = 0.5

    def __post_init__(self):
        if self.K < 1 or self.S < 1:
            raise ArrayModelError("K and S must be >= 1")
        if not (self.spacing > 0):
            raise ArrayModelError("element spacing must be positive")

    @property
    def n_pas(self) -> int:
        return self.K * self.S

    def subarray_slice(self, k: int) -> slice:
        if not 0 <= k < self.K:
            raise ArrayModelError(f"subarray index {k} out of range")
        return slice(k * self.S, (k + 1) * self.S)


@dataclass(frozen=True)
class BeamWeights:
    """Unit-modulus analog beamforming weights, grouped per subarray."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.complex128).copy()
        if w.ndim != 1:
            raise ArrayModelError("weights must be a vector")
        if np.max(np.abs(np.abs(w) - 1.0)) > 1e-12:
            raise ArrayModelError("beam weights must be unit modulus")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @classmethod
    def steered(cls, geometry: ArrayGeometry, angle: float) -> "BeamWeights":
        """Phase-conjugate weights forming a beam toward ``angle``."""
        g = np.arange(geometry.n_pas)
        return cls(np.exp(-2j * np.pi * geometry.spacing * g * np.sin(angle)))


def steering_vector(geometry: ArrayGeometry, k: int, angle: float) -> np.ndarray:
    """Steering elements of subarray k at ``angle`` (radians off broadside).

    The phase ramp uses the global element index along the full K*S line, so
    subarrays are spatially contiguous.
    """
    if abs(angle) > np.pi / 2:
        raise ArrayModelError("steering angle must satisfy |angle| <= pi/2")
    sl = geometry.subarray_slice(k)
    g = np.arange(sl.start, sl.stop)
    return np.exp(2j * np.pi * geometry.spacing * g * np.sin(angle))


@dataclass(frozen=True)
class CrosstalkModel:
    """Coupling network: raw coefficients plus derived linearization data.

    ``lambda_prime`` holds the raw coupling of PA outputs into PA crosstalk
    inputs (zero diagonal). ``alpha``/``lambda_sub`` are the best rank-one
    factorization of its subarray blocks. ``a0``/``a1``/``lambda_eff`` depend
    on the PA bank's leading coefficients and are derived when the model is
    attached to an :class:`ArrayModel`.
    """

    lambda_prime: np.ndarray
    alpha: np.ndarray
    lambda_sub: np.ndarray
    a0: np.ndarray = None
    a1: np.ndarray = None
    lambda_eff: np.ndarray = None

    def __post_init__(self):
        lp = np.asarray(self.lambda_prime, dtype=np.complex128)
        if lp.ndim != 2 or lp.shape[0] != lp.shape[1]:
            raise ArrayModelError("lambda_prime must be square")
        if np.max(np.abs(np.diag(lp))) > 0:
            raise ArrayModelError("lambda_prime must have a zero diagonal (no self-coupling)")
        object.__setattr__(self, "lambda_prime", lp)


def rank_one_factorization(lambda_prime: np.ndarray, K: int, S: int):
    """Best least-squares factorization lambda'[kl, ir] ~ alpha[l] * lam[k, i].

    Exact column-block averaging reduces the problem to a rank-one fit of an
    S x K^2 matrix, solved by its dominant singular pair. ``alpha`` is
    normalized so max |alpha_l| = 1 with that entry real positive.
    """
    m = lambda_prime.reshape(K, S, K, S).mean(axis=3)  # (k, l, i)
    m = np.moveaxis(m, 1, 0).reshape(S, K * K)  # rows l, cols (k, i)
    if not np.any(m):
        return np.zeros(S, dtype=np.complex128), np.zeros((K, K), dtype=np.complex128)
    u, sv, vh = np.linalg.svd(m, full_matrices=False)
    alpha = sv[0] * u[:, 0]
    lam = vh[0]  # row of the rank-one outer product alpha * lam
    pivot = alpha[np.argmax(np.abs(alpha))]
    return alpha / pivot, (lam * pivot).reshape(K, K)


def build_crosstalk(
    geometry: ArrayGeometry,
    adjacent_db: float,
    decay: str = "inverse_square",
    phase_rule: str = "alternating",
    seed: int = None,
) -> CrosstalkModel:
    """Distance-law coupling over the global element line.

    Magnitude between elements d apart is ``10**(adjacent_db/20) / d**2``;
    the phase is ``exp(-i*pi*d)`` (``alternating``, purely real), ``unity``,
    or seeded-uniform ``random``. ``adjacent_db`` of ``None``/-inf disables
    coupling entirely.
    """
    if decay != "inverse_square":
        raise ArrayModelError(f"unsupported decay law {decay!r}")
    n = geometry.n_pas
    if adjacent_db is None or adjacent_db == -np.inf:
        zero = np.zeros((n, n), dtype=np.complex128)
        return CrosstalkModel(zero, np.zeros(geometry.S, dtype=np.complex128),
                              np.zeros((geometry.K, geometry.K), dtype=np.complex128))
    if not adjacent_db < 0:
        raise ArrayModelError("adjacent coupling must be below 0 dB")
    g = np.arange(n)
    d = np.abs(g[:, None] - g[None, :]).astype(np.float64)
    with np.errstate(divide="ignore"):
        mag = 10.0 ** (adjacent_db / 20.0) / d**2
    np.fill_diagonal(mag, 0.0)
    if phase_rule == "alternating":
        phase = np.exp(-1j * np.pi * d)
    elif phase_rule == "unity":
        phase = np.ones_like(d)
    elif phase_rule == "random":
        if seed is None:
            raise ArrayModelError("phase_rule='random' requires a seed")
        gen = np.random.default_rng(np.random.PCG64(seed))
        theta = gen.uniform(0.0, 2 * np.pi, (n, n))
        theta = np.triu(theta, 1)
        theta = theta + theta.T  # reciprocal coupling phases
        phase = np.exp(1j * theta)
    else:
        raise ArrayModelError(f"unknown phase rule {phase_rule!r}")
    lp = mag * phase
    np.fill_diagonal(lp, 0.0)
    alpha, lam = rank_one_factorization(lp, geometry.K, geometry.S)
    return CrosstalkModel(lp, alpha, lam)


def crosstalk_from_lambda_prime(geometry: ArrayGeometry, lambda_prime) -> CrosstalkModel:
    """Wrap an explicit coupling matrix (used for constructed ground truths)."""
    lp = np.asarray(lambda_prime, dtype=np.complex128)
    if lp.shape != (geometry.n_pas, geometry.n_pas):
        raise ArrayModelError("lambda_prime shape must be (K*S, K*S)")
    alpha, lam = rank_one_factorization(lp, geometry.K, geometry.S)
    return CrosstalkModel(lp, alpha, lam)


@dataclass(frozen=True)
class ArrayModel:
    """Immutable array under test: geometry, weights, PA bank, coupling."""

    geometry: ArrayGeometry
    weights: BeamWeights
    pas: tuple
    xtalk: CrosstalkModel

    def __post_init__(self):
        pas = tuple(self.pas)
        if len(pas) != self.geometry.n_pas:
            raise ArrayModelError("need one PaModel per PA")
        spec = pas[0].spec
        if any(pa.spec != spec for pa in pas):
            raise ArrayModelError("all PAs must share one basis spec")
        if self.weights.w.size != self.geometry.n_pas:
            raise ArrayModelError("weights length must equal K*S")
        object.__setattr__(self, "pas", pas)

        lp = self.xtalk.lambda_prime
        if lp.shape != (self.geometry.n_pas, self.geometry.n_pas):
            raise ArrayModelError("crosstalk matrix shape must be (K*S, K*S)")
        lead0 = np.array([pa.leading_coeff(0) for pa in pas])
        lead1 = np.array([pa.leading_coeff(1) for pa in pas])
        a0 = lp * lead0[None, :]
        a1 = lp * lead1[None, :]
        radius = float(np.max(np.abs(np.linalg.eigvals(a1)))) if np.any(a1) else 0.0
        if radius >= 1.0:
            raise ArrayModelError(
                f"crosstalk feedback is unstable: spectral radius of A1 is {radius:.3f}"
            )
        lambda_eff = np.linalg.solve(np.eye(lp.shape[0]) - a1, a0)
        object.__setattr__(
            self, "xtalk", replace(self.xtalk, a0=a0, a1=a1, lambda_eff=lambda_eff)
        )

        terms = np.array([[t.p, t.v] for t in spec.terms], dtype=np.int32)
        object.__setattr__(self, "_terms_p", np.ascontiguousarray(terms[:, 0]))
        object.__setattr__(self, "_terms_v", np.ascontiguousarray(terms[:, 1]))
        object.__setattr__(
            self, "_coeff_matrix", np.ascontiguousarray([pa.coeffs for pa in pas])
        )

    @property
    def pa_spec(self):
        return self.pas[0].spec

    def linear_gains(self) -> np.ndarray:
        """Per-PA linear coefficients phi_{kl0}^0."""
        return self._coeff_matrix[:, 0].copy()

    def pa_bank_eval(self, u: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Evaluate every PA on its drive and crosstalk rows (K*S x N)."""
        return _kernels.bank_eval(self._terms_p, self._terms_v, self._coeff_matrix, u, c)


def stack_subarray_blocks(model: ArrayModel, x_subarrays) -> np.ndarray:
    """Assemble per-subarray blocks into a (K, N) array, validating lengths."""
    rows = [as_samples(x) for x in x_subarrays]
    if len(rows) != model.geometry.K:
        raise ArrayModelError(f"expected {model.geometry.K} subarray blocks")
    n = rows[0].size
    if any(r.size != n for r in rows):
        raise ArrayModelError("subarray blocks must share one length")
    return np.vstack(rows)


def _expand_to_pas(model: ArrayModel, x_subarrays) -> np.ndarray:
    x = stack_subarray_blocks(model, x_subarrays)
    return np.repeat(x, model.geometry.S, axis=0)


def solve_crosstalk_linearized_per_pa(model: ArrayModel, x_per_pa: np.ndarray) -> np.ndarray:
    """Linearized crosstalk for per-PA input signals (K*S x N)."""
    xt = model.xtalk
    u = model.weights.w[:, None] * x_per_pa
    rhs = xt.a0 @ u
    c = np.linalg.solve(np.eye(rhs.shape[0]) - xt.a1, rhs)
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    if scale > 0:
        resid = float(np.max(np.abs(c - (rhs + xt.a1 @ c))))
        if resid >= FIXED_POINT_TOL * scale:
            raise SimulationError("linearized crosstalk solve lost accuracy", resid)
    return c


def solve_crosstalk_linearized(model: ArrayModel, x_subarrays) -> np.ndarray:
    """Per-PA crosstalk from the linear relation c = (I - A1)^-1 A0 W_D x."""
    return solve_crosstalk_linearized_per_pa(model, _expand_to_pas(model, x_subarrays))


def _fixed_point(model: ArrayModel, u: np.ndarray, c_init: np.ndarray):
    lp = model.xtalk.lambda_prime
    c = c_init
    resid = 0.0
    for it in range(1, FIXED_POINT_MAX_ITER + 1):
        y = model.pa_bank_eval(u, c)
        c_next = lp @ y
        resid = float(np.max(np.abs(c_next - c)))
        c = c_next
        if not np.isfinite(resid):
            raise SimulationError("crosstalk fixed point diverged", resid)
        if resid < FIXED_POINT_TOL:
            return c, it
    raise SimulationError("crosstalk fixed point did not converge", resid)


def simulate_pa_inputs(
    model: ArrayModel,
    x_per_pa: np.ndarray,
    mode: XtalkMode = XtalkMode.FIXED_POINT_EXACT,
    return_state: bool = False,
):
    """Simulate the PA bank for per-PA input signals (K*S x N).

    Returns the PA outputs Y (K*S x N); with ``return_state`` also the
    crosstalk block and the number of fixed-point iterations (0 when
    linearized).
    """
    x_per_pa = np.asarray(x_per_pa, dtype=np.complex128)
    if x_per_pa.shape[0] != model.geometry.n_pas:
        raise ArrayModelError("need one input row per PA")
    u = model.weights.w[:, None] * x_per_pa
    c = solve_crosstalk_linearized_per_pa(model, x_per_pa)
    iterations = 0
    if mode is XtalkMode.FIXED_POINT_EXACT and np.any(model.xtalk.lambda_prime):
        c, iterations = _fixed_point(model, u, c)
    y = model.pa_bank_eval(u, c)
    if return_state:
        return y, c, iterations
    return y


def simulate_subarrays(
    model: ArrayModel,
    x_subarrays,
    mode: XtalkMode = XtalkMode.FIXED_POINT_EXACT,
    return_state: bool = False,
):
    """Simulate all PAs fed per-subarray signals (every PA of subarray k
    receives ``w_kl * x_k`` plus its crosstalk)."""
    return simulate_pa_inputs(model, _expand_to_pas(model, x_subarrays), mode, return_state)


def beam_output(model: ArrayModel, y: np.ndarray, k: int, angle: float) -> np.ndarray:
    """Beam-combined far-field signal of subarray k at ``angle``."""
    h = steering_vector(model.geometry, k, angle)
    return h @ y[model.geometry.subarray_slice(k)]


def linear_beam_gain(model: ArrayModel, k: int, angle: float) -> complex:
    """Aggregate linear beam gain sum_l h_kl w_kl phi_kl0^0 at ``angle``."""
    sl = model.geometry.subarray_slice(k)
    h = steering_vector(model.geometry, k, angle)
    return complex(np.sum(h * model.weights.w[sl] * model.linear_gains()[sl]))
