"""Linearization-quality metrics: radiation sweeps, NMSE, and average ACPR.

Sweeps simulate the true hardware chain (post-weighted per-PA signals into
the exact crosstalk fixed point) and report, per angle, the power of the
beam output minus its desired linear term, in dB relative to the subarray's
average message power (transmit power normalized to 0 dB). The first-order
operator model is what the optimizer sees; the sweep is what the hardware
would radiate, so neglected higher-order post-weighting effects show up
here.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sp_signal

from .arraysim import ArrayModel, XtalkMode, simulate_pa_inputs, stack_subarray_blocks
from .postweight import PwLayout, dpd_chain_pa_inputs, nonlinear_radiation
from .signalgen import FLOOR_DB, SignalError, as_samples

#: Spectral-estimation parameters, fixed for reproducibility.
ACPR_SEGMENT = 512
ACPR_OVERLAP = 0.5
ACPR_WINDOW = "hann"

DNR = "dnr"
DPD_ONLY = "dpd"


@dataclass(frozen=True)
class SweepResult:
    """Per-angle radiated nonlinear power for one or more scheme labels."""

    angles: np.ndarray
    labels: tuple
    power_db: np.ndarray  # shape (n_labels, n_angles)

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64)
        power = np.atleast_2d(np.asarray(self.power_db, dtype=np.float64))
        if power.shape != (len(self.labels), angles.size):
            raise ValueError("power grid must be (n_labels, n_angles)")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "power_db", power)
        object.__setattr__(self, "labels", tuple(self.labels))

    def column(self, label: str) -> np.ndarray:
        return self.power_db[self.labels.index(label)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("angle_rad," + ",".join(f"{lab}_db" for lab in self.labels) + "\n")
        for j, ang in enumerate(self.angles):
            row = ",".join(f"{self.power_db[i, j]!r}" for i in range(len(self.labels)))
            buf.write(f"{ang!r},{row}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class AcprResult:
    """Main-to-adjacent channel power ratios (dB, larger is cleaner)."""

    lower_db: float
    upper_db: float
    average_db: float
    channel_bw: float
    guard: float

    def __post_init__(self):
        if abs(self.average_db - 0.5 * (self.lower_db + self.upper_db)) > 1e-9:
            raise ValueError("average must be the mean of the two sides")

    def to_csv(self) -> str:
        return (
            "lower_db,upper_db,average_db\n"
            f"{self.lower_db!r},{self.upper_db!r},{self.average_db!r}\n"
        )


def _chain_pa_inputs(model, scheme, dpds, s_all, layout, gammas):
    if scheme == DNR:
        s = stack_subarray_blocks(model, s_all)
        return np.repeat(s, model.geometry.S, axis=0)
    if dpds is None:
        raise ValueError(f"scheme {scheme!r} needs trained DPD results")
    if scheme == DPD_ONLY:
        return dpd_chain_pa_inputs(model, dpds, s_all)
    return dpd_chain_pa_inputs(model, dpds, s_all, gammas=gammas, layout=layout)


def radiation_sweep(
    model: ArrayModel,
    k: int,
    s_all,
    angles: Sequence[float],
    *,
    scheme: str = "pw",
    dpds=None,
    layout: PwLayout = None,
    gammas=None,
    xtalk_mode: XtalkMode = XtalkMode.FIXED_POINT_EXACT,
) -> np.ndarray:
    """Radiated nonlinear power of subarray k across ``angles`` (dB).

    Every subarray transmits its scheme signal: the raw message (``dnr``),
    its trained DPD output (``dpd``), or the post-weighted chain (``pw``
    with per-subarray compact gammas; a None gamma keeps that subarray at
    all-ones, i.e. plain DPD).
    """
    x = _chain_pa_inputs(model, scheme, dpds, s_all, layout, gammas)
    y = simulate_pa_inputs(model, x, xtalk_mode)
    s = stack_subarray_blocks(model, s_all)
    lin = 1.0 + 0.0j if scheme == DNR else dpds[k].linear_coeff
    ref = float(np.mean(np.abs(s[k]) ** 2))
    out = np.empty(len(angles), dtype=np.float64)
    for j, ang in enumerate(angles):
        r = nonlinear_radiation(model, y, k, float(ang), lin, s[k])
        p = float(np.mean(np.abs(r) ** 2)) / ref
        out[j] = 10.0 * np.log10(p) if p > 0 else FLOOR_DB
    return np.maximum(out, FLOOR_DB)


def average_improvement_db(power_a, power_b, angles, angle_range) -> float:
    """Mean over the angle range of (power_a - power_b), in dB."""
    angles = np.asarray(angles, dtype=np.float64)
    lo, hi = angle_range
    if lo > hi:
        raise ValueError("empty angle range")
    mask = (angles >= lo) & (angles <= hi)
    if not np.any(mask):
        raise ValueError("angle range lies outside the sweep grid")
    return float(np.mean(np.asarray(power_a)[mask] - np.asarray(power_b)[mask]))


def average_power_db(power_db, angles=None, angle_range=None) -> float:
    """dB of the mean linear power over the (optionally restricted) grid."""
    power_db = np.asarray(power_db, dtype=np.float64)
    if angle_range is not None:
        angles = np.asarray(angles, dtype=np.float64)
        mask = (angles >= angle_range[0]) & (angles <= angle_range[1])
        power_db = power_db[mask]
    return float(10.0 * np.log10(np.mean(10.0 ** (power_db / 10.0))))


def welch_psd(samples: np.ndarray, nperseg: int = ACPR_SEGMENT):
    """Two-sided averaged periodogram (Hann window, 50% overlap), frequencies
    shifted to [-0.5, 0.5) cycles per sample."""
    x = as_samples(samples)
    nperseg = int(min(nperseg, x.size))
    freqs, psd = sp_signal.welch(
        x,
        fs=1.0,
        window=ACPR_WINDOW,
        nperseg=nperseg,
        noverlap=int(nperseg * ACPR_OVERLAP),
        return_onesided=False,
        detrend=False,
        scaling="density",
    )
    order = np.argsort(freqs)
    return freqs[order], psd[order]


def _band_power(freqs: np.ndarray, psd: np.ndarray, lo: float, hi: float) -> float:
    df = freqs[1] - freqs[0]
    mask = (freqs >= lo) & (freqs < hi)
    return float(np.sum(psd[mask]) * df)


def acpr_from_psd(freqs, psd, channel_bw: float, guard: float = 0.0) -> AcprResult:
    """Integrate a two-sided PSD over the main and both adjacent channels."""
    if channel_bw <= 0 or guard < 0:
        raise SignalError("channel_bw must be positive and guard nonnegative")
    upper_edge = 1.5 * channel_bw + guard
    if upper_edge > 0.5:
        raise SignalError(
            "insufficient bandwidth headroom: adjacent channel exceeds Nyquist"
        )
    half = channel_bw / 2.0
    p_main = _band_power(freqs, psd, -half, half)
    p_up = _band_power(freqs, psd, half + guard, half + guard + channel_bw)
    p_lo = _band_power(freqs, psd, -half - guard - channel_bw, -half - guard)

    def ratio_db(p_adj: float) -> float:
        if p_main <= 0:
            return FLOOR_DB
        if p_adj <= 0:
            return -FLOOR_DB
        return float(np.clip(10.0 * np.log10(p_main / p_adj), FLOOR_DB, -FLOOR_DB))

    lower, upper = ratio_db(p_lo), ratio_db(p_up)
    return AcprResult(
        lower_db=lower,
        upper_db=upper,
        average_db=0.5 * (lower + upper),
        channel_bw=channel_bw,
        guard=guard,
    )


def acpr(block, channel_bw: float, guard: float = 0.0, *, nperseg: int = ACPR_SEGMENT) -> AcprResult:
    """Average adjacent-channel power ratio of one block."""
    freqs, psd = welch_psd(block, nperseg)
    return acpr_from_psd(freqs, psd, channel_bw, guard)


def acpr_over_blocks(blocks, channel_bw: float, guard: float = 0.0,
                     *, nperseg: int = ACPR_SEGMENT) -> AcprResult:
    """ACPR of the PSD averaged over several blocks (e.g. one per swept
    angle), weighting each block equally."""
    psd_acc = None
    freqs = None
    for block in blocks:
        freqs, psd = welch_psd(block, nperseg)
        psd_acc = psd if psd_acc is None else psd_acc + psd
    if psd_acc is None:
        raise SignalError("need at least one block")
    return acpr_from_psd(freqs, psd_acc / len(blocks), channel_bw, guard)
