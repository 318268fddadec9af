"""Spin-readout observables, single-shot SNR, and spin-property model curves."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .charge import RateSet
from .errors import DomainError
from .photon import ChargeState, count_cutoff, distribution_conditional, tail_probability

PL = "PL_photons"
SCC = "SCC_nv_minus_probability"


@dataclass(frozen=True)
class SpinObservableModel:
    """Observable for each spin state given NV-, plus the NV0 error term.

    For ``PL_photons`` the values are mean detected photons; for
    ``SCC_nv_minus_probability`` they are probabilities of finding NV- after
    spin-to-charge conversion.
    """

    kind: str
    s_tilde_0: float
    s_tilde_1: float
    epsilon: float

    def __post_init__(self):
        if self.kind not in (PL, SCC):
            raise DomainError(f"unknown observable kind {self.kind!r}")
        vals = (self.s_tilde_0, self.s_tilde_1, self.epsilon)
        if any(v < 0 for v in vals):
            raise DomainError("observable values must be >= 0")
        if self.kind == SCC and any(v > 1 for v in vals):
            raise DomainError("SCC observables are probabilities and must be <= 1")

    def with_contrast(self, factor: float) -> "SpinObservableModel":
        """Scale the spin contrast about the midpoint of the two spin values.

        A knob for spin polarization differences between initialization
        methods; ``factor = 1`` leaves the model unchanged.
        """
        if factor == 1:
            return self
        mid = 0.5 * (self.s_tilde_0 + self.s_tilde_1)
        half = 0.5 * (self.s_tilde_0 - self.s_tilde_1) * factor
        return replace(self, s_tilde_0=mid + half, s_tilde_1=mid - half)

    def to_dict(self) -> dict:
        return asdict(self)


# Fitted to spin observable vs charge fidelity data.  The SCC values are
# printed with a percent sign in the source but only make sense (SNR ~ 0.5)
# as bare probabilities.
PL_DEFAULT = SpinObservableModel(PL, 9.664e-2, 5.254e-2, 2.703e-6)
SCC_DEFAULT = SpinObservableModel(SCC, 0.1581, 0.4778, 0.0530)


def observable_with_fidelity(model: SpinObservableModel, spin: int, f: float) -> float:
    """``<S_i> = <S~_i> F + <eps> (1 - F)``."""
    if not 0 <= f <= 1:
        raise DomainError(f"fidelity must lie in [0, 1], got {f}")
    if spin not in (0, 1):
        raise DomainError("spin must be 0 or 1")
    s = model.s_tilde_0 if spin == 0 else model.s_tilde_1
    return s * f + model.epsilon * (1.0 - f)


def pl_snr(s0, s1):
    """Poisson-limited single-shot SNR ``|s0 - s1| / sqrt(s0 + s1)``."""
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    if np.any(s0 < 0) or np.any(s1 < 0):
        raise DomainError("photon means must be >= 0")
    var = s0 + s1
    if np.any(var == 0):
        raise DomainError("SNR undefined when both means are zero")
    out = np.abs(s0 - s1) / np.sqrt(var)
    return float(out) if out.ndim == 0 else out


def scc_snr(b0, b1):
    """Binomial single-shot SNR ``|b0 - b1| / sqrt(b0(1-b0) + b1(1-b1))``."""
    b0 = np.asarray(b0, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    if np.any((b0 < 0) | (b0 > 1) | (b1 < 0) | (b1 > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    var = b0 * (1 - b0) + b1 * (1 - b1)
    if np.any(var == 0):
        raise DomainError("SNR undefined when both outcomes are deterministic")
    out = np.abs(b0 - b1) / np.sqrt(var)
    return float(out) if out.ndim == 0 else out


def snr_at_fidelity(model: SpinObservableModel, f, readout=None):
    """Single-shot SNR of ``model`` at charge fidelity ``f``.

    For SCC models ``readout`` is ``(q_minus, q_zero)``, the probabilities of
    crossing the charge readout threshold from NV- and NV0; ``None`` means a
    perfect charge readout.
    """
    f = np.asarray(f, dtype=float)
    s0 = model.s_tilde_0 * f + model.epsilon * (1 - f)
    s1 = model.s_tilde_1 * f + model.epsilon * (1 - f)
    if model.kind == PL:
        return pl_snr(s0, s1)
    if readout is not None:
        qm, q0 = readout
        s0 = s0 * qm + (1 - s0) * q0
        s1 = s1 * qm + (1 - s1) * q0
    return scc_snr(s0, s1)


def scc_observed_probability(b_true: float, rates: RateSet, t_r: float, nu: int) -> float:
    """Probability that a thresholded charge readout reports NV-.

    ``b_true`` is the NV- population after spin-to-charge conversion.
    """
    if not 0 <= b_true <= 1:
        raise DomainError("b_true must lie in [0, 1]")
    n_max = count_cutoff(rates, t_r)
    qm = tail_probability(distribution_conditional(rates, t_r, ChargeState.NEGATIVE, n_max), nu)
    q0 = tail_probability(distribution_conditional(rates, t_r, ChargeState.NEUTRAL, n_max), nu)
    return b_true * qm + (1.0 - b_true) * q0


# --- spin polarization from excited-state lifetimes -----------------------


def populations_before_after(p0: float, f_pi: float):
    """Spin populations ``(m_s=-1, m_s=+1, m_s=0)`` before and after a pi pulse.

    The pulse addresses the 0 <-> +1 transition with fidelity ``f_pi``.
    """
    if not (0 <= p0 <= 1 and 0 <= f_pi <= 1):
        raise DomainError("p0 and f_pi must lie in [0, 1]")
    side = 0.5 * (1.0 - p0)
    before = np.array([side, side, p0])
    after = np.array([
        side,
        side * (1.0 - f_pi) + p0 * f_pi,
        p0 * (1.0 - f_pi) + side * f_pi,
    ])
    return before, after


@dataclass(frozen=True)
class LifetimeModel:
    p0: float
    gamma0_opt: float
    gamma1_opt: float
    f_pi: float = 0.88
    amplitude_before: float = 1.0
    amplitude_after: float = 1.0
    background: float = 0.0

    def __post_init__(self):
        if not (0 <= self.p0 <= 1 and 0 <= self.f_pi <= 1):
            raise DomainError("p0 and f_pi must lie in [0, 1]")
        if not (self.gamma0_opt > 0 and self.gamma1_opt > 0):
            raise DomainError("decay rates must be > 0")


def lifetime_response(model: LifetimeModel, which: str, t):
    """Bi-exponential fluorescence transient for the ``before``/``after`` state.

    Times below zero (before the excitation pulse) return the background.
    """
    before, after = populations_before_after(model.p0, model.f_pi)
    if which == "before":
        pops, amp = before, model.amplitude_before
    elif which == "after":
        pops, amp = after, model.amplitude_after
    else:
        raise DomainError("which must be 'before' or 'after'")
    t = np.asarray(t, dtype=float)
    tp = np.clip(t, 0.0, None)
    decay = pops[2] * np.exp(-model.gamma0_opt * tp) + (pops[0] + pops[1]) * np.exp(-model.gamma1_opt * tp)
    return np.where(t >= 0, amp * decay, 0.0) + model.background


def convolve_with_irf(signal, irf, dt_signal: float | None = None, dt_irf: float | None = None):
    """Convolve a uniformly sampled signal with a centred, unit-sum kernel.

    The kernel has odd length and its middle sample is zero delay.  The result
    lives on the signal grid; values within half a kernel of either edge see
    zero padding.
    """
    if dt_signal is not None and dt_irf is not None and not math.isclose(dt_signal, dt_irf, rel_tol=1e-9):
        raise DomainError(f"sampling mismatch: signal dt={dt_signal}, irf dt={dt_irf}")
    irf = np.asarray(irf, dtype=float)
    if irf.ndim != 1 or len(irf) % 2 == 0:
        raise DomainError("irf must be a 1-D kernel of odd length")
    total = irf.sum()
    if not math.isclose(total, 1.0, rel_tol=1e-9):
        raise DomainError(f"irf must sum to 1, got {total}")
    return np.convolve(np.asarray(signal, dtype=float), irf, mode="same")


def gaussian_irf(sigma: float, dt: float, width: float = 5.0) -> np.ndarray:
    """Sampled Gaussian kernel of standard deviation ``sigma``, unit sum."""
    half = int(math.ceil(width * sigma / dt))
    x = np.arange(-half, half + 1) * dt
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


# --- coherence curves -------------------------------------------------------


@dataclass(frozen=True)
class CoherenceModel:
    kind: str  # "ramsey", "hahn" or "t1"
    offset: float
    amplitude: float
    timescale: float
    detuning: float = 0.0
    hyperfine: float = 0.0
    phase: float = 0.0
    stretch: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ramsey", "hahn", "t1"):
            raise DomainError(f"unknown coherence model {self.kind!r}")
        if not self.timescale > 0:
            raise DomainError("timescale must be > 0")
        if not self.stretch > 0:
            raise DomainError("stretch must be > 0")


def ramsey(tau, offset, amplitude, t2star, detuning, hyperfine, phase):
    tau = np.asarray(tau, dtype=float)
    osc = sum(np.cos(2 * np.pi * (detuning - k * hyperfine) * tau + phase) for k in (-1, 0, 1))
    return offset + amplitude * np.exp(-(tau / t2star) ** 2) * osc


def hahn(tau, offset, amplitude, t2, stretch):
    tau = np.asarray(tau, dtype=float)
    return offset + amplitude * np.exp(-((tau / t2) ** stretch))


def relaxation(tau, offset, amplitude, t1):
    tau = np.asarray(tau, dtype=float)
    return offset + amplitude * np.exp(-tau / t1)


def coherence_model_eval(model: CoherenceModel, tau):
    if model.kind == "ramsey":
        return ramsey(tau, model.offset, model.amplitude, model.timescale,
                      model.detuning, model.hyperfine, model.phase)
    if model.kind == "hahn":
        return hahn(tau, model.offset, model.amplitude, model.timescale, model.stretch)
    return relaxation(tau, model.offset, model.amplitude, model.timescale)
