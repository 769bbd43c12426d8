"""Closed-form correlation and frequency-conversion models.

Delays are in seconds, wavelengths in meters, rates in Hz throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import fftconvolve

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))

# positive root of sinc^2(x) = 1/2, sinc(x) = sin(x)/x
SINC_SQ_HALF_X = 1.39155737825151


@dataclass(frozen=True)
class EmitterCorrelationParams:
    """Parameters of the antibunched cw correlation model
    g2(tau) = 1 - alpha * exp(-|tau|/tau_r)."""

    alpha: float
    tau_r: float
    tau_c: float = 100e-12

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not (np.isfinite(self.tau_r) and self.tau_r > 0):
            raise ValueError("tau_r must be finite and positive")
        if not (np.isfinite(self.tau_c) and self.tau_c > 0):
            raise ValueError("tau_c must be finite and positive")


@dataclass(frozen=True)
class HomInterferometer:
    """Mach-Zehnder interferometer for two-photon interference.

    r/t are intensity reflection/transmission coefficients of the two
    beamsplitters (lossless: r + t = 1), ``delta_tau`` the arm delay, ``v``
    the wavepacket overlap at the second splitter, ``config`` either
    ``"parallel"`` (interfering) or ``"orthogonal"`` (non-interfering).
    """

    r1: float = 0.5
    t1: float = 0.5
    r2: float = 0.5
    t2: float = 0.5
    delta_tau: float = 12.5e-9
    v: float = 1.0
    config: str = "parallel"

    def __post_init__(self):
        for r, t, name in ((self.r1, self.t1, "1"), (self.r2, self.t2, "2")):
            if abs(r + t - 1.0) > 1e-9:
                raise ValueError(f"beamsplitter {name}: r + t must equal 1")
            if r < 0 or t < 0:
                raise ValueError(f"beamsplitter {name}: negative coefficient")
        if not 0.0 <= self.v <= 1.0:
            raise ValueError("v must lie in [0, 1]")
        if self.config not in ("parallel", "orthogonal"):
            raise ValueError("config must be 'parallel' or 'orthogonal'")


@dataclass(frozen=True)
class InstrumentResponse:
    """Timing-response kernel of the detector pair plus TCSPC binning.

    ``fwhm`` is the pairwise (difference of the two detectors) Gaussian
    width; a tabulated kernel may be supplied instead as (time, weight)
    pairs.  ``bin_width`` is the TCSPC histogram bin.
    """

    bin_width: float
    shape: str = "gaussian"
    fwhm: float = 0.0
    samples: Optional[Sequence[Tuple[float, float]]] = None

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.shape not in ("gaussian", "tabulated"):
            raise ValueError("shape must be 'gaussian' or 'tabulated'")
        if self.shape == "gaussian":
            if self.fwhm < 0:
                raise ValueError("fwhm must be >= 0")
        else:
            if not self.samples:
                raise ValueError("tabulated response requires samples")
            w = np.asarray([s[1] for s in self.samples], dtype=float)
            if np.any(w < 0):
                raise ValueError("tabulated weights must be non-negative")
            if w.sum() <= 0:
                raise ValueError("tabulated weights must have positive area")


@dataclass(frozen=True)
class ConversionStage:
    """Quantum-frequency-conversion transfer model of the poled waveguide."""

    lambda_signal: float = 983.8e-9
    lambda_pump: float = 1550e-9
    qpm_peak_signal: float = 983.8e-9
    qpm_fwhm: float = 0.20e-9
    eta_max: float = 0.40
    p_max: float = 1.0
    background_rate_coeff: float = 100.0  # counts/s per watt of pump
    ref_temp_c: float = 58.8
    # qpm peak shift per degree C; default spans ~2 nm of converted-wavelength
    # tuning over the 25-90 C operating range
    temp_slope: float = 8.2e-11

    def __post_init__(self):
        for lam in (self.lambda_signal, self.lambda_pump,
                    self.qpm_peak_signal, self.qpm_fwhm):
            if lam <= 0:
                raise ValueError("wavelengths/bandwidth must be positive")
        if not 0.0 <= self.eta_max <= 1.0:
            raise ValueError("eta_max must lie in [0, 1]")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if self.background_rate_coeff < 0:
            raise ValueError("background_rate_coeff must be >= 0")


def g2_cw(tau, p: EmitterCorrelationParams):
    """Antibunched cw second-order correlation, 1 - alpha*exp(-|tau|/tau_r)."""
    tau = np.asarray(tau, dtype=float)
    return 1.0 - p.alpha * np.exp(-np.abs(tau) / p.tau_r)


def g2_hom(tau, p: EmitterCorrelationParams, h: HomInterferometer):
    """Correlation at the Mach-Zehnder output for parallel or orthogonal
    polarization of the two arms.

    The direct term carries pairs taking the same arm; the delayed term
    carries pairs split between the arms, suppressed by the two-photon
    interference factor 1 - v*exp(-2|tau|/tau_c) in the parallel
    configuration.
    """
    tau = np.asarray(tau, dtype=float)
    direct = 4.0 * (h.t1**2 + h.r1**2) * h.r2 * h.t2 * g2_cw(tau, p)
    delayed = 4.0 * h.r1 * h.t1 * (
        h.t2**2 * g2_cw(tau - h.delta_tau, p)
        + h.r2**2 * g2_cw(tau + h.delta_tau, p))
    if h.config == "parallel":
        delayed = delayed * (1.0 - h.v * np.exp(-2.0 * np.abs(tau) / p.tau_c))
    return direct + delayed


def _kernel(irf: InstrumentResponse, step: float) -> np.ndarray:
    if irf.shape == "gaussian":
        sigma = irf.fwhm * FWHM_TO_SIGMA
        if sigma < step / 4:
            return np.ones(1)
        half = int(np.ceil(6 * sigma / step))
        x = np.arange(-half, half + 1) * step
        k = np.exp(-0.5 * (x / sigma) ** 2)
    else:
        t = np.asarray([s[0] for s in irf.samples], dtype=float)
        w = np.asarray([s[1] for s in irf.samples], dtype=float)
        order = np.argsort(t)
        t, w = t[order], w[order]
        half = int(np.ceil(max(abs(t[0]), abs(t[-1])) / step)) + 1
        x = np.arange(-half, half + 1) * step
        k = np.interp(x, t, w, left=0.0, right=0.0)
        if k.sum() <= 0:
            return np.ones(1)
    return k / k.sum()


def irf_width(irf: InstrumentResponse) -> float:
    """Characteristic temporal width of the response kernel (seconds)."""
    if irf.shape == "gaussian":
        return irf.fwhm * FWHM_TO_SIGMA
    t = np.asarray([s[0] for s in irf.samples], dtype=float)
    return float(max(abs(t.min()), abs(t.max()))) / 3.0 if t.size else 0.0


def convolve_and_bin(model: Callable[[np.ndarray], np.ndarray],
                     irf: InstrumentResponse,
                     oversample: int = 16) -> Callable[[np.ndarray], np.ndarray]:
    """Smear a delay-domain model with the pairwise instrument response and
    box-average over the TCSPC bin width.

    Returns a vectorized callable of delay.  A zero-width (delta) response
    with a vanishing bin width reproduces the model pointwise; a constant
    model is preserved exactly (the kernels are normalized to unit area).
    """
    sigma = irf_width(irf)
    step = min(irf.bin_width, sigma if sigma > 0 else irf.bin_width) / oversample
    # an odd number of grid samples per bin keeps the box average centered;
    # an even count would shift the curve by half a step
    m = max(1, int(round(irf.bin_width / step)))
    if m % 2 == 0:
        m += 1
    step = irf.bin_width / m

    def binned(tau):
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        pad = 8.0 * sigma + irf.bin_width + step
        lo, hi = tau_arr.min() - pad, tau_arr.max() + pad
        n = int(np.ceil((hi - lo) / step)) + 1
        grid = lo + np.arange(n) * step
        y = np.asarray(model(grid), dtype=float)
        kern = _kernel(irf, step)
        if kern.size > 1:
            y = fftconvolve(y, kern, mode="same")
        if m > 1:
            y = uniform_filter1d(y, size=m, mode="nearest")
        out = np.interp(tau_arr, grid, y)
        return out if np.ndim(tau) else float(out[0])

    return binned


def visibility(g2_perp_0: float, g2_par_0: float) -> float:
    """Two-photon interference visibility (g2_perp - g2_par) / g2_perp."""
    if g2_perp_0 <= 0:
        raise ValueError("g2_perp(0) must be positive")
    return (g2_perp_0 - g2_par_0) / g2_perp_0


def output_wavelength(lambda_signal: float, lambda_pump: float) -> float:
    """Sum-frequency output wavelength: 1/out = 1/signal + 1/pump."""
    if lambda_signal <= 0 or lambda_pump <= 0:
        raise ValueError("wavelengths must be positive")
    return 1.0 / (1.0 / lambda_signal + 1.0 / lambda_pump)


def solve_pump_for_target(lambda_signal: float, lambda_target: float) -> float:
    """Pump wavelength that converts ``lambda_signal`` to ``lambda_target``."""
    if lambda_signal <= 0 or lambda_target <= 0:
        raise ValueError("wavelengths must be positive")
    if lambda_target >= lambda_signal:
        raise ValueError("target wavelength must be below the signal wavelength")
    return 1.0 / (1.0 / lambda_target - 1.0 / lambda_signal)


def qpm_response(lambda_signal, stage: ConversionStage):
    """sinc^2 quasi-phase-matching response, unity at the peak wavelength,
    with full width at half maximum equal to ``stage.qpm_fwhm``."""
    lam = np.asarray(lambda_signal, dtype=float)
    x = (lam - stage.qpm_peak_signal) * (2.0 * SINC_SQ_HALF_X / stage.qpm_fwhm)
    out = np.ones_like(x)
    nz = x != 0
    out[nz] = (np.sin(x[nz]) / x[nz]) ** 2
    return out if np.ndim(lambda_signal) else float(out)


def qpm_peak_at_temperature(stage: ConversionStage, temp_c: float) -> float:
    """Phase-matched signal wavelength at a given waveguide temperature."""
    return stage.qpm_peak_signal + stage.temp_slope * (temp_c - stage.ref_temp_c)


def conversion_efficiency(pump_power: float, stage: ConversionStage) -> float:
    """Pump-depletion efficiency curve eta_max * sin^2((pi/2) sqrt(P/p_max)):
    zero at P=0, peak at P=p_max, rolling off beyond."""
    if pump_power < 0:
        raise ValueError("pump power must be >= 0")
    return stage.eta_max * np.sin(0.5 * np.pi * np.sqrt(pump_power / stage.p_max)) ** 2


def signal_to_background(counts_signal_on: float, counts_signal_off: float,
                         dark: float) -> float:
    """Dark-count-corrected signal-to-background ratio (on-off)/(off-dark)."""
    if counts_signal_off <= dark:
        raise ValueError("background unmeasurable: off-rate <= dark rate")
    return (counts_signal_on - counts_signal_off) / (counts_signal_off - dark)
