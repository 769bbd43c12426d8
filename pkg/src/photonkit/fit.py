"""Parameter estimation on normalized correlation histograms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from .core import CorrelationHistogram
from .models import (EmitterCorrelationParams, HomInterferometer,
                     InstrumentResponse, convolve_and_bin, g2_cw, g2_hom,
                     visibility)

MODEL_IDS = ("g2_cw", "g2_hom_parallel", "g2_hom_orthogonal")

_PARAM_NAMES = {
    "g2_cw": ("alpha", "tau_r"),
    "g2_hom_parallel": ("alpha", "tau_r", "tau_c", "v"),
    "g2_hom_orthogonal": ("alpha", "tau_r"),
}

_DEFAULT_BOUNDS = {
    "alpha": (0.0, 1.0),
    "tau_r": (1e-12, 1e-6),
    "tau_c": (1e-12, 1e-7),
    "v": (0.0, 1.0),
}


class FitError(RuntimeError):
    """Fit failed to converge; carries the best-so-far result."""

    def __init__(self, message: str, result: "FitResult"):
        super().__init__(message)
        self.result = result


@dataclass
class FitResult:
    model_id: str
    params: Dict[str, float]
    sigmas: Dict[str, float]
    residual_norm: float
    converged: bool = True
    n_evaluations: int = 0

    def serialize(self) -> str:
        lines = [f"model_id={self.model_id}"]
        for name, value in self.params.items():
            lines.append(f"{name}={value:.9g}")
        for name, value in self.sigmas.items():
            lines.append(f"sigma_{name}={value:.9g}")
        lines.append(f"residual_norm={self.residual_norm:.9g}")
        lines.append(f"converged={int(self.converged)}")
        return "\n".join(lines) + "\n"


def model_curve(model_id: str, params: Dict[str, float],
                irf: InstrumentResponse,
                interferometer: Optional[HomInterferometer] = None):
    """IRF-convolved, bin-averaged model as a callable of delay."""
    p = EmitterCorrelationParams(
        alpha=params["alpha"], tau_r=params["tau_r"],
        tau_c=params.get("tau_c", 100e-12))
    if model_id == "g2_cw":
        raw = lambda tau: g2_cw(tau, p)
    elif model_id in ("g2_hom_parallel", "g2_hom_orthogonal"):
        if interferometer is None:
            raise ValueError(f"{model_id} requires an interferometer")
        h = HomInterferometer(
            r1=interferometer.r1, t1=interferometer.t1,
            r2=interferometer.r2, t2=interferometer.t2,
            delta_tau=interferometer.delta_tau,
            v=params.get("v", interferometer.v),
            config="parallel" if model_id.endswith("parallel") else "orthogonal")
        raw = lambda tau: g2_hom(tau, p, h)
    else:
        raise ValueError(f"unknown model_id {model_id!r}")
    return convolve_and_bin(raw, irf)


def initial_guess(h: CorrelationHistogram, model_id: str) -> Dict[str, float]:
    """Closed-form starting values: dip depth -> alpha, dip width -> tau_r."""
    y = h.normalized
    dip = float(1.0 - y.min())
    alpha = min(max(dip, 0.01), 1.0)
    # width where the dip has recovered to 1 - alpha/e
    below = np.abs(h.centers[y < 1.0 - dip / np.e])
    tau_r = float(below.max()) if below.size else 5.0 * h.bin_width
    tau_r = max(tau_r, h.bin_width)
    init = {"alpha": alpha, "tau_r": tau_r}
    if model_id == "g2_hom_parallel":
        init["tau_c"] = 100e-12
        init["v"] = 0.9
    return init


def _weights(h: CorrelationHistogram) -> np.ndarray:
    # Poisson weighting with a one-count floor
    if h.sigma is not None and np.all(h.sigma > 0):
        return h.sigma / h.normalization
    return np.sqrt(np.maximum(h.counts, 1)) / h.normalization

def _central_diff_jacobian(fun, x, f0, lo, hi):
    # difference points are clamped to the bounds; at a bound this reduces
    # to a one-sided difference
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = 1e-6 * max(abs(x[i]), 1e-12)
        xp, xm = x.copy(), x.copy()
        xp[i] = min(x[i] + step, hi[i])
        xm[i] = max(x[i] - step, lo[i])
        J[:, i] = (fun(xp) - fun(xm)) / (xp[i] - xm[i])
    return J


def fit_g2(h: CorrelationHistogram, irf: InstrumentResponse, model_id: str,
           init: Optional[Dict[str, float]] = None,
           bounds: Optional[Dict[str, Tuple[float, float]]] = None,
           interferometer: Optional[HomInterferometer] = None,
           max_iterations: int = 200) -> FitResult:
    """Weighted least-squares fit of an IRF-convolved correlation model.

    The histogram must be normalized; residuals are weighted by the per-bin
    uncertainty (plateau fluctuation when available, sqrt-counts otherwise).
    Raises :class:`FitError` with the best-so-far result on non-convergence.
    """
    if h.normalization is None:
        raise ValueError("histogram must be normalized before fitting")
    if model_id not in MODEL_IDS:
        raise ValueError(f"unknown model_id {model_id!r}")
    names = _PARAM_NAMES[model_id]
    init = dict(init) if init else initial_guess(h, model_id)
    bounds = dict(bounds) if bounds else {}
    lo = np.array([bounds.get(n, _DEFAULT_BOUNDS[n])[0] for n in names])
    hi = np.array([bounds.get(n, _DEFAULT_BOUNDS[n])[1] for n in names])
    x0 = np.array([init[n] for n in names])
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("initial values must lie within bounds")

    data = h.normalized
    w = _weights(h)

    def residuals(x):
        params = dict(zip(names, x))
        curve = model_curve(model_id, params, irf, interferometer)
        return (data - curve(h.centers)) / w

    n_eval = 0

    def counted(x):
        nonlocal n_eval
        n_eval += 1
        return residuals(x)

    def jac(x, *_):
        return _central_diff_jacobian(residuals, x, residuals(x), lo, hi)

    sol = least_squares(counted, x0, jac=jac, bounds=(lo, hi),
                        ftol=1e-10, xtol=1e-12, gtol=1e-10,
                        max_nfev=max_iterations)
    params = dict(zip(names, (float(v) for v in sol.x)))
    # one-sigma parameter uncertainties from the weighted normal matrix,
    # scaled by the reduced chi-square
    J = sol.jac
    dof = max(data.size - len(names), 1)
    chi2_red = 2.0 * sol.cost / dof
    try:
        cov = np.linalg.inv(J.T @ J) * chi2_red
        sig = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        sig = np.full(len(names), np.nan)
    sigmas = dict(zip(names, (float(s) for s in sig)))
    result = FitResult(model_id, params, sigmas,
                       residual_norm=float(np.sqrt(2.0 * sol.cost)),
                       converged=bool(sol.success), n_evaluations=n_eval)
    if not sol.success:
        raise FitError(f"fit did not converge: {sol.message}", result)
    return result


def predict_g2_zero(p: EmitterCorrelationParams, h: HomInterferometer,
                    irf: InstrumentResponse) -> float:
    """Zero-delay value of the IRF-convolved, bin-averaged HOM correlation."""
    curve = convolve_and_bin(lambda tau: g2_hom(tau, p, h), irf)
    return float(curve(0.0))


def report_visibility(g2_par_0: float, sigma_par: float,
                      g2_perp_0: float, sigma_perp: float
                      ) -> tuple[float, float]:
    """Visibility with first-order uncertainty propagation."""
    V = visibility(g2_perp_0, g2_par_0)
    sigma = np.hypot(sigma_par / g2_perp_0,
                     g2_par_0 * sigma_perp / g2_perp_0**2)
    return V, float(sigma)
