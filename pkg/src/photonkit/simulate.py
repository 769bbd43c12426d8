"""Monte Carlo generation of time-tag streams.

Pipeline stages: emitter internal dynamics (continuous-time Markov chain),
optional uncorrelated background injection, frequency-conversion stage
(Bernoulli thinning plus Poisson noise photons), Mach-Zehnder routing with
pairwise coalescence, and SPAD detection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import RandomSource, TimeTagStream, DEFAULT_RESOLUTION
from .models import (ConversionStage, HomInterferometer, conversion_efficiency,
                     FWHM_TO_SIGMA)


class SimulationError(ValueError):
    """Inconsistent scenario or parameter set."""


@dataclass(frozen=True)
class ChargeModel:
    """Charge-capture dynamics producing the two emission lines X1/X2.

    The chain cycles empty -> charged exciton (multi-charge capture, slow)
    -> X2 emission -> single charge -> neutral exciton (single-charge
    capture, fast) -> X1 emission -> empty.  ``branching`` is the fraction
    of emissions on X2; values below 0.5 divert part of the cycles to a
    direct X1-only excitation path.
    """

    rate_single_capture: float
    rate_multi_capture: float
    branching: float = 0.5

    def __post_init__(self):
        if self.rate_single_capture <= 0 or self.rate_multi_capture <= 0:
            raise SimulationError("capture rates must be positive")
        if not 0.0 < self.branching <= 0.5:
            raise SimulationError("branching must lie in (0, 0.5]")


@dataclass(frozen=True)
class EmitterSpec:
    lifetime: float = 1.5e-9
    tau_c: float = 100e-12
    pump_rate: float = 1e7
    mode: str = "cw"
    rep_rate: float = 50e6
    pulse_width: float = 50e-12
    excitation_prob: float = 0.9
    charge_model: Optional[ChargeModel] = None

    def __post_init__(self):
        if self.lifetime <= 0:
            raise SimulationError("lifetime must be positive")
        if self.tau_c <= 0:
            raise SimulationError("tau_c must be positive")
        if self.mode not in ("cw", "pulsed"):
            raise SimulationError("mode must be 'cw' or 'pulsed'")
        if self.mode == "cw" and self.pump_rate <= 0:
            raise SimulationError("cw mode requires a positive pump_rate")
        if self.mode == "pulsed":
            if self.rep_rate <= 0 or self.pulse_width < 0:
                raise SimulationError("invalid pulsed drive parameters")
            if self.rep_rate * self.lifetime >= 0.5:
                raise SimulationError("pulses not well separated: "
                                      "rep_rate * lifetime must be < 0.5")
            if not 0.0 < self.excitation_prob <= 1.0:
                raise SimulationError("excitation_prob must lie in (0, 1]")


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 1.0
    jitter_fwhm: float = 0.0
    dark_rate: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise SimulationError("efficiency must lie in [0, 1]")
        if self.jitter_fwhm < 0 or self.dark_rate < 0 or self.dead_time < 0:
            raise SimulationError("detector times/rates must be >= 0")


@dataclass(frozen=True)
class QfcSpec:
    stage: ConversionStage = field(default_factory=ConversionStage)
    enabled: bool = True


LINE_X1 = 0
LINE_X2 = 1


def poisson_process(rate: float, duration: float, rng: RandomSource) -> np.ndarray:
    """Sorted event times of a homogeneous Poisson process on [0, duration)."""
    if rate < 0 or duration < 0:
        raise SimulationError("rate and duration must be >= 0")
    gen = rng.generator()
    n = gen.poisson(rate * duration)
    times = gen.uniform(0.0, duration, size=n)
    times.sort()
    return times


def _cw_single_line(spec: EmitterSpec, duration: float,
                    gen: np.random.Generator) -> np.ndarray:
    # two-state chain: ground --pump_rate--> excited --1/lifetime--> ground+photon
    rate = spec.pump_rate / (1.0 + spec.pump_rate * spec.lifetime)
    times = []
    t = 0.0
    block = int(duration * rate * 1.1) + 1000
    while t < duration:
        waits = gen.exponential(1.0 / spec.pump_rate, size=block) \
            + gen.exponential(spec.lifetime, size=block)
        emit = t + np.cumsum(waits)
        times.append(emit)
        t = emit[-1]
        block = max(block // 4, 1000)
    times = np.concatenate(times)
    return times[times < duration]


def _pulsed_single_line(spec: EmitterSpec, duration: float,
                        gen: np.random.Generator) -> np.ndarray:
    period = 1.0 / spec.rep_rate
    n_pulses = int(np.floor(duration / period))
    excited = gen.random(n_pulses) < spec.excitation_prob
    pulse_t = np.nonzero(excited)[0] * period
    if spec.pulse_width > 0:
        pulse_t = pulse_t + gen.uniform(0.0, spec.pulse_width, size=pulse_t.size)
    times = pulse_t + gen.exponential(spec.lifetime, size=pulse_t.size)
    times = times[times < duration]
    times.sort()
    return times


def _cw_two_line(spec: EmitterSpec, duration: float,
                 gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    cm = spec.charge_model
    # probability that a departure from the empty state takes the X2-emitting
    # charged-exciton branch; branching b gives an X2 emission fraction of
    # p/(1+p) with p = b/(1-b)
    p_charged = cm.branching / (1.0 - cm.branching)
    mean_cycle = (1.0 / cm.rate_multi_capture + spec.lifetime
                  + p_charged * (spec.lifetime + 1.0 / cm.rate_single_capture))
    n_cycles = int(duration / mean_cycle * 1.2) + 1000

    all_times, all_lines = [], []
    t = 0.0
    while t < duration:
        w_capture = gen.exponential(1.0 / cm.rate_multi_capture, size=n_cycles)
        charged = gen.random(n_cycles) < p_charged
        # X2-branch cycles: emit X2 then refill a single charge and emit X1;
        # direct cycles emit X1 only
        w_x2 = gen.exponential(spec.lifetime, size=n_cycles)
        w_single = gen.exponential(1.0 / cm.rate_single_capture, size=n_cycles)
        w_x1 = gen.exponential(spec.lifetime, size=n_cycles)
        cycle_len = w_capture + np.where(charged, w_x2 + w_single, 0.0) + w_x1
        start = t + np.concatenate([[0.0], np.cumsum(cycle_len)[:-1]])
        x1_times = start + cycle_len
        x2_times = (start + w_capture + w_x2)[charged]
        all_times.append(x1_times)
        all_lines.append(np.full(x1_times.size, LINE_X1, dtype=np.int8))
        all_times.append(x2_times)
        all_lines.append(np.full(x2_times.size, LINE_X2, dtype=np.int8))
        t = start[-1] + cycle_len[-1]
        n_cycles = max(n_cycles // 4, 1000)

    times = np.concatenate(all_times)
    lines = np.concatenate(all_lines)
    order = np.argsort(times, kind="stable")
    times, lines = times[order], lines[order]
    keep = times < duration
    return times[keep], lines[keep]


def simulate_emission(spec: EmitterSpec, duration: float, rng: RandomSource
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Emission times (sorted, seconds) and line labels (0 = X1, 1 = X2)."""
    if duration < 0:
        raise SimulationError("duration must be >= 0")
    if duration == 0:
        return np.empty(0), np.empty(0, dtype=np.int8)
    gen = rng.generator()
    if spec.charge_model is not None:
        if spec.mode != "cw":
            raise SimulationError("charge dynamics implemented for cw drive only")
        return _cw_two_line(spec, duration, gen)
    if spec.mode == "cw":
        times = _cw_single_line(spec, duration, gen)
    else:
        times = _pulsed_single_line(spec, duration, gen)
    return times, np.zeros(times.size, dtype=np.int8)


def background_rate_for_g2_zero(signal_rate: float, target_g2_zero: float) -> float:
    """Poisson background rate that lifts g2(0) of an otherwise pure
    antibunched stream of ``signal_rate`` to ``target_g2_zero``.

    With signal fraction rho, g2(0) = 1 - rho^2.
    """
    if not 0.0 <= target_g2_zero < 1.0:
        raise SimulationError("target_g2_zero must lie in [0, 1)")
    rho = np.sqrt(1.0 - target_g2_zero)
    return signal_rate * (1.0 - rho) / rho


def apply_qfc(photons: np.ndarray, q: QfcSpec, pump_power: float,
              duration: float, rng: RandomSource
              ) -> tuple[np.ndarray, np.ndarray]:
    """Frequency-conversion stage: Bernoulli thinning of the signal at the
    conversion efficiency plus homogeneous Poisson noise photons.

    Returns (times sorted, origin flags) with origin 0 = signal, 1 = background.
    """
    if not q.enabled:
        return photons, np.zeros(photons.size, dtype=np.int8)
    eta = conversion_efficiency(pump_power, q.stage)
    gen = rng.generator()
    kept = photons[gen.random(photons.size) < eta]
    bg = poisson_process(q.stage.background_rate_coeff * pump_power, duration,
                         rng.child(1))
    times = np.concatenate([kept, bg])
    origin = np.concatenate([np.zeros(kept.size, dtype=np.int8),
                             np.ones(bg.size, dtype=np.int8)])
    order = np.argsort(times, kind="stable")
    return times[order], origin[order]


def _coalesce_probability(dt: np.ndarray, h: HomInterferometer, tau_c: float
                          ) -> np.ndarray:
    """Probability that a paired photon duo exits through different ports."""
    if h.config == "orthogonal":
        return np.full(dt.shape, 0.5)
    return 0.5 * (1.0 - h.v * np.exp(-2.0 * np.abs(dt) / tau_c))


def route_hom(photons: np.ndarray, h: HomInterferometer, tau_c: float,
              rng: RandomSource) -> tuple[np.ndarray, np.ndarray]:
    """Send photons through the Mach-Zehnder and return the two output-port
    time sequences.

    Each photon takes the short arm (probability r1) or the delayed arm
    (probability t1, delay ``h.delta_tau``).  Photons reaching the second
    splitter from different arms within 5 tau_c are paired greedily in time
    order; a pair exits through different ports with probability
    (1 - v exp(-2|dt|/tau_c))/2 in the parallel configuration and 1/2 in
    the orthogonal one.  Unpaired photons route independently.
    """
    if tau_c <= 0:
        raise SimulationError("tau_c must be positive")
    gen = rng.generator()
    long_arm = gen.random(photons.size) < h.t1
    t_bs = photons + np.where(long_arm, h.delta_tau, 0.0)
    order = np.argsort(t_bs, kind="stable")
    t_bs, long_arm = t_bs[order], long_arm[order]

    window = 5.0 * tau_c
    port_a = gen.random(t_bs.size) < h.r2  # default independent routing
    n = t_bs.size
    if n > 1:
        gaps = np.diff(t_bs)
        # candidate clusters: consecutive runs with gaps <= window
        breaks = np.nonzero(gaps > window)[0]
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks + 1, [n]])
        multi = ends - starts >= 2
        used = np.zeros(n, dtype=bool)
        for s, e in zip(starts[multi], ends[multi]):
            for i in range(s, e):
                if used[i]:
                    continue
                for j in range(i + 1, e):
                    if used[j] or long_arm[i] == long_arm[j]:
                        continue
                    dt = t_bs[j] - t_bs[i]
                    if dt > window:
                        break
                    used[i] = used[j] = True
                    p_diff = float(_coalesce_probability(np.array([dt]), h, tau_c)[0])
                    if gen.random() < p_diff:
                        a_first = gen.random() < 0.5
                        port_a[i], port_a[j] = a_first, not a_first
                    else:
                        same = gen.random() < 0.5
                        port_a[i] = port_a[j] = same
                    break
    return t_bs[port_a], t_bs[~port_a]


def detect(photons: np.ndarray, d: DetectorSpec, channel: int, duration: float,
           rng: RandomSource, resolution: float = DEFAULT_RESOLUTION,
           stats: Optional[dict] = None) -> TimeTagStream:
    """SPAD detection: efficiency thinning, Gaussian timing jitter, Poisson
    dark counts, dead-time filtering, quantization to stream ticks."""
    gen = rng.generator()
    kept = photons[gen.random(photons.size) < d.efficiency] \
        if d.efficiency < 1.0 else np.asarray(photons, dtype=float)
    n_eff_dropped = photons.size - kept.size
    if d.jitter_fwhm > 0 and kept.size:
        kept = kept + gen.normal(0.0, d.jitter_fwhm * FWHM_TO_SIGMA, size=kept.size)
    darks = poisson_process(d.dark_rate, duration, rng.child(1))
    times = np.concatenate([kept, darks])
    times = times[(times >= 0.0) & (times < duration)]
    times.sort()
    n_dead_dropped = 0
    if d.dead_time > 0 and times.size:
        accepted = np.empty(times.size, dtype=float)
        m = 0
        last = -np.inf
        for t in times:
            if t - last >= d.dead_time:
                accepted[m] = t
                m += 1
                last = t
        n_dead_dropped = times.size - m
        times = accepted[:m]
    if stats is not None:
        stats["input"] = int(photons.size)
        stats["dropped_efficiency"] = int(n_eff_dropped)
        stats["dark_counts"] = int(darks.size)
        stats["dropped_dead_time"] = int(n_dead_dropped)
        stats["detected"] = int(times.size)
    return TimeTagStream.from_times(times, channel=channel, resolution=resolution,
                                    channel_count=channel + 1, duration=duration)


SCENARIOS = ("hbt_cw", "hbt_pulsed", "hom_single", "two_state_hbt", "two_state_hom")


def run_experiment(scenario: str, *, emitter: EmitterSpec,
                   detectors: tuple[DetectorSpec, DetectorSpec],
                   duration: float, rng: RandomSource,
                   interferometer: Optional[HomInterferometer] = None,
                   qfc: Optional[QfcSpec] = None,
                   pump_power: float = 0.8,
                   target_g2_zero: Optional[float] = None,
                   combine_lines: bool = True,
                   resolution: float = DEFAULT_RESOLUTION
                   ) -> tuple[list[TimeTagStream], dict]:
    """Compose emitter -> (QFC) -> (HOM) -> splitter -> detectors and return
    one stream per detector plus a stage-accounting dictionary."""
    if scenario not in SCENARIOS:
        raise SimulationError(f"unknown scenario {scenario!r}")
    if scenario in ("hom_single", "two_state_hom") and interferometer is None:
        raise SimulationError(f"{scenario} requires an interferometer")
    if scenario.startswith("two_state") and emitter.charge_model is None:
        raise SimulationError(f"{scenario} requires emitter charge dynamics")
    if scenario == "hbt_pulsed" and emitter.mode != "pulsed":
        raise SimulationError("hbt_pulsed requires a pulsed emitter")

    stats: dict = {"scenario": scenario, "seed": rng.seed, "duration": duration}
    times, lines = simulate_emission(emitter, duration, rng.child(1))
    stats["emitted"] = int(times.size)

    if target_g2_zero is not None and duration > 0:
        rate = times.size / duration
        bg_rate = background_rate_for_g2_zero(rate, target_g2_zero)
        bg = poisson_process(bg_rate, duration, rng.child(2))
        times = np.concatenate([times, bg])
        # background photons carry no line identity; split them evenly
        bg_lines = (rng.child(3).generator().random(bg.size) < 0.5).astype(np.int8)
        lines = np.concatenate([lines, bg_lines])
        order = np.argsort(times, kind="stable")
        times, lines = times[order], lines[order]
        stats["background_injected"] = int(bg.size)
    else:
        stats["background_injected"] = 0

    if qfc is not None and qfc.enabled:
        before = times.size
        merged, origin = apply_qfc(times, qfc, pump_power, duration, rng.child(4))
        stats["qfc_input"] = before
        stats["qfc_background"] = int(np.count_nonzero(origin))
        stats["qfc_converted"] = int(merged.size - stats["qfc_background"])
        stats["qfc_dropped"] = before - stats["qfc_converted"]
        times = merged
        lines = None  # line identity erased by conversion to one wavelength

    gen = rng.child(5).generator()
    if scenario in ("hom_single", "two_state_hom"):
        port_a, port_b = route_hom(times, interferometer, emitter.tau_c,
                                   rng.child(6))
        branches = (port_a, port_b)
    elif scenario == "two_state_hbt" and not combine_lines:
        if lines is None:
            raise SimulationError(
                "cross-correlation of separate lines is unavailable after "
                "combined frequency conversion")
        branches = (times[lines == LINE_X1], times[lines == LINE_X2])
    else:
        to_a = gen.random(times.size) < 0.5
        branches = (times[to_a], times[~to_a])

    streams = []
    for ch, (branch, det) in enumerate(zip(branches, detectors)):
        det_stats: dict = {}
        s = detect(branch, det, ch, duration, rng.child(10 + ch),
                   resolution=resolution, stats=det_stats)
        streams.append(s)
        for key, value in det_stats.items():
            stats[f"det{ch}_{key}"] = value
    return streams, stats
