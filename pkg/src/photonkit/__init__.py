"""photonkit: simulation and analysis of single-photon correlation
experiments with quantum frequency conversion."""

from .core import (CorrelationHistogram, RandomSource, TimeTag, TimeTagStream,
                   merge_streams, sort_stream)
from .models import (ConversionStage, EmitterCorrelationParams,
                     HomInterferometer, InstrumentResponse, conversion_efficiency,
                     convolve_and_bin, g2_cw, g2_hom, output_wavelength,
                     qpm_response, signal_to_background, solve_pump_for_target,
                     visibility)
from .correlate import (CorrelationRequest, brute_force_correlate, correlate,
                        merge_histograms, normalize_cw, pulsed_g2_zero)
from .simulate import (ChargeModel, DetectorSpec, EmitterSpec, QfcSpec,
                       apply_qfc, detect, poisson_process, route_hom,
                       run_experiment, simulate_emission)
from .fit import FitResult, fit_g2, predict_g2_zero, report_visibility

__version__ = "0.1.0"
