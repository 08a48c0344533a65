"""Knock-intensity statistics and a Bayesian spark-timing controller."""
from knockstat._backend import backend_name, compiled_available
from knockstat.distfit import (EMConfig, LognormalParams, MixtureParams, log_likelihood, lognormal_cdf,
                               lognormal_mle, lognormal_pdf, mixture_cdf, mixture_em, mixture_pdf,
                               sample_lognormal, sample_mixture)
from knockstat.errors import (DegeneracyError, DomainError, FormatError, InsufficientDataError, KnockError,
                              PreconditionError)
from knockstat.gof import (EmpiricalCDF, FitScores, Thresholds, acf, acf_bounds, empirical_cdf, fit_report,
                           ks_distance, mc_thresholds, r_squared)
from knockstat.knockctl import (ControllerState, Posterior, StateBank, controller_step, posterior_update,
                                spark_delta, state_likelihoods)
from knockstat.simloop import (EngineModel, Trajectory, engine_response, run_closed_loop, simulate_cycle,
                               trajectory_summary)
from knockstat.trace import (FilterSpec, KIDataset, PressureTrace, bandpass_filter, extract_ki, load_traces,
                             resample_to_time)

__version__ = "0.1.0"
