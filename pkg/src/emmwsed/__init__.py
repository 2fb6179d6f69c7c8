"""Distributed cooperative spectrum sensing with a dynamic primary user.

Energy detection, average consensus over random SU networks, the modified
weighted sequential energy detector (mWSED) and its EM-Viterbi state
estimator (EM-mWSED), plus a Monte Carlo harness.
"""

from .channel import (ChannelConfig, ed_moments, ed_operating_point, generate_energy_sample,
                      generate_energy_samples, simulate_pu_states)
from .consensus import (SensorNetwork, consensus_window, generate_network, metropolis_weights,
                        run_consensus)
from .detectors import (DetectorConfig, OperatingPoint, WeightScheme, decide, ied_statistic,
                        msed_decide, mwsed_moments, mwsed_operating_point, mwsed_statistic,
                        threshold_for_pf, wsed_statistic)
from .hmm import (ModelParams, em_mwsed_detect, em_viterbi, estimate_noise_power, forward_pass,
                  grid_init_transitions, kmeans_init, run_em, viterbi)
from .stats import gaussian_logpdf, q_function, q_inverse, rng_stream

__version__ = "0.1.0"
