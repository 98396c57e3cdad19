"""Bayesian label prediction on graphs with Laplacian-power Gaussian priors."""
from .graph import (DisconnectedGraphError, EdgeListError, GeometryFit, Graph, Spectrum,
                    cached_spectrum, fit_geometry, knn_graph, laplacian, load_edge_list,
                    parse_edge_list, path_graph, path_spectrum_closed_form, save_edge_list,
                    spectrum, watts_strogatz)
from .model import (CoefficientRule, FixedScale, GeneralizedGamma, ObservationSet, OrdinaryGamma,
                    PriorConfig, SoftLabelTruth, kernel_eigenvalues, mask_labels, powered_kernel,
                    sample_labels, smoothness_norm, synth_soft_labels)
from .sampler import (PosteriorDraws, SamplerConfig, draw_c_gamma, draw_f_coordinate, draw_f_dense,
                      draw_g_spectral, draw_latent_z, mh_step_c, run_chain,
                      sample_truncated_normal, truncated_normal)
from .analysis import (PosteriorSummary, knn_baseline, misclassification_rate, mse_of_mean,
                       oracle_sweep, posterior_summary, predict_labels, scaled_c_transform)

__version__ = "0.1.0"
