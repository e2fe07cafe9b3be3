"""Learning relational logistic regression from budgeted network crawls."""

__version__ = "0.1.0"

from .graph import (MISSING, AttributedGraph, LabelSplit, giant_component, labeled_subgraph,
                    load_graph, split_labels)
from .features import FeatureSpec, build_features, build_features_stochastic, default_spec, feature_matrix
from .rlr import (WeightMatrix, fit_global, full_gradient, full_loglik, node_loglik,
                  node_loglik_grad, predict)
from .samplers import (CrawlBudget, CrawlSample, TourCollection, collect_seeds, crawl_bfs, crawl_ff,
                       crawl_mh, crawl_rw, sample_tours)
from .tours import SGDConfig, estimate_gradient, estimate_loglik, sgd_fit_naive, sgd_fit_tours
from .calibration import BootstrapResult, bootstrap_ci_nodes, bootstrap_ci_tours, coverage_eval
from .harness import (ExperimentConfig, accuracy, generate_synthetic, mae, rmse_probs,
                      run_experiment)
