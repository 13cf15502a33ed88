"""Prediction-error identification of linear dynamic networks with rank-reduced noise."""
from .estimate import EstimationResult, check_identifiability, cls, estimate_gamma, ml_det, relaxed, wls
from .lintf import RationalTF, TFMatrix
from .network import NetworkModel, derive_squared_model, detect_order
from .predictor import ModelSet, build_model, extract_theta, predict, prediction_error
from .simulate import Dataset, simulate_experiment, simulate_network, split_seed
from .variance import CovarianceReport, constraint_jacobian, cov_cls, cov_wls, crb, null_map, pi_factor, psi

__all__ = [
    "EstimationResult", "check_identifiability", "cls", "estimate_gamma", "ml_det", "relaxed", "wls",
    "RationalTF", "TFMatrix", "NetworkModel", "derive_squared_model", "detect_order",
    "ModelSet", "build_model", "extract_theta", "predict", "prediction_error",
    "Dataset", "simulate_experiment", "simulate_network", "split_seed",
    "CovarianceReport", "constraint_jacobian", "cov_cls", "cov_wls", "crb", "null_map", "pi_factor", "psi",
]
