"""Adversarial perturbations for small dense networks.

Closed-form lp-budget attacks, operator-norm quadratic attacks, greedy
subset attacks, iterative linearized drivers, and the robustness
metrics to compare them — on top of a matrix-free derivative runtime
with a compiled kernel core and a pure-NumPy fallback.
"""

from perturbkit.backend import available_backends, backend_name
from perturbkit.classify import (
    AttackConfig,
    MarginContext,
    deepfool_style,
    feasibility_bound,
    gnm,
    grad_margin_loss,
    iterative_attack,
    margin_loss,
    min_norm_attack,
    random_perturbation,
)
from perturbkit.metrics import fooling_ratio, mse, psnr, rho1, rho2
from perturbkit.model import (
    Activation,
    Dataset,
    Dense,
    Example,
    Model,
    finite_diff_check,
    forward,
    identity_model,
    jacobian,
    jvp,
    linear_model,
    load_dataset,
    load_model,
    predict,
    save_dataset,
    save_model,
    vjp,
)
from perturbkit.norms import (
    col_norms,
    dual_exponent,
    dual_maximizer,
    greedy_sign_vector,
    lp_norm,
    spectral_norm_power,
)
from perturbkit.regress import (
    Partition,
    RegressionContext,
    exhaustive_sign_oracle,
    linear_attack,
    load_partition,
    multi_subset_attack,
    quadratic_l1,
    quadratic_l2,
    quadratic_linf_greedy,
    save_partition,
    subset_attack_linear,
    subset_attack_quadratic,
)
from perturbkit.report import AttackReport
from perturbkit.train import NetSpec, TrainResult, train_toy

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "AttackConfig",
    "AttackReport",
    "Dataset",
    "Dense",
    "Example",
    "MarginContext",
    "Model",
    "NetSpec",
    "Partition",
    "RegressionContext",
    "TrainResult",
    "available_backends",
    "backend_name",
    "col_norms",
    "deepfool_style",
    "dual_exponent",
    "dual_maximizer",
    "exhaustive_sign_oracle",
    "feasibility_bound",
    "finite_diff_check",
    "fooling_ratio",
    "forward",
    "gnm",
    "grad_margin_loss",
    "greedy_sign_vector",
    "identity_model",
    "iterative_attack",
    "jacobian",
    "jvp",
    "linear_attack",
    "linear_model",
    "load_dataset",
    "load_model",
    "load_partition",
    "lp_norm",
    "margin_loss",
    "min_norm_attack",
    "mse",
    "multi_subset_attack",
    "predict",
    "psnr",
    "quadratic_l1",
    "quadratic_l2",
    "quadratic_linf_greedy",
    "random_perturbation",
    "rho1",
    "rho2",
    "save_dataset",
    "save_model",
    "save_partition",
    "spectral_norm_power",
    "subset_attack_linear",
    "subset_attack_quadratic",
    "train_toy",
    "vjp",
]
