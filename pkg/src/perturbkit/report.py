"""Result record shared by all attacks."""

from dataclasses import dataclass, field

import numpy as np

from perturbkit.norms import lp_norm


@dataclass
class AttackReport:
    """What an attack produced and what it achieved.

    `loss_before`/`loss_after` hold the task loss (classification margin
    or regression squared error); `loss_trajectory` holds the objective
    the attack itself optimized, one entry per iteration. `wall_time` is
    measured, so it is excluded from serialized records to keep CLI
    output reproducible byte for byte.
    """

    eta: np.ndarray
    success: bool
    norms: tuple[float, float, float]  # (l1, l2, linf)
    loss_before: float
    loss_after: float
    predicted_class_after: int | None = None
    iterations_used: int = 0
    loss_trajectory: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {
            "eta": [float(v) for v in self.eta],
            "success": bool(self.success),
            "norms": {
                "l1": self.norms[0],
                "l2": self.norms[1],
                "linf": self.norms[2],
            },
            "loss_before": self.loss_before,
            "loss_after": self.loss_after,
            "predicted_class_after": self.predicted_class_after,
            "iterations_used": self.iterations_used,
            "loss_trajectory": [float(v) for v in self.loss_trajectory],
        }
        if self.extra:
            rec["extra"] = {k: self.extra[k] for k in sorted(self.extra)}
        return rec


def norm_triple(eta: np.ndarray) -> tuple[float, float, float]:
    return (lp_norm(eta, 1), lp_norm(eta, 2), lp_norm(eta, float("inf")))
