"""Training objectives: alignment MSEs, variance/covariance regularizers,
and the total weighted loss, each with exact analytic gradients.

All functions are pure and dtype-preserving; feature matrices are
(N, width) with samples as rows. The decomposition term sums over
modalities without dividing by their count; alignment terms average over
samples only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, SchemaError
from .model import ProjectedFeatures


@dataclass(frozen=True)
class LossConfig:
    """Objective weights: alpha scales decomposition, beta composition,
    var_weight scales the variance hinge inside the VC regularizer;
    var_target is the minimum per-column standard deviation and var_eps
    stabilizes the square root. space selects per-stream or global-feature
    projection training."""

    alpha: float = 1.0
    beta: float = 1.0
    var_weight: float = 5.0
    var_target: float = 1.0
    var_eps: float = 1e-4
    space: str = "stream"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.var_weight) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.var_eps <= 0:
            raise ValueError("var_eps must be > 0")
        if self.space not in ("stream", "global"):
            raise ValueError(f"unknown loss space {self.space!r}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "var_weight": self.var_weight,
            "var_target": self.var_target,
            "var_eps": self.var_eps,
            "space": self.space,
        }


@dataclass
class LossBreakdown:
    """Every objective term for one step, for logging and testing."""

    decomp_by_space: dict[str, float]
    decomp: float
    comp: float
    reg: float
    total: float
    per_matrix: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def decomp_temporal(self) -> float:
        return self.decomp_by_space.get("t", 0.0)

    @property
    def decomp_spatial(self) -> float:
        return self.decomp_by_space.get("s", 0.0)

    def metrics_line(self, step: int, lr: float) -> dict:
        """The wire-format logging object for one step."""
        return {
            "step": step,
            "L_d_t": self.decomp_temporal,
            "L_d_s": self.decomp_spatial,
            "L_c": self.comp,
            "L_reg": self.reg,
            "total": self.total,
            "lr": lr,
        }


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise SchemaError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] < 1:
        raise SchemaError(f"expected (N, D) features with N >= 1, got {a.shape}")


def mse_align(a: np.ndarray, b: np.ndarray) -> float:
    """(1/N) sum_i ||a_i - b_i||^2: squared error summed over dims, averaged over rows."""
    _check_pair(a, b)
    diff = a - b
    return float((diff * diff).sum() / a.shape[0])


def mse_align_grad(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check_pair(a, b)
    g = (2.0 / a.shape[0]) * (a - b)
    return g, -g


def _check_reg_input(z: np.ndarray) -> None:
    if z.ndim != 2:
        raise SchemaError(f"expected (N, D) features, got {z.shape}")
    if z.shape[0] < 2:
        raise NumericalError(
            f"variance/covariance need N >= 2 samples, got {z.shape[0]}"
        )


def variance_term(z: np.ndarray, target: float, eps: float) -> float:
    """Hinge on per-column standard deviation: (1/D) sum_j max(0, target - sqrt(var_j + eps))."""
    _check_reg_input(z)
    s = np.sqrt(z.var(axis=0, ddof=1) + eps)
    return float(np.maximum(0.0, target - s).mean())


def variance_term_grad(z: np.ndarray, target: float, eps: float) -> np.ndarray:
    _check_reg_input(z)
    n, d = z.shape
    zc = z - z.mean(axis=0)
    s = np.sqrt((zc * zc).sum(0) / (n - 1) + eps)
    active = s < target
    return -(zc * (active / s)) / ((n - 1) * d)


def covariance_term(z: np.ndarray) -> float:
    """(1/D) times the sum of squared off-diagonal entries of the unbiased covariance."""
    _check_reg_input(z)
    n, d = z.shape
    zc = z - z.mean(axis=0)
    cov = zc.T @ zc / (n - 1)
    off = cov - np.diag(np.diag(cov))
    return float((off * off).sum() / d)


def covariance_term_grad(z: np.ndarray) -> np.ndarray:
    _check_reg_input(z)
    n, d = z.shape
    zc = z - z.mean(axis=0)
    cov = zc.T @ zc / (n - 1)
    np.fill_diagonal(cov, 0.0)
    return (4.0 / (d * (n - 1))) * (zc @ cov)


def vc_loss(z: np.ndarray, cfg: LossConfig) -> float:
    """Weighted variance hinge plus covariance penalty for one feature matrix."""
    return cfg.var_weight * variance_term(z, cfg.var_target, cfg.var_eps) + covariance_term(z)


def vc_loss_grad(z: np.ndarray, cfg: LossConfig) -> np.ndarray:
    return (
        cfg.var_weight * variance_term_grad(z, cfg.var_target, cfg.var_eps)
        + covariance_term_grad(z)
    )


def _check_projections(p: ProjectedFeatures) -> None:
    if not p.spaces:
        raise SchemaError("ProjectedFeatures carries no projection spaces")
    for sp in p.spaces:
        missing = set(p.uni[sp]) ^ set(p.dec[sp])
        if missing:
            raise SchemaError(f"space {sp!r} is missing modalities {sorted(missing)}")


def decomposition_loss(p: ProjectedFeatures) -> tuple[dict[str, float], float]:
    """Per-space alignment of each modality's projection with its
    fused-path counterpart; returns ({space: value}, total)."""
    _check_projections(p)
    by_space = {
        sp: sum(mse_align(p.uni[sp][k], p.dec[sp][k]) for k in p.uni[sp])
        for sp in p.spaces
    }
    return by_space, float(sum(by_space.values()))


def composition_loss(p: ProjectedFeatures) -> float:
    """Alignment of the fused-path multimodal projection with the
    late-fusion composition, summed over spaces."""
    _check_projections(p)
    return float(sum(mse_align(p.comp[sp], p.fused[sp]) for sp in p.spaces))


def regularization_loss(p: ProjectedFeatures, cfg: LossConfig) -> float:
    """VC regularization summed over every projected feature matrix."""
    _check_projections(p)
    return float(sum(vc_loss(z, cfg) for _, z in p.matrices()))


def total_loss(p: ProjectedFeatures, cfg: LossConfig) -> LossBreakdown:
    """Assemble every term; total = alpha*decomp + beta*comp + reg."""
    by_space, decomp = decomposition_loss(p)
    comp = composition_loss(p)
    per_matrix = {
        name: (variance_term(z, cfg.var_target, cfg.var_eps), covariance_term(z))
        for name, z in p.matrices()
    }
    reg = float(sum(cfg.var_weight * v + c for v, c in per_matrix.values()))
    return LossBreakdown(
        decomp_by_space=by_space,
        decomp=decomp,
        comp=comp,
        reg=reg,
        total=cfg.alpha * decomp + cfg.beta * comp + reg,
        per_matrix=per_matrix,
    )


def total_loss_grad(
    p: ProjectedFeatures, cfg: LossConfig
) -> tuple[LossBreakdown, ProjectedFeatures]:
    """The breakdown plus d(total)/d(matrix) for all feature matrices,
    returned in a ProjectedFeatures-shaped container."""
    breakdown = total_loss(p, cfg)
    g = p.zeros_like()
    for sp in p.spaces:
        for k in p.uni[sp]:
            da, db = mse_align_grad(p.uni[sp][k], p.dec[sp][k])
            g.uni[sp][k] += cfg.alpha * da
            g.dec[sp][k] += cfg.alpha * db
        da, db = mse_align_grad(p.comp[sp], p.fused[sp])
        g.comp[sp] += cfg.beta * da
        g.fused[sp] += cfg.beta * db
        for k in p.uni[sp]:
            g.uni[sp][k] += vc_loss_grad(p.uni[sp][k], cfg)
            g.dec[sp][k] += vc_loss_grad(p.dec[sp][k], cfg)
        g.comp[sp] += vc_loss_grad(p.comp[sp], cfg)
        g.fused[sp] += vc_loss_grad(p.fused[sp], cfg)
    return breakdown, g
