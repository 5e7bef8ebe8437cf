"""Training loop: classification on the source, line alignment across domains.

Each step draws one mini-batch per domain, fits least squares lines to both
latent batches, and descends on::

    L_S + (1 - alpha) * L_M + alpha * L_C

The conditional term only switches on after ``warmup_iterations`` steps; from
then on target pseudo-labels are regenerated from the current classifier at
every step. Ablation variants zero the excluded terms but keep the weights.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import network
from .data import LabeledDataset, batch_iterator
from .errors import ConfigError, DegenerateSlopeError, EmptyInputError, EvaluationError, NumericError, ShapeError
from .least_squares import (
    EPS_VAR,
    class_fits_backward,
    fit_line,
    fit_line_backward,
    fit_line_per_class,
    split_latent,
)
from .losses import (
    DEFAULT_ALPHA,
    DEFAULT_GAMMA,
    SLOPE_TERMS,
    FitGrads,
    conditional_loss,
    intercept_diff,
    marginal_loss,
    total_objective,
)
from .network import MlpParams
from .tensor import argmax_rows, as_matrix

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_conditional", "no_marginal", "source_only")
LABEL_SOURCES = ("pseudo", "true")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    learning_rate: float = 0.001
    batch_size: int = 32
    iterations: int = 300
    warmup_iterations: int = 50
    seed: int = 0
    variant: str = "full"
    independent_dim: int = 0
    latent_layer: Optional[int] = None  # None: last hidden layer
    min_class_samples: int = 2
    hidden: tuple[int, ...] = (512, 512)
    use_batchnorm: bool = True
    activation: str = "relu"
    slope_term: str = "angle"
    shared_batch_stats: bool = True
    early_stop_window: int = 20
    early_stop_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.gamma > 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.learning_rate >= 0.0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.iterations < 0 or self.warmup_iterations < 0:
            raise ConfigError("iteration counts must be non-negative")
        if self.warmup_iterations > self.iterations:
            raise ConfigError("warmup_iterations cannot exceed iterations")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.slope_term not in SLOPE_TERMS:
            raise ConfigError(f"slope_term must be one of {SLOPE_TERMS}")
        if self.min_class_samples < 2:
            raise ConfigError("min_class_samples must be at least 2")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")

    @property
    def uses_marginal(self) -> bool:
        return self.variant in ("full", "no_conditional")

    @property
    def uses_conditional(self) -> bool:
        return self.variant in ("full", "no_marginal")

    def layer_sizes(self, input_dim: int, num_classes: int) -> list[int]:
        return [input_dim, *self.hidden, num_classes]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class PseudoLabels:
    labels: np.ndarray
    source: str = "pseudo"


@dataclass
class AlignmentDiagnostics:
    """Fitting-line gaps in radians; ``theta_M`` is NaN when a marginal slope vector is zero."""

    step: int
    theta_M: float
    B_M: float
    theta_C: dict[int, float] = field(default_factory=dict)
    B_C: dict[int, float] = field(default_factory=dict)
    label_source: str = "pseudo"

    @property
    def mean_theta_C(self) -> float:
        return math.fsum(self.theta_C.values()) / len(self.theta_C) if self.theta_C else 0.0

    @property
    def mean_B_C(self) -> float:
        return math.fsum(self.B_C.values()) / len(self.B_C) if self.B_C else 0.0


@dataclass
class EpochReport:
    step: int
    l_s: float
    l_m: float
    l_c: float
    total: float
    alpha: float
    diagnostics: AlignmentDiagnostics
    target_accuracy: Optional[float] = None


@dataclass
class EpochSummary:
    """Full-dataset measurements taken at the end of a pass over the source."""

    epoch: int
    step: int
    diagnostics: AlignmentDiagnostics
    source_accuracy: float
    target_accuracy: Optional[float]


@dataclass
class TrainingResult:
    params: MlpParams
    reports: list[EpochReport]
    epochs: list[EpochSummary]
    stopped_early: bool = False


# -- inference helpers ----------------------------------------------------


def predict_logits(params: MlpParams, features) -> np.ndarray:
    return network.forward(params, features, mode="eval").logits


def generate_pseudo_labels(params: MlpParams, target_features) -> PseudoLabels:
    x = as_matrix(target_features, name="target features")
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"target has {x.shape[1]} features, network expects {params.input_dim}")
    return PseudoLabels(argmax_rows(predict_logits(params, x)), "pseudo")


def evaluate(params: MlpParams, dataset: LabeledDataset) -> float:
    if dataset.labels is None:
        raise EvaluationError(f"dataset {dataset.domain_tag!r} has no labels to evaluate against")
    if dataset.input_dim != params.input_dim:
        raise ShapeError(f"dataset has {dataset.input_dim} features, network expects {params.input_dim}")
    predictions = argmax_rows(predict_logits(params, dataset.features))
    return float(np.mean(predictions == dataset.labels))


# -- one optimisation step ------------------------------------------------


def _marginal_fits(latent_s, latent_t, independent_dim):
    split_s = split_latent(latent_s, independent_dim)
    split_t = split_latent(latent_t, independent_dim)
    for name, split in (("source", split_s), ("target", split_t)):
        if np.var(split.v) < EPS_VAR:
            log.debug("degenerate %s variance %.3g; fit regularized", name, np.var(split.v))
    return split_s, split_t, fit_line(split_s, ridge=EPS_VAR), fit_line(split_t, ridge=EPS_VAR)


def objective_and_grads(
    params: MlpParams,
    source_x,
    source_y,
    target_x,
    target_labels,
    config: TrainConfig,
    use_conditional: bool,
):
    """Evaluate the combined objective on one pair of batches and its gradient.

    ``target_labels`` are the (pseudo-)labels used for the per-class target
    fits; they are treated as constants. Returns
    ``(grads, parts, diagnostics, traces)`` where ``parts`` is
    ``(L_S, L_M, L_C, total)``.
    """
    alpha = config.alpha
    source_x = as_matrix(source_x, name="source batch")
    target_x = as_matrix(target_x, name="target batch")
    ns = source_x.shape[0]
    if config.shared_batch_stats:
        joint = network.forward(params, np.vstack([source_x, target_x]), mode="train")
        latent_s, latent_t = joint.latent[:ns], joint.latent[ns:]
        logits_s = joint.logits[:ns]
        traces = (joint,)
    else:
        trace_s = network.forward(params, source_x, mode="train")
        stepped = network.apply_running_stats(params, trace_s)
        trace_t = network.forward(stepped, target_x, mode="train")
        latent_s, latent_t, logits_s = trace_s.latent, trace_t.latent, trace_s.logits
        traces = (trace_s, trace_t)

    l_s, g_logits_s = network.cross_entropy_with_grad(logits_s, source_y)
    g_latent_s = np.zeros_like(latent_s)
    g_latent_t = np.zeros_like(latent_t)

    split_s, split_t, fit_s, fit_t = _marginal_fits(latent_s, latent_t, config.independent_dim)
    l_m = 0.0
    try:
        marginal = marginal_loss(fit_s, fit_t, config.gamma, slope_term=config.slope_term)
    except DegenerateSlopeError:
        log.warning("zero marginal slope vector; slope term dropped for this step")
        marginal = None
        db = fit_s.intercept - fit_t.intercept
        theta_m, b_m = math.nan, float(db @ db)
    else:
        theta_m, b_m = marginal.theta_M, marginal.B_M
    if config.uses_marginal:
        w = 1.0 - alpha
        if marginal is not None:
            l_m = marginal.loss
            gs, gt = marginal.grad_s, marginal.grad_t
        else:
            l_m = config.gamma * b_m
            db = fit_s.intercept - fit_t.intercept
            zero = np.zeros_like(db)
            gs = FitGrads(zero, 2.0 * config.gamma * db)
            gt = FitGrads(zero, -2.0 * config.gamma * db)
        if w != 0.0:
            g_latent_s += w * fit_line_backward(split_s, gs.slope, gs.intercept, ridge=EPS_VAR)
            g_latent_t += w * fit_line_backward(split_t, gt.slope, gt.intercept, ridge=EPS_VAR)

    l_c = 0.0
    theta_c: dict[int, float] = {}
    b_c: dict[int, float] = {}
    if use_conditional and config.uses_conditional:
        num_classes = params.num_classes
        fits_s = fit_line_per_class(latent_s, source_y, num_classes, config.independent_dim, config.min_class_samples)
        fits_t = fit_line_per_class(latent_t, target_labels, num_classes, config.independent_dim, config.min_class_samples)
        cond = conditional_loss(fits_s, fits_t, config.gamma, num_classes, slope_term=config.slope_term)
        l_c = cond.loss
        theta_c, b_c = cond.theta_C, cond.B_C
        if alpha != 0.0 and cond.active_classes:
            g_latent_s += alpha * class_fits_backward(
                latent_s, fits_s, {c: g.slope for c, g in cond.grad_s.items()}, {c: g.intercept for c, g in cond.grad_s.items()}
            )
            g_latent_t += alpha * class_fits_backward(
                latent_t, fits_t, {c: g.slope for c, g in cond.grad_t.items()}, {c: g.intercept for c, g in cond.grad_t.items()}
            )

    total = total_objective(l_s, l_m, l_c, alpha)
    if config.shared_batch_stats:
        g_logits = np.zeros_like(joint.logits)
        g_logits[:ns] = g_logits_s
        grads = network.backward(joint, np.vstack([g_latent_s, g_latent_t]), g_logits, params)
    else:
        grads = network.backward(trace_s, g_latent_s, g_logits_s, params)
        grads = network.add_grads(grads, network.backward(trace_t, g_latent_t, None, params))
    diag = AlignmentDiagnostics(step=0, theta_M=theta_m, B_M=b_m, theta_C=theta_c, B_C=b_c, label_source="pseudo")
    return grads, (l_s, l_m, l_c, total), diag, traces


def train_step(
    params: MlpParams,
    source_batch: tuple[np.ndarray, np.ndarray],
    target_batch: np.ndarray,
    config: TrainConfig,
    use_conditional: bool,
    step: int = 0,
) -> tuple[MlpParams, EpochReport]:
    """One SGD step on a (features, labels) source batch and a target feature batch."""
    source_x, source_y = source_batch
    source_x = as_matrix(source_x, name="source batch")
    target_x = as_matrix(target_batch, name="target batch")
    if source_x.shape[0] < 2 or target_x.shape[0] < 2:
        raise EmptyInputError("both batches need at least 2 samples")
    pseudo = None
    if use_conditional and config.uses_conditional:
        pseudo = generate_pseudo_labels(params, target_x).labels
    grads, (l_s, l_m, l_c, total), diag, traces = objective_and_grads(
        params, source_x, source_y, target_x, pseudo, config, use_conditional
    )
    diag.step = step
    new_params = network.sgd_step(params, grads, config.learning_rate)
    for trace in traces:
        new_params = network.apply_running_stats(new_params, trace)
    report = EpochReport(step=step, l_s=l_s, l_m=l_m, l_c=l_c, total=total, alpha=config.alpha, diagnostics=diag)
    return new_params, report


# -- diagnostics ----------------------------------------------------------


def compute_diagnostics(
    params: MlpParams,
    source: LabeledDataset,
    target: LabeledDataset,
    label_source: str = "pseudo",
    config: Optional[TrainConfig] = None,
    step: int = 0,
) -> AlignmentDiagnostics:
    """Full-dataset fitting-line diagnostics (angles in radians)."""
    config = config or TrainConfig()
    if label_source not in LABEL_SOURCES:
        raise ConfigError(f"label_source must be one of {LABEL_SOURCES}")
    if source.labels is None:
        raise EvaluationError("source dataset needs labels")
    if label_source == "true" and target.labels is None:
        raise EvaluationError("true-label diagnostics need target labels")
    latent_s = network.forward(params, source.features, mode="eval").latent
    trace_t = network.forward(params, target.features, mode="eval")
    latent_t = trace_t.latent
    _, _, fit_s, fit_t = _marginal_fits(latent_s, latent_t, config.independent_dim)
    try:
        theta_m = marginal_loss(fit_s, fit_t, config.gamma).theta_M
    except DegenerateSlopeError:
        theta_m = math.nan  # angle undefined for a zero slope vector
    b_m = intercept_diff(fit_s.intercept, fit_t.intercept)
    target_labels = target.labels if label_source == "true" else argmax_rows(trace_t.logits)
    num_classes = params.num_classes
    fits_s = fit_line_per_class(latent_s, source.labels, num_classes, config.independent_dim, config.min_class_samples)
    fits_t = fit_line_per_class(latent_t, target_labels, num_classes, config.independent_dim, config.min_class_samples)
    cond = conditional_loss(fits_s, fits_t, config.gamma, num_classes)
    return AlignmentDiagnostics(
        step=step,
        theta_M=theta_m,
        B_M=b_m,
        theta_C=dict(cond.theta_C),
        B_C=dict(cond.B_C),
        label_source=label_source,
    )


# -- the loop -------------------------------------------------------------


class _Cycler:
    """Endless stream of shuffled batches; reshuffles at each epoch boundary."""

    def __init__(self, n: int, batch_size: int, seed: int, stream: int):
        self.n, self.batch_size, self.seed, self.stream = n, min(batch_size, n), seed, stream
        self.epoch = 0
        self._batches = batch_iterator(n, self.batch_size, seed, 0, stream=stream)
        self._pos = 0

    def next(self) -> tuple[np.ndarray, bool]:
        """Next batch and whether it was the last of its epoch."""
        batch = self._batches[self._pos]
        self._pos += 1
        last = self._pos == len(self._batches)
        if last:
            self.epoch += 1
            self._batches = batch_iterator(self.n, self.batch_size, self.seed, self.epoch, stream=self.stream)
            self._pos = 0
        return batch, last


def _check_domains(source: LabeledDataset, target: LabeledDataset) -> int:
    if len(source) < 2 or len(target) < 2:
        raise EmptyInputError("each domain needs at least 2 samples")
    if source.labels is None:
        raise EvaluationError("source dataset needs labels")
    if source.input_dim != target.input_dim:
        raise ShapeError(f"source has {source.input_dim} features, target has {target.input_dim}")
    if target.labels is not None and target.num_classes != source.num_classes:
        raise ConfigError(f"class counts differ: source {source.num_classes}, target {target.num_classes}")
    return source.num_classes


def run_training(
    source: LabeledDataset,
    target: LabeledDataset,
    config: TrainConfig,
    *,
    params: Optional[MlpParams] = None,
    on_report: Optional[Callable[[EpochReport, MlpParams], None]] = None,
) -> TrainingResult:
    num_classes = _check_domains(source, target)
    if params is None:
        params = network.init_params(
            config.layer_sizes(source.input_dim, num_classes),
            config.seed,
            use_batchnorm=config.use_batchnorm,
            activation=config.activation,
            latent_layer=config.latent_layer,
        )
    if params.latent_dim < 2:
        raise ConfigError("the alignment latent needs at least 2 dimensions")
    reports: list[EpochReport] = []
    epochs: list[EpochSummary] = []
    if config.iterations == 0:
        return TrainingResult(params, reports, epochs)

    src = _Cycler(len(source), config.batch_size, config.seed, stream=0)
    tgt = _Cycler(len(target), config.batch_size, config.seed, stream=1)
    totals: list[float] = []
    stopped = False
    for step in range(1, config.iterations + 1):
        s_idx, epoch_done = src.next()
        t_idx, _ = tgt.next()
        use_conditional = step > config.warmup_iterations
        # overflow surfaces as a non-finite total below, reported with its step
        with np.errstate(over="ignore", invalid="ignore"):
            params, report = train_step(
                params,
                (source.features[s_idx], source.labels[s_idx]),
                target.features[t_idx],
                config,
                use_conditional,
                step,
            )
        if not math.isfinite(report.total):
            raise NumericError(f"non-finite loss at step {step}", step=step)
        totals.append(report.total)
        stopped = _converged(totals, config.early_stop_window, config.early_stop_tol)
        if epoch_done or step == config.iterations or stopped:
            summary = summarize_epoch(params, source, target, config, src.epoch if epoch_done else src.epoch + 1, step)
            epochs.append(summary)
            report.target_accuracy = summary.target_accuracy
        reports.append(report)
        if on_report is not None:
            on_report(report, params)
        if stopped:
            log.info("converged at step %d", step)
            break
    return TrainingResult(params, reports, epochs, stopped_early=stopped)


def summarize_epoch(params, source, target, config, epoch, step) -> EpochSummary:
    diag = compute_diagnostics(params, source, target, "pseudo", config, step=step)
    target_acc = evaluate(params, target) if target.labels is not None else None
    return EpochSummary(epoch=epoch, step=step, diagnostics=diag, source_accuracy=evaluate(params, source), target_accuracy=target_acc)


def _converged(totals: Sequence[float], window: int, tol: float) -> bool:
    """True when the mean total loss moved by less than ``tol`` between consecutive windows."""
    if window <= 0 or len(totals) < 2 * window:
        return False
    recent = math.fsum(totals[-window:]) / window
    previous = math.fsum(totals[-2 * window : -window]) / window
    return abs(previous - recent) < tol
