"""Attack objectives: search points in, one counted model query out.

Two parameterizations cover the L-infinity ball.  The continuous form maps an
unbounded vector through eps*tanh so every point is feasible by construction;
the discrete form keeps per-tile logit pairs (a, b) and samples a corner of
the ball, +eps with probability e^a / (e^a + e^b), on every evaluation.  Both
return values under a minimization convention: the untargeted score is the
negated attack loss, the targeted score is the loss toward the target label.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BudgetExhaustedError, InvalidInputError, ShapeError
from .tensor_core import (
    ImageTensor,
    LossKind,
    apply_perturbation,
    cross_entropy_loss,
    cw_loss,
)
from .tiling import TileGrid, expand


class ProblemForm(enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


# Warm starts apply a near-corner rather than a saturated one (tanh(2) =
# 0.964; sign probabilities sigmoid(+-4) = 0.982).  Starting where tanh and
# sigmoid still have slope lets the optimizer rank candidates instead of
# landing on a flat staircase it first has to walk off.
WARM_START_TANH = 2.0
WARM_START_LOGIT = 2.0


@dataclass(frozen=True)
class AttackSpec:
    """Everything that defines one attack instance except the optimizer."""

    x: ImageTensor
    true_label: int
    epsilon: float
    loss: LossKind
    grid: TileGrid
    target_label: Optional[int] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidInputError("epsilon must be positive")
        if self.grid.image_shape != self.x.shape:
            raise ShapeError(
                f"grid is for {self.grid.image_shape}, image is {self.x.shape}"
            )
        if self.target_label is not None and self.target_label == self.true_label:
            raise InvalidInputError("target label must differ from the true label")

    @property
    def targeted(self) -> bool:
        return self.target_label is not None


class QueryCounter:
    """Tracks oracle queries against a hard limit; used <= limit always."""

    def __init__(self, limit: int):
        if limit < 1:
            raise InvalidInputError("query limit must be >= 1")
        self.limit = int(limit)
        self.used = 0

    @property
    def remaining(self) -> int:
        return self.limit - self.used

    def charge(self) -> None:
        if self.used >= self.limit:
            raise BudgetExhaustedError(f"query budget of {self.limit} exhausted")
        self.used += 1


def is_success(spec: AttackSpec, logits) -> bool:
    """Untargeted: the argmax left the true label.  Targeted: it reached the
    target.  Argmax ties break toward the lowest class index."""
    predicted = int(np.argmax(np.asarray(logits)))
    if spec.targeted:
        return predicted == spec.target_label
    return predicted != spec.true_label


def attack_loss(spec: AttackSpec, logits) -> float:
    label = spec.target_label if spec.targeted else spec.true_label
    if spec.loss is LossKind.CROSS_ENTROPY:
        return cross_entropy_loss(logits, label)
    return cw_loss(logits, label)


def _score(spec: AttackSpec, logits) -> float:
    loss = attack_loss(spec, logits)
    # Untargeted attacks maximize the loss at the true label; targeted ones
    # minimize it at the target.  Both become minimization here.
    return loss if spec.targeted else -loss


@dataclass(frozen=True)
class DiscreteParams:
    """Per-tile (a, b) pairs; P(tau_i = +1) = e^a_i / (e^a_i + e^b_i)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, float)
        b = np.asarray(self.b, float)
        if a.shape != b.shape or a.ndim != 1:
            raise ShapeError("a and b must be vectors of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidInputError("distribution parameters must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_vector(cls, vector) -> "DiscreteParams":
        vector = np.asarray(vector, float)
        if vector.size % 2:
            raise ShapeError("stacked (a, b) vector must have even length")
        half = vector.size // 2
        return cls(vector[:half], vector[half:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def corner_probabilities(params: DiscreteParams) -> np.ndarray:
    """P(tau_i = +1), computed stably from a_i - b_i."""
    return _sigmoid(params.a - params.b)


def sample_corner(params: DiscreteParams, rng: np.random.Generator) -> np.ndarray:
    p = corner_probabilities(params)
    return np.where(rng.random(p.size) < p, 1.0, -1.0)


@dataclass
class EvalOutcome:
    score: float
    success: bool
    logits: np.ndarray
    image: ImageTensor
    delta: np.ndarray
    corner: Optional[np.ndarray] = None


def continuous_eval(spec: AttackSpec, tau, model, counter: QueryCounter) -> EvalOutcome:
    """One query at x + expand(eps * tanh(tau)); always inside the eps ball."""
    tau = np.asarray(tau, float)
    if tau.size != spec.grid.search_dimension:
        raise ShapeError(
            f"expected {spec.grid.search_dimension} search variables, got {tau.size}"
        )
    delta = expand(spec.grid, spec.epsilon * np.tanh(tau))
    perturbed = apply_perturbation(spec.x, delta)
    counter.charge()
    logits = model.logits(perturbed)
    return EvalOutcome(_score(spec, logits), is_success(spec, logits), logits,
                       perturbed, delta)


def discrete_eval(spec: AttackSpec, params: DiscreteParams, model,
                  counter: QueryCounter, rng: np.random.Generator) -> EvalOutcome:
    """One corner sample from P_(a,b), one query; the single-sample estimate
    of the expected loss is what the optimizer sees."""
    corner = sample_corner(params, rng)
    delta = expand(spec.grid, spec.epsilon * corner)
    perturbed = apply_perturbation(spec.x, delta)
    counter.charge()
    logits = model.logits(perturbed)
    return EvalOutcome(_score(spec, logits), is_success(spec, logits), logits,
                       perturbed, delta, corner)


class AttackObjective:
    """Binds spec, model, and counter into a scalar function on search points.

    Records the first success (queries used, adversarial image, the corner if
    discrete) so the driver's stop predicate and the campaign report can read
    them back without extra queries.
    """

    def __init__(self, spec: AttackSpec, model, counter: QueryCounter,
                 form: ProblemForm = ProblemForm.CONTINUOUS,
                 rng: Optional[np.random.Generator] = None,
                 single_variable: bool = False):
        if form is ProblemForm.DISCRETE and rng is None:
            raise InvalidInputError("the discrete form needs an rng for corner sampling")
        self.spec = spec
        self.model = model
        self.counter = counter
        self.form = form
        self.rng = rng
        self.single_variable = single_variable
        self.succeeded = False
        self.queries_at_success: Optional[int] = None
        self.adversarial_image: Optional[ImageTensor] = None
        self.best_score = np.inf
        self.best_corner: Optional[np.ndarray] = None

    @property
    def dimension(self) -> int:
        base = self.spec.grid.search_dimension
        if self.form is ProblemForm.CONTINUOUS or self.single_variable:
            return base
        return 2 * base

    def warm_start_point(self, rng: np.random.Generator) -> np.ndarray:
        """A uniformly random tiled corner, mapped into this search space."""
        signs = np.where(rng.random(self.spec.grid.search_dimension) < 0.5, 1.0, -1.0)
        if self.form is ProblemForm.CONTINUOUS:
            return WARM_START_TANH * signs
        if self.single_variable:
            return 2.0 * WARM_START_LOGIT * signs
        return np.concatenate([WARM_START_LOGIT * signs, -WARM_START_LOGIT * signs])

    def _params(self, point: np.ndarray) -> DiscreteParams:
        if self.single_variable:
            return DiscreteParams(point, np.zeros_like(point))
        return DiscreteParams.from_vector(point)

    def __call__(self, point) -> float:
        point = np.asarray(point, float)
        if self.form is ProblemForm.CONTINUOUS:
            outcome = continuous_eval(self.spec, point, self.model, self.counter)
        else:
            outcome = discrete_eval(self.spec, self._params(point), self.model,
                                    self.counter, self.rng)
        if outcome.score < self.best_score:
            self.best_score = outcome.score
            self.best_corner = outcome.corner
        if outcome.success and not self.succeeded:
            self.succeeded = True
            self.queries_at_success = self.counter.used
            self.adversarial_image = outcome.image
        return outcome.score
