"""Ask/tell derivative-free optimizers and a budgeted minimize driver.

Everything minimizes.  Optimizers expose::

    ask(rng)            -> (k, d) array of candidates
    tell(candidates, values)
    prime(x0, value0)   -> seed the incumbent (warm start)

The driver owns the evaluation budget, the early-exit predicate, and the
only rng, so a fixed seed reproduces the whole candidate sequence bit for
bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DfoAttackError, InvalidInputError


class OptimizerKind(enum.Enum):
    ONE_PLUS_ONE_CAUCHY = "opo-cauchy"
    ONE_PLUS_ONE_GAUSSIAN = "opo-gauss"
    CMA_FULL = "cma"
    CMA_DIAGONAL = "cma-diag"
    RANDOM_SEARCH = "random"
    DIFFERENTIAL_EVOLUTION = "de"


class OnePlusOne:
    """(1+1) evolution strategy with the double-or-2^(-1/4) step-size rule.

    The candidate is m + sigma*X with X i.i.d. standard Gaussian or standard
    Cauchy per coordinate.  An improving (or tying) candidate becomes the new
    mean and doubles sigma; anything else shrinks sigma by 2^(-1/4), so four
    failures exactly cancel one success.
    """

    GROW = 2.0
    SHRINK = 2.0 ** -0.25

    def __init__(self, dimension: int, *, cauchy: bool = False,
                 m0=None, sigma0: float = 1.0):
        if sigma0 <= 0:
            raise InvalidInputError("sigma0 must be positive")
        self.dimension = int(dimension)
        self.cauchy = bool(cauchy)
        self.m = np.zeros(self.dimension) if m0 is None else np.asarray(m0, float).copy()
        self.sigma = float(sigma0)
        self.best_value = math.inf

    def ask(self, rng: np.random.Generator) -> np.ndarray:
        if self.cauchy:
            step = rng.standard_cauchy(self.dimension)
        else:
            step = rng.standard_normal(self.dimension)
        return (self.m + self.sigma * step)[None, :]

    def tell(self, candidates, values) -> None:
        candidates = np.atleast_2d(np.asarray(candidates, float))
        values = np.atleast_1d(np.asarray(values, float))
        if len(candidates) != 1 or values.size != 1:
            raise InvalidInputError("(1+1)-ES tells exactly one candidate at a time")
        value = float(values[0])
        if math.isfinite(value) and value <= self.best_value:
            self.m = candidates[0].copy()
            self.best_value = value
            self.sigma *= self.GROW
        else:
            self.sigma *= self.SHRINK

    def prime(self, x0, value0: float) -> None:
        self.m = np.asarray(x0, float).copy()
        self.best_value = float(value0) if math.isfinite(value0) else math.inf


class Cma:
    """CMA-ES with cumulative step-size adaptation.

    Full mode keeps the complete covariance matrix with rank-one plus rank-mu
    updates; diagonal mode is the separable simplification (off-diagonal
    terms dropped, per-coordinate learning rates) whose cost is linear in the
    dimension.  Hyperparameters are the standard reference defaults for the
    chosen mode.
    """

    def __init__(self, dimension: int, *, diagonal: bool = False,
                 m0=None, sigma0: float = 1.0, population: Optional[int] = None):
        if sigma0 <= 0:
            raise InvalidInputError("sigma0 must be positive")
        d = int(dimension)
        if d < 1:
            raise InvalidInputError("dimension must be >= 1")
        self.dimension = d
        self.diagonal = bool(diagonal)
        self.lam = int(population) if population else 4 + int(3 * math.log(d)) if d > 1 else 4
        self.lam = max(self.lam, 4)
        self.mu = self.lam // 2

        raw = np.log((self.lam + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = raw / raw.sum()
        self.mu_eff = 1.0 / float((self.weights ** 2).sum())

        me, n = self.mu_eff, float(d)
        self.c_sigma = (me + 2.0) / (n + me + 5.0)
        self.d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((me - 1.0) / (n + 1.0)) - 1.0) + self.c_sigma
        if self.diagonal:
            self.c_c = (1.0 + 1.0 / n + me / n) / (n ** 0.5 + 1.0 / n + 2.0 * me / n)
            self.c_1 = 1.0 / (n + 2.0 * math.sqrt(n) + me / n)
            self.c_mu = min(1.0 - self.c_1,
                            (0.25 + me + 1.0 / me - 2.0) / (n + 4.0 * math.sqrt(n) + me / 2.0))
        else:
            self.c_c = (4.0 + me / n) / (n + 4.0 + 2.0 * me / n)
            self.c_1 = 2.0 / ((n + 1.3) ** 2 + me)
            self.c_mu = min(1.0 - self.c_1,
                            2.0 * (me - 2.0 + 1.0 / me) / ((n + 2.0) ** 2 + me))
        self.chi_d = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

        self.m = np.zeros(d) if m0 is None else np.asarray(m0, float).copy()
        self.sigma = float(sigma0)
        self.p_sigma = np.zeros(d)
        self.p_c = np.zeros(d)
        self.generation = 0
        self.repair_count = 0
        if self.diagonal:
            self.C = np.ones(d)
            self._scale = np.ones(d)          # sqrt of the diagonal
        else:
            self.C = np.eye(d)
            self._eigvecs = np.eye(d)
            self._scale = np.ones(d)          # sqrt eigenvalues
            # Refreshing the eigendecomposition every O(1/(c1+cmu)/d)
            # generations keeps the per-generation cost near O(d^2) without
            # hurting convergence; low dimensions refresh every generation.
            self._eigen_gap = max(1, int(0.5 / ((self.c_1 + self.c_mu) * d)))
            self._gens_since_eigen = 0

    def ask(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((self.lam, self.dimension))
        if self.diagonal:
            y = z * self._scale
        else:
            y = z @ (self._eigvecs * self._scale).T
        return self.m + self.sigma * y

    def tell(self, candidates, values) -> None:
        X = np.atleast_2d(np.asarray(candidates, float))
        v = np.atleast_1d(np.asarray(values, float))
        if X.shape != (self.lam, self.dimension) or v.size != self.lam:
            raise InvalidInputError(
                f"expected {self.lam} candidates of dimension {self.dimension}"
            )
        v = np.where(np.isfinite(v), v, np.inf)
        order = np.argsort(v, kind="stable")
        elite = X[order[: self.mu]]

        y = (elite - self.m) / self.sigma
        y_w = self.weights @ y
        m_new = self.m + self.sigma * y_w

        if self.diagonal:
            z_w = y_w / self._scale
        else:
            z_w = self._eigvecs @ ((self._eigvecs.T @ y_w) / self._scale)
        cs = self.c_sigma
        self.p_sigma = (1.0 - cs) * self.p_sigma + math.sqrt(cs * (2.0 - cs) * self.mu_eff) * z_w
        self.generation += 1
        ps_norm = float(np.linalg.norm(self.p_sigma))
        h_sig = (ps_norm / math.sqrt(1.0 - (1.0 - cs) ** (2 * self.generation))
                 < (1.4 + 2.0 / (self.dimension + 1.0)) * self.chi_d)

        cc = self.c_c
        self.p_c = (1.0 - cc) * self.p_c
        if h_sig:
            self.p_c = self.p_c + math.sqrt(cc * (2.0 - cc) * self.mu_eff) * y_w
        delta_h = (0.0 if h_sig else 1.0) * cc * (2.0 - cc)

        keep = 1.0 - self.c_1 - self.c_mu
        if self.diagonal:
            rank_mu = self.weights @ (y ** 2)
            self.C = keep * self.C + self.c_1 * (self.p_c ** 2 + delta_h * self.C) + self.c_mu * rank_mu
            self._repair_diagonal()
        else:
            rank_one = np.outer(self.p_c, self.p_c)
            rank_mu = (self.weights[:, None] * y).T @ y
            C = keep * self.C + self.c_1 * (rank_one + delta_h * self.C) + self.c_mu * rank_mu
            self.C = (C + C.T) / 2.0
            self._gens_since_eigen += 1
            if self._gens_since_eigen >= self._eigen_gap:
                self._decompose()
                self._gens_since_eigen = 0

        self.sigma *= math.exp((cs / self.d_sigma) * (ps_norm / self.chi_d - 1.0))
        self.m = m_new

    def _repair_diagonal(self) -> None:
        floor = max(1e-20 * float(self.C.sum()), 1e-300)
        if np.any(self.C < floor):
            self.C = np.maximum(self.C, floor)
            self.repair_count += 1
        self._scale = np.sqrt(self.C)

    def _decompose(self) -> None:
        eigvals, eigvecs = np.linalg.eigh(self.C)
        floor = max(1e-20 * float(eigvals.sum()), 1e-300)
        if eigvals[0] < floor:
            eigvals = np.maximum(eigvals, floor)
            C = (eigvecs * eigvals) @ eigvecs.T
            self.C = (C + C.T) / 2.0
            self.repair_count += 1
        self._scale = np.sqrt(eigvals)
        self._eigvecs = eigvecs

    def prime(self, x0, value0: float) -> None:
        self.m = np.asarray(x0, float).copy()

    def covariance_eigenvalues(self) -> np.ndarray:
        if self.diagonal:
            return np.sort(self.C.copy())
        return np.linalg.eigvalsh(self.C)


class RandomSearch:
    """Independent standard-Cauchy draws around a fixed center; keeps the best."""

    def __init__(self, dimension: int, *, scale: float = 1.0, center=None):
        self.dimension = int(dimension)
        self.scale = float(scale)
        self.center = np.zeros(self.dimension) if center is None else np.asarray(center, float).copy()
        self.best_value = math.inf
        self.best_point: Optional[np.ndarray] = None

    def ask(self, rng: np.random.Generator) -> np.ndarray:
        return (self.center + self.scale * rng.standard_cauchy(self.dimension))[None, :]

    def tell(self, candidates, values) -> None:
        candidates = np.atleast_2d(np.asarray(candidates, float))
        for point, value in zip(candidates, np.atleast_1d(values)):
            value = float(value)
            if math.isfinite(value) and value < self.best_value:
                self.best_value = value
                self.best_point = point.copy()

    def prime(self, x0, value0: float) -> None:
        self.tell([x0], [value0])


class DifferentialEvolution:
    """DE/rand/1/bin with a fixed-size population.

    The first ask returns the initial population (standard normal draws);
    afterwards each generation proposes one trial per member and selection in
    tell keeps whichever of (member, trial) scores better, ties going to the
    trial.
    """

    def __init__(self, dimension: int, *, population_size: int = 30,
                 weight: float = 0.8, crossover: float = 0.5, m0=None):
        if population_size < 4:
            raise InvalidInputError("DE needs a population of at least 4")
        self.dimension = int(dimension)
        self.population_size = int(population_size)
        self.weight = float(weight)
        self.crossover = float(crossover)
        self.population: Optional[np.ndarray] = None
        self.fitness: Optional[np.ndarray] = None
        self._seed_member = None if m0 is None else np.asarray(m0, float).copy()
        self._seed_value: Optional[float] = None
        self._pending: Optional[tuple[str, np.ndarray]] = None

    def prime(self, x0, value0: float) -> None:
        if self.population is not None:
            raise InvalidInputError("prime must happen before the first ask")
        self._seed_member = np.asarray(x0, float).copy()
        self._seed_value = float(value0)

    def ask(self, rng: np.random.Generator) -> np.ndarray:
        if self.population is None:
            self.population = rng.standard_normal((self.population_size, self.dimension))
            self.fitness = np.full(self.population_size, np.inf)
            if self._seed_member is not None:
                self.population[0] = self._seed_member
            if self._seed_value is not None:
                # Member 0 was already evaluated by the warm start.
                self.fitness[0] = self._seed_value
                asked = np.arange(1, self.population_size)
            else:
                asked = np.arange(self.population_size)
            self._pending = ("init", asked)
            return self.population[asked].copy()

        trials = np.empty_like(self.population)
        for i in range(self.population_size):
            others = np.delete(np.arange(self.population_size), i)
            r1, r2, r3 = rng.choice(others, size=3, replace=False)
            mutant = self.population[r1] + self.weight * (self.population[r2] - self.population[r3])
            mask = rng.random(self.dimension) < self.crossover
            mask[rng.integers(self.dimension)] = True
            trials[i] = np.where(mask, mutant, self.population[i])
        self._pending = ("trial", trials)
        return trials.copy()

    def tell(self, candidates, values) -> None:
        if self._pending is None:
            raise InvalidInputError("tell without a matching ask")
        kind, payload = self._pending
        values = np.atleast_1d(np.asarray(values, float))
        values = np.where(np.isfinite(values), values, np.inf)
        if kind == "init":
            if values.size != payload.size:
                raise InvalidInputError("value count does not match the asked batch")
            self.fitness[payload] = values
        else:
            if values.size != self.population_size:
                raise InvalidInputError("value count does not match the asked batch")
            better = values <= self.fitness
            self.population[better] = payload[better]
            self.fitness[better] = values[better]
        self._pending = None


def make_optimizer(kind: OptimizerKind, dimension: int, *,
                   sigma0: float = 1.0, m0=None):
    if kind is OptimizerKind.ONE_PLUS_ONE_CAUCHY:
        return OnePlusOne(dimension, cauchy=True, m0=m0, sigma0=sigma0)
    if kind is OptimizerKind.ONE_PLUS_ONE_GAUSSIAN:
        return OnePlusOne(dimension, cauchy=False, m0=m0, sigma0=sigma0)
    if kind is OptimizerKind.CMA_FULL:
        return Cma(dimension, diagonal=False, m0=m0, sigma0=sigma0)
    if kind is OptimizerKind.CMA_DIAGONAL:
        return Cma(dimension, diagonal=True, m0=m0, sigma0=sigma0)
    if kind is OptimizerKind.RANDOM_SEARCH:
        return RandomSearch(dimension, scale=sigma0)
    if kind is OptimizerKind.DIFFERENTIAL_EVOLUTION:
        return DifferentialEvolution(dimension, m0=m0)
    raise InvalidInputError(f"unknown optimizer kind {kind!r}")


@dataclass
class MinimizeResult:
    best_point: Optional[np.ndarray]
    best_value: float
    evaluations: int
    stopped_early: bool
    aborted: bool = False
    error: Optional[str] = None


def minimize(
    objective: Callable[[np.ndarray], float],
    kind,
    dimension: int,
    budget: int,
    *,
    stop_predicate: Optional[Callable[[np.ndarray, float], bool]] = None,
    rng: Optional[np.random.Generator] = None,
    x0=None,
    sigma0: float = 1.0,
    trace=None,
) -> MinimizeResult:
    """Run one optimizer against ``objective`` for at most ``budget`` calls.

    ``kind`` is an OptimizerKind or a ready ask/tell optimizer instance.  If
    ``x0`` is given it is evaluated first (it counts against the budget) and
    primes the optimizer's incumbent.  ``stop_predicate(point, value)`` is
    checked after every evaluation; the first hit ends the run.  The returned
    evaluation count equals the number of objective calls made, exactly.

    ``trace`` may be a path or writable text file; one ``eval,best,sigma``
    row is appended per completed generation.
    """
    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    optimizer = make_optimizer(kind, dimension, sigma0=sigma0, m0=x0) \
        if isinstance(kind, OptimizerKind) else kind

    trace_file = None
    owns_trace = False
    if trace is not None:
        if isinstance(trace, (str, Path)):
            trace_file = open(trace, "w", encoding="utf-8")
            owns_trace = True
        else:
            trace_file = trace
        trace_file.write("eval,best,sigma\n")

    evaluations = 0
    best_value = math.inf
    best_point: Optional[np.ndarray] = None
    stopped_early = False
    aborted = False
    error = None

    def evaluate(point: np.ndarray) -> float:
        nonlocal evaluations, best_value, best_point
        raw = objective(point)
        evaluations += 1
        value = float(raw) if math.isfinite(raw) else math.inf
        if value < best_value:
            best_value = value
            best_point = np.array(point, float, copy=True)
        return value

    try:
        if x0 is not None:
            x0 = np.asarray(x0, float)
            v0 = evaluate(x0)
            optimizer.prime(x0, v0)
            if stop_predicate is not None and stop_predicate(x0, v0):
                stopped_early = True
        while not stopped_early and evaluations < budget:
            batch = np.atleast_2d(optimizer.ask(rng))
            values = []
            for candidate in batch:
                value = evaluate(candidate)
                values.append(value)
                if stop_predicate is not None and stop_predicate(candidate, value):
                    stopped_early = True
                    break
                if evaluations >= budget:
                    break
            if not stopped_early and len(values) == len(batch):
                optimizer.tell(batch, values)
                if trace_file is not None:
                    sigma = getattr(optimizer, "sigma", math.nan)
                    trace_file.write(f"{evaluations},{best_value!r},{sigma!r}\n")
    except DfoAttackError as exc:
        aborted = True
        error = str(exc)
    finally:
        if owns_trace and trace_file is not None:
            trace_file.close()

    return MinimizeResult(best_point, best_value, evaluations, stopped_early, aborted, error)
