"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

# Multinomial logit primitives shared by every membership and choice model.
# Unavailable alternatives carry a utility of -inf, so consideration sets and
# data availability go through the same mask.

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

log = logging.getLogger(__name__)


class MnlError(Exception):
    pass


@dataclass(frozen=True)
class ChoiceBlock:
    """Weighted choice observations sharing one parameter vector.

    ``design`` is (observations, alternatives, parameters); it may be a
    broadcast view when every observation faces the same alternatives.
    """

    design: np.ndarray
    availability: np.ndarray
    choice: np.ndarray
    weight: np.ndarray

    def __post_init__(self) -> None:
        n, a = self.availability.shape
        if self.design.ndim != 3 or self.design.shape[:2] != (n, a):
            raise MnlError(
                f"design shape {self.design.shape} does not match availability {(n, a)}"
            )
        if self.choice.shape != (n,) or self.weight.shape != (n,):
            raise MnlError("choice and weight need one entry per observation")
        if n == 0:
            return
        if not self.availability.any(axis=1).all():
            raise MnlError("an observation has no available alternative")
        if not self.availability[np.arange(n), self.choice].all():
            raise MnlError("a chosen alternative is unavailable")
        if not (np.all(np.isfinite(self.weight)) and np.all(self.weight >= 0)):
            raise MnlError("weights must be finite and non-negative")

    @classmethod
    def shared(
        cls, design: np.ndarray, availability: np.ndarray, choice: np.ndarray, weight: np.ndarray
    ) -> ChoiceBlock:
        """Block whose observations all face one (alternatives, parameters) design."""
        n = len(choice)
        availability = np.broadcast_to(availability, (n, design.shape[0]))
        return cls(np.broadcast_to(design, (n, *design.shape)), availability, choice, weight)

    @property
    def n_obs(self) -> int:
        return self.availability.shape[0]

    @property
    def n_params(self) -> int:
        return self.design.shape[2]

    def utilities(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise MnlError(
                f"parameter vector of length {params.shape} for a design of width {self.n_params}"
            )
        return np.einsum("nak,k->na", self.design, params)


@dataclass(frozen=True)
class SolverControls:
    gtol: float = 1e-6
    max_iterations: int = 500
    separation_threshold: float = 50.0
    # share of design variance that must survive at the optimum
    information_floor: float = 1e-5


class MnlFit(NamedTuple):
    params: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    separated: Tuple[int, ...]
    gradient_norm: float


def log_sum_exp(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise MnlError("log_sum_exp of an empty vector")
    with np.errstate(divide="ignore"):
        return float(logsumexp(values))


def masked_log_probs(utilities: np.ndarray, availability: np.ndarray) -> np.ndarray:
    """Log-probabilities along the last axis; rows with nothing available are all -inf."""
    u = np.where(availability, utilities, -np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        lse = logsumexp(u, axis=-1, keepdims=True)
        return np.where(availability & np.isfinite(lse), u - lse, -np.inf)


def mnl_log_probs(utilities, availability) -> np.ndarray:
    utilities = np.asarray(utilities, dtype=float)
    availability = np.broadcast_to(np.asarray(availability, dtype=bool), utilities.shape)
    if not availability.any(axis=-1).all():
        raise MnlError("no available alternative")
    return masked_log_probs(utilities, availability)


def _chosen_log_probs(block: ChoiceBlock, params: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    log_probs = masked_log_probs(block.utilities(params), block.availability)
    return log_probs, log_probs[np.arange(block.n_obs), block.choice]


def _weighted_sum(weight: np.ndarray, chosen: np.ndarray) -> float:
    with np.errstate(invalid="ignore"):
        return float(np.sum(np.where(weight > 0, weight * chosen, 0.0)))


def mnl_weighted_loglik(block: ChoiceBlock, params) -> float:
    _, chosen = _chosen_log_probs(block, params)
    return _weighted_sum(block.weight, chosen)


def _loglik_and_grad(block: ChoiceBlock, params: np.ndarray) -> Tuple[float, np.ndarray]:
    log_probs, chosen = _chosen_log_probs(block, params)
    probs = np.exp(log_probs)
    expected = np.einsum("na,nak->nk", probs, block.design)
    observed = block.design[np.arange(block.n_obs), block.choice]
    grad = block.weight @ (observed - expected)
    return _weighted_sum(block.weight, chosen), grad


def mnl_weighted_grad(block: ChoiceBlock, params) -> np.ndarray:
    return _loglik_and_grad(block, params)[1]


def _information_ratio(block: ChoiceBlock, params: np.ndarray) -> np.ndarray:
    """Fitted variance of each design column relative to its equal-shares variance."""
    probs = np.exp(masked_log_probs(block.utilities(params), block.availability))
    uniform = block.availability / block.availability.sum(axis=1, keepdims=True)

    def variance(p):
        first = np.einsum("na,nak->nk", p, block.design)
        second = np.einsum("na,nak->nk", p, block.design**2)
        return block.weight @ np.maximum(second - first**2, 0.0)

    fitted, spread = variance(probs), variance(uniform)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(spread > 0, fitted / spread, np.inf)


def _column_scales(block: ChoiceBlock) -> np.ndarray:
    """Within-choice-set spread of each design column under equal shares."""
    uniform = block.availability / block.availability.sum(axis=1, keepdims=True)
    first = np.einsum("na,nak->nk", uniform, block.design)
    second = np.einsum("na,nak->nk", uniform, block.design**2)
    total = float(block.weight.sum())
    spread = np.sqrt(block.weight @ np.maximum(second - first**2, 0.0) / total)
    return np.where(np.isfinite(spread) & (spread > 1e-8), spread, 1.0)


def _information(block: ChoiceBlock, params: np.ndarray) -> np.ndarray:
    """Negative Hessian of the weighted log-likelihood."""
    probs = np.exp(masked_log_probs(block.utilities(params), block.availability))
    first = np.einsum("na,nak->nk", probs, block.design)
    centred = block.design - first[:, None, :]
    return np.einsum("n,na,nak,nal->kl", block.weight, probs, centred, centred)


def _newton_polish(
    block: ChoiceBlock, params: np.ndarray, gtol: float, steps: int = 3
) -> Tuple[np.ndarray, float]:
    ll, grad = _loglik_and_grad(block, params)
    for _ in range(steps):
        if not np.isfinite(ll) or np.max(np.abs(grad)) <= gtol:
            break
        try:
            candidate = params + np.linalg.solve(_information(block, params), grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(candidate)):
            break
        new_ll, new_grad = _loglik_and_grad(block, candidate)
        # a flat optimum may lose a rounding error's worth of log-likelihood
        if not new_ll >= ll - 1e-12 * max(1.0, abs(ll)) or np.max(np.abs(new_grad)) >= np.max(np.abs(grad)):
            break
        params, ll, grad = candidate, new_ll, new_grad
    return params, ll


def fit_weighted_mnl(
    block: ChoiceBlock, init, controls: Optional[SolverControls] = None
) -> MnlFit:
    """Maximises the weighted log-likelihood with BFGS.

    BFGS runs on the mean log-likelihood over standardised design columns and
    a few Newton steps finish the job; convergence is judged on the unscaled
    gradient of the sum.
    Non-convergence and separation are reported on the result, not raised.
    """
    controls = controls or SolverControls()
    init = np.array(init, dtype=float)
    start = mnl_weighted_loglik(block, init)
    if not np.isfinite(start):
        raise MnlError("non-finite log-likelihood at the initial parameters")

    total = float(block.weight.sum())
    if block.n_params == 0 or total == 0.0:
        return MnlFit(init, start, True, 0, (), 0.0)

    scales = _column_scales(block)

    def objective(scaled):
        ll, grad = _loglik_and_grad(block, scaled / scales)
        return -ll / total, -grad / (scales * total)

    # |grad_k| <= gtol on the sum scale once the scaled mean gradient meets this
    inner_gtol = controls.gtol / (total * max(1.0, float(scales.max())))
    with np.errstate(over="ignore"):
        result = minimize(
            objective,
            init * scales,
            jac=True,
            method="BFGS",
            options={"gtol": inner_gtol, "maxiter": controls.max_iterations, "norm": np.inf},
        )

    params, ll = _newton_polish(block, np.asarray(result.x, dtype=float) / scales, controls.gtol)
    if not np.isfinite(ll) or ll < start:
        params, ll = init, start
    gradient_norm = float(np.max(np.abs(mnl_weighted_grad(block, params))))
    # precision loss in the line search is accepted once the gradient is
    # small relative to the total weight
    converged = gradient_norm <= controls.gtol or (
        result.status == 2 and gradient_norm <= controls.gtol * max(1.0, total)
    )

    ratio = _information_ratio(block, params)
    separated = tuple(
        int(i)
        for i in range(block.n_params)
        if abs(params[i]) > controls.separation_threshold or ratio[i] < controls.information_floor
    )
    if separated:
        log.debug("Separation in parameters %s (|theta| max %.3g).", separated, np.max(np.abs(params)))
    if not converged:
        log.debug(
            "BFGS stopped without convergence after %s iterations: %s", result.nit, result.message
        )
    return MnlFit(params, ll, converged, int(result.nit), separated, gradient_norm)
