"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

# Expectation-maximisation for the single-level sub-models and for the
# conditional membership step. Every M-step is a set of weighted MNL fits;
# the same weighted components give the analytic gradient used for the
# standard errors.

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .data import PURPOSES
from .likelihood import ClassConditionals, HierarchicalModel, PosteriorMatrix, ZeroLikelihoodError
from .mnl import ChoiceBlock, MnlError, MnlFit, SolverControls, fit_weighted_mnl, mnl_weighted_grad
from .spec import ModelSpec, ParameterLayout, SubModel, sub_model_layout

log = logging.getLogger(__name__)

DEGENERATE_MASS = 1e-8
MONOTONE_SLACK = 1e-9


class EstimationError(Exception):
    pass


@dataclass(frozen=True)
class EmControls:
    max_iterations: int = 1000
    loglik_rel_tol: float = 1e-8
    param_abs_tol: float = 1e-6
    starts: int = 20
    seed: int = 0
    # half-width of the random starting utilities
    scale: float = 0.5
    threads: int = 1
    solver: SolverControls = field(default_factory=SolverControls)

    def __post_init__(self) -> None:
        if self.loglik_rel_tol <= 0 or self.param_abs_tol <= 0:
            raise EstimationError("EM tolerances must be positive.")
        if self.max_iterations < 1:
            raise EstimationError("max_iterations must be at least 1.")
        if self.starts < 1:
            raise EstimationError("starts must be at least 1.")
        if self.threads < 1:
            raise EstimationError("threads must be at least 1.")

    _SOLVER_KEYS = {
        "gtol": "gtol",
        "max_inner_iterations": "max_iterations",
        "separation_threshold": "separation_threshold",
    }
    _KEYS = ("max_iterations", "loglik_rel_tol", "param_abs_tol", "starts", "seed", "scale", "threads")

    @classmethod
    def from_mapping(cls, raw: Optional[Mapping[str, Any]]) -> EmControls:
        """Reads the ``"estimation"`` object of a model configuration."""
        raw = dict(raw or {})
        allowed = cls._KEYS + tuple(cls._SOLVER_KEYS)
        unknown = sorted(set(raw) - set(allowed))
        if unknown:
            raise EstimationError(
                f"Unknown estimation setting(s) {', '.join(unknown)}; "
                f"valid settings: {', '.join(allowed)}."
            )
        solver = {cls._SOLVER_KEYS[k]: raw.pop(k) for k in list(raw) if k in cls._SOLVER_KEYS}
        try:
            return cls(**raw, solver=SolverControls(**solver))
        except TypeError as e:
            raise EstimationError(f"Bad estimation settings: {e}") from None

    def to_mapping(self) -> Dict[str, Any]:
        out = {k: getattr(self, k) for k in self._KEYS}
        out.update({k: getattr(self.solver, v) for k, v in self._SOLVER_KEYS.items()})
        return out


@dataclass(frozen=True)
class FitResult:
    sub_model: SubModel
    spec: ModelSpec
    layout: ParameterLayout
    theta: np.ndarray
    trace: Tuple[float, ...]
    converged: bool
    iterations: int
    posterior: np.ndarray  # (units, classes)
    unit_ids: Tuple[str, ...]
    n_observations: int
    household_posterior: Optional[np.ndarray] = None
    full_theta: Optional[np.ndarray] = None
    standard_errors: Optional[np.ndarray] = None
    separated: Tuple[str, ...] = ()
    start_logliks: Tuple[float, ...] = ()
    seed: Optional[int] = None
    permutation: Tuple[int, ...] = ()
    warnings: Tuple[str, ...] = ()

    @property
    def loglik(self) -> float:
        return self.trace[-1]

    @property
    def n_parameters(self) -> int:
        return self.layout.size

    @property
    def n_classes(self) -> int:
        return self.posterior.shape[1]

    @property
    def class_shares(self) -> np.ndarray:
        return self.posterior.mean(axis=0)

    @property
    def t_stats(self) -> Optional[np.ndarray]:
        if self.standard_errors is None:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.theta / self.standard_errors

    def params(self) -> Dict[str, np.ndarray]:
        return self.layout.unpack(self.theta)

    def estimates(self) -> Dict[str, float]:
        return dict(zip(self.layout.names, self.theta.tolist()))


@dataclass(frozen=True)
class ThreeStepResult:
    mode: FitResult
    neighbourhood: FitResult
    conditional: FitResult
    layout: ParameterLayout
    theta: np.ndarray
    loglik: float
    posteriors: PosteriorMatrix

    @property
    def converged(self) -> bool:
        return self.mode.converged and self.neighbourhood.converged and self.conditional.converged

    def params(self) -> Dict[str, np.ndarray]:
        return self.layout.unpack(self.theta)


class Component(NamedTuple):
    """One weighted MNL solved in the M-step, and where its parameters live."""

    block: ChoiceBlock
    index: np.ndarray


def membership_component(
    design: np.ndarray, weights: np.ndarray, index: np.ndarray
) -> Optional[Component]:
    """Class-membership logit as a weighted choice among classes.

    Each (unit, class) pair with positive weight becomes one observation that
    chose that class; class 1 is the zero-utility base.
    """
    C = weights.shape[1]
    if C == 1:
        return None
    k = design.shape[1]
    units, classes = np.nonzero(weights > 0)
    X = np.zeros((len(units), C, (C - 1) * k))
    for c in range(1, C):
        X[:, c, (c - 1) * k : c * k] = design[units]
    block = ChoiceBlock(X, np.ones((len(units), C), dtype=bool), classes, weights[units, classes])
    return Component(block, index)


def _mean_magnitude(values: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean absolute value of each trailing-axis column, over masked entries."""
    values = np.abs(values)
    picked = values.reshape(-1, values.shape[-1]) if mask is None else values[mask]
    return picked.mean(axis=0) if len(picked) else np.ones(values.shape[-1])


class _Problem:
    """A likelihood whose EM M-step splits into weighted MNL components."""

    sub_model: SubModel

    def __init__(self, model: HierarchicalModel, layout: ParameterLayout) -> None:
        self.model = model
        self.layout = layout

    def loglik(self, theta: np.ndarray) -> float:
        raise NotImplementedError

    def e_step(self, theta: np.ndarray):
        raise NotImplementedError

    def unit_posterior(self, state) -> np.ndarray:
        return state

    def components(self, state) -> List[Component]:
        raise NotImplementedError

    def scales(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_classes(self) -> int:
        raise NotImplementedError

    def unit_ids(self) -> Tuple[str, ...]:
        return self.model.unit_ids(self.sub_model)

    def n_observations(self) -> int:
        return self.model.n_observations(self.sub_model)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """Analytic score: posterior-weighted component gradients at ``theta``."""
        grad = np.zeros(self.layout.size)
        for comp in self.components(self.e_step(theta)):
            grad[comp.index] += mnl_weighted_grad(comp.block, theta[comp.index])
        return grad

    def full_theta(self, theta: np.ndarray) -> Optional[np.ndarray]:
        return None

    def household_posterior(self, state) -> Optional[np.ndarray]:
        return None

    def _gamma_index(self, r: int) -> np.ndarray:
        block = self.layout.block("gamma")
        width = int(np.prod(block.shape[1:]))
        return np.arange(block.offset + r * width, block.offset + (r + 1) * width)


class ModeProblem(_Problem):
    sub_model = SubModel.mode_lccm

    def __init__(self, model: HierarchicalModel) -> None:
        super().__init__(model, sub_model_layout(model.spec, self.sub_model))
        self._choices = []
        for (d, s), md in model.mode_designs.items():
            # tours whose choice lies outside K_ds carry zero weight for class s
            rows = np.flatnonzero(md.considered)
            block = self.layout.block(f"lambda[{d}][{s + 1}]")
            index = np.arange(block.offset, block.offset + block.size)
            self._choices.append(
                (s, md.design[rows], md.availability[rows], md.chosen[rows], md.person[rows], index)
            )

    @property
    def n_classes(self) -> int:
        return self.model.S

    def loglik(self, theta: np.ndarray) -> float:
        return self.model.sub_model_loglik(self.sub_model, self.layout.unpack(theta))

    def e_step(self, theta: np.ndarray) -> np.ndarray:
        return self.model.sub_model_posterior(self.sub_model, self.layout.unpack(theta))

    def components(self, state: np.ndarray) -> List[Component]:
        out = []
        membership = membership_component(self.model.person_design, state, self._gamma_index(0))
        if membership is not None:
            out.append(membership)
        for s, design, availability, chosen, person, index in self._choices:
            out.append(Component(ChoiceBlock(design, availability, chosen, state[person, s]), index))
        return out

    def scales(self) -> np.ndarray:
        scales = np.ones(self.layout.size)
        scales[self._gamma_index(0)] = np.tile(
            _mean_magnitude(self.model.person_design), self.model.S - 1
        )
        for _, design, availability, _, _, index in self._choices:
            scales[index] = _mean_magnitude(design, availability)
        return scales


class NeighbourhoodProblem(_Problem):
    sub_model = SubModel.neighbourhood_lccm

    @property
    def n_classes(self) -> int:
        return self.model.R

    def __init__(self, model: HierarchicalModel) -> None:
        super().__init__(model, sub_model_layout(model.spec, self.sub_model))

    def loglik(self, theta: np.ndarray) -> float:
        return self.model.sub_model_loglik(self.sub_model, self.layout.unpack(theta))

    def e_step(self, theta: np.ndarray) -> np.ndarray:
        return self.model.sub_model_posterior(self.sub_model, self.layout.unpack(theta))

    def _alpha_index(self) -> np.ndarray:
        block = self.layout.block("alpha")
        return np.arange(block.offset, block.offset + block.size)

    def components(self, state: np.ndarray) -> List[Component]:
        out = []
        membership = membership_component(self.model.household_design, state, self._alpha_index())
        if membership is not None:
            out.append(membership)
        chosen = self.model.data.chosen_tract
        n_tracts = self.model.data.n_tracts
        for r in range(self.model.R):
            mask = self.model.tract_masks[r]
            # households choosing the same tract share a row
            counts = np.bincount(chosen, weights=state[:, r], minlength=n_tracts)
            tracts = np.flatnonzero((counts > 0) & mask)
            block = ChoiceBlock.shared(self.model.tract_designs[r], mask, tracts, counts[tracts])
            beta = self.layout.block(f"beta[{r + 1}]")
            out.append(Component(block, np.arange(beta.offset, beta.offset + beta.size)))
        return out

    def scales(self) -> np.ndarray:
        scales = np.ones(self.layout.size)
        scales[self._alpha_index()] = np.tile(
            _mean_magnitude(self.model.household_design), self.model.R - 1
        )
        for r in range(self.model.R):
            beta = self.layout.block(f"beta[{r + 1}]")
            scales[beta.slice] = _mean_magnitude(
                self.model.tract_designs[r][self.model.tract_masks[r]]
            )
        return scales


class ConditionalProblem(_Problem):
    """Membership of individual classes given household classes, other blocks fixed."""

    sub_model = SubModel.conditional_membership

    def __init__(self, model: HierarchicalModel, fixed_theta: np.ndarray) -> None:
        super().__init__(model, sub_model_layout(model.spec, self.sub_model))
        self.fixed_theta = model.layout.check(fixed_theta).copy()
        self.fixed_theta.setflags(write=False)
        params = model.unpack(self.fixed_theta)
        self._household_log_probs = model.household_class_log_probs(params)
        self._neighbourhood_loglik = model.neighbourhood_loglik(params)
        self._mode_loglik = model.mode_loglik(params)

    @property
    def n_classes(self) -> int:
        return self.model.S

    def unit_ids(self) -> Tuple[str, ...]:
        return self.model.data.person_ids

    def _conditionals(self, theta: np.ndarray) -> ClassConditionals:
        gamma = self.layout.unpack(theta)["gamma"]
        return ClassConditionals(
            household_log_probs=self._household_log_probs,
            neighbourhood_loglik=self._neighbourhood_loglik,
            individual_log_probs=self.model.individual_class_log_probs({"gamma": gamma}),
            mode_loglik=self._mode_loglik,
        )

    def loglik(self, theta: np.ndarray) -> float:
        terms = self.model.household_terms(self._conditionals(theta))
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.sum(logsumexp(terms, axis=1)))

    def e_step(self, theta: np.ndarray) -> PosteriorMatrix:
        return self.model.posteriors_from(self._conditionals(theta))

    def unit_posterior(self, state: PosteriorMatrix) -> np.ndarray:
        return state.person

    def household_posterior(self, state: PosteriorMatrix) -> np.ndarray:
        return state.household

    def components(self, state: PosteriorMatrix) -> List[Component]:
        out = []
        household = state.household[self.model.data.person_household]
        for r in range(self.model.R):
            weights = household[:, r, None] * state.person_given_household[r]
            comp = membership_component(self.model.person_design, weights, self._gamma_index(r))
            if comp is not None:
                out.append(comp)
        return out

    def scales(self) -> np.ndarray:
        return np.tile(_mean_magnitude(self.model.person_design), self.model.R * (self.model.S - 1))

    def full_theta(self, theta: np.ndarray) -> np.ndarray:
        full = self.fixed_theta.copy()
        full[self.model.layout.block("gamma").slice] = theta
        return full


def problem_for(
    model: HierarchicalModel, sub_model: SubModel, fixed_theta: Optional[np.ndarray] = None
) -> _Problem:
    if sub_model is SubModel.mode_lccm:
        return ModeProblem(model)
    if sub_model is SubModel.neighbourhood_lccm:
        return NeighbourhoodProblem(model)
    if fixed_theta is None:
        raise EstimationError("Conditional membership needs the fixed hierarchical parameters.")
    return ConditionalProblem(model, fixed_theta)


def _solve(
    components: Sequence[Component], theta: np.ndarray, controls: EmControls
) -> List[MnlFit]:
    def solve(comp: Component) -> MnlFit:
        return fit_weighted_mnl(comp.block, theta[comp.index], controls.solver)

    if controls.threads > 1 and len(components) > 1:
        with ThreadPoolExecutor(max_workers=controls.threads) as pool:
            return list(pool.map(solve, components))
    return [solve(c) for c in components]


def _degenerate(posterior: np.ndarray) -> List[int]:
    mass = posterior.sum(axis=0)
    return [c + 1 for c in np.flatnonzero(mass < DEGENERATE_MASS)]


def run_em(
    problem: _Problem,
    init: np.ndarray,
    controls: Optional[EmControls] = None,
    *,
    seed: Optional[int] = None,
) -> FitResult:
    controls = controls or EmControls()
    layout = problem.layout
    theta = layout.check(init).copy()
    label = problem.sub_model.value

    loglik = problem.loglik(theta)
    if not np.isfinite(loglik):
        raise EstimationError(f"Non-finite {label} log-likelihood at the initial parameters.")
    state = problem.e_step(theta)

    trace = [loglik]
    warnings: List[str] = []
    separated: Tuple[str, ...] = ()
    converged = False
    iteration = 0
    for iteration in range(1, controls.max_iterations + 1):
        components = problem.components(state)
        fits = _solve(components, theta, controls)
        updated = theta.copy()
        flagged = []
        for comp, fit in zip(components, fits):
            updated[comp.index] = fit.params
            flagged.extend(int(comp.index[i]) for i in fit.separated)
        separated = tuple(layout.name(i) for i in sorted(set(flagged)))

        new_loglik = problem.loglik(updated)
        if new_loglik < loglik - MONOTONE_SLACK:
            message = (
                f"{label} log-likelihood decreased by {loglik - new_loglik:.3g} "
                f"at iteration {iteration}"
            )
            log.warning(message)
            warnings.append(message)
        step = float(np.max(np.abs(updated - theta))) if layout.size else 0.0
        change = new_loglik - loglik
        theta, loglik = updated, new_loglik
        trace.append(loglik)
        log.info("EM %s iteration %s: log-likelihood %.6f.", label, iteration, loglik)

        if problem.n_classes == 1:
            converged = all(f.converged for f in fits)
            break
        if abs(change) <= controls.loglik_rel_tol * abs(loglik) or step <= controls.param_abs_tol:
            converged = True
            break
        state = problem.e_step(theta)

    state = problem.e_step(theta)
    posterior = problem.unit_posterior(state)
    degenerate = _degenerate(posterior)
    if degenerate:
        message = f"{label} class(es) {', '.join(map(str, degenerate))} have vanishing posterior mass"
        log.warning(message)
        warnings.append(message)
    if separated:
        message = f"possible separation in {', '.join(separated)}"
        log.warning(message)
        warnings.append(message)
    if not converged:
        message = f"{label} EM did not converge in {iteration} iteration(s)"
        log.warning(message)
        warnings.append(message)

    return FitResult(
        sub_model=problem.sub_model,
        spec=problem.model.spec,
        layout=layout,
        theta=theta,
        trace=tuple(trace),
        converged=converged,
        iterations=iteration,
        posterior=posterior,
        unit_ids=problem.unit_ids(),
        n_observations=problem.n_observations(),
        household_posterior=problem.household_posterior(state),
        full_theta=problem.full_theta(theta),
        separated=separated,
        seed=seed,
        permutation=tuple(range(problem.n_classes)),
        warnings=tuple(warnings),
    )


def em_fit(
    model: HierarchicalModel,
    sub_model: SubModel,
    init: np.ndarray,
    controls: Optional[EmControls] = None,
    *,
    seed: Optional[int] = None,
) -> FitResult:
    if sub_model is SubModel.conditional_membership:
        raise EstimationError("Use fit_conditional_membership for the conditional step.")
    return run_em(problem_for(model, sub_model), init, controls, seed=seed)


def fit_conditional_membership(
    model: HierarchicalModel,
    fixed_theta: np.ndarray,
    init_gamma: np.ndarray,
    controls: Optional[EmControls] = None,
) -> FitResult:
    """Maximises the full likelihood over the conditional membership block only."""
    problem = ConditionalProblem(model, fixed_theta)
    init = np.asarray(init_gamma, dtype=float).reshape(-1)
    return run_em(problem, init, controls)


def starting_values(problem: _Problem, seed: int, scale: float) -> np.ndarray:
    """Random utilities of order ``scale`` relative to each covariate's magnitude."""
    rng = np.random.default_rng(seed)
    draws = rng.uniform(-scale, scale, size=problem.layout.size)
    return draws / np.maximum(1.0, problem.scales())


def start_seeds(controls: EmControls) -> List[int]:
    children = np.random.SeedSequence(controls.seed).spawn(controls.starts)
    return [int(child.generate_state(1)[0]) for child in children]


def multi_start(fit_callable: Callable[[int], FitResult], controls: EmControls) -> FitResult:
    seeds = start_seeds(controls)

    def attempt(seed: int):
        try:
            return fit_callable(seed)
        except (EstimationError, ZeroLikelihoodError, MnlError) as e:
            log.warning("Start with seed %s failed: %s", seed, e)
            return e

    if controls.threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=controls.threads) as pool:
            outcomes = list(pool.map(attempt, seeds))
    else:
        outcomes = [attempt(seed) for seed in seeds]

    results = [o for o in outcomes if isinstance(o, FitResult)]
    if not results:
        raise EstimationError(f"All {len(seeds)} starts failed; last error: {outcomes[-1]}")
    best = max(results, key=lambda r: r.loglik)
    log.info(
        "Best of %s start(s): log-likelihood %.6f (seed %s).", len(results), best.loglik, best.seed
    )
    return replace(best, start_logliks=tuple(r.loglik for r in results))


def _class_specs(spec: ModelSpec, sub_model: SubModel) -> Tuple[Any, ...]:
    if sub_model is SubModel.mode_lccm:
        return spec.individual_classes
    if sub_model is SubModel.neighbourhood_lccm:
        return spec.household_classes
    raise EstimationError("Conditional membership classes are fixed by the earlier steps.")


def split_start(small: FitResult, spec: ModelSpec) -> Optional[np.ndarray]:
    """Start for ``spec`` (one class more than ``small``) with the same likelihood.

    The first fitted class sharing the new class's specification is split
    into two halves, the second half becoming the new last class. Without a
    membership constant the halves cannot be balanced and None is returned.
    """
    sub_model = small.sub_model
    old_classes, new_classes = _class_specs(small.spec, sub_model), _class_specs(spec, sub_model)
    if len(new_classes) != len(old_classes) + 1 or tuple(new_classes[:-1]) != tuple(old_classes):
        raise EstimationError("A split start needs the same classes plus one.")
    if sub_model is SubModel.mode_lccm:
        member, variables = "gamma", spec.individual_membership_variables
        choice_keys = [[f"lambda[{d}][{c}]" for d in PURPOSES] for c in range(1, len(new_classes) + 1)]
    else:
        member, variables = "alpha", spec.household_membership_variables
        choice_keys = [[f"beta[{c}]"] for c in range(1, len(new_classes) + 1)]
    source = next((c for c, cls in enumerate(old_classes) if cls == new_classes[-1]), None)
    if source is None or "const" not in variables:
        return None

    layout = sub_model_layout(spec, sub_model)
    old = small.params()
    const = list(variables).index("const")
    coefficients = old[member].reshape(len(old_classes) - 1, len(variables))
    full = np.vstack([np.zeros((1, len(variables))), coefficients])
    full[source, const] -= np.log(2.0)
    full = np.vstack([full, full[source]])
    params = {member: (full[1:] - full[0]).reshape(layout.block(member).shape)}
    for keys in choice_keys[:-1]:
        params.update({key: old[key] for key in keys})
    params.update({new: old[key] for new, key in zip(choice_keys[-1], choice_keys[source])})
    return layout.pack(params)


def _rebase(coefficients: np.ndarray, permutation: Sequence[int]) -> np.ndarray:
    full = np.vstack([np.zeros((1, coefficients.shape[1])), coefficients])[list(permutation)]
    return (full - full[0])[1:]


def permute_classes(
    layout: ParameterLayout, theta: np.ndarray, sub_model: SubModel, permutation: Sequence[int]
) -> np.ndarray:
    """Relabels classes so that new class ``p`` is old class ``permutation[p]``.

    Membership coefficients are re-expressed against the new base class.
    """
    params = layout.unpack(theta)
    out = {k: v.copy() for k, v in params.items()}
    n = len(permutation)
    if sorted(permutation) != list(range(n)):
        raise EstimationError(f"{list(permutation)} is not a permutation.")

    if sub_model is SubModel.mode_lccm:
        out["gamma"] = _rebase(params["gamma"][0], permutation)[None]
        moved = [f"lambda[{d}][{{}}]" for d in PURPOSES]
    elif sub_model is SubModel.neighbourhood_lccm:
        out["alpha"] = _rebase(params["alpha"], permutation)
        moved = ["beta[{}]"]
    else:
        raise EstimationError("Conditional membership classes cannot be permuted.")

    for pattern in moved:
        for p, old in enumerate(permutation):
            source = params[pattern.format(old + 1)]
            if source.shape != params[pattern.format(p + 1)].shape:
                raise EstimationError(
                    f"Classes {old + 1} and {p + 1} have different specifications."
                )
            out[pattern.format(p + 1)] = source
    return layout.pack(out)


def permute_hierarchy(
    layout: ParameterLayout,
    theta: np.ndarray,
    household: Sequence[int],
    individual: Sequence[int],
) -> np.ndarray:
    """Relabels both class levels of a full parameter vector."""
    params = layout.unpack(theta)
    out = {k: v.copy() for k, v in params.items()}
    out["alpha"] = _rebase(params["alpha"], household)
    for p, old in enumerate(household):
        out[f"beta[{p + 1}]"] = params[f"beta[{old + 1}]"]
    out["gamma"] = np.stack([_rebase(params["gamma"][old], individual) for old in household])
    for d in PURPOSES:
        for p, old in enumerate(individual):
            out[f"lambda[{d}][{p + 1}]"] = params[f"lambda[{d}][{old + 1}]"]
    for key, value in out.items():
        if value.shape != params[key].shape:
            raise EstimationError(f"Relabelling changes the shape of {key}.")
    return layout.pack(out)


def share_order(
    class_specs: Sequence[Any], shares: Sequence[float], tiebreak: Sequence[float] = ()
) -> List[int]:
    """Descending share within each group of identically specified classes.

    Position ``p`` of the result names the class moved into slot ``p``.
    """
    tiebreak = list(tiebreak) or [0.0] * len(class_specs)
    permutation = list(range(len(class_specs)))
    for group in dict.fromkeys(class_specs):
        slots = [c for c, s in enumerate(class_specs) if s == group]
        ordered = sorted(slots, key=lambda c: (-shares[c], -tiebreak[c]))
        for slot, c in zip(slots, ordered):
            permutation[slot] = c
    return permutation


def canonical_permutation(fit: FitResult) -> List[int]:
    """Descending class share, ties by first parameter, within groups of identical classes."""
    specs = _class_specs(fit.spec, fit.sub_model)
    params = fit.params()

    def first(c: int) -> float:
        key = (
            f"lambda[{PURPOSES[0]}][{c + 1}]"
            if fit.sub_model is SubModel.mode_lccm
            else f"beta[{c + 1}]"
        )
        values = params[key]
        return float(values[0]) if values.size else 0.0

    return share_order(specs, fit.class_shares, [first(c) for c in range(len(specs))])


def canonicalize_classes(fit: FitResult) -> FitResult:
    permutation = canonical_permutation(fit)
    if permutation == list(range(len(permutation))):
        return fit
    log.debug("Relabelling %s classes as %s.", fit.sub_model.value, permutation)
    theta = permute_classes(fit.layout, fit.theta, fit.sub_model, permutation)
    previous = fit.permutation or tuple(range(len(permutation)))
    return replace(
        fit,
        theta=theta,
        posterior=fit.posterior[:, permutation],
        standard_errors=None,
        permutation=tuple(previous[p] for p in permutation),
    )


def hessian_standard_errors(
    gradient: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    flagged: Sequence[int] = (),
    *,
    relative_step: float = 1e-5,
) -> Tuple[np.ndarray, List[int]]:
    """Standard errors from a central-difference Hessian of an analytic gradient.

    Returns the errors and the indices left without one (NaN): parameters in
    the Hessian's null space and the ``flagged`` ones.
    """
    theta = np.asarray(theta, dtype=float)
    n = len(theta)
    if n == 0:
        return np.zeros(0), []
    hessian = np.empty((n, n))
    for i in range(n):
        step = relative_step * max(1.0, abs(theta[i]))
        shift = np.zeros(n)
        shift[i] = step
        hessian[:, i] = (gradient(theta + shift) - gradient(theta - shift)) / (2 * step)
    information = -(hessian + hessian.T) / 2

    values, vectors = np.linalg.eigh(information)
    tolerance = 1e-8 * max(1.0, float(np.max(np.abs(values))))
    keep = values > tolerance
    covariance = (vectors[:, keep] / values[keep]) @ vectors[:, keep].T
    variances = np.diag(covariance).copy()

    absent = set(int(i) for i in flagged)
    if not keep.all():
        null = vectors[:, ~keep]
        absent.update(int(i) for i in np.flatnonzero(np.max(np.abs(null), axis=1) > 1e-6))
    errors = np.sqrt(np.where(variances > 0, variances, np.nan))
    absent.update(int(i) for i in np.flatnonzero(~np.isfinite(errors)))
    for i in absent:
        errors[i] = np.nan
    return errors, sorted(absent)


def standard_errors(model: HierarchicalModel, fit: FitResult) -> FitResult:
    problem = problem_for(model, fit.sub_model, fit.full_theta)
    flagged = [fit.layout.index(name) for name in fit.separated]
    errors, absent = hessian_standard_errors(problem.gradient, fit.theta, flagged)
    warnings = list(fit.warnings)
    if absent:
        names = ", ".join(fit.layout.name(i) for i in absent)
        message = f"no standard error for {names}"
        log.warning(message)
        warnings.append(message)
    return replace(fit, standard_errors=errors, warnings=tuple(warnings))


def fit_sub_model(
    model: HierarchicalModel,
    sub_model: SubModel,
    controls: Optional[EmControls] = None,
    *,
    with_standard_errors: bool = True,
    extra_starts: Sequence[np.ndarray] = (),
) -> FitResult:
    """Multi-start EM, canonical class order and standard errors for one sub-model.

    ``extra_starts`` are fixed starting points tried after the random ones.
    """
    controls = controls or EmControls()
    problem = problem_for(model, sub_model)
    log.info(
        "Fitting the %s model: %s parameters, %s start(s).",
        sub_model.value,
        problem.layout.size,
        controls.starts + len(extra_starts),
    )

    def fit(seed: int) -> FitResult:
        init = starting_values(problem, seed, controls.scale)
        return run_em(problem, init, controls, seed=seed)

    best = multi_start(fit, controls)
    for init in extra_starts:
        try:
            candidate = run_em(problem, init, controls)
        except (EstimationError, ZeroLikelihoodError, MnlError) as e:
            log.warning("Fixed start failed: %s", e)
            continue
        logliks = best.start_logliks + (candidate.loglik,)
        best = replace(candidate if candidate.loglik > best.loglik else best, start_logliks=logliks)
    best = canonicalize_classes(best)
    return standard_errors(model, best) if with_standard_errors else best


def three_step_fit(model: HierarchicalModel, controls: Optional[EmControls] = None) -> ThreeStepResult:
    """Mode model, then neighbourhood model, then membership conditional on household class."""
    controls = controls or EmControls()
    mode = fit_sub_model(model, SubModel.mode_lccm, controls)
    neighbourhood = fit_sub_model(model, SubModel.neighbourhood_lccm, controls)

    params = {**mode.params(), **neighbourhood.params()}
    params["gamma"] = np.repeat(mode.params()["gamma"], model.R, axis=0)
    fixed = model.layout.pack(params)

    log.info("Fitting membership conditional on %s household class(es).", model.R)
    conditional = fit_conditional_membership(model, fixed, params["gamma"], controls)
    conditional = standard_errors(model, conditional)

    theta = conditional.full_theta
    loglik = model.full_loglik(theta)
    log.info("Three-step fit finished: full log-likelihood %.6f.", loglik)
    return ThreeStepResult(
        mode=mode,
        neighbourhood=neighbourhood,
        conditional=conditional,
        layout=model.layout,
        theta=theta,
        loglik=loglik,
        posteriors=model.posteriors(theta),
    )
