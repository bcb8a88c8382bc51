import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np
from scipy.special import rel_entr

from poisson_cs.algo.functions import HALF_LOG_TWO_PI, js_divergence_terms
from poisson_cs.exceptions import DomainError, InfeasibleEpsilon, InfeasibleStart, InvalidParam, LengthMismatch
from poisson_cs.utils.measurement_helpers import as_counts
from poisson_cs.utils.transform_helpers import BasisKind


logger = logging.getLogger(__name__)

LOG_TWO = math.log(2.0)

# Relative slack allowed on accepted objective values
MONOTONE_SLACK = 1e-9


class FitKind(Enum):
    JSD = "jsd"
    SNLL = "snll"
    GEN_KL = "gen_kl"


"""
Penalized problem solved for each estimator name. P2 constrains the SQJSD and is solved as a
sequence of JSD-penalized problems.
"""
ESTIMATOR_FIT_KINDS = {
    "P2": FitKind.JSD,
    "P4": FitKind.JSD,
    "P5": FitKind.SNLL,
    "P6": FitKind.GEN_KL,
}


@dataclass(frozen=True)
class FitTerm:
    kind: FitKind = FitKind.JSD
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FitKind(self.kind))

        if not self.beta >= 0:
            raise InvalidParam("beta must be non-negative, got {0}".format(self.beta))

    @property
    def drops_zero_measurements(self):
        """
        SNLL and GenKL are evaluated only on non-zero measurements when no smoothing offset is used.
        """

        return self.kind is not FitKind.JSD and self.beta == 0


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    grad_tol: float = 1e-10
    objective_tol: float = 1e-8
    step_init: Optional[float] = None
    backtrack_factor: float = 0.5
    step_growth: float = 1.25
    nonneg_signal: bool = True
    nonneg_coefficients: bool = False
    enforce_intensity: Optional[float] = None
    acceleration: bool = True
    stall_iterations: int = 5
    max_backtracks: int = 80

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidParam("max_iters must be at least 1")

        if self.grad_tol <= 0 or self.objective_tol <= 0:
            raise InvalidParam("tolerances must be positive")

        if not 0 < self.backtrack_factor < 1:
            raise InvalidParam("backtrack_factor must lie in (0, 1)")

        if self.step_growth < 1:
            raise InvalidParam("step_growth must be at least 1")

        if self.step_init is not None and self.step_init <= 0:
            raise InvalidParam("step_init must be positive")

        if self.enforce_intensity is not None and self.enforce_intensity <= 0:
            raise InvalidParam("enforce_intensity must be positive")


@dataclass(frozen=True)
class P2Config:
    bisection_steps: int = 40
    relative_tolerance: float = 0.01
    lambda_max_scale: float = 100.0
    lambda_min_ratio: float = 1e-10
    bracket_expansions: int = 6

    def __post_init__(self):
        if self.bisection_steps < 1 or self.relative_tolerance <= 0:
            raise InvalidParam("bisection_steps and relative_tolerance must be positive")

        if not 0 < self.lambda_min_ratio < 1:
            raise InvalidParam("lambda_min_ratio must lie in (0, 1)")


@dataclass(eq=False)
class SolveResult:
    theta_star: np.ndarray
    objective_trace: List[float]
    iterations: int
    converged: bool
    constraint_residual: Optional[float] = None
    lambda_used: Optional[float] = None
    solves: int = 1
    backtracks: int = 0
    active_measurements: Optional[int] = field(default=None)

    @property
    def objective(self):
        return self.objective_trace[-1]


def _domain_violation(fit, shifted_counts, shifted_rates):
    if fit.kind is FitKind.JSD:
        # J stays finite and differentiable at u_i = 0 where y_i = 0
        return np.any(shifted_rates < 0) or np.any((shifted_rates == 0) & (shifted_counts > 0))

    if fit.kind is FitKind.SNLL and np.any(shifted_counts <= 0):
        return True

    return np.any(shifted_rates <= 0)


def _fit_terms(fit, shifted_counts, shifted_rates):
    """
    Value and gradient w.r.t. u of the fit term at already shifted (y + beta, u + beta), with no
    domain validation.
    """

    y, u = shifted_counts, shifted_rates

    if fit.kind is FitKind.JSD:
        value = float(np.sum(js_divergence_terms(y, u)))
        total = y + u
        safe_total = np.where(total > 0, total, 1.0)
        ratio = np.where(total > 0, 2 * u / safe_total, 2.0)

        with np.errstate(divide="ignore"):
            gradient = 0.5 * np.log(ratio)

        return value, gradient

    if fit.kind is FitKind.GEN_KL:
        value = float(np.sum(rel_entr(y, u) - y + u))
        return value, 1 - y / u

    value = float(np.sum(rel_entr(y, u) + rel_entr(u, y) + 0.5 * np.log(y) + 0.5 * np.log(u) + 2 * HALF_LOG_TWO_PI))
    gradient = 1 - y / u + np.log(u / y) + 0.5 / u

    return value, gradient


def _fit_curvature(fit, shifted_counts, shifted_rates):
    y, u = shifted_counts, shifted_rates

    if fit.kind is FitKind.JSD:
        total = np.where(y + u > 0, y + u, 1.0)
        safe_u = np.where(u > 0, u, 1.0)
        return np.where(y > 0, 0.5 * y / (safe_u * total), 0.0)

    if fit.kind is FitKind.GEN_KL:
        return y / u ** 2

    return np.abs(y / u ** 2 + 1 / u - 0.5 / u ** 2)


def fit_value_and_gradient(fit, y, u):
    """
    Evaluates a data-fit term and its exact gradient with respect to the rates u.

    JSD: J(y + beta, u + beta), dJ/du_i = log(2 (u_i + beta) / (y_i + u_i + 2 beta)) / 2.
    GenKL: G(y + beta, u + beta), dG/du_i = 1 - (y_i + beta) / (u_i + beta).
    SNLL: G(y', u') + G(u', y') + sum(log(y'_i) / 2 + log(u'_i) / 2 + log(2 pi)),
    dSNLL/du_i = 1 - y'_i / u'_i + log(u'_i / y'_i) + 1 / (2 u'_i).

    :param fit: FitTerm.
    :param y: MeasurementVector or count array.
    :param u: Rate vector of the same length.
    :return: Tuple (value, gradient).
    """

    counts = as_counts(y)
    u = np.asarray(u, dtype=float)

    if u.shape != counts.shape:
        raise LengthMismatch("rates of shape {0} do not match {1} measurements".format(u.shape, counts.size))

    shifted_counts = counts + fit.beta
    shifted_rates = u + fit.beta

    if _domain_violation(fit, shifted_counts, shifted_rates):
        raise DomainError("rates lie outside the domain of the {0} fit term".format(fit.kind.value))

    return _fit_terms(fit, shifted_counts, shifted_rates)


def soft_threshold(v, t):
    """
    Proximal operator of t ||.||_1: sign(v_i) max(|v_i| - t, 0).
    """

    if t < 0:
        raise InvalidParam("threshold must be non-negative, got {0}".format(t))

    v = np.asarray(v, dtype=float)

    return np.sign(v) * np.maximum(np.abs(v) - t, 0)


def rrmse(x, x_star):
    """
    Relative reconstruction error ||x - x*||_2 / ||x||_2.

    :param x: Reference signal with non-zero norm.
    :param x_star: Estimate.
    :return: RRMSE.
    """

    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)

    if x.shape != x_star.shape:
        raise LengthMismatch("signals have different shapes: {0} and {1}".format(x.shape, x_star.shape))

    reference_norm = np.linalg.norm(x)

    if reference_norm == 0:
        raise InvalidParam("RRMSE is undefined for a zero reference signal")

    return float(np.linalg.norm(x - x_star) / reference_norm)


class _PenalizedObjective:
    """
    F(theta) = lam ||theta||_1 + fit(y, A theta) restricted to the measurements the fit uses.
    """

    def __init__(self, A, basis, y, fit, lam, cfg):
        A = np.asarray(A, dtype=float)
        counts = as_counts(y)

        if A.shape[0] != counts.size:
            raise LengthMismatch("matrix has {0} rows but there are {1} measurements".format(A.shape[0], counts.size))

        if A.shape[1] != basis.dim:
            raise LengthMismatch("matrix has {0} columns but the basis has dimension {1}".format(
                A.shape[1], basis.dim))

        active = counts > 0 if fit.drops_zero_measurements else np.ones(counts.size, dtype=bool)

        if not np.any(active):
            raise DomainError("the {0} fit term has no non-zero measurements to use".format(fit.kind.value))

        if not np.all(active):
            logger.debug("Ignoring %d zero-valued measurements for the %s fit", np.sum(~active), fit.kind.value)

        self.A = A[active]
        self.basis = basis
        self.shifted_counts = counts[active] + fit.beta
        self.fit = fit
        self.lam = lam
        self.cfg = cfg
        self.active_measurements = int(np.sum(active))
        self._psi = None if basis.kind is BasisKind.IDENTITY else basis.matrix

    def smooth(self, theta):
        """
        Returns (value, gradient w.r.t. theta) or None outside the fit's domain.
        """

        shifted_rates = self.A @ theta + self.fit.beta

        if _domain_violation(self.fit, self.shifted_counts, shifted_rates):
            return None

        value, rate_gradient = _fit_terms(self.fit, self.shifted_counts, shifted_rates)

        return value, self.A.T @ rate_gradient

    def smooth_value(self, theta):
        shifted_rates = self.A @ theta + self.fit.beta

        if _domain_violation(self.fit, self.shifted_counts, shifted_rates):
            return None

        return _fit_terms(self.fit, self.shifted_counts, shifted_rates)[0]

    def penalty(self, theta):
        return self.lam * float(np.sum(np.abs(theta)))

    def project(self, theta):
        if self.cfg.nonneg_coefficients:
            theta = np.maximum(theta, 0)

        if self.cfg.nonneg_signal:
            if self._psi is None:
                theta = np.maximum(theta, 0)
            else:
                # One clamp-and-reanalyse pass; not the exact composite prox
                signal = self._psi @ theta

                if np.any(signal < 0):
                    theta = self._psi.T @ np.maximum(signal, 0)

        return theta

    def prox(self, v, step):
        return self.project(soft_threshold(v, step * self.lam))

    def initial_theta(self):
        """
        Flux-matched constant start: theta_0 = Psi^T (c 1) with c chosen so that sum(A theta_0)
        equals the measured flux.
        """

        ones_theta = self.basis.analyze(np.ones(self.basis.dim))
        ones_rates = self.A @ ones_theta
        flux = float(np.sum(self.shifted_counts - self.fit.beta))
        total = float(np.sum(ones_rates))

        if total <= 0:
            raise InfeasibleStart("the sensing matrix maps the constant signal to zero")

        theta = (flux / total if flux > 0 else 1.0) * ones_theta

        if self.smooth(theta) is None:
            raise InfeasibleStart("the constant start lies outside the {0} fit domain".format(self.fit.kind.value))

        return theta

    def lipschitz_estimate(self, theta):
        shifted_rates = self.A @ theta + self.fit.beta
        curvature = float(np.max(_fit_curvature(self.fit, self.shifted_counts, shifted_rates)))
        operator_norm = float(np.linalg.norm(self.A, 2)) ** 2

        return max(curvature * operator_norm, np.finfo(float).tiny)


def lambda_max(A, basis, y, fit=FitTerm(), cfg=SolverConfig()):
    """
    Reference regularisation scale ||grad f(theta_0)||_inf at the flux-matched start theta_0.
    Omniscient lambda grids and the P2 bracket are expressed relative to it.
    """

    objective = _PenalizedObjective(A, basis, y, fit, 1.0, cfg)
    theta = objective.initial_theta()

    return float(np.max(np.abs(objective.smooth(theta)[1])))


def _finish(objective, theta):
    if objective.cfg.enforce_intensity is not None:
        signal = objective.basis.synthesize(theta)
        flux = float(np.sum(np.abs(signal)))

        if flux > 0:
            theta = objective.basis.analyze(signal * objective.cfg.enforce_intensity / flux)

    return theta


def solve_penalized(A, basis, y, fit, lam, cfg=SolverConfig(), theta_init=None):
    """
    Minimises F(theta) = lam ||theta||_1 + fit(y, A theta) by proximal gradient with backtracking
    line search, optionally accelerated with momentum and a monotone restart.

    :param A: Effective N x m matrix Phi Psi.
    :param basis: OrthonormalBasis Psi.
    :param y: MeasurementVector or count array.
    :param fit: FitTerm.
    :param lam: Regularisation weight > 0.
    :param cfg: SolverConfig.
    :param theta_init: Optional warm start; the flux-matched constant start is used otherwise.
    :return: SolveResult. converged is False when the iteration cap is hit.
    """

    if not lam > 0:
        raise InvalidParam("lambda must be positive, got {0}".format(lam))

    objective = _PenalizedObjective(A, basis, y, fit, lam, cfg)

    theta = None if theta_init is None else objective.project(np.asarray(theta_init, dtype=float))

    if theta is None or objective.smooth(theta) is None:
        theta = objective.initial_theta()

    f_theta, _ = objective.smooth(theta)
    F_theta = f_theta + objective.penalty(theta)

    step = cfg.step_init if cfg.step_init is not None else 1.0 / objective.lipschitz_estimate(theta)

    trace = [F_theta]
    extrapolated = theta
    momentum = 1.0
    stalled = 0
    backtracks = 0
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iters + 1):
        base = extrapolated if cfg.acceleration else theta
        smooth_at_base = objective.smooth(base)

        if smooth_at_base is None:
            base, momentum = theta, 1.0
            smooth_at_base = objective.smooth(base)

        f_base, gradient = smooth_at_base

        for _ in range(cfg.max_backtracks):
            candidate = objective.prox(base - step * gradient, step)
            difference = candidate - base
            f_candidate = objective.smooth_value(candidate)

            if f_candidate is not None:
                bound = f_base + float(gradient @ difference) + float(difference @ difference) / (2 * step)

                if f_candidate <= bound + 1e-12 * abs(f_base):
                    break

            step *= cfg.backtrack_factor
            backtracks += 1
        else:
            logger.warning("Line search failed after %d backtracks at iteration %d", cfg.max_backtracks, iteration)
            break

        F_candidate = f_candidate + objective.penalty(candidate)

        if F_candidate > F_theta + MONOTONE_SLACK * max(1.0, abs(F_theta)):
            if base is not theta:
                # Monotone restart: drop the momentum and retry from the last accepted iterate
                extrapolated, momentum = theta, 1.0
                continue

            logger.debug("No descent from the current iterate at iteration %d", iteration)
            converged = True
            break

        mapping_norm = float(np.linalg.norm(difference)) / step
        relative_change = abs(F_theta - F_candidate) / max(abs(F_theta), np.finfo(float).tiny)

        previous = theta
        theta, F_theta = candidate, F_candidate
        trace.append(F_theta)

        next_momentum = (1 + math.sqrt(1 + 4 * momentum ** 2)) / 2
        extrapolated = theta + ((momentum - 1) / next_momentum) * (theta - previous)
        momentum = next_momentum

        stalled = stalled + 1 if relative_change < cfg.objective_tol else 0

        if stalled >= cfg.stall_iterations or mapping_norm < cfg.grad_tol:
            converged = True
            break

        step *= cfg.step_growth

    if not converged:
        logger.warning("Proximal gradient stopped after %d iterations without converging (lambda=%.3g)",
                       iteration, lam)

    return SolveResult(
        theta_star=_finish(objective, theta),
        objective_trace=trace,
        iterations=iteration,
        converged=converged,
        lambda_used=lam,
        backtracks=backtracks,
        active_measurements=objective.active_measurements,
    )


def solve_penalized_path(A, basis, y, fit, lambdas, cfg=SolverConfig()):
    """
    Solves the penalized problem for every lambda in decreasing order, warm-starting each solve
    from the previous solution.

    :return: List of SolveResult in the order of :param lambdas.
    """

    results = {}
    theta = None

    for lam in sorted(lambdas, reverse=True):
        result = solve_penalized(A, basis, y, fit, lam, cfg, theta_init=theta)
        results[lam] = result
        theta = result.theta_star

    return [results[lam] for lam in lambdas]


def constraint_value(A, y, theta, beta=0.0):
    """
    sqrt(J(y + beta, A theta + beta)), the quantity bounded by epsilon in the constrained problem.
    """

    counts = as_counts(y)
    rates = np.maximum(np.asarray(A, dtype=float) @ theta, 0)

    return math.sqrt(float(np.sum(js_divergence_terms(counts + beta, rates + beta))))


def solve_p2(A, basis, y, epsilon, cfg=SolverConfig(), p2_cfg=P2Config(), fit=FitTerm()):
    """
    Solves min ||theta||_1 subject to sqrt(J(y, A theta)) <= epsilon by bisection on log(lambda)
    over JSD-penalized problems. The map lambda -> sqrt(J(y, A theta*(lambda))) is non-decreasing,
    so the bisection stops when it lands within the relative tolerance of epsilon, or returns the
    largest lambda found that satisfies the constraint from below.

    :param A: Effective N x m matrix.
    :param basis: OrthonormalBasis.
    :param y: MeasurementVector or count array.
    :param epsilon: Constraint radius > 0.
    :param cfg: SolverConfig for the inner solves.
    :param p2_cfg: P2Config for the bisection.
    :param fit: JSD FitTerm, only its beta is configurable.
    :return: SolveResult with lambda_used and constraint_residual set.
    """

    if not epsilon > 0:
        raise InvalidParam("epsilon must be positive, got {0}".format(epsilon))

    if fit.kind is not FitKind.JSD:
        raise InvalidParam("the constrained problem bounds the SQJSD; use a JSD fit term")

    A = np.asarray(A, dtype=float)
    tolerance = p2_cfg.relative_tolerance * epsilon
    m = A.shape[1]

    at_zero = constraint_value(A, y, np.zeros(m), fit.beta)

    if at_zero <= epsilon:
        logger.debug("Constraint inactive at theta = 0 (%.4g <= %.4g)", at_zero, epsilon)
        return SolveResult(theta_star=np.zeros(m), objective_trace=[0.0], iterations=0, converged=True,
                           constraint_residual=at_zero - epsilon, lambda_used=None, solves=0)

    lam_hi = p2_cfg.lambda_max_scale * lambda_max(A, basis, y, fit, cfg)
    # Floor is relative: lambda_max * lambda_max_scale * lambda_min_ratio, not an absolute value
    lam_lo = lam_hi * p2_cfg.lambda_min_ratio
    solves = 0

    def solve_at(lam, warm_start):
        nonlocal solves
        solves += 1
        result = solve_penalized(A, basis, y, fit, lam, cfg, theta_init=warm_start)
        return result, constraint_value(A, y, result.theta_star, fit.beta)

    lo_result, r_lo = solve_at(lam_lo, None)

    if r_lo > epsilon + tolerance:
        raise InfeasibleEpsilon("smallest achievable SQJSD {0:.6g} exceeds epsilon {1:.6g}".format(r_lo, epsilon))

    hi_result, r_hi = solve_at(lam_hi, None)

    for _ in range(p2_cfg.bracket_expansions):
        if r_hi >= epsilon:
            break

        lam_lo, lo_result, r_lo = lam_hi, hi_result, r_hi
        lam_hi *= 100.0
        hi_result, r_hi = solve_at(lam_hi, None)

    best, r_best, lam_best, hit = lo_result, r_lo, lam_lo, abs(r_lo - epsilon) <= tolerance

    if r_hi <= epsilon:
        best, r_best, lam_best, hit = hi_result, r_hi, lam_hi, True

    # Bisection solves are warm-started only from the upper end of the bracket, never from the
    # nearly unregularized fit at the floor, which is dense when N < m
    warm_start = None

    for _ in range(p2_cfg.bisection_steps):
        if hit:
            break

        lam_mid = math.sqrt(lam_lo * lam_hi)
        result, r_mid = solve_at(lam_mid, warm_start)

        if abs(r_mid - epsilon) <= tolerance:
            best, r_best, lam_best, hit = result, r_mid, lam_mid, True
        elif r_mid > epsilon:
            lam_hi, warm_start = lam_mid, result.theta_star
        else:
            lam_lo, best, r_best, lam_best = lam_mid, result, r_mid, lam_mid

    converged = best.converged and (hit or r_best <= epsilon + tolerance)

    if not converged:
        logger.warning("Constrained solve ended with SQJSD %.6g for epsilon %.6g", r_best, epsilon)

    logger.debug("Constrained solve: lambda=%.4g, SQJSD=%.6g, epsilon=%.6g, %d inner solves",
                 lam_best, r_best, epsilon, solves)

    return replace(best, constraint_residual=r_best - epsilon, lambda_used=lam_best, converged=converged,
                   solves=solves)
