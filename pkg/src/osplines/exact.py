"""Exact integrated-Wiener-process covariances and a dense GP comparator.

The process of order ``p`` started at the origin has the stochastic-integral
representation W_p(x) = int_0^x (x-u)^{p-1}/(p-1)! dB(u), so the covariance
of derivatives (q1, q2) is

    sigma^2 * int_0^{min(s,t)} (s-u)^{p-q1-1} (t-u)^{p-q2-1}
                / ((p-q1-1)! (p-q2-1)!) du,

which this module evaluates in closed form by binomial expansion and
termwise monomial integration (exact up to rounding, O(p^2) per value).
Precision degrades for large p because the expansion alternates in sign;
a high-precision variant backs the prior-elicitation oracle.

Also here: a brute-force repeated-integration oracle, the covariance of the
overlapping-spline approximation, sup-norm error scans, and dense GP
regression used as the inferential comparator.  Everything is a pure
function of immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy import integrate, linalg

from .aghq import adapt_quadrature
from .basis import MAX_ORDER, OSplineBasis, _basis_columns
from .errors import InvalidArgumentError, NumericError


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidArgumentError(message)


# ---------------------------------------------------------------------------
# covariance of the exact process
# ---------------------------------------------------------------------------


def _wp_cov_terms(p: int, s, t, q1: int, q2: int):
    """sigma-free covariance via binomial expansion; works on arrays."""
    a = p - q1 - 1
    b = p - q2 - 1
    m = np.minimum(s, t)
    acc = np.zeros(np.broadcast(s, t).shape)
    for i in range(a + 1):
        ci = math.comb(a, i)
        for j in range(b + 1):
            c = ci * math.comb(b, j) * (-1) ** (i + j) / (i + j + 1)
            acc = acc + c * s ** (a - i) * t ** (b - j) * m ** (i + j + 1)
    return acc / (math.factorial(a) * math.factorial(b))


def _wp_cov_mp(p: int, s, t, q1: int, q2: int):
    """High-precision variant of :func:`_wp_cov_terms` (scalar, mpmath)."""
    a = p - q1 - 1
    b = p - q2 - 1
    s = mpmath.mpf(s)
    t = mpmath.mpf(t)
    m = min(s, t)
    acc = mpmath.mpf(0)
    for i in range(a + 1):
        for j in range(b + 1):
            c = mpmath.binomial(a, i) * mpmath.binomial(b, j) * (-1) ** (i + j)
            acc += c * s ** (a - i) * t ** (b - j) * m ** (i + j + 1) / (i + j + 1)
    return acc / (mpmath.factorial(a) * mpmath.factorial(b))


@dataclass(frozen=True)
class IWPKernel:
    """Exact covariance evaluator for the integrated Wiener process.

    ``order`` is the number of integrations p (>= 1); ``sigma`` scales the
    driving white noise.  Locations are distances from the process origin
    and must be non-negative.
    """

    order: int
    sigma: float

    def __post_init__(self):
        _require(
            isinstance(self.order, (int, np.integer)) and 1 <= self.order <= MAX_ORDER,
            f"order must be an integer in 1..{MAX_ORDER}",
        )
        _require(math.isfinite(self.sigma) and self.sigma >= 0, "sigma must be finite and >= 0")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "sigma", float(self.sigma))

    def cov(self, s: float, t: float, q1: int = 0, q2: int = 0) -> float:
        return exact_cov(self, s, t, q1, q2)

    def cov_matrix(self, s, t, q1: int = 0, q2: int = 0) -> np.ndarray:
        """len(s) x len(t) covariance block between derivatives q1 and q2."""
        _check_orders(self.order, q1, q2)
        s = np.asarray(s, dtype=float)[:, None]
        t = np.asarray(t, dtype=float)[None, :]
        _require(bool(np.all(s >= 0)) and bool(np.all(t >= 0)), "locations must be >= 0")
        if self.sigma == 0.0:
            return np.zeros((s.shape[0], t.shape[1]))
        return self.sigma**2 * _wp_cov_terms(self.order, s, t, q1, q2)


def _check_orders(p: int, q1: int, q2: int) -> None:
    _require(0 <= q1 < p and 0 <= q2 < p, f"derivative orders ({q1}, {q2}) must lie in 0..{p - 1}")


def exact_cov(kernel: IWPKernel, s: float, t: float, q1: int = 0, q2: int = 0) -> float:
    """Cov of the q1-th derivative at ``s`` and the q2-th derivative at ``t``."""
    _check_orders(kernel.order, q1, q2)
    _require(s >= 0 and t >= 0, "locations must be >= 0")
    if kernel.sigma == 0.0 or min(s, t) == 0.0:
        return 0.0
    return float(kernel.sigma**2 * _wp_cov_terms(kernel.order, float(s), float(t), q1, q2))


def integrate_cov_oracle(
    cov: Callable[[float, float], float],
    s: float,
    t: float,
    steps: tuple[int, int],
    abs_tol: float = 1e-9,
) -> float:
    """Repeated integration of a covariance function, by adaptive quadrature.

    ``steps = (a, b)`` integrates ``a`` times in the first argument (each step
    from 0) and ``b`` times in the second.  The iterated integrals are
    collapsed to at most a double integral through the classical repeated-
    integration identity I^a f(x) = int_0^x (x-u)^{a-1}/(a-1)! f(u) du, so the
    quadrature stays two-dimensional no matter how many steps are requested.

    This is deliberately independent of the closed-form kernel above and
    serves as its oracle.
    """
    a, b = steps
    _require(a >= 0 and b >= 0, "integration steps must be non-negative")
    _require(s >= 0 and t >= 0, "locations must be >= 0")
    if a == 0 and b == 0:
        return float(cov(s, t))
    if s == 0.0 or t == 0.0:
        return 0.0

    if b == 0:
        ca = 1.0 / math.factorial(a - 1)
        val, err = integrate.quad(
            lambda u: ca * (s - u) ** (a - 1) * cov(u, t), 0.0, s,
            points=[min(s, t)], epsabs=abs_tol / 10.0, epsrel=1e-12, limit=400,
        )
    elif a == 0:
        cb = 1.0 / math.factorial(b - 1)
        val, err = integrate.quad(
            lambda v: cb * (t - v) ** (b - 1) * cov(s, v), 0.0, t,
            points=[min(s, t)], epsabs=abs_tol / 10.0, epsrel=1e-12, limit=400,
        )
    else:
        # nested 1-D quadratures; the inner integral is split at v = u so
        # diagonal kinks (min-type covariances) do not poison the tolerance
        ca = 1.0 / math.factorial(a - 1)
        cb = 1.0 / math.factorial(b - 1)
        inner_tol = abs_tol / (10.0 * max(s, 1.0))

        def inner(u):
            wu = ca * (s - u) ** (a - 1) if a > 1 else ca
            val_in, _ = integrate.quad(
                lambda v: (cb * (t - v) ** (b - 1) if b > 1 else cb) * cov(u, v),
                0.0, t,
                points=[min(max(u, 0.0), t)],
                epsabs=inner_tol, epsrel=1e-13, limit=200,
            )
            return wu * val_in

        val, err = integrate.quad(
            inner, 0.0, s, points=[min(s, t)],
            epsabs=abs_tol / 10.0, epsrel=1e-12, limit=400,
        )
    if err > abs_tol:
        raise NumericError(
            f"repeated-integration quadrature did not reach tolerance: "
            f"estimated error {err:.3e} > {abs_tol:.3e} at (s={s}, t={t}, steps={steps})"
        )
    return float(val)


# ---------------------------------------------------------------------------
# covariance of the O-spline approximation
# ---------------------------------------------------------------------------


def ospline_cov_matrix(
    basis: OSplineBasis, sigma: float, s, t, q1: int = 0, q2: int = 0
) -> np.ndarray:
    """Covariance block sigma^2 * sum_i (1/d_i) phi_i^(q1)(s) phi_i^(q2)(t)."""
    p = basis.order
    _require(0 <= q1 <= p and 0 <= q2 <= p, f"derivative orders must lie in 0..{p}")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    inv_d = 1.0 / basis.knot_set.spacings
    left = _basis_columns(basis, s, q1) * inv_d
    right = _basis_columns(basis, t, q2)
    return sigma**2 * left @ right.T


def ospline_cov(
    basis: OSplineBasis, sigma: float, s: float, t: float, q1: int = 0, q2: int = 0
) -> float:
    """Covariance of the weight-sum approximation (spline part only)."""
    return float(ospline_cov_matrix(basis, sigma, [s], [t], q1, q2)[0, 0])


@dataclass(frozen=True)
class OSplineKernel:
    """Covariance evaluator for the O-spline approximation itself.

    Interchangeable with :class:`IWPKernel` in the dense GP comparator, which
    is what turns weight-space fits and function-space conditioning into two
    independent routes to the same posterior.
    """

    basis: OSplineBasis
    sigma: float

    @property
    def order(self) -> int:
        return self.basis.order

    def cov(self, s: float, t: float, q1: int = 0, q2: int = 0) -> float:
        return ospline_cov(self.basis, self.sigma, s, t, q1, q2)

    def cov_matrix(self, s, t, q1: int = 0, q2: int = 0) -> np.ndarray:
        return ospline_cov_matrix(self.basis, self.sigma, s, t, q1, q2)


@dataclass(frozen=True)
class CovGrid:
    """Covariance values over an (s, t) grid for one derivative pair."""

    s_values: np.ndarray
    t_values: np.ndarray
    values: np.ndarray
    derivative_orders: tuple[int, int]


def cov_grid(kernel, s_values, t_values, q1: int = 0, q2: int = 0) -> CovGrid:
    """Tabulate any kernel-like object (exact or O-spline) over a grid."""
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    return CovGrid(
        s_values=s_values,
        t_values=t_values,
        values=kernel.cov_matrix(s_values, t_values, q1, q2),
        derivative_orders=(int(q1), int(q2)),
    )


def sup_cov_error(
    order: int,
    k: int,
    region: tuple[float, float] = (0.0, 1.0),
    grid_density: int | None = None,
    q1: int = 0,
    q2: int = 0,
) -> float:
    """Max |exact - O-spline| covariance over a regular (s, t) grid, sigma = 1.

    The grid must resolve knot cells: at least 10 points per cell.  Each grid
    cell is evaluated independently so the maximum is deterministic regardless
    of evaluation order.
    """
    from .basis import build_equal_knots

    a, b = region
    if grid_density is None:
        grid_density = 10 * k
    _require(grid_density >= 10 * k, "grid density must be at least 10 points per knot cell")
    basis = OSplineBasis(order, build_equal_knots(a, b, k))
    kern = IWPKernel(order, 1.0)
    grid = np.linspace(a, b, int(grid_density))
    exact = kern.cov_matrix(grid - a, grid - a, q1, q2)
    approx = ospline_cov_matrix(basis, 1.0, grid, grid, q1, q2)
    return float(np.max(np.abs(exact - approx)))


# ---------------------------------------------------------------------------
# dense GP regression comparator
# ---------------------------------------------------------------------------


def _poly_cov_matrix(s, t, q1: int, q2: int, taus: np.ndarray) -> np.ndarray:
    """Covariance of the random polynomial trend sum_l gamma_l x^l."""
    s = np.asarray(s, dtype=float)[:, None]
    t = np.asarray(t, dtype=float)[None, :]
    p = taus.size
    acc = np.zeros(np.broadcast(s, t).shape)
    for l in range(p):
        if l < q1 or l < q2:
            continue
        cl = math.factorial(l) / math.factorial(l - q1) * math.factorial(l) / math.factorial(l - q2)
        acc += taus[l] ** 2 * cl * s ** (l - q1) * t ** (l - q2)
    return acc


@dataclass(frozen=True)
class GPFitResult:
    """Posterior summaries of a dense GP fit at the requested (x, q) pairs."""

    predict_at: tuple
    means: np.ndarray
    sds: np.ndarray


def exact_gp_fit(
    kernel,
    xs,
    ys,
    noise_sd: float,
    poly_prior_sd: Sequence[float],
    predict_at: Sequence[tuple[float, int]],
) -> GPFitResult:
    """Dense GP regression under kernel + random polynomial trend.

    Conditions the joint Gaussian of observations and requested derivative
    values on ``ys`` observed at ``xs`` with iid Gaussian noise.  The O(n^3)
    dense formulation is intentional: this is the correctness oracle and
    conditioning benchmark, not the production path.  ``kernel`` may be the
    exact process or an O-spline covariance adapter.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    _require(xs.size == ys.size, "xs and ys must have equal length")
    _require(xs.size <= 2000, "dense comparator is limited to n <= 2000")
    _require(noise_sd > 0, "noise_sd must be positive")
    taus = np.asarray(poly_prior_sd, dtype=float)
    _require(taus.size == kernel.order, "need one polynomial prior SD per power 0..p-1")
    _require(bool(np.all(taus >= 0)), "polynomial prior SDs must be >= 0")

    n = xs.size
    if n > 0:
        kobs = kernel.cov_matrix(xs, xs) + _poly_cov_matrix(xs, xs, 0, 0, taus)
        kobs[np.diag_indices_from(kobs)] += noise_sd**2
        try:
            chol = linalg.cho_factor(kobs, lower=True)
        except linalg.LinAlgError:
            cond = float(np.linalg.cond(kobs))
            raise NumericError(
                f"observation covariance is not numerically positive definite "
                f"(condition number {cond:.3e})"
            )
        alpha = linalg.cho_solve(chol, ys)

    means = np.empty(len(predict_at))
    sds = np.empty(len(predict_at))
    pts = [(float(x), int(q)) for x, q in predict_at]
    for qq in sorted({q for _, q in pts}):
        idx = [i for i, (_, q) in enumerate(pts) if q == qq]
        xq = np.array([pts[i][0] for i in idx])
        prior_var = np.diag(kernel.cov_matrix(xq, xq, qq, qq)) + np.diag(
            _poly_cov_matrix(xq, xq, qq, qq, taus)
        )
        if n == 0:
            means[idx] = 0.0
            sds[idx] = np.sqrt(prior_var)
            continue
        kx = kernel.cov_matrix(xq, xs, qq, 0) + _poly_cov_matrix(xq, xs, qq, 0, taus)
        means[idx] = kx @ alpha
        half = linalg.solve_triangular(chol[0], kx.T, lower=True)
        var = prior_var - np.sum(half**2, axis=0)
        sds[idx] = np.sqrt(np.maximum(var, 0.0))
    return GPFitResult(predict_at=tuple(pts), means=means, sds=sds)


@dataclass
class ExactHierarchicalFit:
    """Dense-comparator fit with the scale hyperparameter integrated out."""

    order: int
    xs: np.ndarray
    derivs: tuple[int, ...]
    sigma_grid: np.ndarray
    weights: np.ndarray
    log_marginal: float
    kappa_max: float
    condition_numbers: np.ndarray
    means: dict = field(repr=False)
    sds: dict = field(repr=False)
    sample_curves: dict = field(repr=False, default_factory=dict)

    def moments(self, q: int) -> tuple[np.ndarray, np.ndarray]:
        return self.means[q], self.sds[q]


def exact_hierarchical_fit(
    order: int,
    xs,
    ys,
    noise_sd: float,
    poly_prior_sd: Sequence[float],
    sigma_prior,
    predict_x=None,
    derivs: Sequence[int] = (0, 1, 2),
    num_quad: int = 10,
    num_samples: int = 0,
    seed: int = 0,
) -> ExactHierarchicalFit:
    """Dense GP fit with adaptive quadrature over theta = log(sigma).

    ``sigma_prior`` needs a ``log_pdf`` and a ``median`` (used to start the
    optimizer).  Posterior means/SDs of the requested derivatives are exact
    mixture moments over the quadrature grid.  With ``num_samples > 0`` the
    joint posterior of all derivative curves is additionally sampled, which
    mirrors the full sampling pipeline of the weight-space fitter.

    The reported condition numbers are those of the factorized observation
    covariance at each quadrature point, the linear system this method
    actually solves.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    taus = np.asarray(poly_prior_sd, dtype=float)
    _require(noise_sd > 0, "noise_sd must be positive")
    _require(taus.size == order, "need one polynomial prior SD per power 0..p-1")
    predict_x = xs if predict_x is None else np.atleast_1d(np.asarray(predict_x, dtype=float))
    derivs = tuple(int(q) for q in derivs)
    _require(all(0 <= q < order for q in derivs), "derivative orders must lie in 0..p-1")

    n = xs.size
    kern_unit = IWPKernel(order, 1.0)
    kw_obs = kern_unit.cov_matrix(xs, xs)
    poly_obs = _poly_cov_matrix(xs, xs, 0, 0, taus)
    noise = noise_sd**2 * np.eye(n)

    kw_cross = {q: kern_unit.cov_matrix(predict_x, xs, q, 0) for q in derivs}
    poly_cross = {q: _poly_cov_matrix(predict_x, xs, q, 0, taus) for q in derivs}
    kw_pred = {q: np.diag(kern_unit.cov_matrix(predict_x, predict_x, q, q)) for q in derivs}
    poly_pred = {q: np.diag(_poly_cov_matrix(predict_x, predict_x, q, q, taus)) for q in derivs}

    chol_cache: dict[float, tuple] = {}

    def obs_cov(sig2: float) -> np.ndarray:
        return poly_obs + sig2 * kw_obs + noise

    def log_post(theta) -> float:
        sigma = float(np.exp(theta[0]))
        key = theta[0].item() if hasattr(theta[0], "item") else float(theta[0])
        if key not in chol_cache:
            cov = obs_cov(sigma**2)
            try:
                chol = linalg.cho_factor(cov, lower=True)
            except linalg.LinAlgError:
                raise NumericError(
                    "exact-comparator observation covariance failed to factorize"
                )
            chol_cache[key] = chol
        chol = chol_cache[key]
        alpha = linalg.cho_solve(chol, ys)
        logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
        loglik = -0.5 * ys @ alpha - 0.5 * logdet - 0.5 * n * np.log(2.0 * np.pi)
        return float(loglik + sigma_prior.log_pdf(sigma) + theta[0])

    theta0 = np.array([np.log(sigma_prior.median)])
    grid = adapt_quadrature(log_post, theta0, num_quad)

    sigmas = np.exp(grid.points[:, 0])
    weights = grid.weights
    m = sigmas.size

    means = {q: np.zeros(predict_x.size) for q in derivs}
    second = {q: np.zeros(predict_x.size) for q in derivs}
    cns = np.empty(m)
    for j, sigma in enumerate(sigmas):
        cov = obs_cov(sigma**2)
        chol = linalg.cho_factor(cov, lower=True)
        alpha = linalg.cho_solve(chol, ys)
        eigs = np.linalg.eigvalsh(cov)
        cns[j] = np.inf if eigs[0] <= 0 else float(eigs[-1] / eigs[0])
        for q in derivs:
            kx = poly_cross[q] + sigma**2 * kw_cross[q]
            mq = kx @ alpha
            half = linalg.solve_triangular(chol[0], kx.T, lower=True)
            vq = np.maximum(poly_pred[q] + sigma**2 * kw_pred[q] - np.sum(half**2, axis=0), 0.0)
            means[q] += weights[j] * mq
            second[q] += weights[j] * (vq + mq**2)
    sds = {q: np.sqrt(np.maximum(second[q] - means[q] ** 2, 0.0)) for q in derivs}

    fit = ExactHierarchicalFit(
        order=order,
        xs=predict_x,
        derivs=derivs,
        sigma_grid=sigmas,
        weights=weights,
        log_marginal=grid.log_normconst,
        kappa_max=float(np.max(cns)),
        condition_numbers=cns,
        means=means,
        sds=sds,
    )
    if num_samples > 0:
        fit.sample_curves = _sample_exact_curves(
            order, xs, ys, noise_sd, taus, predict_x, derivs, sigmas, weights,
            kw_obs, poly_obs, noise, num_samples, seed,
        )
    return fit


def _sample_exact_curves(
    order, xs, ys, noise_sd, taus, predict_x, derivs, sigmas, weights,
    kw_obs, poly_obs, noise, num_samples, seed,
):
    """Joint posterior draws of all derivative curves, mixed over the grid."""
    kern_unit = IWPKernel(order, 1.0)
    npred = predict_x.size
    nq = len(derivs)
    kw_cross = np.vstack([kern_unit.cov_matrix(predict_x, xs, q, 0) for q in derivs])
    poly_cross = np.vstack([_poly_cov_matrix(predict_x, xs, q, 0, taus) for q in derivs])
    kw_joint = np.block([
        [kern_unit.cov_matrix(predict_x, predict_x, qi, qj) for qj in derivs] for qi in derivs
    ])
    poly_joint = np.block([
        [_poly_cov_matrix(predict_x, predict_x, qi, qj, taus) for qj in derivs] for qi in derivs
    ])

    rng = np.random.default_rng([seed, 3])
    counts = rng.multinomial(num_samples, weights)
    draws = np.empty((num_samples, nq * npred))
    row = 0
    for j, sigma in enumerate(sigmas):
        if counts[j] == 0:
            continue
        cov = poly_obs + sigma**2 * kw_obs + noise
        chol = linalg.cho_factor(cov, lower=True)
        alpha = linalg.cho_solve(chol, ys)
        kx = poly_cross + sigma**2 * kw_cross
        mean = kx @ alpha
        half = linalg.solve_triangular(chol[0], kx.T, lower=True)
        post_cov = poly_joint + sigma**2 * kw_joint - half.T @ half
        # the subtraction cancels prior-scale terms, leaving symmetric noise
        # well above the smallest true eigenvalues; escalate a diagonal
        # jitter until the factorization goes through
        scale = max(float(np.mean(np.diag(post_cov))), np.finfo(float).tiny)
        lpost = None
        jitter = 1e-10
        while jitter <= 1e-2:
            try:
                lpost = np.linalg.cholesky(
                    post_cov + jitter * scale * np.eye(post_cov.shape[0])
                )
                break
            except np.linalg.LinAlgError:
                jitter *= 100.0
        if lpost is None:
            raise NumericError(
                "joint predictive covariance failed to factorize "
                f"(n={xs.size}, sigma={sigma:.3g})"
            )
        child = np.random.default_rng([seed, 4, j])
        z = child.standard_normal((counts[j], nq * npred))
        draws[row : row + counts[j]] = mean + z @ lpost.T
        row += counts[j]
    return {q: draws[:, i * npred : (i + 1) * npred] for i, q in enumerate(derivs)}
