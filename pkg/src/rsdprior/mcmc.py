"""Posterior simulation for the logit coefficients under a normal prior.

The sampler is an adaptive random-walk Metropolis: proposals are
multivariate normal with covariance ``s^2 * Sigma``, where ``Sigma`` is the
Laplace approximation to the posterior covariance at the posterior mode.
``log s`` is tuned by Robbins-Monro over ``tune_loops`` batches of
``tune_len`` proposals toward ``target_accept``, then frozen for burn-in
and sampling. Draws are kept unthinned.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import DegenerateData, DimensionMismatch, InvalidConfig
from .model import Dataset, inverse_logit, log_likelihood, softplus
from .priors import PriorSpec

INIT_CHOICES = ("auto", "mle", "prior-mean", "zero")


@dataclass(frozen=True)
class McmcConfig:
    tune_loops: int = 100
    tune_len: int = 50
    burn_in: int = 1000
    draws: int = 5000
    seed: int = 0
    target_accept: float = 0.234
    init: str = "auto"
    initial_scale: float | None = None

    def __post_init__(self):
        for name in ("tune_loops", "tune_len", "burn_in", "draws"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        if self.draws < 1:
            raise InvalidConfig("draws must be at least 1")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidConfig("target_accept must lie in (0, 1)")
        if self.init not in INIT_CHOICES:
            raise InvalidConfig(f"init must be one of {INIT_CHOICES}")
        if self.initial_scale is not None and not self.initial_scale > 0:
            raise InvalidConfig("initial_scale must be positive")

    def with_seed(self, seed: int) -> "McmcConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return asdict(self)


# --desk profile: same protocol, fewer retained draws.
DESK = McmcConfig(draws=1000)


def derive_seed(master_seed: int, *keys: int) -> int:
    """Stable 64-bit child seed for ``(master_seed, *keys)``.

    Independent of call order, so parallel and sequential runs agree.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def log_posterior(beta, data: Dataset, prior: PriorSpec) -> float:
    """Unnormalized log posterior: log-likelihood plus the prior's quadratic form.

    Additive constants of the normal density are dropped.
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != prior.dim or data.coefficient_count != prior.dim:
        raise DimensionMismatch(
            f"beta ({beta.size}), data ({data.coefficient_count}) and prior ({prior.dim}) disagree"
        )
    d = beta - prior.mean
    return log_likelihood(beta, data) - 0.5 * float(d @ prior.precision @ d)


def posterior_mode(data: Dataset, prior: PriorSpec, tol: float = 1e-9, max_iter: int = 200):
    """Damped Newton maximization of the log posterior.

    The log posterior is strictly concave for a positive-definite prior, so
    this converges even on separated or single-class data.

    Returns
    -------
    mode : ndarray
    neg_hessian : ndarray
        Negative Hessian of the log posterior at the mode.
    """
    X, y = data.X, data.y
    P = prior.precision
    gamma = prior.mean

    def objective(b):
        eta = X @ b
        d = b - gamma
        return y @ eta - softplus(eta).sum() - 0.5 * d @ P @ d

    beta = gamma.copy()
    obj = objective(beta)
    for _ in range(max_iter):
        p = inverse_logit(X @ beta)
        grad = X.T @ (y - p) - P @ (beta - gamma)
        negH = (X.T * (p * (1.0 - p))) @ X + P
        step = np.linalg.solve(negH, grad)
        if np.max(np.abs(step)) < tol:
            beta = beta + step
            break
        t = 1.0
        while True:
            cand = beta + t * step
            new = objective(cand)
            if new >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        beta, obj = cand, new
    p = inverse_logit(X @ beta)
    negH = (X.T * (p * (1.0 - p))) @ X + P
    return beta, 0.5 * (negH + negH.T)


def effective_sample_size(x) -> float:
    """ESS of one chain by Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    if not np.any(xc):
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(f * np.conj(f), 2 * n)[:n] / n
    rho = acov / acov[0]
    m = (n - 1) // 2
    pairs = rho[0 : 2 * m : 2] + rho[1 : 2 * m : 2]
    positive = pairs > 0
    cut = int(np.argmin(positive)) if not positive.all() else pairs.size
    pairs = np.minimum.accumulate(pairs[:cut]) if cut else pairs[:0]
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / math.log10(n))
    return float(n / tau)


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    draws: np.ndarray
    accept_rate: float
    final_step_scale: float
    config: McmcConfig
    tune_accept_rate: float | None = None

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.draws.std(axis=0, ddof=1)

    def ess(self) -> np.ndarray:
        return np.array([effective_sample_size(col) for col in self.draws.T])

    def mc_se(self) -> np.ndarray:
        return self.sd / np.sqrt(self.ess())

    def diagnostics(self) -> dict:
        return {
            "accept_rate": float(self.accept_rate),
            "ess": self.ess().tolist(),
            "step_scale": float(self.final_step_scale),
        }

    def write_csv(self, path) -> None:
        """Dump the draw matrix with header ``b0..b{C-1}``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"b{j}" for j in range(self.draws.shape[1])])
            for row in self.draws:
                w.writerow([repr(float(v)) for v in row])


def _initial_point(kind, data, prior, mode):
    if kind == "auto":
        return mode.copy()
    if kind == "prior-mean":
        return prior.mean.copy()
    if kind == "zero":
        return np.zeros(prior.dim)
    from .mle import fit_mle

    try:
        est = fit_mle(data)
    except DegenerateData:
        return prior.mean.copy()
    return est.beta.copy() if est.converged else prior.mean.copy()


def sample_posterior(data: Dataset, prior: PriorSpec, config: McmcConfig = McmcConfig()) -> PosteriorDraws:
    """Draw ``config.draws`` coefficient vectors from the posterior.

    Deterministic for a fixed ``config.seed``. Works on any amount of data,
    including none and single-class outcomes.

    Raises
    ------
    NonPositiveDefinitePrior
        If the prior covariance does not factor.
    DimensionMismatch
        If the data and prior dimensions differ.
    """
    C = prior.dim
    if data.coefficient_count != C:
        raise DimensionMismatch(f"data has {data.coefficient_count} coefficients, prior has {C}")
    P = prior.precision
    gamma = prior.mean
    X, y = data.X, data.y

    mode, negH = posterior_mode(data, prior)
    try:
        chol_prec = np.linalg.cholesky(negH)
        # Sigma = negH^-1 = (L L')^-1, so a draw is L'^-1 z.
        prop_factor = np.linalg.inv(chol_prec).T
    except np.linalg.LinAlgError:
        prop_factor = np.linalg.cholesky(prior.cov)

    rng = np.random.default_rng(config.seed)
    n_tune = config.tune_loops * config.tune_len
    total = n_tune + config.burn_in + config.draws
    steps = rng.standard_normal((total, C)) @ prop_factor.T
    log_u = np.log(rng.random(total))

    def lp(b):
        eta = X @ b
        d = b - gamma
        return float(y @ eta - softplus(eta).sum() - 0.5 * (d @ P @ d))

    cur = _initial_point(config.init, data, prior, mode)
    cur_lp = lp(cur)
    log_scale = math.log(config.initial_scale or 2.38 / math.sqrt(C))
    scale = math.exp(log_scale)

    i = 0
    tune_acc = 0
    for k in range(config.tune_loops if config.tune_len else 0):
        acc = 0
        for _ in range(config.tune_len):
            prop = cur + scale * steps[i]
            prop_lp = lp(prop)
            if log_u[i] < prop_lp - cur_lp:
                cur, cur_lp = prop, prop_lp
                acc += 1
            i += 1
        tune_acc += acc
        log_scale += 3.0 / math.sqrt(k + 1.0) * (acc / config.tune_len - config.target_accept)
        scale = math.exp(log_scale)

    for _ in range(config.burn_in):
        prop = cur + scale * steps[i]
        prop_lp = lp(prop)
        if log_u[i] < prop_lp - cur_lp:
            cur, cur_lp = prop, prop_lp
        i += 1

    out = np.empty((config.draws, C))
    accepted = 0
    for j in range(config.draws):
        prop = cur + scale * steps[i]
        prop_lp = lp(prop)
        if log_u[i] < prop_lp - cur_lp:
            cur, cur_lp = prop, prop_lp
            accepted += 1
        out[j] = cur
        i += 1

    out.setflags(write=False)
    return PosteriorDraws(
        draws=out,
        accept_rate=accepted / config.draws,
        final_step_scale=scale,
        config=config,
        tune_accept_rate=tune_acc / n_tune if n_tune else None,
    )


def posterior_mean_prediction(draws: PosteriorDraws | np.ndarray, x):
    """Posterior mean of the response probability for design row(s) ``x``.

    Averages ``inverse_logit(beta_k' x)`` over the draws; this is not the
    same as plugging in the average coefficient vector. A 1-D ``x`` gives a
    float, a 2-D array of rows gives one probability per row.
    """
    B = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != B.shape[1]:
        raise DimensionMismatch(f"design row has {x.shape[-1]} entries, draws have {B.shape[1]}")
    if x.ndim == 1:
        return float(np.mean(inverse_logit(B @ x)))
    return inverse_logit(x @ B.T).mean(axis=1)
