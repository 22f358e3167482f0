"""Three-part sampler for the hybrid ecological/survey count model.

Each sweep updates, in order: the missing internal cell counts of every unit
given its log-ratio vector, each unit's log-ratio vector given its counts and
(mu, Sigma), then (mu, Sigma) given all log-ratio vectors.
"""

from __future__ import annotations

import logging
import warnings
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import lgamma

import numpy as np

from . import _kernels as K_
from .data import DataError, Dataset, validate_dataset
from .draws import DrawStore, concat_stores, pack_sigma
from .estimands import estimands_from_totals
from .logit import to_omega

logger = logging.getLogger(__name__)

# forking after the threaded kernels have run aborts the child
_SPAWN = multiprocessing.get_context("spawn")

_N_STREAMS = 7
_DEFAULT_BLOCK = 128


class InfeasibleSurveyError(DataError):
    """No nonnegative completion of a unit's unsampled counts exists."""


@dataclass(frozen=True)
class HyperPrior:
    mu0: np.ndarray
    kappa0: np.ndarray
    nu0: float
    psi0: np.ndarray

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float).ravel()
        D = mu0.size
        kappa0 = np.asarray(self.kappa0, dtype=float)
        psi0 = np.asarray(self.psi0, dtype=float)
        if kappa0.shape != (D, D) or psi0.shape != (D, D):
            raise ValueError("hyperprior matrices must be D x D with D = len(mu0)")
        for name, m in (("kappa0", kappa0), ("psi0", psi0)):
            if not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        if self.nu0 < D + 1:
            raise ValueError(f"nu0 must be at least dim + 1 = {D + 1}")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "kappa0", kappa0)
        object.__setattr__(self, "psi0", psi0)
        object.__setattr__(self, "nu0", float(self.nu0))

    @property
    def dim(self) -> int:
        return self.mu0.size

    @classmethod
    def default(cls, dim: int) -> "HyperPrior":
        """Weakly informative default: prior mean of Sigma is the identity."""
        nu0 = dim + 4
        return cls(np.zeros(dim), 10.0 * np.eye(dim), nu0, np.eye(dim) * (nu0 - dim - 1))

    def sigma_start(self) -> np.ndarray:
        if self.nu0 > self.dim + 1:
            return self.psi0 / (self.nu0 - self.dim - 1)
        return self.psi0.copy()


@dataclass(frozen=True)
class ChainConfig:
    n_burnin: int = 100_000
    n_keep: int = 50_000
    thin: int = 10
    counts_moves_per_sweep: int | None = None  # None means R*C
    rw_scale: float = 0.3
    adapt: bool = True
    seed: int = 0
    delta_max: int = 3
    update_hyper: bool = True
    check_invariants: bool = True
    parallel: bool = False
    block_size: int = _DEFAULT_BLOCK

    def __post_init__(self):
        if self.thin < 1 or self.n_keep < 1 or self.n_burnin < 0:
            raise ValueError("need thin >= 1, n_keep >= 1 and n_burnin >= 0")
        if self.counts_moves_per_sweep is not None and self.counts_moves_per_sweep < 1:
            raise ValueError("counts_moves_per_sweep must be positive")
        if self.rw_scale <= 0 or self.delta_max < 1 or self.block_size < 1:
            raise ValueError("rw_scale, delta_max and block_size must be positive")

    def moves(self, R: int, C: int) -> int:
        return self.counts_moves_per_sweep or R * C

    @property
    def n_sweeps(self) -> int:
        return self.n_burnin + self.n_keep * self.thin


@dataclass
class ChainState:
    """Mutable sampler state. Arrays are updated in place by the step functions."""

    N: np.ndarray  # (I, R, C) internal cell counts
    K: np.ndarray  # (I, R, C) survey counts, zero outside the sample
    rows: np.ndarray
    cols: np.ndarray
    omega: np.ndarray  # (I, D)
    mu: np.ndarray
    sigma: np.ndarray
    log_scale: np.ndarray
    sweep: int = 0
    counts_accepted: np.ndarray = field(default=None)
    omega_accepted: np.ndarray = field(default=None)
    alpha_sum: np.ndarray = field(default=None)
    n_post: int = 0
    margin_violations: int = 0
    jitter_events: int = 0

    def __post_init__(self):
        I = self.N.shape[0]
        if self.counts_accepted is None:
            self.counts_accepted = np.zeros(I, np.int64)
        if self.omega_accepted is None:
            self.omega_accepted = np.zeros(I, np.int64)
        if self.alpha_sum is None:
            self.alpha_sum = np.zeros(I)

    @property
    def M(self) -> np.ndarray:
        return self.N - self.K

    def copy(self) -> "ChainState":
        return ChainState(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})

    def check(self) -> int:
        """Number of units whose counts violate margins or fall below the survey."""
        return int(K_.margin_violations(self.N, self.K, self.rows, self.cols))

    def omega_acceptance(self) -> np.ndarray:
        """Post-burn-in acceptance rate of the log-ratio random walk, per unit."""
        return self.omega_accepted / max(self.n_post, 1)


# ---------------------------------------------------------------------------
# Initialisation


def ipf(seed, row_totals, col_totals, tol: float = 1e-12, max_iter: int = 1000) -> np.ndarray:
    """Iterative proportional fitting of a nonnegative seed table to the given margins."""
    x = np.asarray(seed, dtype=float).copy()
    r = np.asarray(row_totals, dtype=float)
    c = np.asarray(col_totals, dtype=float)
    for _ in range(max_iter):
        rs = x.sum(axis=1)
        x *= np.divide(r, rs, out=np.zeros_like(r), where=rs > 0)[:, None]
        cs = x.sum(axis=0)
        x *= np.divide(c, cs, out=np.zeros_like(c), where=cs > 0)[None, :]
        if np.abs(x.sum(axis=1) - r).max(initial=0.0) <= tol * max(r.sum(), 1.0):
            break
    return x


def round_to_margins(x, row_totals, col_totals) -> np.ndarray:
    """Round a real table to nonnegative integers with exactly the given margins.

    Floors every cell, hands the leftover units to cells in order of largest
    fractional part while both the row and column still need them, and closes
    any remaining gap with a north-west-corner fill.
    """
    x = np.asarray(x, dtype=float)
    rows = np.asarray(row_totals, dtype=np.int64)
    cols = np.asarray(col_totals, dtype=np.int64)
    out = np.floor(x + 1e-9).astype(np.int64)
    out = np.maximum(out, 0)
    # flooring can overshoot only through the epsilon; pull back if so
    for axis, target in ((1, rows), (0, cols)):
        over = out.sum(axis=axis) - target
        for k in np.flatnonzero(over > 0):
            line = out[k] if axis == 1 else out[:, k]
            for j in np.argsort(x[k] if axis == 1 else x[:, k]):
                take = min(line[j], over[k])
                line[j] -= take
                over[k] -= take
                if over[k] == 0:
                    break
    need_r = rows - out.sum(axis=1)
    need_c = cols - out.sum(axis=0)
    frac = x - np.floor(x)
    for flat in np.argsort(-frac, axis=None, kind="stable"):
        r, c = np.unravel_index(flat, x.shape)
        if need_r[r] > 0 and need_c[c] > 0:
            out[r, c] += 1
            need_r[r] -= 1
            need_c[c] -= 1
    r = c = 0
    R, C = out.shape
    while r < R and c < C:
        t = min(need_r[r], need_c[c])
        out[r, c] += t
        need_r[r] -= t
        need_c[c] -= t
        if need_r[r] == 0:
            r += 1
        else:
            c += 1
    return out


def init_state(d: Dataset, h: HyperPrior, cfg: ChainConfig) -> ChainState:
    """Starting state: IPF-rounded counts around the survey, smoothed log-ratios, prior-centred hyperparameters."""
    validate_dataset(d).raise_if_failed()
    if h.dim != d.dims.dim:
        raise ValueError(f"hyperprior dimension {h.dim} does not match R*(C-1) = {d.dims.dim}")
    rows, cols, K = d.arrays()
    I, R, C = K.shape
    N = np.empty((I, R, C), dtype=np.int64)
    for i, uid in enumerate(d.unit_ids):
        rm = rows[i] - K[i].sum(axis=1)
        cm = cols[i] - K[i].sum(axis=0)
        if (rm < 0).any() or (cm < 0).any():
            raise InfeasibleSurveyError(
                f"unit {uid}: survey counts exceed the margins, no nonnegative completion exists"
            )
        M = round_to_margins(ipf(np.ones((R, C)), rm, cm), rm, cm)
        N[i] = K[i] + M
    smoothed = N + 0.5
    omega = np.stack([to_omega(t / t.sum(axis=1, keepdims=True)) for t in smoothed])
    return ChainState(
        N=N,
        K=np.array(K),
        rows=np.array(rows),
        cols=np.array(cols),
        omega=omega,
        mu=h.mu0.copy(),
        sigma=h.sigma_start(),
        log_scale=np.full(I, np.log(cfg.rw_scale)),
    )


# ---------------------------------------------------------------------------
# Single steps


def log_conditional_counts(cell_counts, k, theta, rows=None, cols=None) -> float:
    """Log of prod_rc theta^m / m! for the unsampled counts m = N - K (K = 0 if absent).

    Equals the log conditional probability of the missing counts given theta
    and the margins, up to a constant that does not depend on them.
    """
    N = np.asarray(cell_counts, dtype=np.int64)
    theta = np.asarray(theta, dtype=float)
    if rows is not None and not np.array_equal(N.sum(axis=1), rows):
        raise ValueError("cell counts violate the row totals")
    if cols is not None and not np.array_equal(N.sum(axis=0), cols):
        raise ValueError("cell counts violate the column totals")
    if k is not None:
        k = getattr(k, "k", k)
        m = N - np.asarray(k, dtype=np.int64)
    else:
        m = N
    if (m < 0).any():
        raise ValueError("cell counts fall below the survey counts")
    out = 0.0
    for mrc, t in zip(m.ravel(), theta.ravel()):
        if mrc:
            out += mrc * np.log(t)
        out -= lgamma(mrc + 1.0)
    return float(out)


def _logfact(s: ChainState) -> np.ndarray:
    return K_.log_factorial_table(max(int(s.rows.max(initial=0)), 1))


def step_counts(s: ChainState, d: Dataset, cfg: ChainConfig, rng: np.random.Generator) -> ChainState:
    """One sweep of margin-preserving swap moves on every unit's table (in place)."""
    I, R, C = s.N.shape
    bits = rng.bit_generator.random_raw((I, cfg.moves(R, C)))
    U = rng.random((I, cfg.moves(R, C)))
    acc = np.zeros(I, np.int64)
    sweep = K_.counts_sweep_parallel if cfg.parallel else K_.counts_sweep
    sweep(s.N, s.K, s.omega, bits, U, cfg.delta_max, _logfact(s), acc)
    if s.sweep >= cfg.n_burnin:
        s.counts_accepted += acc
    return s


def step_omega(s: ChainState, cfg: ChainConfig, rng: np.random.Generator) -> ChainState:
    """Random-walk Metropolis on each unit's log-ratio vector, proposal covariance scale^2 * Sigma."""
    I, D = s.omega.shape
    Z = rng.standard_normal((I, D))
    U = rng.random(I)
    prec, ok = K_.spd_inverse(s.sigma)
    chol = np.linalg.cholesky(s.sigma)
    alpha = np.empty(I)
    acc = np.zeros(I, np.int64)
    sweep = K_.omega_sweep_parallel if cfg.parallel else K_.omega_sweep
    sweep(s.N, s.omega, s.mu, prec, chol, s.log_scale, Z, U, alpha, acc)
    if s.sweep < cfg.n_burnin:
        if cfg.adapt:
            gain = (s.sweep + 1.0) ** -0.6
            s.log_scale[:] = np.clip(s.log_scale + gain * (alpha - K_.TARGET_ACCEPT), K_._LOG_SCALE_MIN, K_._LOG_SCALE_MAX)
    else:
        s.omega_accepted += acc
        s.alpha_sum += alpha
    return s


def _chi2_dofs(h: HyperPrior, n_units: int) -> np.ndarray:
    return h.nu0 + n_units - np.arange(h.dim)


def draw_mu_given_sigma(s: ChainState, h: HyperPrior, rng: np.random.Generator) -> np.ndarray:
    k0inv = np.linalg.inv(h.kappa0)
    mu, ok = K_.draw_mu(s.omega, s.sigma, k0inv, k0inv @ h.mu0, rng.standard_normal(h.dim))
    if not ok:
        raise np.linalg.LinAlgError("Sigma is not positive definite")
    s.mu[:] = mu
    return s.mu


def draw_sigma_given_mu(s: ChainState, h: HyperPrior, rng: np.random.Generator) -> np.ndarray:
    D = h.dim
    chi2 = rng.chisquare(_chi2_dofs(h, s.omega.shape[0]))
    Z = rng.standard_normal((D, D))
    sigma, jit = K_.inv_wishart(K_.scatter(s.omega, s.mu, h.psi0), chi2, Z)
    if jit:
        warnings.warn("scatter matrix was not positive definite; added diagonal jitter", RuntimeWarning)
        s.jitter_events += jit
    s.sigma[:] = sigma
    return s.sigma


def step_hyper(s: ChainState, h: HyperPrior, rng: np.random.Generator) -> ChainState:
    """Draw mu | Sigma, omega then Sigma | mu, omega from their conjugate conditionals."""
    draw_mu_given_sigma(s, h, rng)
    draw_sigma_given_mu(s, h, rng)
    return s


def sweep(s: ChainState, d: Dataset, h: HyperPrior, cfg: ChainConfig, rng: np.random.Generator) -> ChainState:
    """One full sweep through the step functions (the slow, inspectable path)."""
    step_counts(s, d, cfg, rng)
    step_omega(s, cfg, rng)
    if cfg.update_hyper:
        step_hyper(s, h, rng)
    if s.sweep >= cfg.n_burnin:
        s.n_post += 1
    if cfg.check_invariants:
        s.margin_violations += s.check()
    s.sweep += 1
    return s


# ---------------------------------------------------------------------------
# Full chains


def chain_streams(seed: int, chain: int) -> list[np.random.Generator]:
    """Independent generators for each kind of random input of one chain."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(chain)])
    return [np.random.default_rng(c) for c in ss.spawn(_N_STREAMS)]


def run_chain(
    d: Dataset,
    h: HyperPrior | None = None,
    cfg: ChainConfig | None = None,
    chain: int = 0,
    source: str = "0",
    state: ChainState | None = None,
) -> DrawStore:
    """Run one chain and return its retained draws.

    Executes ``cfg.n_burnin + cfg.n_keep * cfg.thin`` sweeps and keeps every
    ``thin``-th post-burn-in sweep. Results depend only on (data, prior,
    config, chain index); ``cfg.parallel`` and ``cfg.block_size`` do not
    change them.
    """
    cfg = cfg or ChainConfig()
    d = d.drop_empty_units()
    if d.n_units == 0:
        raise DataError("dataset has no units with positive population")
    h = h or HyperPrior.default(d.dims.dim)
    s = state if state is not None else init_state(d, h, cfg)
    I, R, C = s.N.shape
    D = d.dims.dim
    moves = cfg.moves(R, C)
    g_bits, g_counts, g_z, g_u, g_mu, g_chi, g_bart = chain_streams(cfg.seed, chain)

    k0inv = np.linalg.inv(h.kappa0)
    k0inv_mu0 = k0inv @ h.mu0
    dofs = _chi2_dofs(h, I)
    lf = _logfact(s)
    rec_totals = np.zeros((cfg.n_keep, R, C), dtype=np.int64)
    rec_mu = np.zeros((cfg.n_keep, D))
    rec_sigma = np.zeros((cfg.n_keep, D, D))
    rec_pos = 0
    total = cfg.n_sweeps
    t = 0
    while t < total:
        b = min(cfg.block_size, total - t)
        B_counts = g_bits.bit_generator.random_raw((b, I, moves))
        U_counts = g_counts.random((b, I, moves))
        Z_omega = g_z.standard_normal((b, I, D))
        U_omega = g_u.random((b, I))
        Z_mu = g_mu.standard_normal((b, D))
        CHI2 = g_chi.chisquare(np.broadcast_to(dofs, (b, D)))
        Z_bart = g_bart.standard_normal((b, D, D))
        rec_pos, viol, jit = K_.run_block(
            s.N, s.K, s.omega, s.mu, s.sigma, s.log_scale,
            s.counts_accepted, s.omega_accepted, s.alpha_sum,
            B_counts, U_counts, Z_omega, U_omega, Z_mu, CHI2, Z_bart,
            k0inv, k0inv_mu0, h.psi0, cfg.delta_max, lf,
            t, cfg.n_burnin, cfg.thin, cfg.adapt, cfg.update_hyper, cfg.check_invariants,
            s.rows, s.cols, rec_totals, rec_mu, rec_sigma, rec_pos, cfg.parallel,
        )
        s.margin_violations += viol
        s.jitter_events += jit
        t += b
    s.sweep = total
    s.n_post = total - cfg.n_burnin
    if s.jitter_events:
        warnings.warn(f"Sigma draw needed diagonal jitter {s.jitter_events} time(s)", RuntimeWarning)
    if s.margin_violations:
        logger.error("chain %d: %d margin violations", chain, s.margin_violations)

    values = np.concatenate([estimands_from_totals(rec_totals), rec_mu, pack_sigma(rec_sigma)], axis=1)
    iters = cfg.n_burnin + cfg.thin * np.arange(1, cfg.n_keep + 1)
    diagnostics = {
        "omega_acceptance": float(s.omega_accepted.sum() / max(s.n_post * I, 1)),
        "counts_acceptance": float(s.counts_accepted.sum() / max(s.n_post * I * moves, 1)),
        "margin_violations": int(s.margin_violations),
        "jitter_events": int(s.jitter_events),
        "n_units": I,
    }
    return DrawStore(
        d.dims,
        values,
        np.full(cfg.n_keep, chain),
        iters,
        np.full(cfg.n_keep, source, dtype=object),
        diagnostics,
    )


def _run_chain_job(args):
    d, h, cfg, chain, source = args
    return run_chain(d, h, cfg, chain=chain, source=source)


def run_chains(
    d: Dataset,
    h: HyperPrior | None = None,
    cfg: ChainConfig | None = None,
    n_chains: int = 1,
    workers: int = 1,
    source: str = "0",
) -> DrawStore:
    """Run several chains (optionally in worker processes) and stack them in chain order."""
    cfg = cfg or ChainConfig()
    jobs = [(d, h, cfg, k, source) for k in range(n_chains)]
    if workers > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=_SPAWN) as pool:
            stores = list(pool.map(_run_chain_job, jobs))
    else:
        stores = [_run_chain_job(j) for j in jobs]
    return concat_stores(stores) if len(stores) > 1 else stores[0]
