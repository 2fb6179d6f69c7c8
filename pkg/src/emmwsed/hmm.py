"""Two-state Gaussian HMM: scaled forward-backward, EM, Viterbi.

Every routine accepts a single window of shape ``(D,)`` or a batch of
independent windows ``(..., D)``; model parameters broadcast against the
leading axes.  State 0 is the idle PU (H0), state 1 the active PU (H1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detectors import WeightScheme, decide, mwsed_statistic
from .stats import gaussian_logpdf

TRANSITION_CLAMP = 1e-4
MIN_RESPONSIBILITY = 1e-8
GRID = np.round(np.arange(1, 10) * 0.1, 10)
EM_TOL = 1e-6
EM_MAX_ITER = 200


class DegenerateInputError(ValueError):
    pass


class DegenerateComponentError(ValueError):
    def __init__(self, msg, index=None, iteration=None):
        super().__init__(msg)
        self.index = index
        self.iteration = iteration


class HMMNumericalError(FloatingPointError):
    pass


@dataclass
class ModelParams:
    """Emission means/variances per state plus alpha = P(0|1), beta = P(1|0)."""

    mu0: np.ndarray | float
    var0: np.ndarray | float
    mu1: np.ndarray | float
    var1: np.ndarray | float
    alpha: np.ndarray | float = 0.5
    beta: np.ndarray | float = 0.5

    NAMES = ("mu0", "var0", "mu1", "var1", "alpha", "beta")

    @classmethod
    def from_vector(cls, v) -> "ModelParams":
        v = np.asarray(v, dtype=float)
        return cls(*(v[..., k] for k in range(6)))

    def as_vector(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(*(np.asarray(getattr(self, n), float)
                                              for n in self.NAMES)), axis=-1)

    @property
    def shape(self) -> tuple[int, ...]:
        return np.broadcast_shapes(*(np.shape(getattr(self, n)) for n in self.NAMES))

    def means(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(np.asarray(self.mu0, float), np.asarray(self.mu1, float)), -1)

    def variances(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(np.asarray(self.var0, float), np.asarray(self.var1, float)), -1)

    def prior(self) -> np.ndarray:
        a, b = np.broadcast_arrays(np.asarray(self.alpha, float), np.asarray(self.beta, float))
        with np.errstate(invalid="ignore", divide="ignore"):
            p1 = np.where(a + b > 0, b / (a + b), 0.5)
        return np.stack([1.0 - p1, p1], -1)

    def transitions(self) -> np.ndarray:
        """A[..., g, h] = P(s_d = h | s_{d-1} = g)."""
        a, b = np.broadcast_arrays(np.asarray(self.alpha, float), np.asarray(self.beta, float))
        return np.stack([np.stack([1.0 - b, b], -1), np.stack([a, 1.0 - a], -1)], -2)

    def __getitem__(self, idx) -> "ModelParams":
        return ModelParams.from_vector(self.as_vector()[idx])

    def to_dict(self) -> dict:
        return {n: np.asarray(getattr(self, n)).tolist() for n in self.NAMES}


@dataclass
class ForwardBackwardPass:
    nu: np.ndarray  # (..., D, 2) normalized forward messages
    scale: np.ndarray  # (..., D) per-step normalizers of the shifted emissions
    log_shift: np.ndarray  # (..., D) log-emission shift folded out before scaling
    loglik: np.ndarray
    emission: np.ndarray  # (..., D, 2) shifted emission densities
    pi: np.ndarray | None = None  # (..., D, 2) scaled backward messages

    @property
    def log_scale(self) -> np.ndarray:
        return np.log(self.scale) + self.log_shift


@dataclass
class PosteriorMarginals:
    gamma: np.ndarray  # (..., D, 2)
    xi: np.ndarray  # (..., D-1, 2, 2); xi[..., k, h, g] = P(s_{k+1}=h, s_k=g | x)


@dataclass
class ViterbiTrellis:
    log_omega: np.ndarray  # (..., D, 2)
    backpointers: np.ndarray  # (..., D, 2); row 0 unused


def log_emissions(x, params: ModelParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = gaussian_logpdf(x[..., :, None], params.means()[..., None, :],
                          params.variances()[..., None, :])
    batch = np.broadcast_shapes(x.shape[:-1], params.shape)
    return np.broadcast_to(out, batch + out.shape[-2:])


def forward_pass(x, params: ModelParams) -> ForwardBackwardPass:
    """Scaled forward recursion; ``loglik`` is log p(x | params)."""
    logb = log_emissions(x, params)
    shift = logb.max(axis=-1)
    e = np.exp(logb - shift[..., None])
    A = params.transitions()
    prior = params.prior()
    D = e.shape[-2]
    nu = np.empty(e.shape)
    scale = np.empty(e.shape[:-1])
    cur = prior * e[..., 0, :]
    for d in range(D):
        if d:
            cur = (prev[..., 0, None] * A[..., 0, :] + prev[..., 1, None] * A[..., 1, :]) * e[..., d, :]
        c = cur.sum(axis=-1)
        if not np.all(c > 0) or not np.all(np.isfinite(c)):
            raise HMMNumericalError(f"zero or non-finite emission mass at step {d + 1}")
        prev = cur / c[..., None]
        nu[..., d, :] = prev
        scale[..., d] = c
    loglik = np.sum(np.log(scale) + shift, axis=-1)
    return ForwardBackwardPass(nu, scale, shift, loglik, e)


def backward_pass(fb: ForwardBackwardPass, params: ModelParams) -> np.ndarray:
    """Backward messages scaled by the forward normalizers; pi_D = 1."""
    e, c = fb.emission, fb.scale
    A = params.transitions()
    pi = np.empty(e.shape)
    nxt = np.ones(e.shape[:-2] + (2,))
    D = e.shape[-2]
    pi[..., D - 1, :] = nxt
    for d in range(D - 2, -1, -1):
        m = e[..., d + 1, :] * nxt
        nxt = (A[..., :, 0] * m[..., 0, None] + A[..., :, 1] * m[..., 1, None]) / c[..., d + 1, None]
        pi[..., d, :] = nxt
    fb.pi = pi
    return pi


def posterior_marginals(fb: ForwardBackwardPass, params: ModelParams) -> PosteriorMarginals:
    if fb.pi is None:
        backward_pass(fb, params)
    g = fb.nu * fb.pi
    gamma = g / g.sum(axis=-1, keepdims=True)
    A = params.transitions()
    # joint[..., k, h, g] ~ nu_k(g) A[g, h] e_{k+1}(h) pi_{k+1}(h)
    joint = (fb.nu[..., :-1, None, :] * np.swapaxes(A, -1, -2)[..., None, :, :]
             * (fb.emission[..., 1:, :] * fb.pi[..., 1:, :])[..., :, :, None])
    xi = joint / joint.sum(axis=(-1, -2), keepdims=True)
    return PosteriorMarginals(gamma, xi)


def e_step(x, params: ModelParams) -> tuple[ForwardBackwardPass, PosteriorMarginals]:
    fb = forward_pass(x, params)
    backward_pass(fb, params)
    return fb, posterior_marginals(fb, params)


def variance_floor(x) -> np.ndarray:
    return np.maximum(1e-8, 1e-6 * np.var(np.asarray(x, float), axis=-1))


def _transition_q(alpha, beta, first, counts):
    """Transition part of the expected complete-data log-likelihood."""
    a, b = alpha, beta
    return (first[..., 0] * np.log(a / (a + b)) + first[..., 1] * np.log(b / (a + b))
            + counts[..., 0, 1] * np.log(a) + counts[..., 1, 1] * np.log1p(-a)
            + counts[..., 1, 0] * np.log(b) + counts[..., 0, 0] * np.log1p(-b))


def _smaller_root(A, n, k):
    # root in [0, 1) of k t^2 - (A + n + k) t + A = 0, written to avoid cancellation
    s = A + n + k
    return 2 * A / (s + np.sqrt(np.maximum(s * s - 4 * k * A, 0.0)))


def m_step(x, marginals: PosteriorMarginals, prev: ModelParams | None = None,
           floor=None, initial_term: bool = True) -> ModelParams:
    """Closed-form maximizer of the expected complete-data log-likelihood.

    Emission updates are the responsibility-weighted means and variances.
    The transition counts give alpha and beta directly; because the first
    state is drawn from the stationary law beta/(alpha+beta), that term is
    folded in by a few fixed-point sweeps unless ``initial_term`` is False.
    If the refined pair would lower the objective relative to ``prev`` the
    previous pair is kept.  Components come back ordered so that mu0 <= mu1
    (alpha and beta swap with them); transitions are clamped away from 0 and 1.
    """
    x = np.asarray(x, dtype=float)
    gamma = marginals.gamma
    resp = gamma.sum(axis=-2)
    bad = np.any(resp < MIN_RESPONSIBILITY, axis=-1)
    if np.any(bad):
        raise DegenerateComponentError("a component lost all responsibility",
                                       index=np.flatnonzero(np.ravel(bad)))
    mu = np.einsum("...dh,...d->...h", gamma, x) / resp
    dev = (x[..., :, None] - mu[..., None, :]) ** 2
    var = np.einsum("...dh,...dh->...h", gamma, dev) / resp
    if floor is None:
        floor = variance_floor(x)
    var = np.maximum(var, np.asarray(floor)[..., None])

    counts = marginals.xi.sum(axis=-3)  # [..., h, g]: h next state, g previous
    from_on = counts[..., 0, 1] + counts[..., 1, 1]
    from_off = counts[..., 1, 0] + counts[..., 0, 0]
    old_a = 0.5 if prev is None else np.asarray(prev.alpha, float)
    old_b = 0.5 if prev is None else np.asarray(prev.beta, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.where(from_on > 0, counts[..., 0, 1] / from_on, old_a)
        beta = np.where(from_off > 0, counts[..., 1, 0] / from_off, old_b)
    if initial_term:
        first = gamma[..., 0, :]
        a, b = alpha, beta
        for _ in range(50):
            k = 1.0 / np.maximum(a + b, TRANSITION_CLAMP)
            a_new = _smaller_root(first[..., 0] + counts[..., 0, 1], counts[..., 1, 1], k)
            b_new = _smaller_root(first[..., 1] + counts[..., 1, 0], counts[..., 0, 0], k)
            b_new = np.where(from_off + first[..., 1] > 0, b_new, b)
            a_new = np.where(from_on + first[..., 0] > 0, a_new, a)
            step = np.max(np.abs(a_new - a) + np.abs(b_new - b))
            a, b = a_new, b_new
            if step < 1e-13:
                break
        alpha, beta = a, b
    alpha = np.clip(alpha, TRANSITION_CLAMP, 1 - TRANSITION_CLAMP)
    beta = np.clip(beta, TRANSITION_CLAMP, 1 - TRANSITION_CLAMP)
    if initial_term and prev is not None:
        pa = np.clip(old_a, TRANSITION_CLAMP, 1 - TRANSITION_CLAMP)
        pb = np.clip(old_b, TRANSITION_CLAMP, 1 - TRANSITION_CLAMP)
        keep = _transition_q(pa, pb, first, counts) > _transition_q(alpha, beta, first, counts)
        alpha = np.where(keep, pa, alpha)
        beta = np.where(keep, pb, beta)
    return canonical_order(ModelParams(mu[..., 0], var[..., 0], mu[..., 1], var[..., 1], alpha, beta))


def canonical_order(p: ModelParams) -> ModelParams:
    v = p.as_vector()
    swap = v[..., 0] > v[..., 2]
    if not np.any(swap):
        return p
    out = v.copy()
    out[swap] = v[swap][..., [2, 3, 0, 1, 5, 4]]
    return ModelParams.from_vector(out)


def _kmeans(x):
    """Batched 1-D 2-means from (min, max) starts.  Returns params and an ok mask."""
    x = np.asarray(x, dtype=float)
    c0, c1 = x.min(axis=-1), x.max(axis=-1)
    ok = c1 > c0
    assign = None
    for _ in range(100):
        hi = x > ((c0 + c1) / 2)[..., None]
        if assign is not None and np.array_equal(hi, assign):
            break
        assign = hi
        n1 = hi.sum(axis=-1)
        n0 = x.shape[-1] - n1
        with np.errstate(invalid="ignore", divide="ignore"):
            c1 = np.where(n1 > 0, np.where(hi, x, 0).sum(-1) / n1, c1)
            c0 = np.where(n0 > 0, np.where(hi, 0, x).sum(-1) / n0, c0)
    n1 = np.maximum(assign.sum(-1), 1)
    n0 = np.maximum(x.shape[-1] - assign.sum(-1), 1)
    v1 = np.where(assign, (x - c1[..., None]) ** 2, 0).sum(-1) / n1
    v0 = np.where(assign, 0, (x - c0[..., None]) ** 2).sum(-1) / n0
    floor = variance_floor(x)
    return ModelParams(c0, np.maximum(v0, floor), c1, np.maximum(v1, floor)), ok


def kmeans_init(x) -> ModelParams:
    """Emission initialization by 2-means clustering of the window samples.

    Lloyd iterations start from the minimum and maximum sample; variances
    are the within-cluster (population) variances, floored.  Transition
    fields are left at 0.5.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise DegenerateInputError("need at least two samples")
    params, ok = _kmeans(x)
    if not np.all(ok):
        raise DegenerateInputError("all samples identical; cannot split into two clusters")
    return params


def grid_init_transitions(x, emissions: ModelParams, grid=GRID):
    """(alpha, beta) maximizing the likelihood over ``grid`` x ``grid``.

    Ties go to the lexicographically smallest (alpha, beta).
    """
    x = np.asarray(x, dtype=float)
    a = np.repeat(grid, len(grid))
    b = np.tile(grid, len(grid))
    em = emissions
    p = ModelParams(*(np.asarray(getattr(em, n), float)[..., None] for n in ("mu0", "var0", "mu1", "var1")),
                    alpha=a, beta=b)
    ll = forward_pass(x[..., None, :], p).loglik
    best = np.argmax(ll, axis=-1)
    return a[best], b[best]


def initialize(x) -> ModelParams:
    """K-means emissions plus grid-searched transitions."""
    em = kmeans_init(x)
    a, b = grid_init_transitions(x, em)
    return ModelParams(em.mu0, em.var0, em.mu1, em.var1, a, b)


@dataclass
class EMResult:
    params: ModelParams
    loglik_trace: np.ndarray  # (iterations, ...); NaN once a window has stopped
    iterations: np.ndarray | int
    converged: np.ndarray | bool
    failed: np.ndarray | bool
    initial_loglik: np.ndarray | float
    param_history: np.ndarray  # (iterations + 1, ..., 6), frozen after stopping


def run_em(x, init: ModelParams, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
           strict: bool = True) -> EMResult:
    """Alternate E-steps and M-steps until the relative loglik change is <= tol.

    With ``strict=False`` windows whose components degenerate are frozen and
    flagged in ``failed`` instead of raising.
    """
    x = np.asarray(x, dtype=float)
    batch_shape = x.shape[:-1]
    D = x.shape[-1]
    X = x.reshape(-1, D)
    B = X.shape[0]
    theta = np.broadcast_to(init.as_vector(), batch_shape + (6,)).reshape(B, 6).copy()
    floor = variance_floor(X)

    fb, marg = e_step(X, ModelParams.from_vector(theta))
    ll = fb.loglik.copy()
    ll0 = ll.copy()
    gamma, xi = marg.gamma, marg.xi
    active = np.ones(B, bool)
    failed = np.zeros(B, bool)
    converged = np.zeros(B, bool)
    iters = np.zeros(B, int)
    trace, history = [], [theta.copy()]

    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        resp = gamma[idx].sum(axis=-2)
        bad = np.any(resp < MIN_RESPONSIBILITY, axis=-1)
        if np.any(bad):
            if strict:
                raise DegenerateComponentError(
                    f"component lost all responsibility at EM iteration {it}",
                    index=idx[bad], iteration=it)
            failed[idx[bad]] = True
            active[idx[bad]] = False
            idx = idx[~bad]
        row = np.full(B, np.nan)
        if idx.size:
            new = m_step(X[idx], PosteriorMarginals(gamma[idx], xi[idx]),
                         prev=ModelParams.from_vector(theta[idx]), floor=floor[idx])
            fb, marg = e_step(X[idx], new)
            theta[idx] = new.as_vector()
            gamma[idx], xi[idx] = marg.gamma, marg.xi
            new_ll = fb.loglik
            done = np.abs(new_ll - ll[idx]) <= tol * (1.0 + np.abs(new_ll))
            ll[idx] = new_ll
            row[idx] = new_ll
            iters[idx] = it
            converged[idx[done]] = True
            active[idx[done]] = False
        trace.append(row)
        history.append(theta.copy())
        if not active.any():
            break

    trace = np.array(trace).reshape((len(trace),) + batch_shape)
    history = np.array(history).reshape((len(history),) + batch_shape + (6,))

    def shaped(a):
        a = a.reshape(batch_shape)
        return a.item() if a.ndim == 0 else a

    return EMResult(ModelParams.from_vector(theta.reshape(batch_shape + (6,))), trace,
                    shaped(iters), shaped(converged), shaped(failed), shaped(ll0), history)


def viterbi(x, params: ModelParams, return_trellis: bool = False):
    """Most probable state sequence (log-domain max-product, ties toward state 0)."""
    logb = log_emissions(x, params)
    with np.errstate(divide="ignore"):
        logA = np.log(params.transitions())
        logp = np.log(params.prior())
    D = logb.shape[-2]
    omega = np.empty(logb.shape)
    back = np.zeros(logb.shape, dtype=np.int8)
    cur = logp + logb[..., 0, :]
    omega[..., 0, :] = cur
    for d in range(1, D):
        cand = cur[..., :, None] + logA  # [..., g, h]
        arg = np.argmax(cand, axis=-2)
        back[..., d, :] = arg
        cur = np.take_along_axis(cand, arg[..., None, :], axis=-2)[..., 0, :] + logb[..., d, :]
        omega[..., d, :] = cur
    path = np.empty(logb.shape[:-1], dtype=np.int8)
    s = np.argmax(cur, axis=-1)
    path[..., D - 1] = s
    for d in range(D - 1, 0, -1):
        s = np.take_along_axis(back[..., d, :], s[..., None].astype(np.intp), axis=-1)[..., 0]
        path[..., d - 1] = s
    if return_trellis:
        return path, ViterbiTrellis(omega, back)
    return path


def estimate_noise_power(params: ModelParams, L: int):
    """Noise power implied by the idle-state mean (mu0 = L * noise_power)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return np.asarray(params.mu0, float) / L if np.ndim(params.mu0) else float(params.mu0) / L


@dataclass
class EMViterbiResult:
    states: np.ndarray  # (..., D) decoded states
    params: ModelParams
    em: EMResult | None
    ok: np.ndarray | bool  # False where initialization or EM degenerated


def em_viterbi(x, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER) -> EMViterbiResult:
    """Initialize, fit by EM and decode every window; degenerate windows are flagged, not raised."""
    x = np.asarray(x, dtype=float)
    batch_shape = x.shape[:-1]
    X = x.reshape(-1, x.shape[-1])
    em0, ok = _kmeans(X)
    if X.shape[-1] < 2:
        ok[:] = False
    # degenerate windows get a harmless placeholder so the batch can proceed
    safe = np.where(ok[:, None], X, X + np.linspace(0, 1, X.shape[-1]))
    em0, _ = _kmeans(safe)
    a, b = grid_init_transitions(safe, em0)
    init = ModelParams(em0.mu0, em0.var0, em0.mu1, em0.var1, a, b)
    res = run_em(safe, init, tol=tol, max_iter=max_iter, strict=False)
    ok = ok & ~np.asarray(res.failed).reshape(-1)
    states = viterbi(safe, res.params)
    ok_shaped = ok.reshape(batch_shape)
    params = ModelParams.from_vector(res.params.as_vector().reshape(batch_shape + (6,)))
    return EMViterbiResult(states.reshape(x.shape), params,
                           res, ok_shaped.item() if ok_shaped.ndim == 0 else ok_shaped)


@dataclass
class DetectionResult:
    statistic: float
    decision: int
    states: np.ndarray
    params: ModelParams | None
    fallback: bool = False


def em_mwsed_detect(window, threshold: float, scheme=WeightScheme.EXPONENTIAL,
                    tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
                    states=None) -> DetectionResult:
    """Estimate states by EM-Viterbi, then apply mWSED and the threshold test.

    Passing ``states`` skips estimation (oracle mWSED).  If estimation
    degenerates the detector falls back to conventional ED on the present
    sample and sets ``fallback``.
    """
    x = np.asarray(window, dtype=float)
    params = None
    fallback = False
    if states is None:
        res = em_viterbi(x, tol=tol, max_iter=max_iter)
        params = res.params
        states = res.states
        if not res.ok:
            fallback = True
            stat = float(x[-1])
            return DetectionResult(stat, decide(stat, threshold), states, params, True)
    stat = float(mwsed_statistic(x, states, scheme))
    return DetectionResult(stat, decide(stat, threshold), np.asarray(states), params, fallback)
