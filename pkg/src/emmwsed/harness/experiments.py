"""Monte Carlo experiments behind the CLI subcommands.

Every trial draws from its own random stream keyed by (seed, purpose,
sweep point, trial index).  Trials run in fixed-size chunks, so results are
identical whatever the number of worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..channel import ed_moments, generate_energy_samples, simulate_pu_states
from ..consensus import consensus_window, generate_network, run_consensus
from ..detectors import (WeightScheme, ed_statistic, ied_statistic, msed_statistic, mwsed_moments,
                         mwsed_statistic, selection_weights, wsed_statistic)
from ..hmm import em_viterbi
from ..stats import q_inverse, rng_stream
from .config import ScenarioConfig, SweepPoint

MAIN, CALIBRATION, CONSENSUS, DIST = 0, 1, 2, 3
MIN_CLASS_TRIALS = 100
ANALYTIC = ("ED", "mWSED")
EM_DETECTORS = ("EM-mWSED", "EM-Viterbi")


@dataclass
class MetricRecord:
    scenario: str
    detector: str
    snr_db: float
    L: int
    n_sus: int
    connectivity: float
    alpha: float
    beta: float
    pf_target: float = math.nan
    pf: float = math.nan
    pd: float = math.nan
    auc: float = math.nan
    estimation_error: float = math.nan
    mse_theta: float = math.nan
    iterations: float = math.nan
    aggregate: str = "mean"
    trials: int = 0
    excluded: int = 0
    fallbacks: int = 0
    warning: str = ""


@dataclass
class ConsensusRecord:
    scenario: str
    n_sus: int
    connectivity: float
    seed_index: int
    iterations: float
    converged: int
    aggregate: str = "seed"


@dataclass
class ConsensusTraceRecord:
    scenario: str
    n_sus: int
    connectivity: float
    seed_index: int
    k: int
    su: int
    value: float


@dataclass
class DistRecord:
    scenario: str
    scheme: str
    C: int
    hypothesis: int
    kind: str
    bin_lo: float = math.nan
    bin_hi: float = math.nan
    density: float = math.nan
    mean: float = math.nan
    var: float = math.nan
    analytic_mean: float = math.nan
    analytic_var: float = math.nan
    trials: int = 0


def _record(cfg: ScenarioConfig, point: SweepPoint, detector: str, **kw) -> MetricRecord:
    ch = point.channel
    return MetricRecord(cfg.scenario, detector, ch.snr_db, ch.L, point.n_sus, point.connectivity,
                        ch.alpha, ch.beta, **kw)


# ---------------------------------------------------------------- trials

@dataclass
class TrialBatch:
    """Per-trial arrays for a run of consecutive trials at one sweep point."""

    states: np.ndarray  # (B, D) true PU states
    window: np.ndarray  # (B, D) consensus ED values
    consensus_iterations: np.ndarray  # (B,) iterations of the slowest window index
    consensus_ok: np.ndarray  # (B,)
    statistics: dict = field(default_factory=dict)  # detector -> (B,)
    oracle_sw2: np.ndarray | None = None  # (B,) sum of squared oracle mWSED weights
    em_states: np.ndarray | None = None
    em_ok: np.ndarray | None = None
    em_iterations: np.ndarray | None = None
    em_params: np.ndarray | None = None  # (B, 6)
    em_history: np.ndarray | None = None  # (B, K + 1, 6), frozen after convergence

    @property
    def present(self) -> np.ndarray:
        return self.states[:, -1]


def simulate_windows(cfg: ScenarioConfig, point: SweepPoint, trial_indices, purpose=MAIN):
    """States, per-SU samples and consensus for each trial index.

    Calibration trials are conditioned on an idle present state: a stationary
    two-state chain is reversible, so the path is run backward from s_D = 0.
    """
    D = cfg.window_length
    B = len(trial_indices)
    states = np.empty((B, D), dtype=np.int8)
    window = np.empty((B, D))
    iters = np.empty(B, dtype=int)
    ok = np.empty(B, dtype=bool)
    for b, t in enumerate(trial_indices):
        rng = rng_stream(cfg.seed, purpose, point.index, int(t))
        net = generate_network(point.n_sus, point.connectivity, rng)
        if purpose == CALIBRATION:
            s = simulate_pu_states(point.channel, D, rng, initial_state=0)[::-1]
        else:
            s = simulate_pu_states(point.channel, D, rng)
        x = generate_energy_samples(s, point.channel, rng, n_sus=point.n_sus)
        cw = consensus_window(x, net.weights, cfg.consensus_tol, cfg.consensus_max_iter)
        states[b] = s
        window[b] = cw.values
        iters[b] = cw.iterations.max()
        ok[b] = cw.converged.all()
    return states, window, iters, ok


def evaluate_detectors(cfg: ScenarioConfig, states, window, detectors, with_em=False) -> dict:
    """Test statistics per detector on a batch of consensus windows."""
    out = {"statistics": {}}
    need_em = with_em or any(d in EM_DETECTORS for d in detectors)
    if need_em:
        em = em_viterbi(window, tol=cfg.em_tol, max_iter=cfg.em_max_iter)
        out["em_states"] = em.states
        out["em_ok"] = np.asarray(em.ok)
        out["em_iterations"] = np.asarray(em.em.iterations).reshape(-1)
        out["em_params"] = em.params.as_vector().reshape(-1, 6)
        out["em_history"] = np.moveaxis(em.em.param_history.reshape(-1, len(window), 6), 0, 1)
    for name in detectors:
        det = cfg.detector(name)
        if name == "ED":
            t = ed_statistic(window)
        elif name == "WSED":
            t = wsed_statistic(window, det.wsed_past_samples + 1)
        elif name == "mWSED":
            t = mwsed_statistic(window, states, det.scheme)
            w = selection_weights(states == states[:, -1:], det.scheme)
            out["oracle_sw2"] = np.sum(w * w, axis=-1)
        elif name == "EM-mWSED":
            t = mwsed_statistic(window, out["em_states"], det.scheme)
            # degenerate windows fall back to ED on the present sample
            t = np.where(out["em_ok"], t, window[:, -1])
        elif name == "EM-Viterbi":
            t = out["em_states"][:, -1].astype(float)
        elif name == "IED":
            t = ied_statistic(window)
        elif name == "msED":
            t = msed_statistic(window, det.msed_slots)
        out["statistics"][name] = np.asarray(t, dtype=float)
    return out


def _run_chunk(args):
    cfg, point, indices, purpose, detectors, with_em = args
    states, window, iters, ok = simulate_windows(cfg, point, indices, purpose)
    res = evaluate_detectors(cfg, states, window, detectors, with_em)
    res.update(states=states, window=window, consensus_iterations=iters, consensus_ok=ok)
    return res


def _merge(parts) -> TrialBatch:
    def cat(key):
        vals = [p.get(key) for p in parts]
        return None if vals[0] is None else np.concatenate(vals)

    hist = None
    if parts[0].get("em_history") is not None:
        # ragged EM histories: pad each trial with its terminal value
        K = max(p["em_history"].shape[1] for p in parts)
        hist = np.concatenate([np.concatenate(
            [p["em_history"], np.repeat(p["em_history"][:, -1:], K - p["em_history"].shape[1], 1)], 1)
            for p in parts])
    stats = {k: np.concatenate([p["statistics"][k] for p in parts]) for k in parts[0]["statistics"]}
    return TrialBatch(cat("states"), cat("window"), cat("consensus_iterations"), cat("consensus_ok"),
                      stats, cat("oracle_sw2"), cat("em_states"), cat("em_ok"), cat("em_iterations"),
                      cat("em_params"), hist)


def run_trials(cfg: ScenarioConfig, point: SweepPoint, n_trials: int, purpose=MAIN,
               detectors=None, with_em=False) -> TrialBatch:
    detectors = tuple(cfg.detectors if detectors is None else detectors)
    chunks = [np.arange(a, min(a + cfg.chunk_size, n_trials)) for a in range(0, n_trials, cfg.chunk_size)]
    jobs = [(cfg, point, c, purpose, detectors, with_em) for c in chunks]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    return _merge(parts)


@dataclass
class TrialResult:
    states: np.ndarray
    window: np.ndarray
    statistics: dict
    decisions: dict
    consensus_iterations: int
    consensus_ok: bool
    em_states: np.ndarray | None
    em_ok: bool | None


def run_trial(cfg: ScenarioConfig, trial_index: int, point: SweepPoint | None = None) -> TrialResult:
    """One full sensing cycle; decisions use analytic thresholds at ``pf_target`` (ED, mWSED)."""
    point = point or cfg.points()[0]
    b = _merge([_run_chunk((cfg, point, np.array([trial_index]), MAIN, tuple(cfg.detectors), False))])
    decisions = {}
    if "EM-Viterbi" in b.statistics:
        decisions["EM-Viterbi"] = int(b.statistics["EM-Viterbi"][0])
    if cfg.pf_target is not None:
        for name in ANALYTIC:
            if name in b.statistics:
                lam = analytic_thresholds(name, [cfg.pf_target], point, b)[0]
                decisions[name] = int(b.statistics[name][0] >= np.ravel(lam)[0])
    return TrialResult(b.states[0], b.window[0], {k: float(v[0]) for k, v in b.statistics.items()},
                       decisions, int(b.consensus_iterations[0]), bool(b.consensus_ok[0]),
                       None if b.em_states is None else b.em_states[0],
                       None if b.em_ok is None else bool(b.em_ok[0]))


# ---------------------------------------------------------------- ROC

def analytic_thresholds(name: str, pf_targets, point: SweepPoint, batch: TrialBatch):
    """Gaussian thresholds with the consensus average over n_sus SUs.

    ED gets one threshold per target; oracle mWSED one per target and trial,
    since its variance depends on how many window samples share s_D.
    """
    mu0, var0, _, _ = ed_moments(point.channel)
    z = np.array([q_inverse(p) for p in pf_targets])
    if name == "ED":
        return mu0 + math.sqrt(var0 / point.n_sus) * z
    if name == "mWSED":
        return mu0 + np.sqrt(var0 * batch.oracle_sw2 / point.n_sus)[None, :] * z[:, None]
    raise ValueError(f"no analytic threshold for {name}")


def calibrated_thresholds(h0_statistics, pf_targets) -> np.ndarray:
    """Empirical (1 - pf) quantiles of the statistic under H0."""
    t = np.sort(np.asarray(h0_statistics, float))
    if t.size == 0:
        raise ValueError("no H0 calibration trials")
    return np.quantile(t, 1.0 - np.asarray(pf_targets, float), method="higher")


def empirical_rates(stat, thresholds, h0, h1):
    """(pf, pd) arrays for scalar or per-trial thresholds (rows = targets)."""
    lam = np.asarray(thresholds, float)
    lam = lam[:, None] if lam.ndim == 1 else lam
    hit = stat[None, :] >= lam
    pf = hit[:, h0].mean(axis=1) if h0.any() else np.full(len(lam), np.nan)
    pd = hit[:, h1].mean(axis=1) if h1.any() else np.full(len(lam), np.nan)
    return pf, pd


def roc_auc(pf, pd) -> float:
    """Trapezoid area under the sorted (pf, pd) curve with (0,0) and (1,1) appended."""
    pts = sorted(zip(np.r_[0.0, pf, 1.0], np.r_[0.0, pd, 1.0]))
    x, y = np.array(pts).T
    return float(np.trapezoid(y, x))


def _class_masks(batch: TrialBatch):
    valid = batch.consensus_ok
    return valid & (batch.present == 0), valid & (batch.present == 1), int((~valid).sum())


def _warning(h0, h1) -> str:
    n0, n1 = int(h0.sum()), int(h1.sum())
    if n0 < MIN_CLASS_TRIALS or n1 < MIN_CLASS_TRIALS:
        return f"few trials per hypothesis (H0={n0}, H1={n1})"
    return ""


def _thresholds(cfg, name, pf_targets, point, main, cal):
    if name in ANALYTIC:
        return analytic_thresholds(name, pf_targets, point, main)
    ok = cal.consensus_ok
    return calibrated_thresholds(cal.statistics[name][ok], pf_targets)


def _needs_calibration(detectors):
    return any(d not in ANALYTIC and d != "EM-Viterbi" for d in detectors)


def roc_sweep(cfg: ScenarioConfig) -> list[MetricRecord]:
    """(pf, pd) per target false-alarm rate and AUC, per detector and sweep point."""
    records = []
    for point in cfg.points():
        main = run_trials(cfg, point, cfg.trials)
        cal = None
        if _needs_calibration(cfg.detectors):
            cal_dets = [d for d in cfg.detectors if d not in ANALYTIC and d != "EM-Viterbi"]
            cal = run_trials(cfg, point, cfg.n_calibration, CALIBRATION, cal_dets)
        h0, h1, excluded = _class_masks(main)
        warn = _warning(h0, h1)
        for name in cfg.detectors:
            stat = main.statistics[name]
            fb = int((~main.em_ok).sum()) if name in EM_DETECTORS else 0
            common = dict(trials=cfg.trials, excluded=excluded, fallbacks=fb, warning=warn)
            if name == "EM-Viterbi":
                pf, pd = empirical_rates(stat, [0.5], h0, h1)
                records.append(_record(cfg, point, name, pf=pf[0], pd=pd[0],
                                       auc=roc_auc(pf, pd), **common))
                continue
            lam = _thresholds(cfg, name, cfg.pf_grid, point, main, cal)
            pf, pd = empirical_rates(stat, lam, h0, h1)
            auc = roc_auc(pf, pd)
            for k, target in enumerate(cfg.pf_grid):
                records.append(_record(cfg, point, name, pf_target=target, pf=pf[k], pd=pd[k],
                                       auc=auc, **common))
    return records


def pd_vs_snr(cfg: ScenarioConfig) -> list[MetricRecord]:
    """Pd of the configured detectors at a matched false-alarm rate per sweep point.

    The target is ``pf_target`` when set, else the empirical Pf of EM-Viterbi.
    """
    records = []
    for point in cfg.points():
        dets = tuple(cfg.detectors)
        main = run_trials(cfg, point, cfg.trials, detectors=tuple(set(dets) | {"EM-Viterbi"}))
        h0, h1, excluded = _class_masks(main)
        warn = _warning(h0, h1)
        vit_pf, vit_pd = empirical_rates(main.statistics["EM-Viterbi"], [0.5], h0, h1)
        target = cfg.pf_target if cfg.pf_target is not None else float(vit_pf[0])
        if not 0 < target < 1:
            target = min(max(target, 1.0 / max(h0.sum(), 1)), 1 - 1e-9)
        cal = None
        if _needs_calibration(dets):
            cal = run_trials(cfg, point, cfg.n_calibration, CALIBRATION,
                             [d for d in dets if d not in ANALYTIC and d != "EM-Viterbi"])
        fb = int((~main.em_ok).sum())
        for name in dets:
            common = dict(trials=cfg.trials, excluded=excluded, warning=warn,
                          fallbacks=fb if name in EM_DETECTORS else 0)
            if name == "EM-Viterbi":
                records.append(_record(cfg, point, name, pf_target=target, pf=vit_pf[0], pd=vit_pd[0],
                                       **common))
                continue
            lam = _thresholds(cfg, name, [target], point, main, cal)
            pf, pd = empirical_rates(main.statistics[name], lam, h0, h1)
            records.append(_record(cfg, point, name, pf_target=target, pf=pf[0], pd=pd[0], **common))
    return records


# ---------------------------------------------------------------- EM studies

def estimation_error_surface(cfg: ScenarioConfig) -> list[MetricRecord]:
    """Mean and median per-trial state estimation error of EM-Viterbi per sweep point."""
    records = []
    for point in cfg.points():
        b = run_trials(cfg, point, cfg.trials, detectors=(), with_em=True)
        keep = b.consensus_ok & b.em_ok
        err = np.mean(b.em_states != b.states, axis=1)[keep]
        its = b.em_iterations[keep]
        common = dict(trials=cfg.trials, excluded=int((~keep).sum()),
                      fallbacks=int((~b.em_ok).sum()))
        for agg, f in (("mean", np.mean), ("median", np.median)):
            val = float(f(err)) if err.size else math.nan
            it = float(f(its)) if its.size else math.nan
            records.append(_record(cfg, point, "EM-Viterbi", estimation_error=val, iterations=it,
                                   aggregate=agg, **common))
    return records


def true_theta(point: SweepPoint) -> np.ndarray:
    """(mu0, var0, mu1, var1, alpha, beta) of the consensus window (variances over n_sus)."""
    mu0, var0, mu1, var1 = ed_moments(point.channel)
    n = point.n_sus
    return np.array([mu0, var0 / n, mu1, var1 / n, point.channel.alpha, point.channel.beta])


def mse_trace(cfg: ScenarioConfig) -> list[MetricRecord]:
    """Distance ||theta - theta_hat|| per EM iteration, averaged over trials.

    Rows with ``aggregate = mean`` hold the trace (``iterations`` = EM step);
    one ``median`` row per point holds the median final distance and the
    median number of EM iterations.
    """
    records = []
    for point in cfg.points():
        b = run_trials(cfg, point, cfg.trials, detectors=(), with_em=True)
        keep = b.consensus_ok & b.em_ok
        dist = np.linalg.norm(b.em_history[keep] - true_theta(point), axis=-1)  # (B, K + 1)
        common = dict(trials=cfg.trials, excluded=int((~keep).sum()), fallbacks=int((~b.em_ok).sum()))
        if dist.size:
            for k, v in enumerate(dist.mean(axis=0)):
                records.append(_record(cfg, point, "EM", mse_theta=float(v), iterations=k, **common))
        final = b.em_params[keep]
        fin = np.linalg.norm(final - true_theta(point), axis=-1)
        records.append(_record(cfg, point, "EM", aggregate="median",
                               mse_theta=float(np.median(fin)) if fin.size else math.nan,
                               iterations=float(np.median(b.em_iterations[keep])) if fin.size else math.nan,
                               **common))
    return records


# ---------------------------------------------------------------- consensus and distributions

def consensus_study(cfg: ScenarioConfig, keep_traces: bool = True):
    """Iterations to tolerance for ``trials`` random networks per sweep point.

    Each seed draws a network and one interval's ED values (PU state from
    the steady state).  Returns (records, traces).
    """
    records, traces = [], []
    for point in cfg.points():
        its, conv = [], []
        for s in range(cfg.trials):
            rng = rng_stream(cfg.seed, CONSENSUS, point.index, s)
            net = generate_network(point.n_sus, point.connectivity, rng)
            state = simulate_pu_states(point.channel, 1, rng)
            y0 = generate_energy_samples(state, point.channel, rng, n_sus=point.n_sus)[:, 0]
            run = run_consensus(y0, net.weights, cfg.consensus_tol, cfg.consensus_max_iter)
            its.append(run.iterations)
            conv.append(run.converged)
            records.append(ConsensusRecord(cfg.scenario, point.n_sus, point.connectivity, s,
                                           run.iterations, int(run.converged)))
            if keep_traces:
                for k, row in enumerate(run.trace):
                    for i, v in enumerate(row):
                        traces.append(ConsensusTraceRecord(cfg.scenario, point.n_sus,
                                                           point.connectivity, s, k, i, float(v)))
        records.append(ConsensusRecord(cfg.scenario, point.n_sus, point.connectivity, -1,
                                       float(np.median(its)), int(all(conv)), aggregate="median"))
    return records, traces


def dist(cfg: ScenarioConfig) -> list[DistRecord]:
    """Histograms of the mWSED statistic of one SU for C matching samples, per hypothesis.

    No consensus is applied, so Var(T | H0) = var0 * sum(w^2).
    """
    scheme = WeightScheme(cfg.mwsed_scheme)
    records = []
    for point in cfg.points():
        for C in cfg.dist_C:
            rng = rng_stream(cfg.seed, DIST, point.index, C)
            w = selection_weights(np.ones(C, bool), scheme)
            m0, v0, m1, v1 = mwsed_moments(w, point.channel)
            T = {h: generate_energy_samples(np.full((cfg.trials, C), h), point.channel, rng) @ w
                 for h in (0, 1)}
            edges = np.histogram_bin_edges(np.concatenate([T[0], T[1]]), bins=cfg.dist_bins)
            for h, (m, v) in ((0, (m0, v0)), (1, (m1, v1))):
                dens, _ = np.histogram(T[h], bins=edges, density=True)
                for lo, hi, d in zip(edges[:-1], edges[1:], dens):
                    records.append(DistRecord(cfg.scenario, scheme.value, C, h, "hist",
                                              bin_lo=float(lo), bin_hi=float(hi), density=float(d),
                                              trials=cfg.trials))
                records.append(DistRecord(cfg.scenario, scheme.value, C, h, "moments",
                                          mean=float(T[h].mean()),
                                          var=float(T[h].var(ddof=1)) if cfg.trials > 1 else math.nan,
                                          analytic_mean=m, analytic_var=v, trials=cfg.trials))
    return records
