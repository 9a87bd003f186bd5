"""Monte Carlo ensembles of the scaled corrector pairing and their statistics."""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .corrector import (
    build_kernel,
    build_reference,
    intermediate_variance,
    limit_variance,
    linear_representation,
    pairing_weights,
    potential_stencil,
    solve_discrete_green_rhs,
)
from .errors import AssemblyError, EnsembleError, SolverError
from .hmm_core import (
    HmmSystem,
    assemble_from_moments,
    assemble_homogenized,
    check_positivity,
    field_moments,
    load_vector,
    prepare_potential,
    solve,
    stencil_apply,
)
from .mesh import build_mesh
from .randfield import mix_seed, sample_field

log = logging.getLogger(__name__)

N_BATCHES = 20
INVALID_BUDGET = 0.01


@dataclass
class CorrectorSample:
    index: int
    seed: int
    value: float
    linear_part: float
    residual: float
    error: str = None

    @property
    def valid(self):
        return self.error is None


@dataclass
class Context:
    """Everything about one (mesh, patch ratio, eps) that does not depend on the field."""

    ratio: float
    eps: float
    beta: float
    mesh: object
    base: object
    sys0: HmmSystem
    U0: np.ndarray
    weights: np.ndarray
    M: np.ndarray
    kernel: object
    cg_tol: float
    jacobi: bool


def build_context(config, ratio=None, eps=None):
    ratio = config.ratio if ratio is None else float(ratio)
    eps = config.eps if eps is None else float(eps)
    mesh = build_mesh(config.N)
    q0, f, phi = config.functions()
    quad = config.quadrature()
    n = quad.subdivisions(ratio * mesh.h, eps)
    base = prepare_potential(mesh, q0, ratio, n)
    sys0 = assemble_homogenized(base, load_vector(mesh, f))
    U0 = solve(sys0, tol=config.cg_tol, jacobi=config.jacobi)
    weights = pairing_weights(mesh, phi)
    M = solve_discrete_green_rhs(sys0, weights, tol=config.cg_tol)
    kernel = build_kernel(mesh, ratio, M, U0)
    return Context(ratio, eps, config.effective_beta(), mesh, base, sys0, U0, weights, M, kernel,
                   config.cg_tol, config.jacobi)


def evaluate_sample(ctx, realization):
    """(value, linear_part, residual) for one field realization.

    The correction W = U_eps - U_0 solves A_eps W = -(A_eps - A_0) U_0, which
    keeps full relative accuracy for small fields.
    """
    fm, fmin = field_moments(ctx.base.rule, realization)
    check_positivity(ctx.base, realization, fmin)
    mesh, r = ctx.mesh, ctx.ratio
    alpha_f, d_f = potential_stencil(mesh, r, fm)
    sys_eps = assemble_from_moments(mesh, r, ctx.base.moments + fm, ctx.sys0.F, "random",
                                    ctx.base.rule, None, ctx.base.stiffness)
    delta_sys = HmmSystem(mesh, r, alpha_f, None, d_f, ctx.sys0.F, "difference")
    rhs = -stencil_apply(delta_sys, ctx.U0)
    W = solve(sys_eps, rhs=rhs, tol=ctx.cg_tol, jacobi=ctx.jacobi)
    scale = ctx.eps ** (-ctx.beta / 2.0)
    value = float(np.sum(W * ctx.weights)) * scale
    linear = linear_representation(alpha_f, d_f, ctx.M, ctx.U0, ctx.eps, ctx.beta)
    return value, linear, value - linear


def _run_indices(contexts, spec, eps, base_seed, indices):
    out = []
    for k in indices:
        seed = mix_seed(base_seed, k)
        try:
            realization = sample_field(spec, eps, seed)
            rows = [evaluate_sample(ctx, realization) for ctx in contexts]
            out.append((k, seed, rows, None))
        except (AssemblyError, SolverError) as exc:
            out.append((k, seed, None, f"{type(exc).__name__}: {exc}"))
    return out


_WORKER = {}


def _init_worker(config, ratios, eps):
    _WORKER["contexts"] = [build_context(config, r, eps) for r in ratios]
    _WORKER["spec"] = config.field_spec()
    _WORKER["eps"] = eps
    _WORKER["seed"] = config.seed


def _worker_run(indices):
    return _run_indices(_WORKER["contexts"], _WORKER["spec"], _WORKER["eps"], _WORKER["seed"], indices)


def run_coupled(config, ratios, eps=None, threads=None, contexts=None):
    """Samples for several patch ratios, sample k sharing one field realization.

    Returns one list of CorrectorSample per ratio, in index order.  The output
    depends only on (config, k); worker count and scheduling do not matter.
    """
    eps = config.eps if eps is None else float(eps)
    threads = config.threads if threads is None else int(threads)
    spec = config.field_spec()
    M = config.samples
    if threads <= 1:
        if contexts is None:
            contexts = [build_context(config, r, eps) for r in ratios]
        raw = _run_indices(contexts, spec, eps, config.seed, range(M))
    else:
        n_chunks = min(M, 4 * threads)
        chunks = [list(c) for c in np.array_split(np.arange(M), n_chunks) if len(c)]
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(config, tuple(ratios), eps)) as pool:
            raw = [row for part in pool.map(_worker_run, chunks) for row in part]
    raw.sort(key=lambda t: t[0])
    out = [[] for _ in ratios]
    failures = {}
    for k, seed, rows, err in raw:
        for j in range(len(ratios)):
            if err is None:
                out[j].append(CorrectorSample(int(k), int(seed), *map(float, rows[j])))
            else:
                out[j].append(CorrectorSample(int(k), int(seed), math.nan, math.nan, math.nan, err))
        if err is not None:
            failures[int(k)] = err
    if len(failures) > INVALID_BUDGET * M:
        raise EnsembleError(f"{len(failures)} of {M} samples failed (budget {INVALID_BUDGET:.0%})", failures)
    if failures:
        log.warning("%d samples failed and are excluded from statistics", len(failures))
    return out


def batch_variance_stderr(x, n_batches=N_BATCHES):
    x = np.asarray(x, dtype=float)
    if len(x) < 2 * n_batches:
        return math.nan
    batches = np.array_split(x, n_batches)
    v = np.array([b.var(ddof=1) for b in batches])
    return float(v.std(ddof=1) / math.sqrt(n_batches))


def summarize(samples):
    """Summary statistics of the valid samples, recomputable from the sample list."""
    values = np.array([s.value for s in samples if s.valid])
    resid = np.array([s.residual for s in samples if s.valid])
    n = len(values)
    out = {"count": n, "invalid": len(samples) - n}
    if n == 0:
        return out
    mean = float(values.mean())
    var = float(values.var(ddof=1)) if n > 1 else 0.0
    std = math.sqrt(var)
    out.update(
        mean=mean,
        mean_stderr=std / math.sqrt(n),
        variance=var,
        variance_stderr=batch_variance_stderr(values),
        residual_fraction=float(np.abs(resid).mean() / std) if std > 0 else 0.0,
    )
    if std > 0:
        g = gaussianity_report(values, min_samples=2)
        out.update(skewness=g["skewness"], excess_kurtosis=g["excess_kurtosis"], ks_distance=g["ks_statistic"])
    return out


def _moments(x):
    c = x - x.mean()
    m2, m3, m4 = (c**2).mean(), (c**3).mean(), (c**4).mean()
    return m3 / m2**1.5, m4 / m2**2 - 3.0


def _jackknife_shape(x):
    """Leave-one-out skewness and excess kurtosis from running power sums."""
    n = len(x)
    s1, s2, s3, s4 = x.sum(), (x**2).sum(), (x**3).sum(), (x**4).sum()
    m = n - 1
    a1 = (s1 - x) / m
    a2 = (s2 - x**2) / m
    a3 = (s3 - x**3) / m
    a4 = (s4 - x**4) / m
    c2 = a2 - a1**2
    c3 = a3 - 3 * a1 * a2 + 2 * a1**3
    c4 = a4 - 4 * a1 * a3 + 6 * a1**2 * a2 - 3 * a1**4
    return c3 / c2**1.5, c4 / c2**2 - 3.0


def gaussianity_report(values, min_samples=500):
    """Skewness and excess kurtosis with jackknife errors, plus a KS test.

    The KS reference is the normal law with the sample mean and standard
    deviation.  Constant samples give ``degenerate=True`` and no test.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < min_samples:
        raise ValueError(f"gaussianity report needs at least {min_samples} samples, got {len(x)}")
    std = x.std(ddof=1) if len(x) > 1 else 0.0
    if not std > 0:
        return {"count": len(x), "degenerate": True}
    scale = np.abs(x).max()
    z = (x - x.mean()) / scale  # conditioning for the power sums
    skew, kurt = _moments(z)
    js, jk = _jackknife_shape(z)
    n = len(x)
    skew_se = math.sqrt((n - 1) / n * np.sum((js - js.mean()) ** 2))
    kurt_se = math.sqrt((n - 1) / n * np.sum((jk - jk.mean()) ** 2))
    ks = stats.kstest(x, "norm", args=(x.mean(), std))
    return {
        "count": n,
        "degenerate": False,
        "skewness": float(skew),
        "skewness_stderr": float(skew_se),
        "excess_kurtosis": float(kurt),
        "excess_kurtosis_stderr": float(kurt_se),
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
    }


@dataclass
class CorrectorEnsemble:
    config: object
    ratio: float
    eps: float
    beta: float
    samples: list
    intermediate_variance: float
    limit_variance: float = None
    timings: dict = field(default_factory=dict)

    @property
    def values(self):
        return np.array([s.value for s in self.samples])

    @property
    def summary(self):
        out = summarize(self.samples)
        out["intermediate_variance"] = self.intermediate_variance
        out["limit_variance"] = self.limit_variance
        return out


def _predicted(config, ctx, reference):
    spec = config.field_spec()
    ivar = intermediate_variance(ctx.kernel, spec)
    lvar = limit_variance(reference, spec, ctx.ratio) if reference is not None else None
    return ivar, lvar


def make_reference(config):
    q0, f, phi = config.functions()
    return build_reference(q0, f, phi, config.n_ref, config.quadrature(), config.cg_tol)


def run_ensemble(config, reference=None, with_reference=False, threads=None):
    """Ensemble at the configured patch ratio and eps."""
    t0 = time.perf_counter()
    ctx = build_context(config)
    t1 = time.perf_counter()
    samples = run_coupled(config, [config.ratio], threads=threads, contexts=[ctx])[0]
    t2 = time.perf_counter()
    if reference is None and with_reference:
        reference = make_reference(config)
    ivar, lvar = _predicted(config, ctx, reference)
    t3 = time.perf_counter()
    return CorrectorEnsemble(config, config.ratio, config.eps, ctx.beta, samples, ivar, lvar,
                             {"context": t1 - t0, "samples": t2 - t1, "predictions": t3 - t2})


def variance_ratio(a, b):
    """Coupled-sample ratio var(a)/var(b) and its delta-method standard error."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    da = (a - a.mean()) ** 2
    db = (b - b.mean()) ** 2
    R = da.mean() / db.mean()
    se = math.sqrt(np.var(da - R * db, ddof=1) / (len(a) * db.mean() ** 2))
    return float(R), float(se)


@dataclass
class ScanResult:
    axis: str
    rows: list
    ensembles: list


def amplification_scan(config, ratios, reference=None, with_reference=True, threads=None):
    """Coupled ensembles over patch ratios, with ratios against the first row."""
    ratios = [float(r) for r in ratios]
    contexts = [build_context(config, r) for r in ratios] if (threads or config.threads) <= 1 else None
    per_ratio = run_coupled(config, ratios, threads=threads, contexts=contexts)
    if contexts is None:
        contexts = [build_context(config, r) for r in ratios]
    if reference is None and with_reference:
        reference = make_reference(config)
    ensembles, rows = [], []
    for r, ctx, samples in zip(ratios, contexts, per_ratio):
        ivar, lvar = _predicted(config, ctx, reference)
        ensembles.append(CorrectorEnsemble(config, r, config.eps, ctx.beta, samples, ivar, lvar))
    ref_vals = np.array([s.value for s in per_ratio[0]])
    ref_ens = ensembles[0]
    for ens in ensembles:
        s = ens.summary
        R, se = variance_ratio(ens.values, ref_vals)
        rows.append({
            "ratio": ens.ratio,
            "variance": s.get("variance"),
            "variance_stderr": s.get("variance_stderr"),
            "intermediate_variance": ens.intermediate_variance,
            "limit_variance": ens.limit_variance,
            "variance_ratio": R,
            "variance_ratio_stderr": se,
            "intermediate_ratio": ens.intermediate_variance / ref_ens.intermediate_variance
            if ref_ens.intermediate_variance else math.nan,
            "limit_ratio": ens.limit_variance / ref_ens.limit_variance
            if ens.limit_variance is not None and ref_ens.limit_variance else math.nan,
            "residual_fraction": s.get("residual_fraction"),
        })
    return ScanResult("ratio", rows, ensembles)


def epsilon_scan(config, eps_list, threads=None):
    """Ensembles at the configured ratio for each eps, with residual fractions."""
    rows, ensembles = [], []
    for eps in eps_list:
        cfg = config.with_overrides(eps=float(eps))
        ens = run_ensemble(cfg, threads=threads)
        s = ens.summary
        ensembles.append(ens)
        rows.append({
            "eps": float(eps),
            "variance": s.get("variance"),
            "variance_stderr": s.get("variance_stderr"),
            "intermediate_variance": ens.intermediate_variance,
            "residual_fraction": s.get("residual_fraction"),
        })
    return ScanResult("eps", rows, ensembles)
