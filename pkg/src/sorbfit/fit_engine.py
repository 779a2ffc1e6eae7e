"""Differential-evolution fitting of uptake isotherms.

A hand-rolled rand/1/bin DE drives every fit so results are bit-for-bit
reproducible from a seed; scipy's implementation leaves strategy and RNG
details underspecified for that purpose. Candidate populations evaluate
in one vectorized call per generation.

Fit quality is ranked by information criteria with a physics-compliance
gate: fits scoring below 0.7 on the five-check physics assessment are
demoted below every compliant fit regardless of AIC.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import AllCostsInfinite, InsufficientData
from .isotherm_models import (
    ALL_FORMS,
    PhysicsScore,
    eval_form,
    get_form,
    param_bounds,
    validate_physics,
)

RSS_FLOOR = 1e-30


def derive_seed(base_seed, *parts):
    """Stable child seed from a base seed and arbitrary string/int parts.

    sha256-based so it is identical across processes and platforms
    (unlike hash(), which is salted per interpreter run).
    """
    h = hashlib.sha256()
    h.update(str(int(base_seed)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:4], "big")


@dataclass
class DEConfig:
    mutation: float = 0.8
    crossover: float = 0.9
    pop_size: int | None = None  # default max(15, 10 * n_params)
    max_gen: int = 300
    tol: float = 1e-10
    stagnation: int = 30
    seed: int = 42

    def resolved_pop(self, n_params):
        if self.pop_size is not None:
            return self.pop_size
        return max(15, 10 * n_params)


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    n_gen: int
    converged: bool


def _distinct_triples(rng, pop):
    """rand/1 donor indices: three distinct rows, none equal to the target."""
    idx = np.arange(pop)
    r = rng.integers(0, pop, size=(pop, 3))
    while True:
        bad = (
            (r[:, 0] == idx)
            | (r[:, 1] == idx)
            | (r[:, 2] == idx)
            | (r[:, 0] == r[:, 1])
            | (r[:, 0] == r[:, 2])
            | (r[:, 1] == r[:, 2])
        )
        if not bad.any():
            return r
        r[bad] = rng.integers(0, pop, size=(int(bad.sum()), 3))


def differential_evolution(objective, bounds, config=None, vectorized=False):
    """Minimize objective over a box via rand/1/bin differential evolution.

    With vectorized=True the objective receives the whole population as a
    (pop, k) matrix and must return (pop,) costs; otherwise it is called
    per candidate vector. Non-finite costs are treated as +inf.

    Convergence: best cost improves by no more than tol * |best| for
    `stagnation` consecutive generations.
    """
    config = config or DEConfig()
    bounds = np.asarray(bounds, dtype=float)
    k = len(bounds)
    pop = config.resolved_pop(k)
    rng = np.random.default_rng(config.seed)

    # Positive parameters spanning several decades (affinity constants,
    # D-R exponents) are searched in log space; otherwise the cost valley
    # q_max * K ~ const runs into a bound corner and traps the population.
    log_dim = (bounds[:, 0] > 0.0) & (bounds[:, 1] / bounds[:, 0] > 100.0)
    zb = bounds.copy()
    zb[log_dim] = np.log(bounds[log_dim])
    lo, hi = zb[:, 0], zb[:, 1]

    def from_z(z):
        x = z.copy()
        x[..., log_dim] = np.exp(x[..., log_dim])
        return x

    x = lo + rng.random((pop, k)) * (hi - lo)

    def evaluate(cands):
        phys = from_z(cands)
        if vectorized:
            c = np.asarray(objective(phys), dtype=float)
        else:
            c = np.array([objective(row) for row in phys], dtype=float)
        c[~np.isfinite(c)] = np.inf
        return c

    cost = evaluate(x)
    if not np.any(np.isfinite(cost)):
        raise AllCostsInfinite("no finite-cost candidate in the initial population")

    best_i = int(np.argmin(cost))
    best = cost[best_i]
    stalled = 0
    gen = 0
    converged = False

    for gen in range(1, config.max_gen + 1):
        r = _distinct_triples(rng, pop)
        mutant = x[r[:, 0]] + config.mutation * (x[r[:, 1]] - x[r[:, 2]])
        # Out-of-bounds components are resampled uniformly rather than
        # clipped; clipping piles the population onto the box faces and
        # kills rand/1 diversity there.
        oob = (mutant < lo) | (mutant > hi)
        if oob.any():
            fresh = lo + rng.random((pop, k)) * (hi - lo)
            mutant[oob] = fresh[oob]

        cross = rng.random((pop, k)) < config.crossover
        cross[np.arange(pop), rng.integers(0, k, size=pop)] = True
        trial = np.where(cross, mutant, x)

        trial_cost = evaluate(trial)
        improved = trial_cost <= cost
        x[improved] = trial[improved]
        cost[improved] = trial_cost[improved]

        new_best = float(np.min(cost))
        # Relative stagnation: zero improvement always counts as stalled,
        # so near-zero objectives keep polishing down to machine precision
        # instead of freezing at an absolute threshold.
        if best - new_best <= config.tol * abs(new_best):
            stalled += 1
        else:
            stalled = 0
        best = min(best, new_best)
        if stalled >= config.stagnation:
            converged = True
            break

    best_i = int(np.argmin(cost))
    return DEResult(x=from_z(x[best_i].copy()), fun=float(cost[best_i]),
                    n_gen=gen, converged=converged)


def information_criteria(rss, n, k):
    """AIC / BIC / AICc from a residual sum of squares.

    AICc is omitted (None) when n <= k + 1, where its correction term
    diverges.
    """
    rss = max(float(rss), RSS_FLOOR)
    aic = n * np.log(rss / n) + 2.0 * k
    bic = n * np.log(rss / n) + k * np.log(n)
    aicc = None
    if n > k + 1:
        aicc = aic + 2.0 * k * (k + 1) / (n - k - 1)
    return {"aic": float(aic), "bic": float(bic),
            "aicc": None if aicc is None else float(aicc)}


@dataclass
class FitResult:
    form_id: str
    params: np.ndarray
    rss: float
    n: int
    k: int
    aic: float
    bic: float
    aicc: float | None
    physics: PhysicsScore
    converged: bool
    n_gen: int

    @property
    def r_squared(self):
        return self._r2

    @property
    def rmse(self):
        return float(np.sqrt(self.rss / self.n))

    _r2: float = field(default=np.nan, repr=False)

    def to_dict(self):
        return {
            "form": self.form_id,
            "params": [float(v) for v in self.params],
            "rss": self.rss,
            "r_squared": self._r2,
            "n": self.n,
            "k": self.k,
            "aic": self.aic,
            "bic": self.bic,
            "aicc": self.aicc,
            "physics_score": self.physics.score,
            "physics_violations": list(self.physics.violated_checks),
            "converged": self.converged,
            "n_gen": self.n_gen,
        }


def _sse_objective(form_id, p, q, T):
    q = np.asarray(q, dtype=float)

    def objective(pop_matrix):
        pred = eval_form(form_id, pop_matrix, p, T, strict=False)
        resid = pred - q
        with np.errstate(invalid="ignore", over="ignore"):
            sse = np.sum(resid * resid, axis=-1)
        sse = np.atleast_1d(np.asarray(sse, dtype=float))
        sse[~np.isfinite(sse)] = np.inf
        return sse

    return objective


def fit_form(form_id, p, q, T=298.15, seed=42, de_config=None):
    """Fit one functional form to an isotherm by least squares."""
    spec = get_form(form_id)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if len(p) < spec.n_params + 1:
        raise InsufficientData(
            f"{len(p)} points cannot constrain {spec.n_params} parameters"
        )
    bounds = param_bounds(form_id, max_pressure=float(np.max(p)) if len(p) else None)
    config = DEConfig(**{**(de_config or DEConfig()).__dict__, "seed": seed})
    res = differential_evolution(
        _sse_objective(form_id, p, q, T), bounds, config, vectorized=True
    )
    ic = information_criteria(res.fun, len(p), spec.n_params)
    t_ref = float(np.median(np.asarray(T))) if np.ndim(T) else float(T)
    physics = validate_physics(
        form_id, res.x, np.column_stack([p, np.full_like(p, t_ref), q])
    )
    tss = float(np.sum((q - q.mean()) ** 2))
    r2 = 1.0 - res.fun / tss if tss > 0 else np.nan
    fr = FitResult(
        form_id=form_id, params=res.x, rss=res.fun, n=len(p), k=spec.n_params,
        aic=ic["aic"], bic=ic["bic"], aicc=ic["aicc"], physics=physics,
        converged=res.converged, n_gen=res.n_gen,
    )
    fr._r2 = r2
    return fr


def rank_fits(fits):
    """Order fits best-first: ascending AIC, ties broken by higher physics
    score then fewer parameters; physics-flagged fits sink below every
    compliant one."""
    return sorted(
        fits,
        key=lambda f: (f.physics.flagged, f.aic, -f.physics.score, f.k),
    )


def fit_all(p, q, T=298.15, forms=ALL_FORMS, seed=42, de_config=None):
    """Fit every requested form and return results ranked best-first.

    Forms whose fits raise (domain exhaustion, too few points) are skipped.
    """
    out = []
    for form_id in forms:
        child = derive_seed(seed, "fit", form_id)
        try:
            out.append(fit_form(form_id, p, q, T, seed=child, de_config=de_config))
        except (InsufficientData, AllCostsInfinite):
            continue
    return rank_fits(out)


@dataclass
class CVStats:
    mean_r2: float
    std_r2: float
    mean_rmse: float
    std_rmse: float
    k: int


def kfold_cv(form_id, p, q, T=298.15, k=5, seed=42, de_config=None):
    """k-fold cross-validation of one form over isotherm points.

    Folds are a deterministic seeded partition; k = n gives leave-one-out.
    """
    spec = get_form(form_id)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(p)
    if n < k:
        raise InsufficientData(f"{n} points cannot form {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    r2s, rmses = [], []
    for fold in folds:
        train = np.setdiff1d(order, fold)
        if len(train) < spec.n_params + 1:
            raise InsufficientData("training fold too small for this form")
        fr = fit_form(form_id, p[train], q[train], T,
                      seed=derive_seed(seed, "cv", len(r2s)),
                      de_config=de_config)
        pred = eval_form(form_id, fr.params, p[fold], T, strict=False)
        resid = q[fold] - pred
        sse = float(np.nansum(resid**2))
        tss = float(np.sum((q[fold] - np.mean(q[fold])) ** 2))
        r2s.append(1.0 - sse / tss if tss > 0 else 0.0)
        rmses.append(np.sqrt(sse / len(fold)))
    return CVStats(
        mean_r2=float(np.mean(r2s)), std_r2=float(np.std(r2s)),
        mean_rmse=float(np.mean(rmses)), std_rmse=float(np.std(rmses)), k=k,
    )


# Pressure-bin edges (bar) for residual-bias reporting on pooled fits.
PRESSURE_BINS = ((0.0, 10.0), (10.0, 25.0), (25.0, 50.0), (50.0, 100.0),
                 (100.0, 200.0), (200.0, np.inf))


def _durbin_watson(resid):
    resid = np.asarray(resid, dtype=float)
    denom = float(np.sum(resid**2))
    if denom == 0.0:
        return 2.0
    return float(np.sum(np.diff(resid) ** 2) / denom)


@dataclass
class AggregatedCell:
    group: str
    form_id: str
    fit: FitResult
    cv: CVStats | None
    r2_ci: tuple | None  # bootstrap (lo, hi) of pooled r2
    durbin_watson: float
    residual_bias: list  # mean residual per pressure bin (None if empty bin)


def fit_aggregated(records, forms=ALL_FORMS, seed=42, cv_folds=5,
                   n_boot=0, de_config=None):
    """Pooled fits per lithology group and overall, with diagnostics.

    records: iterables of (sample_key, lithology, p, T, q) tuples or
    objects with those attributes. Cells that fail fit independently.
    Bootstrap of pooled r2 runs only when n_boot > 0.
    """
    rows = []
    for r in records:
        if hasattr(r, "pressure"):
            rows.append((r.sample_key, r.lithology, r.pressure, r.temperature,
                         r.uptake))
        else:
            rows.append(tuple(r))
    groups = {"All": rows}
    for _, lith, *_ in rows:
        groups.setdefault(lith, [])
    for row in rows:
        groups[row[1]].append(row)

    cells = []
    for group in sorted(groups):
        grp = groups[group]
        if not grp:
            continue
        p = np.array([g[2] for g in grp], dtype=float)
        t = np.array([g[3] for g in grp], dtype=float)
        q = np.array([g[4] for g in grp], dtype=float)
        t_ref = float(np.median(t))
        for form_id in forms:
            try:
                fr = fit_form(form_id, p, q, t_ref,
                              seed=derive_seed(seed, "agg", group, form_id),
                              de_config=de_config)
            except (InsufficientData, AllCostsInfinite):
                continue
            pred = eval_form(form_id, fr.params, p, t_ref, strict=False)
            resid = q - pred
            order = np.argsort(p)
            bias = []
            for lo, hi in PRESSURE_BINS:
                m = (p >= lo) & (p < hi)
                bias.append(float(np.mean(resid[m])) if m.any() else None)
            cv = None
            if cv_folds and len(p) >= cv_folds:
                try:
                    cv = kfold_cv(form_id, p, q, t_ref, k=cv_folds,
                                  seed=derive_seed(seed, "aggcv", group,
                                                   form_id),
                                  de_config=de_config)
                except InsufficientData:
                    cv = None
            ci = None
            if n_boot:
                r2s = []
                for b in range(n_boot):
                    rng = np.random.default_rng(
                        derive_seed(seed, "aggboot", group, form_id, b))
                    idx = rng.integers(0, len(p), size=len(p))
                    try:
                        bfr = fit_form(form_id, p[idx], q[idx], t_ref,
                                       seed=derive_seed(seed, "aggbootfit",
                                                        group, form_id, b),
                                       de_config=de_config)
                    except (InsufficientData, AllCostsInfinite):
                        continue
                    r2s.append(bfr.r_squared)
                if r2s:
                    ci = (float(np.percentile(r2s, 2.5)),
                          float(np.percentile(r2s, 97.5)))
            cells.append(AggregatedCell(
                group=group, form_id=form_id, fit=fr, cv=cv, r2_ci=ci,
                durbin_watson=_durbin_watson(resid[order]),
                residual_bias=bias,
            ))
    return cells


MIN_BOOTSTRAP_SUCCESS = 0.8


@dataclass
class BootstrapCI:
    form_id: str
    lower: np.ndarray  # 2.5th percentile per parameter
    upper: np.ndarray  # 97.5th percentile per parameter
    n_success: int
    n_boot: int
    flagged: bool  # True when fewer than 80% of resample refits succeeded


def bootstrap_ci(form_id, p, q, T=298.15, n_boot=500, seed=42,
                 sample_key="", de_config=None):
    """Percentile bootstrap confidence intervals on fitted parameters.

    Resamples (p, q) pairs with replacement and refits each replicate;
    replicates that fail to fit are skipped and the result is flagged when
    fewer than 80% succeed.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(p)
    estimates = []
    n_success = 0
    for b in range(n_boot):
        rs = derive_seed(seed, sample_key, form_id, b)
        rng = np.random.default_rng(rs)
        idx = rng.integers(0, n, size=n)
        try:
            fr = fit_form(form_id, p[idx], q[idx], T, seed=rs,
                          de_config=de_config)
        except (InsufficientData, AllCostsInfinite):
            continue
        if np.all(np.isfinite(fr.params)) and np.isfinite(fr.rss):
            estimates.append(fr.params)
            n_success += 1
    if not estimates:
        return BootstrapCI(form_id, np.array([]), np.array([]), 0, n_boot, True)
    est = np.array(estimates)
    return BootstrapCI(
        form_id=form_id,
        lower=np.percentile(est, 2.5, axis=0),
        upper=np.percentile(est, 97.5, axis=0),
        n_success=n_success,
        n_boot=n_boot,
        flagged=n_success < MIN_BOOTSTRAP_SUCCESS * n_boot,
    )
