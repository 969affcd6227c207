"""Empirical checks of the convex FedAvg convergence bound.

Assumption constants (smoothness ``L``, per-sample gradient variance
``sigma^2``, gradient norm ``G``) are estimated as maxima over seeded probe
sets, so they are lower bounds on the true suprema; the bound checks
therefore evaluate the bounds with constants inflated by a configurable
factor and report the raw comparison alongside.

Training for these checks uses ``E`` single-sample SGD steps per round, equal
client sizes and the plain client average, which is the setting the bound is
stated for.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import fedsim
from .datagen import ClientDataset
from .errors import HypothesisError, InstrumentationError, UnsupportedError, ValidationError


class QuadraticModel:
    """``f(w) = 0.5 * ||w||^2`` for every sample; Hessian is the identity."""

    convex = True

    def __init__(self, size: int):
        self.size = size

    def init(self, rng=None, scale: float = 0.0):
        return np.zeros(self.size)

    def loss(self, w, X, y) -> float:
        return 0.5 * float(w @ w)

    def grad(self, w, X, y):
        return np.array(w, dtype=float, copy=True)

    def sample_grads(self, w, X, y):
        return np.tile(w, (len(y), 1))


@dataclass
class TheoryConstants:
    L_smooth: float
    sigma: float
    G: float
    A: float
    D_k: dict[int, float]
    D_bar: float
    w_star: np.ndarray | None = field(default=None, repr=False)

    def inflated(self, factor: float) -> "TheoryConstants":
        """Smoothness, variance and gradient bounds scaled by ``factor``."""
        return TheoryConstants(self.L_smooth * factor, self.sigma * factor, self.G * factor,
                               self.A, dict(self.D_k), self.D_bar, self.w_star)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("w_star")
        d["D_k"] = {str(k): v for k, v in self.D_k.items()}
        return d


def _pooled(datasets: Sequence[ClientDataset]):
    X = np.vstack([d.features for d in datasets])
    y = np.concatenate([d.labels for d in datasets])
    return X, y


def label_emds(datasets: Sequence[ClientDataset]) -> dict[int, float]:
    _, y = _pooled(datasets)
    Y = datasets[0].num_classes
    g = np.bincount(y, minlength=Y) / y.size
    return {k: float(np.abs(d.label_distribution - g).sum()) for k, d in enumerate(datasets)}


def solve_optimum(model, datasets: Sequence[ClientDataset], tol: float = 1e-6) -> np.ndarray:
    """Minimiser of the pooled loss by L-BFGS, certified by gradient norm."""
    X, y = _pooled(datasets)
    res = optimize.minimize(
        lambda w: model.loss(w, X, y), model.init(), jac=lambda w: model.grad(w, X, y),
        method="L-BFGS-B", options={"maxiter": 20000, "gtol": tol * 0.1, "ftol": 0.0},
    )
    w = res.x
    if np.linalg.norm(model.grad(w, X, y)) > tol:
        # polish with plain gradient steps; smooth convex problem
        for _ in range(20000):
            g = model.grad(w, X, y)
            if np.linalg.norm(g) <= tol:
                break
            w = w - 0.5 * g
    return w


def _require_convex(model):
    if not getattr(model, "convex", False):
        raise UnsupportedError("theory checks need a convex model (softmax regression)")


def estimate_constants(datasets: Sequence[ClientDataset], model=None, num_probes: int = 1000,
                       seed: int = 0, batch_size: int = 1, w0=None, w_star=None) -> TheoryConstants:
    """Empirical L, sigma, G, A and per-client label EMDs.

    Probe weights lie on random points of the segment from ``w0`` to ``w*``
    plus Gaussian jitter of the same scale, which covers the region training
    visits.  ``sigma`` is the largest within-client gradient spread for
    mini-batches of ``batch_size`` drawn without replacement; it is zero for
    full-batch gradients.
    """
    if not datasets:
        raise ValidationError("no datasets")
    if model is None:
        model = fedsim.SoftmaxRegression(datasets[0].dim, datasets[0].num_classes)
    _require_convex(model)
    rng = np.random.default_rng(seed)
    X, y = _pooled(datasets)
    w0 = model.init() if w0 is None else np.asarray(w0, dtype=float)
    if w_star is None:
        w_star = solve_optimum(model, datasets)
    span = w_star - w0
    scale = max(float(np.linalg.norm(span)) / math.sqrt(span.size), 1e-3)

    def probe():
        return w0 + rng.uniform(0, 1.2) * span + scale * rng.standard_normal(span.size)

    L = 0.0
    for _ in range(num_probes):
        w1, w2 = probe(), probe()
        if rng.uniform() < 0.5:  # short-range pairs see local curvature
            w2 = w1 + 1e-2 * scale * rng.standard_normal(span.size)
        dw = np.linalg.norm(w1 - w2)
        if dw > 0:
            L = max(L, float(np.linalg.norm(model.grad(w1, X, y) - model.grad(w2, X, y)) / dw))
    var, G = 0.0, 0.0
    for _ in range(num_probes):
        w = probe()
        d = datasets[int(rng.integers(len(datasets)))]
        sg = model.sample_grads(w, d.features, d.labels)
        n = sg.shape[0]
        G = max(G, float(np.sqrt((sg * sg).sum(axis=1)).max()))
        spread = float(((sg - sg.mean(axis=0)) ** 2).sum(axis=1).mean())
        b = min(batch_size, n)
        if n > 1:
            spread *= (n - b) / (b * (n - 1))
        var = max(var, spread)
    D = label_emds(datasets)
    return TheoryConstants(
        L_smooth=L, sigma=math.sqrt(var), G=G,
        A=float(np.sum((w0 - w_star) ** 2)),
        D_k=D, D_bar=float(np.mean(list(D.values()))), w_star=w_star,
    )


# --- bounds --------------------------------------------------------------------------


def rate_bound_terms(c: TheoryConstants, eta: float, E: int, T: int, K: int) -> dict[str, float]:
    if eta > 1.0 / (4.0 * c.L_smooth) * (1 + 1e-12):
        raise HypothesisError(f"learning rate {eta:.4g} exceeds 1/(4L) = {1 / (4 * c.L_smooth):.4g}")
    if E < 1 or T < 1 or K < 1:
        raise ValidationError("E, T and K must all be >= 1")
    L, s2, G2, D2 = c.L_smooth, c.sigma**2, c.G**2, c.D_bar**2
    return {
        "optimization": c.A / (2 * eta * E * T),
        "variance": eta * s2 / K,
        "drift_gradient": 2 * K * L * E**2 * eta**2 * D2 * G2,
        "drift_heterogeneity": 6 * K * L * E * eta**2 * D2,
        "drift_variance": 4 * L * E * eta**2 * s2,
    }


def rate_bound_value(c: TheoryConstants, eta: float, E: int, T: int, K: int) -> float:
    return float(sum(rate_bound_terms(c, eta, E, T, K).values()))


def drift_bound(c: TheoryConstants, D_k: float, eta: float, E: int) -> float:
    return 2 * E**2 * eta**2 * D_k**2 * c.G**2 + 6 * E * eta**2 * D_k**2 + 4 * E * eta**2 * c.sigma**2


# --- recorded training ----------------------------------------------------------------


@dataclass
class RecordedRun:
    """``iterates[t, i, k]`` is client k's model after i local steps of round t."""

    iterates: np.ndarray
    eta: float
    local_steps: int

    @property
    def shadow(self) -> np.ndarray:
        return self.iterates.mean(axis=2)


def run_recorded(datasets: Sequence[ClientDataset], model, eta: float, local_steps: int,
                 rounds: int, seed: int, w0=None) -> RecordedRun:
    """FedAvg with single-sample SGD steps, keeping every local iterate."""
    K = len(datasets)
    if len({d.n for d in datasets}) != 1:
        raise ValidationError("theory runs need the same sample count on every client")
    w = model.init() if w0 is None else np.asarray(w0, dtype=float).copy()
    its = np.empty((rounds, local_steps + 1, K, w.size))
    for t in range(rounds):
        for k, d in enumerate(datasets):
            rng = fedsim.client_rng(seed, t, k)
            wk = w.copy()
            its[t, 0, k] = wk
            for i in range(local_steps):
                j = int(rng.integers(d.n))
                wk = wk - eta * model.grad(wk, d.features[j: j + 1], d.labels[j: j + 1])
                its[t, i + 1, k] = wk
        w = its[t, local_steps].mean(axis=0)
    return RecordedRun(its, eta, local_steps)


# --- reports -----------------------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    passed: bool
    lhs: float
    rhs: float
    max_ratio: float
    points: int
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)


def _finite_report(name, lhs, rhs, ratio, points, passed, details) -> CheckReport:
    vals = [lhs, rhs, ratio]
    if not all(np.isfinite(v) for v in vals):
        passed = False
        details = dict(details, error="non-finite quantity")
    return CheckReport(name, bool(passed), float(lhs), float(rhs), float(ratio), int(points), details)


def class_gradients(model, w, datasets: Sequence[ClientDataset]) -> np.ndarray:
    """Pooled per-class mean gradient at ``w``, shape (Y, size)."""
    X, y = _pooled(datasets)
    Y = datasets[0].num_classes
    out = np.zeros((Y, model.size))
    for c in range(Y):
        m = y == c
        if np.any(m):
            out[c] = model.grad(w, X[m], y[m])
    return out


def check_gradient_dissimilarity(datasets: Sequence[ClientDataset], model=None, num_probes: int = 100,
                                 seed: int = 0, scale: float = 1.0,
                                 shared_conditionals: bool = True) -> CheckReport:
    """Check ``||grad F_k(w) - grad F(w)|| <= D_k * max_y ||h_y(w)||`` at random weights.

    ``h_y`` is the pooled class-conditional mean gradient.  With
    ``shared_conditionals`` each client's gradient is rebuilt from its label
    law and the pooled ``h_y`` (every client sees the same feature law per
    class, as in a label-skew partition); otherwise each client's own
    empirical gradient is used and finite-sample noise enters the left side.
    One point is one (client, weight) pair.
    """
    if not datasets:
        raise ValidationError("no datasets")
    if model is None:
        model = fedsim.SoftmaxRegression(datasets[0].dim, datasets[0].num_classes)
    rng = np.random.default_rng(seed)
    D = label_emds(datasets)
    _, y_all = _pooled(datasets)
    g = np.bincount(y_all, minlength=datasets[0].num_classes) / y_all.size
    worst_ratio, worst_l, worst_r, points, ok = 0.0, 0.0, 0.0, 0, True
    for _ in range(num_probes):
        w = scale * rng.standard_normal(model.size)
        h = class_gradients(model, w, datasets)
        G_hat = float(np.linalg.norm(h, axis=1).max())
        full = g @ h
        for k, d in enumerate(datasets):
            if shared_conditionals:
                gk = d.label_distribution @ h
            else:
                gk = model.grad(w, d.features, d.labels)
            lhs = float(np.linalg.norm(gk - full))
            rhs = D[k] * G_hat
            points += 1
            ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= 1e-12 else math.inf)
            if lhs > rhs * (1 + 1e-9) + 1e-12:
                ok = False
            if ratio >= worst_ratio:
                worst_ratio, worst_l, worst_r = ratio, lhs, rhs
    name = "gradient_dissimilarity" + ("" if shared_conditionals else "_empirical")
    return _finite_report(name, worst_l, worst_r, worst_ratio, points, ok,
                          {"shared_conditionals": shared_conditionals})


def check_drift_bound(runs: Sequence[RecordedRun], constants: TheoryConstants,
                      inflation: float = 2.0) -> CheckReport:
    """Seed-averaged squared distance to the shadow average against the per-client bound."""
    if not runs:
        raise InstrumentationError("drift check needs recorded runs")
    for r in runs:
        if r.iterates is None or r.iterates.ndim != 4:
            raise InstrumentationError("runs must carry per-step local iterates")
    c = constants.inflated(inflation)
    eta, E = runs[0].eta, runs[0].local_steps
    if eta > 1.0 / (4.0 * c.L_smooth) * (1 + 1e-12):
        raise HypothesisError(f"learning rate {eta:.4g} exceeds 1/(4L) = {1 / (4 * c.L_smooth):.4g}")
    drift = np.mean([((r.iterates - r.shadow[:, :, None, :]) ** 2).sum(axis=3) for r in runs], axis=0)
    K = drift.shape[2]
    bounds = np.array([drift_bound(c, constants.D_k[k], eta, E) for k in range(K)])
    ratio = drift / bounds[None, None, :]
    i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    ok = bool(np.all(drift <= bounds[None, None, :] * (1 + 1e-12)))
    raw = constants.inflated(1.0)
    raw_ok = bool(np.all(drift <= np.array([drift_bound(raw, constants.D_k[k], eta, E)
                                               for k in range(K)])[None, None, :]))
    return _finite_report("drift_bound", drift[i], bounds[i[2]], float(ratio[i]), drift.size, ok,
                          {"seeds": len(runs), "inflation": inflation, "holds_uninflated": raw_ok,
                           "step0_max_drift": float(drift[:, 0].max())})


def rate_gap(runs: Sequence[RecordedRun], model, datasets, w_star) -> float:
    """Seed-averaged ``(1/(E T)) sum_t sum_{i>=1} F(shadow) - F(w*)``."""
    X, y = _pooled(datasets)
    f_star = model.loss(w_star, X, y)
    vals = []
    for r in runs:
        sh = r.shadow[:, 1:]
        vals.append(np.mean([model.loss(w, X, y) for w in sh.reshape(-1, sh.shape[-1])]) - f_star)
    return float(np.mean(vals))


def check_rate_bound(runs: Sequence[RecordedRun], constants: TheoryConstants, model, datasets,
                     inflation: float = 2.0) -> CheckReport:
    if not runs:
        raise InstrumentationError("rate check needs recorded runs")
    if constants.w_star is None:
        raise InstrumentationError("constants carry no optimum w*")
    _require_convex(model)
    T, E1, K, _ = runs[0].iterates.shape
    E = E1 - 1
    c = constants.inflated(inflation)
    lhs = rate_gap(runs, model, datasets, constants.w_star)
    terms = rate_bound_terms(c, runs[0].eta, E, T, K)
    rhs = float(sum(terms.values()))
    raw = rate_bound_value(constants, runs[0].eta, E, T, K)
    # the round boundary must hand the shadow average on as the next broadcast
    sync = max(float(np.abs(r.shadow[t, E] - r.iterates[t + 1, 0, 0]).max())
               for r in runs for t in range(T - 1)) if T > 1 else 0.0
    return _finite_report("rate_bound", lhs, rhs, lhs / rhs if rhs > 0 else math.inf, len(runs),
                          lhs <= rhs and sync == 0.0,
                          {"terms": terms, "uninflated_bound": raw, "holds_uninflated": lhs <= raw,
                           "inflation": inflation, "shadow_sync_error": sync})


def k_trend(make_datasets, ks: Sequence[int], model_factory, eta: float, local_steps: int,
            rounds: int, seeds: Sequence[int]) -> list[dict]:
    """Empirical gap and bound terms for several client counts at fixed total data.

    ``make_datasets(K)`` must return equal-size client datasets.  Reported,
    not asserted.
    """
    rows = []
    for K in ks:
        ds = make_datasets(K)
        model = model_factory(ds)
        c = estimate_constants(ds, model, num_probes=200, seed=0)
        runs = [run_recorded(ds, model, eta, local_steps, rounds, s) for s in seeds]
        gap = rate_gap(runs, model, ds, c.w_star)
        row = {"K": K, "gap": gap}
        try:
            row.update(rate_bound_terms(c, eta, local_steps, rounds, K))
        except HypothesisError as exc:
            row["note"] = str(exc)
        rows.append(row)
    return rows


# --- full suite ------------------------------------------------------------------------


def theory_scenario(name: str, num_clients: int = 10, samples: int = 100, num_classes: int = 10,
                    dim: int = 32, seed: int = 0):
    """Equal-size label-skew partitions used by the theory suite."""
    from . import datagen

    if name == "single_class":
        sc = datagen.Scenario(num_clients, num_classes, [samples] * num_clients,
                              "single_class_fraction", fraction=1.0, dim=dim, rng_seed=seed)
    elif name == "half_single_class":
        sc = datagen.Scenario(num_clients, num_classes, [samples] * num_clients,
                              "single_class_fraction", fraction=0.5, dim=dim, rng_seed=seed)
    elif name == "dirichlet":
        sc = datagen.Scenario(num_clients, num_classes, [samples] * num_clients, "dirichlet",
                              alpha=0.1, dim=dim, rng_seed=seed)
    else:
        raise ValidationError(f"unknown theory scenario {name!r}; choose single_class, "
                              "half_single_class or dirichlet")
    return datagen.generate(sc).clients


def run_suite(datasets: Sequence[ClientDataset], seeds: Sequence[int] = (0, 1, 2, 3, 4),
              num_probes: int = 1000, local_steps: int = 5, rounds: int = 20,
              inflation: float = 2.0, eta: float | None = None) -> dict:
    """Constants, dissimilarity, drift and rate checks on one scenario.

    ``eta`` defaults to ``1 / (4 * inflation * L_hat)`` so the rate bound's
    step-size condition holds for the inflated constants.
    """
    model = fedsim.SoftmaxRegression(datasets[0].dim, datasets[0].num_classes)
    c = estimate_constants(datasets, model, num_probes=num_probes, seed=0)
    eta = 1.0 / (4.0 * inflation * c.L_smooth) if eta is None else float(eta)
    probes = max(1, -(-num_probes // len(datasets)))
    dis = check_gradient_dissimilarity(datasets, model, num_probes=probes, seed=1)
    dis_emp = check_gradient_dissimilarity(datasets, model, num_probes=probes, seed=1,
                                           shared_conditionals=False)
    runs = [run_recorded(datasets, model, eta, local_steps, rounds, s) for s in seeds]
    drift = check_drift_bound(runs, c, inflation)
    rate = check_rate_bound(runs, c, model, datasets, inflation)
    checks = [dis, dis_emp, drift, rate]
    return {
        "constants": c.to_dict(),
        "learning_rate": eta,
        "local_steps": local_steps,
        "rounds": rounds,
        "seeds": list(seeds),
        "checks": [r.to_dict() for r in checks],
        "passed": all(r.passed for r in checks),
    }
