"""Joint CPU-frequency and shared-volume optimisation.

Decision variables are the shared volumes ``N`` of the heads that have
members, treated as reals while iterating and rounded at the end.  For each
candidate ``N`` every client runs at the energy-optimal frequency for its
post-sharing sample count, so the objective

    tau_share(N) + T(D(N)) * tau_round(N)

is a function of ``N`` (and of the uncertain round-law coefficients) only.
The volume loop is stochastic successive convex approximation: each step
builds a quadratic model of ``T * tau_round`` around the current iterate,
blends it into a running surrogate, minimises the surrogate exactly over the
box and moves part of the way towards that minimiser.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import hetero, roundsfit, wireless
from .errors import InfeasibleError, NumericalError, SizeGuardError, ValidationError
from .structures import ClusterAssignment, SharingPlan

log = logging.getLogger(__name__)

GRID_LIMIT = 10_000_000
MAX_DOUBLINGS = 30


# --- frequency rule -------------------------------------------------------------


def energy_limited_frequency(c: wireless.ComputeParams, n_samples: float, upload_energy: float) -> float:
    """Frequency at which compute plus upload energy exactly meets the budget."""
    spare = c.energy_budget - upload_energy
    if spare <= 0:
        raise InfeasibleError(
            f"upload energy {upload_energy:.6g} J leaves no budget (limit {c.energy_budget:.6g} J)"
        )
    if n_samples <= 0:
        return math.inf
    return math.sqrt(spare / (c.energy_coeff * c.cycles_per_sample * c.local_epochs * n_samples))


def optimal_frequency(c: wireless.ComputeParams, n_samples: float, upload_energy: float,
                      client: int | None = None) -> float:
    """Fastest frequency that respects both ``max_frequency`` and the energy budget."""
    try:
        f_e = energy_limited_frequency(c, n_samples, upload_energy)
    except InfeasibleError as exc:
        who = "" if client is None else f"client {client}: "
        raise InfeasibleError(who + str(exc)) from None
    return min(c.max_frequency, f_e)


# --- objective -------------------------------------------------------------------


@dataclass
class ObjectiveContext:
    """Everything the volume optimiser needs, as callables of the volume vector.

    ``heads`` are the decision coordinates (sorted head ids), ``caps`` their
    upper bounds and ``share_cost`` the seconds per shared sample of each
    head's multicast (``a / v_m``).  ``heterogeneity(N)`` returns the
    post-sharing average EMD, ``rounds(D, beta)`` the round law and
    ``round_time(N)`` the per-round delay at energy-optimal frequencies.
    """

    heads: tuple[int, ...]
    caps: np.ndarray
    share_cost: np.ndarray
    heterogeneity: Callable[[np.ndarray], float]
    rounds: Callable[[float, tuple], float]
    round_time: Callable[[np.ndarray], float]
    mean_beta: tuple = (0.0, 0.0, 1.0)
    beta_sampler: Callable[[int, int], tuple] | None = None
    frequencies: Callable[[np.ndarray], dict] | None = None
    energy_check: Callable[[np.ndarray, dict], float] | None = None

    def __post_init__(self):
        self.caps = np.asarray(self.caps, dtype=float)
        self.share_cost = np.asarray(self.share_cost, dtype=float)
        if self.caps.shape != (len(self.heads),) or self.share_cost.shape != self.caps.shape:
            raise ValidationError("caps and share_cost need one entry per head")
        if np.any(self.caps < 0):
            raise InfeasibleError("a head has a negative volume cap")
        if np.any(self.share_cost < 0):
            raise ValidationError("share costs must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.heads)

    def share_delay(self, N) -> float:
        N = np.asarray(N, dtype=float)
        if N.size == 0:
            return 0.0
        return float(np.max(self.share_cost * N, initial=0.0))

    def psi(self, N, beta) -> float:
        """Training part ``T(D(N)) * tau_round(N)``."""
        return self.rounds(self.heterogeneity(N), beta) * self.round_time(N)

    def value(self, N, beta=None) -> float:
        beta = self.mean_beta if beta is None else beta
        return self.share_delay(N) + self.psi(N, beta)

    def draw_beta(self, j: int, i: int):
        if self.beta_sampler is None:
            return self.mean_beta
        return self.beta_sampler(j, i)

    def to_vector(self, volumes: Mapping[int, float]) -> np.ndarray:
        return np.array([float(volumes.get(h, 0.0)) for h in self.heads])

    def to_volumes(self, N) -> dict[int, float]:
        return {h: float(v) for h, v in zip(self.heads, N)}


def objective(ctx: ObjectiveContext, N, beta=None) -> float:
    """Total delay at volumes ``N`` with each client at its optimal frequency."""
    return ctx.value(N, beta)


def wireless_context(
    clients: Sequence[tuple[float, Sequence[float]]],
    g,
    assignment: ClusterAssignment,
    round_model: roundsfit.RoundModel,
    compute: wireless.ComputeParams,
    snapshot: wireless.LinkSnapshot,
    multicast_rates: Mapping[int, float],
    noise_scale: float = 0.0,
    seed: int = 0,
    normalize: bool = True,
) -> ObjectiveContext:
    """Objective for a real scenario: EMD mixing, round law and the delay model."""
    counts = np.array([float(n) for n, _ in clients])
    dists = np.vstack([hetero.as_distribution(p) for _, p in clients])
    g = hetero.as_distribution(g, "g")
    K = counts.size
    assignment.check_covers(K)
    heads = assignment.sharing_heads
    for h in heads:
        if multicast_rates.get(h, 0.0) <= 0:
            raise InfeasibleError(f"head {h} has members but no positive multicast rate")
    member_rows = [np.asarray(assignment.members[h], dtype=int) for h in heads]
    caps = np.array([counts[h] for h in heads])
    cost = np.array([compute.bits_per_sample / multicast_rates[h] for h in heads])
    e_up = np.asarray(snapshot.upload_energy, dtype=float)
    for k in range(K):
        if e_up[k] >= compute.energy_budget:
            raise InfeasibleError(f"client {k}: upload energy alone exceeds the budget")
    cyc = compute.cycles_per_sample * compute.local_epochs
    spare = compute.energy_budget - e_up

    def n_tilde(N):
        n = counts.copy()
        for rows, v in zip(member_rows, N):
            n[rows] += v
        return n

    def freqs_of(n):
        f_e = np.sqrt(spare / (compute.energy_coeff * cyc * n))
        return np.minimum(compute.max_frequency, f_e)

    def heterogeneity(N):
        n = n_tilde(N)
        mixed = dists.copy()
        for h, rows, v in zip(heads, member_rows, N):
            if v > 0:
                mixed[rows] = (counts[rows, None] * dists[rows] + v * dists[h]) / n[rows, None]
        per = np.abs(mixed - g).sum(axis=1)
        denom = n.sum() if normalize else counts.sum()
        return float(n @ per / denom)

    def round_time(N):
        n = n_tilde(N)
        comp = cyc * n / freqs_of(n)
        return float(snapshot.download.max() + np.max(comp + snapshot.upload))

    def rounds(D, beta):
        b1, b2, b3 = beta
        den = b1 * D * D + b2 * D + b3
        if not den > 0:
            raise NumericalError(f"round-law denominator {den:.3g} <= 0 at D={D:.4g}")
        return 1.0 / den

    def frequencies(N):
        n = n_tilde(N)
        return {k: float(f) for k, f in enumerate(freqs_of(n))}

    def energy_check(N, F):
        """Largest relative excess of energy over budget (<= 0 when feasible)."""
        n = n_tilde(N)
        worst = -math.inf
        for k in range(K):
            e = compute.energy_coeff * cyc * n[k] * F[k] ** 2 + e_up[k]
            worst = max(worst, (e - compute.energy_budget) / compute.energy_budget)
        return worst

    sampler = None
    if noise_scale > 0:
        def sampler(j, i):
            return roundsfit.sample_beta(round_model, noise_scale, [int(seed), int(j), int(i)])

    return ObjectiveContext(
        heads=tuple(heads), caps=caps, share_cost=cost, heterogeneity=heterogeneity,
        rounds=rounds, round_time=round_time, mean_beta=tuple(round_model.beta),
        beta_sampler=sampler, frequencies=frequencies, energy_check=energy_check,
    )


# --- surrogate ---------------------------------------------------------------------


@dataclass
class Surrogate:
    """``c * tau_share(N) + (a/2)||N||^2 + b.N + const`` (isotropic, separable)."""

    a: float
    b: np.ndarray
    c: float = 0.0
    const: float = 0.0

    def __call__(self, ctx: ObjectiveContext, N) -> float:
        N = np.asarray(N, dtype=float)
        return self.c * ctx.share_delay(N) + 0.5 * self.a * float(N @ N) + float(self.b @ N) + self.const

    @classmethod
    def prox(cls, rho: float, center) -> "Surrogate":
        """``(rho/2)||N - center||^2``."""
        center = np.asarray(center, dtype=float)
        return cls(a=rho, b=-rho * center, c=0.0, const=0.5 * rho * float(center @ center))

    @classmethod
    def linearised(cls, value: float, grad, center, lip: float) -> "Surrogate":
        """``tau_share(N) + value + grad.(N - center) + (lip/2)||N - center||^2``."""
        grad = np.asarray(grad, dtype=float)
        center = np.asarray(center, dtype=float)
        return cls(
            a=lip, b=grad - lip * center, c=1.0,
            const=value - float(grad @ center) + 0.5 * lip * float(center @ center),
        )

    def blend(self, other: "Surrogate", rho: float) -> "Surrogate":
        """``(1 - rho) * self + rho * other``."""
        return Surrogate(
            a=(1 - rho) * self.a + rho * other.a,
            b=(1 - rho) * self.b + rho * other.b,
            c=(1 - rho) * self.c + rho * other.c,
            const=(1 - rho) * self.const + rho * other.const,
        )


def fd_gradient(f: Callable[[np.ndarray], float], N, caps, f0: float | None = None) -> np.ndarray:
    """Central differences with step ``max(1, 1e-3 * cap)``, one-sided at the box edges.

    Where the two one-sided slopes disagree in sign the point is a kink of a
    max term; the component is then the one-sided slope that descends, or
    zero when neither side descends.
    """
    N = np.asarray(N, dtype=float)
    caps = np.asarray(caps, dtype=float)
    f0 = f(N) if f0 is None else f0
    grad = np.zeros_like(N)
    for m in range(N.size):
        h = max(1.0, 1e-3 * caps[m])
        lo, hi = max(0.0, N[m] - h), min(caps[m], N[m] + h)
        if hi <= lo:
            continue
        up, dn = N.copy(), N.copy()
        up[m], dn[m] = hi, lo
        fu, fd = f(up), f(dn)
        if lo < N[m] < hi:
            s_up = (fu - f0) / (hi - N[m])
            s_dn = (f0 - fd) / (N[m] - lo)
            if s_dn <= 0 <= s_up:
                continue
            if s_up < 0 < s_dn:
                grad[m] = s_up if -s_up >= s_dn else s_dn
                continue
        grad[m] = (fu - fd) / (hi - lo)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("finite-difference gradient is not finite")
    return grad


def surrogate_solve(s: Surrogate, ctx: ObjectiveContext) -> np.ndarray:
    """Exact minimiser of the surrogate over ``[0, caps]``.

    The share-delay term ``c * max_m w_m N_m`` is handled through its level
    ``t``: for fixed ``t`` each coordinate is a clipped 1-d quadratic, and the
    derivative of the resulting convex function of ``t`` is piecewise linear,
    so its root is found exactly between consecutive breakpoints.
    """
    if not s.a > 0:
        raise ValidationError("surrogate must be strictly convex (a > 0)")
    caps, w = ctx.caps, ctx.share_cost
    u = np.clip(-s.b / s.a, 0.0, caps)
    if s.c <= 0:
        return u
    # coordinates whose largest share delay is below 1e-12 s are free of the max term;
    # keeping them tied would overflow a / w^2
    tied = w * caps > 1e-12
    if not np.any(tied):
        return u
    bp = np.where(tied, w * u, 0.0)  # t at which coordinate m stops binding

    def slope(t):
        m = tied & (bp > t)
        return s.c + float(np.sum((s.a * t / w[m] + s.b[m]) / w[m]))

    if slope(0.0) >= 0:
        t = 0.0
    else:
        t = None
        pts = np.unique(np.concatenate([[0.0], bp[tied]]))
        for lo, hi in zip(pts[:-1], pts[1:]):
            if slope(hi) >= 0 or hi == pts[-1]:
                m = tied & (bp > lo)
                # slope(t) = c + sum(a t / w^2 + b / w) on (lo, hi]
                A = float(np.sum(s.a / w[m] ** 2))
                B = s.c + float(np.sum(s.b[m] / w[m]))
                t = min(max(-B / A, lo), hi) if A > 0 else hi
                break
        if t is None:
            t = float(pts[-1])
    N = np.where(tied, np.minimum(u, t / np.where(tied, w, 1.0)), u)
    return np.clip(N, 0.0, caps)


# --- schedules and the main loop ------------------------------------------------------


def rho_schedule(i: int, power: float = 0.6) -> float:
    return float((i + 1) ** -power)


def mu_schedule(i: int, power: float = 0.9) -> float:
    return float((i + 1) ** -power)


@dataclass
class SscaSchedule:
    inner_iters: int = 10
    outer_iters: int = 20
    rho_power: float = 0.6
    mu_power: float = 0.9
    lipschitz: float | None = None
    lipschitz_factor: float = 1.0
    init_prox: float | None = None

    def __post_init__(self):
        if self.inner_iters < 0 or self.outer_iters < 1:
            raise ValidationError("need inner_iters >= 0 and outer_iters >= 1")
        if not (0.5 < self.rho_power <= 1.0):
            raise ValidationError("rho power must lie in (0.5, 1] for the summability conditions")
        if not (self.rho_power < self.mu_power <= 1.0):
            raise ValidationError("mu must decay faster than rho (rho_power < mu_power <= 1)")

    @classmethod
    def from_dict(cls, d) -> "SscaSchedule":
        return cls(**dict(d))


@dataclass
class JfvoResult:
    plan: SharingPlan
    volumes: np.ndarray
    objective: float
    outer_trace: list[float] = field(default_factory=list)
    inner_trace: list[float] = field(default_factory=list)
    violation_trace: list[float] = field(default_factory=list)
    lipschitz: float = 0.0
    feasible: bool = True
    max_violation: float = 0.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "objective", "max_violation"])
        for j, (v, viol) in enumerate(zip(self.outer_trace, self.violation_trace)):
            w.writerow([j, repr(v), repr(viol)])
        return buf.getvalue()


def box_violation(ctx: ObjectiveContext, N) -> float:
    N = np.asarray(N, dtype=float)
    if N.size == 0:
        return 0.0
    return float(max(0.0, np.max(-N), np.max(N - ctx.caps)))


def _default_lipschitz(ctx: ObjectiveContext, N0, factor: float = 1.0) -> float:
    scale = float(np.max(ctx.caps)) if ctx.dim else 1.0
    return factor * ctx.value(N0) / max(scale, 1.0) ** 2


def _round_volumes(ctx: ObjectiveContext, N) -> np.ndarray:
    """Per coordinate, keep whichever of floor/ceil gives the lower mean-beta objective."""
    N = np.clip(np.asarray(N, dtype=float), 0.0, ctx.caps)
    out = np.floor(N + 1e-9)
    for m in range(N.size):
        lo = min(np.floor(N[m] + 1e-9), np.floor(ctx.caps[m]))
        hi = min(np.ceil(N[m] - 1e-9), np.floor(ctx.caps[m]))
        a, b = out.copy(), out.copy()
        a[m], b[m] = lo, hi
        out = a if ctx.value(a) <= ctx.value(b) else b
    return out


def jfvo(ctx: ObjectiveContext, schedule: SscaSchedule | None = None, N0=None,
         round_result: bool = True) -> JfvoResult:
    """Outer loop refreshes frequencies; inner loop runs SSCA on the volumes."""
    schedule = schedule or SscaSchedule()
    N = np.zeros(ctx.dim) if N0 is None else np.clip(np.asarray(N0, dtype=float), 0.0, ctx.caps)
    lip = schedule.lipschitz if schedule.lipschitz is not None else _default_lipschitz(ctx, N, schedule.lipschitz_factor)
    if not lip > 0:
        lip = 1.0
    outer, inner, viol = [ctx.value(N)], [], [box_violation(ctx, N)]
    max_lip = lip
    for j in range(schedule.outer_iters):
        start = N.copy()
        sbar = Surrogate.prox(schedule.init_prox if schedule.init_prox is not None else lip, start)
        for i in range(1, schedule.inner_iters + 1):
            beta = ctx.draw_beta(j, i)
            f = lambda x, b=beta: ctx.psi(x, b)
            val = f(N)
            grad = fd_gradient(f, N, ctx.caps, val)
            rho = rho_schedule(i, schedule.rho_power)
            mu = mu_schedule(i, schedule.mu_power)
            here = ctx.value(N, beta)
            step_lip = lip
            for _ in range(MAX_DOUBLINGS):
                cand_s = sbar.blend(Surrogate.linearised(val, grad, N, step_lip), rho)
                nbar = surrogate_solve(cand_s, ctx)
                step = (1 - mu) * N + mu * nbar
                if ctx.value(step, beta) <= here + 1e-12 * max(1.0, abs(here)):
                    break
                step_lip *= 2.0  # ascent: tighten the proximal term and retry
            else:
                step = N
            max_lip = max(max_lip, step_lip)
            sbar = cand_s
            N = step
            inner.append(ctx.value(N))
        outer.append(ctx.value(N))
        viol.append(box_violation(ctx, N))
    if round_result and ctx.dim:
        N = _round_volumes(ctx, N)
    final = ctx.value(N)
    q = max(1, len(outer) // 4)
    tail = np.asarray(outer[-q:])
    if tail.size > 1 and (tail.max() - tail.min()) > 0.05 * abs(tail.mean()):
        warnings.warn("JFVO objective still oscillating by more than 5% over the last quarter",
                      RuntimeWarning, stacklevel=2)
    plan = SharingPlan(ctx.to_volumes(N), ctx.frequencies(N) if ctx.frequencies else {})
    max_v = verify_plan(ctx, N, plan)
    return JfvoResult(plan, N, final, outer, inner, viol, max_lip, max_v <= 0.0, max_v)


def verify_plan(ctx: ObjectiveContext, N, plan: SharingPlan) -> float:
    """Largest constraint violation (box, frequency cap, energy); <= 0 means feasible."""
    worst = box_violation(ctx, N)
    worst = worst if worst > 0 else 0.0
    if ctx.energy_check is not None and plan.frequencies:
        e = ctx.energy_check(np.asarray(N, dtype=float), plan.frequencies)
        worst = max(worst, e if e > 1e-9 else 0.0)
        if any(f <= 0 for f in plan.frequencies.values()):
            worst = max(worst, 1.0)
    return worst


def grid_oracle(ctx: ObjectiveContext, resolution: float = 1.0) -> tuple[np.ndarray, float]:
    """Exhaustive mean-beta search over volume grids with the given step."""
    if not resolution > 0:
        raise ValidationError("resolution must be positive")
    axes = [np.unique(np.append(np.arange(0.0, cap + 1e-9, resolution), cap)) for cap in ctx.caps]
    size = int(np.prod([a.size for a in axes])) if axes else 1
    if size > GRID_LIMIT:
        raise SizeGuardError(f"grid of {size} points exceeds the {GRID_LIMIT} limit")
    best, best_val = np.zeros(ctx.dim), ctx.value(np.zeros(ctx.dim))
    if not axes:
        return best, best_val
    for point in _product(axes):
        v = ctx.value(point)
        if v < best_val - 1e-12:
            best, best_val = point.copy(), v
    return best, best_val


def _product(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    for row in flat:
        yield row


def toy_context(caps, share_cost, rounds_of_n: Callable[[np.ndarray], float],
                round_time: float = 1.0) -> ObjectiveContext:
    """Context whose round count is an explicit function of ``N`` (tests, demos)."""
    return _ToyContext(caps, share_cost, rounds_of_n, round_time)


class _ToyContext(ObjectiveContext):
    def __init__(self, caps, share_cost, rounds_of_n, round_time):
        self._rounds_of_n = rounds_of_n
        self._tau = float(round_time)
        super().__init__(
            heads=tuple(range(len(caps))), caps=np.asarray(caps, float),
            share_cost=np.asarray(share_cost, float),
            heterogeneity=lambda N: 0.0, rounds=lambda D, b: 1.0, round_time=lambda N: self._tau,
        )

    def psi(self, N, beta) -> float:
        return float(self._rounds_of_n(np.asarray(N, dtype=float))) * self._tau
