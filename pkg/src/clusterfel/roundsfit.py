"""Rounds-versus-heterogeneity law ``T(D) = 1 / (b1*D^2 + b2*D + b3)``.

The fit regresses ``1/T`` on ``(D^2, D, 1)`` by ordinary least squares, which
is exact for the reciprocal-quadratic form.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, FitError, NumericalError, ValidationError

log = logging.getLogger(__name__)

MAX_REDRAWS = 100


@dataclass(frozen=True)
class RoundModel:
    beta: tuple[float, float, float]
    valid_range: tuple[float, float]
    nmse: float = 0.0
    std_err: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def denominator(self, d):
        b1, b2, b3 = self.beta
        d = np.asarray(d, dtype=float)
        return b1 * d * d + b2 * d + b3

    def to_dict(self) -> dict:
        return {"beta": list(self.beta), "range": list(self.valid_range), "nmse": self.nmse,
                "std_err": list(self.std_err)}

    @classmethod
    def from_dict(cls, d) -> "RoundModel":
        return cls(tuple(float(x) for x in d["beta"]), tuple(float(x) for x in d["range"]),
                   float(d.get("nmse", 0.0)), tuple(float(x) for x in d.get("std_err", (0, 0, 0))))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RoundModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _min_on_range(beta, lo: float, hi: float) -> tuple[float, float]:
    """Minimum of the quadratic denominator on [lo, hi] and where it occurs."""
    b1, b2, b3 = beta
    cands = [lo, hi]
    if b1 != 0:
        v = -b2 / (2 * b1)
        if lo < v < hi:
            cands.append(v)
    vals = [b1 * c * c + b2 * c + b3 for c in cands]
    i = int(np.argmin(vals))
    return vals[i], cands[i]


def fit(samples: Sequence[tuple[float, float]]) -> RoundModel:
    """Least-squares fit of the reciprocal-quadratic law to ``(D, T)`` pairs."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValidationError("fit needs at least 3 (D, T) samples")
    d, t = arr[:, 0], arr[:, 1]
    if np.unique(d).size < 3:
        raise FitError("need at least 3 distinct D values for a quadratic fit")
    if np.any(t <= 0) or not np.all(np.isfinite(arr)):
        raise ValidationError("round counts must be positive and finite")
    X = np.column_stack([d * d, d, np.ones_like(d)])
    if np.linalg.matrix_rank(X) < 3:
        raise FitError("singular design matrix")
    y = 1.0 / t
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    beta = tuple(float(b) for b in beta)
    lo, hi = float(d.min()), float(d.max())
    m, at = _min_on_range(beta, lo, hi)
    if m <= 0:
        raise FitError(f"fitted denominator is non-positive ({m:.3g}) at D={at:.6g}")
    dof = d.size - 3
    resid = y - X @ np.asarray(beta)
    if dof > 0:
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        se = tuple(float(np.sqrt(max(c, 0.0))) for c in np.diag(cov))
    else:
        se = (0.0, 0.0, 0.0)
    model = RoundModel(beta, (lo, hi), 0.0, se)
    return RoundModel(beta, (lo, hi), nmse(model, d, t), se)


def nmse(model: RoundModel, d, t) -> float:
    """sum (T_hat - T)^2 / sum (T - mean T)^2; zero when T is constant and matched."""
    t = np.asarray(t, dtype=float)
    pred = predict(model, np.asarray(d, dtype=float), warn=False)
    num = float(np.sum((pred - t) ** 2))
    den = float(np.sum((t - t.mean()) ** 2))
    if den == 0.0:
        return 0.0 if num < 1e-18 else float("inf")
    return num / den


def predict(model: RoundModel, d, warn: bool = True):
    """Expected rounds at heterogeneity ``d`` (scalar or array)."""
    d_arr = np.asarray(d, dtype=float)
    lo, hi = model.valid_range
    if warn and (np.any(d_arr < lo - 1e-12) or np.any(d_arr > hi + 1e-12)):
        log.warning("extrapolating round model outside [%.4g, %.4g]", lo, hi)
    den = model.denominator(d_arr)
    if np.any(den <= 0) or not np.all(np.isfinite(den)):
        raise DomainError("round-law denominator is non-positive at the requested D")
    out = 1.0 / den
    return float(out) if np.ndim(out) == 0 else out


def sample_beta(model: RoundModel, noise_scale: float, seed) -> tuple[float, float, float]:
    """Gaussian perturbation of beta, scaled per coefficient by its standard error.

    Draws whose denominator is non-positive anywhere on the valid range are
    redrawn, up to ``MAX_REDRAWS`` times.
    """
    if noise_scale < 0:
        raise ValidationError("noise_scale must be >= 0")
    if noise_scale == 0:
        return model.beta
    rng = np.random.default_rng(seed)
    se = np.asarray(model.std_err)
    lo, hi = model.valid_range
    for _ in range(MAX_REDRAWS):
        b = np.asarray(model.beta) + noise_scale * se * rng.standard_normal(3)
        if _min_on_range(tuple(b), lo, hi)[0] > 0:
            return tuple(float(x) for x in b)
    raise NumericalError(f"no valid beta draw in {MAX_REDRAWS} attempts; noise_scale too large")


def read_samples_csv(path) -> list[tuple[float, float]]:
    """CSV with columns ``emd,rounds`` (header required)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"emd", "rounds"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected header with 'emd' and 'rounds' columns")
        for row in reader:
            out.append((float(row["emd"]), float(row["rounds"])))
    return out
