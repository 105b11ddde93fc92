"""
Affine leash-tension model ``F = beta1 * (v_body . e_l) + beta2``.

The model is fitted by ordinary least squares; its residual standard deviation
``sigma`` gives the two-sided tension band used as planner constraints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateData, EmptyData, ConfigError
from .geometry import PHI, leash_projection


class TensionSample(NamedTuple):
    v_proj: float
    force: float


@dataclass(frozen=True)
class TensionModel:
    beta1: float
    beta2: float
    sigma: float = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")

    def predict_proj(self, v_proj):
        return self.beta1 * np.asarray(v_proj, dtype=float) + self.beta2

    def predict(self, q, u):
        """Tension for configuration(s) ``q`` under command(s) ``u``.

        A zero command has zero projected speed, so it yields ``beta2``.
        """
        p, _ = leash_projection(np.asarray(q, dtype=float)[..., PHI], u)
        out = self.predict_proj(p)
        return float(out) if out.ndim == 0 else out

    def force_bounds(self, q, u):
        f = self.predict(q, u)
        return f - self.sigma, f + self.sigma

    def plant_force(self, q, u):
        """Physical tension: the raw prediction clamped at zero (a leash cannot push)."""
        return np.maximum(0.0, self.predict(q, u))


PAPER_MODEL = TensionModel(beta1=109.8, beta2=15.85, sigma=15.06)


def predict(model: TensionModel, q, u):
    return model.predict(q, u)


def force_bounds(model: TensionModel, q, u):
    return model.force_bounds(q, u)


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray([tuple(s) for s in samples], dtype=float).reshape(-1, 2)
    return a[:, 0], a[:, 1]


def fit(samples: Sequence[TensionSample] | np.ndarray) -> TensionModel:
    """Closed-form OLS fit; ``sigma`` uses the ``n - 2`` divisor."""
    v, f = _as_arrays(samples)
    n = v.size
    if n < 3:
        raise DegenerateData(f"need at least 3 samples, got {n}")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(f))):
        raise DegenerateData("samples must be finite")
    vm, fm = v.mean(), f.mean()
    dv = v - vm
    sxx = float(dv @ dv)
    if sxx / n <= 1e-12:
        raise DegenerateData("projected speeds have no spread")
    beta1 = float(dv @ (f - fm)) / sxx
    beta2 = float(fm - beta1 * vm)
    resid = f - (beta1 * v + beta2)
    sigma = float(np.sqrt(resid @ resid / (n - 2)))
    return TensionModel(beta1, beta2, sigma)


def coverage(samples, model: TensionModel) -> float:
    """Fraction of samples whose residual lies within one ``sigma``."""
    v, f = _as_arrays(samples)
    if v.size == 0:
        raise EmptyData("coverage needs at least one sample")
    return float(np.mean(np.abs(f - model.predict_proj(v)) <= model.sigma))


def read_samples_csv(path: str | Path) -> list[TensionSample]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["v_proj", "force"]:
            raise ConfigError(f"{path}: line 1: expected header 'v_proj,force'")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(TensionSample(float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    return out


def write_samples_csv(path: str | Path, samples: Iterable[TensionSample]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("v_proj,force\n")
        for s in samples:
            fh.write(f"{float(s[0])!r},{float(s[1])!r}\n")
