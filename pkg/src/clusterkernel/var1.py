"""Two-attribute VAR(1) generator for the controlled clustering benchmark.

Each series follows x(t) = alpha + diag(rho_x, rho_y) x(t-1) + xi(t) with
bivariate Gaussian noise of unit marginal variance. The noise correlation is
chosen so the stationary contemporaneous correlation between the two
attributes equals a target ``rho``; the intercept realizes a target
stationary mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, MtsRecord
from .errors import ConfigError


@dataclass(frozen=True)
class Var1Params:
    rho_x: float
    rho_y: float
    rho: float            # target corr(x1(t), x2(t)) at stationarity
    mean: tuple = (0.0, 0.0)
    length: int = 50
    burn_in: int = 100

    def __post_init__(self):
        if not (abs(self.rho_x) < 1 and abs(self.rho_y) < 1):
            raise ConfigError(f"autoregressive coefficients must have |.| < 1, got "
                              f"({self.rho_x}, {self.rho_y})")
        if abs(self.rho) > 1:
            raise ConfigError(f"target correlation must have |.| <= 1, got {self.rho}")
        if self.length < 1 or self.burn_in < 0:
            raise ConfigError("length must be >= 1 and burn_in >= 0")

    @property
    def noise_corr(self) -> float:
        """Noise correlation that realizes corr(x1, x2) = rho at stationarity."""
        value = (self.rho * (1.0 - self.rho_x * self.rho_y)
                 / math.sqrt((1.0 - self.rho_x ** 2) * (1.0 - self.rho_y ** 2)))
        if abs(value) > 1.0:
            raise ConfigError(
                f"inconsistent parameters (rho={self.rho}, rho_x={self.rho_x}, "
                f"rho_y={self.rho_y}): implied noise correlation {value:.4f} exceeds 1")
        return value

    @property
    def intercept(self) -> np.ndarray:
        m = np.asarray(self.mean, dtype=np.float64)
        return (np.eye(2) - np.diag([self.rho_x, self.rho_y])) @ m


def generate_var1(params: Var1Params, n_series: int, seed, id_prefix: str = "s") -> Dataset:
    """Simulate fully observed series; deterministic given the seed.

    Each series uses its own generator spawned from the seed, so subsets can
    be produced independently without changing the draws.
    """
    rho_xi = params.noise_corr
    chol = np.linalg.cholesky(np.array([[1.0, rho_xi], [rho_xi, 1.0]]))
    ar = np.array([params.rho_x, params.rho_y])
    alpha = params.intercept
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    records = []
    for i, child in enumerate(ss.spawn(n_series)):
        rng = np.random.default_rng(child)
        total = params.burn_in + params.length
        noise = rng.standard_normal((total, 2)) @ chol.T
        x = np.empty((total, 2))
        state = np.asarray(params.mean, dtype=np.float64)
        for t in range(total):
            state = alpha + ar * state + noise[t]
            x[t] = state
        vals = x[params.burn_in:].T  # (2, length)
        records.append(MtsRecord(values=vals, mask=np.ones_like(vals, dtype=np.uint8),
                                 id=f"{id_prefix}{i}"))
    return Dataset(records=records)


# The two benchmark classes: strongly positively correlated attributes with
# offset means, versus negatively correlated attributes at zero mean.
CLASS1 = Var1Params(rho_x=0.8, rho_y=0.8, rho=0.8, mean=(0.5, -0.5))
CLASS2 = Var1Params(rho_x=0.6, rho_y=0.6, rho=-0.8, mean=(0.0, 0.0))


def make_var1_benchmark(seed: int, n_per_class: int = 100, length: int = 50):
    """Balanced two-class train/test layout: ``n_per_class`` series per class
    per split, 2 attributes, labels 0/1. Returns (train, test) Datasets."""
    from dataclasses import replace

    c1 = replace(CLASS1, length=length)
    c2 = replace(CLASS2, length=length)
    ss = np.random.SeedSequence(seed)
    tr1_s, tr2_s, te1_s, te2_s = ss.spawn(4)
    tr1 = generate_var1(c1, n_per_class, tr1_s, id_prefix="train_c1_")
    tr2 = generate_var1(c2, n_per_class, tr2_s, id_prefix="train_c2_")
    te1 = generate_var1(c1, n_per_class, te1_s, id_prefix="test_c1_")
    te2 = generate_var1(c2, n_per_class, te2_s, id_prefix="test_c2_")
    labels = np.array([0] * n_per_class + [1] * n_per_class, dtype=np.int64)
    train = Dataset(records=tr1.records + tr2.records, labels=labels)
    test = Dataset(records=te1.records + te2.records, labels=labels.copy())
    return train, test
