"""Statistical models behind the desk-scale experiments.

Each scenario bundles the analytic model a designer needs with a seeded
sampler producing (task, observation) pairs, plus the closed-form estimator
and error floor when one exists. Classification scenarios also carry the
exhaustive detectors used as references.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .bounds import gaussian_mmse
from .linear_task import LinearTaskModel
from .quadratic_task import LiftedTaskModel, QuadraticTask, to_linear_model

__all__ = [
    "ScenarioSpec",
    "isi_scenario",
    "covariance_scenario",
    "dft_pilot_scenario",
    "bpsk_scenario",
    "csi_perturb",
    "symbols_to_labels",
    "labels_to_symbols",
    "bit_error_rate",
]


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """A named experiment model with its sampler and analytic references."""

    name: str
    kind: str                       # "linear" | "quadratic" | "classification"
    sampler: Callable               # (rng, count) -> (tasks, observations)
    model: Optional[LinearTaskModel] = None
    train_sampler: Optional[Callable] = None
    analytic_gamma: Optional[np.ndarray] = None
    analytic_mmse: Optional[float] = None
    task: Optional[QuadraticTask] = None
    lifted: Optional[LiftedTaskModel] = None
    mixing: Optional[np.ndarray] = None
    noise_var: Optional[float] = None
    prior_cov: Optional[np.ndarray] = None  # covariance of the task source
    symbols: Optional[np.ndarray] = None    # class index -> symbol vector

    def __post_init__(self):
        if self.train_sampler is None:
            object.__setattr__(self, "train_sampler", self.sampler)

    @property
    def n(self) -> int:
        if self.model is not None and self.kind == "linear":
            return self.model.n
        if self.task is not None:
            return self.task.n
        return self.mixing.shape[0]

    @property
    def k(self) -> int:
        if self.model is not None and self.kind == "linear":
            return self.model.k
        if self.task is not None:
            return self.task.k
        return self.mixing.shape[1]

    def estimate_spectrum(self) -> np.ndarray:
        """Descending eigenvalues of the task-estimate covariance."""
        if self.model is None:
            raise ValueError(f"scenario {self.name} has no analytic model")
        eig = np.linalg.eigvalsh(self.model.estimate_covariance())[::-1]
        return np.clip(eig, 0.0, None)


def _gaussian_sampler(mixing, chol_s, noise_std):
    h = mixing

    def sample(rng: np.random.Generator, count: int):
        s = rng.standard_normal((count, chol_s.shape[0])) @ chol_s.T
        x = s @ h.T + noise_std * rng.standard_normal((count, h.shape[0]))
        return s, x

    return sample


def isi_scenario() -> ScenarioSpec:
    """Multipath channel-tap estimation from 120 noisy training observations.

    Eight taps with covariance exp(-|i-j|) are observed through a cosine
    training sequence in unit-variance white noise; the task estimate is
    linear in the observation.
    """
    k, n = 8, 120
    idx = np.arange(1, k + 1)
    cov_s = np.exp(-np.abs(idx[:, None] - idx[None, :]))
    taps = np.arange(1, n + 1)[:, None] - np.arange(1, k + 1)[None, :] + 1
    mixing = np.where(taps > 0, np.cos(2 * np.pi * taps / n), 0.0)
    gamma, mmse = gaussian_mmse(mixing, cov_s, 1.0)
    obs_cov = mixing @ cov_s @ mixing.T + np.eye(n)
    model = LinearTaskModel(obs_cov=obs_cov, task_matrix=gamma, mmse_floor=mmse)
    sampler = _gaussian_sampler(mixing, np.linalg.cholesky(cov_s), 1.0)
    return ScenarioSpec(name="isi", kind="linear", sampler=sampler, model=model,
                        analytic_gamma=gamma, analytic_mmse=mmse,
                        mixing=mixing, noise_var=1.0, prior_cov=cov_s)


def covariance_scenario() -> ScenarioSpec:
    """Empirical covariance of four i.i.d. 3-dim Gaussian vectors.

    The observation stacks the four vectors (n = 12); the six tasks are the
    upper-triangular entries of the 3x3 sample covariance, quadratic forms in
    the observation.
    """
    blocks, nb = 4, 3
    n = blocks * nb
    idx = np.arange(nb)
    cov_v = np.exp(-np.abs(idx[:, None] - idx[None, :]))
    cov_x = np.kron(np.eye(blocks), cov_v)
    iu, ju = np.triu_indices(nb)
    forms = []
    for a, b in zip(iu, ju):
        c = np.zeros((n, n))
        for m in range(blocks):
            c[m * nb + a, m * nb + b] += 1.0 / 8.0
            c[m * nb + b, m * nb + a] += 1.0 / 8.0
        forms.append(c)
    task = QuadraticTask(tuple(forms), cov_x)
    lifted = to_linear_model(task, mode="half")
    chol = np.linalg.cholesky(cov_x)

    def sample(rng: np.random.Generator, count: int):
        x = rng.standard_normal((count, n)) @ chol.T
        return task.values(x), x

    return ScenarioSpec(name="covariance", kind="quadratic", sampler=sample,
                        model=lifted.model, task=task, lifted=lifted)


def dft_pilot_scenario() -> ScenarioSpec:
    """Channel estimation with orthogonal pilots from a truncated DFT matrix.

    The 120 x 40 real mixing matrix is the real composite of (first four DFT
    columns of order twelve) Kronecker an identity; its columns are orthogonal
    so the pilot structure is ideal, with noise variance 0.25.
    """
    order, picked, reps = 12, 4, 5
    grid = np.arange(order)
    dft = np.exp(-2j * np.pi * np.outer(grid, grid) / order)
    phi = dft[:, :picked]
    complex_mix = np.kron(phi, np.eye(reps))
    mixing = np.block([[complex_mix.real, complex_mix.imag],
                       [-complex_mix.imag, complex_mix.real]])
    noise_var = 0.25
    k = mixing.shape[1]
    gamma, mmse = gaussian_mmse(mixing, np.eye(k), noise_var)
    obs_cov = mixing @ mixing.T + noise_var * np.eye(mixing.shape[0])
    model = LinearTaskModel(obs_cov=obs_cov, task_matrix=gamma, mmse_floor=mmse)
    sampler = _gaussian_sampler(mixing, np.eye(k), np.sqrt(noise_var))
    return ScenarioSpec(name="dft_pilot", kind="linear", sampler=sampler,
                        model=model, analytic_gamma=gamma, analytic_mmse=mmse,
                        mixing=mixing, noise_var=noise_var, prior_cov=np.eye(k))


def _symbol_table(k: int) -> np.ndarray:
    return np.array(list(product((-1.0, 1.0), repeat=k)))


def symbols_to_labels(symbols) -> np.ndarray:
    """Class index of each +-1 symbol vector (bit b_j = (s_j + 1) / 2, MSB first)."""
    s = np.atleast_2d(np.asarray(symbols))
    bits = ((s + 1) / 2).astype(int)
    k = s.shape[1]
    weights = 2 ** np.arange(k - 1, -1, -1)
    return bits @ weights


def labels_to_symbols(labels, k: int) -> np.ndarray:
    table = _symbol_table(k)
    return table[np.asarray(labels, dtype=int)]


def bit_error_rate(predicted_labels, true_labels, k: int) -> float:
    diff = np.bitwise_xor(np.asarray(predicted_labels, dtype=int),
                          np.asarray(true_labels, dtype=int))
    errors = sum(((diff >> b) & 1).sum() for b in range(k))
    return float(errors) / (k * len(diff))


def _bpsk_sampler(mixing, noise_std, table):
    def sample(rng: np.random.Generator, count: int):
        labels = rng.integers(0, table.shape[0], size=count)
        s = table[labels]
        x = s @ mixing.T + noise_std * rng.standard_normal((count, mixing.shape[0]))
        return s, x

    return sample


def bpsk_scenario(snr: float) -> ScenarioSpec:
    """Symbol detection of four binary symbols through a 12 x 4 channel.

    snr is linear (noise variance 1/snr); channel entries decay as
    exp(-|i-j|). The scenario's detectors enumerate all sixteen hypotheses.
    """
    if not np.isfinite(snr) or snr <= 0:
        raise ValueError(f"snr must be positive and finite, got {snr}")
    n, k = 12, 4
    mixing = np.exp(-np.abs(np.arange(1, n + 1)[:, None]
                            - np.arange(1, k + 1)[None, :])).astype(float)
    noise_var = 1.0 / snr
    table = _symbol_table(k)
    sampler = _bpsk_sampler(mixing, np.sqrt(noise_var), table)
    return ScenarioSpec(name="bpsk", kind="classification", sampler=sampler,
                        mixing=mixing, noise_var=noise_var, symbols=table)


def map_detect(observations, scenario: ScenarioSpec) -> np.ndarray:
    """Exhaustive max-likelihood labels from unquantized observations."""
    x = np.atleast_2d(np.asarray(observations, dtype=float))
    means = scenario.symbols @ scenario.mixing.T          # classes x n
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def quantized_map_detect(observations, scenario: ScenarioSpec, levels: int,
                         support: float) -> np.ndarray:
    """Exhaustive max-likelihood labels from per-antenna uniform quantizer cells.

    Uses the exact Gaussian cell probabilities (outer cells absorb the
    saturated tails), so this is the true task-ignorant detector for a
    digital-only receiver.
    """
    x = np.atleast_2d(np.asarray(observations, dtype=float))
    sigma = np.sqrt(scenario.noise_var)
    spacing = 2.0 * support / levels
    edges = -support + spacing * np.arange(1, levels)      # interior edges
    cells = np.searchsorted(edges, x, side="right")
    means = scenario.symbols @ scenario.mixing.T           # classes x n
    # cell probability per (class, antenna): differences of normal CDFs,
    # with the outer cells absorbing the saturated tails
    hi = np.concatenate([edges, [np.inf]])
    lo = np.concatenate([[-np.inf], edges])
    prob = (ndtr((hi[None, None, :] - means[:, :, None]) / sigma)
            - ndtr((lo[None, None, :] - means[:, :, None]) / sigma))
    logp = np.log(np.maximum(prob, 1e-300))
    loglik = np.zeros((x.shape[0], means.shape[0]))
    for ant in range(x.shape[1]):
        loglik += logp[:, ant, cells[:, ant]].T
    return np.argmax(loglik, axis=1)


def csi_perturb(scenario: ScenarioSpec, fraction: float, seed: int) -> ScenarioSpec:
    """Scenario whose training data comes through a perturbed mixing matrix.

    Training samples are drawn from the joint distribution in which every
    entry of the mixing matrix carries independent Gaussian noise of variance
    fraction * |entry|, redrawn per sample; evaluation keeps the true matrix.
    seed salts the perturbation stream so different uncertainty realizations
    stay reproducible.
    """
    if scenario.mixing is None:
        raise ValueError(f"scenario {scenario.name} has no mixing matrix")
    if fraction < 0:
        raise ValueError("fraction must be nonnegative")
    mixing = scenario.mixing
    entry_std = np.sqrt(fraction * np.abs(mixing))
    noise_std = np.sqrt(scenario.noise_var)
    if scenario.kind == "classification":
        table = scenario.symbols

        def train(rng: np.random.Generator, count: int):
            pert = np.random.default_rng([seed, int(rng.integers(2 ** 63))])
            labels = rng.integers(0, table.shape[0], size=count)
            s = table[labels]
            h = mixing + entry_std * pert.standard_normal((count, *mixing.shape))
            x = (np.einsum("tij,tj->ti", h, s)
                 + noise_std * rng.standard_normal((count, mixing.shape[0])))
            return s, x
    elif scenario.kind == "linear":
        chol = np.linalg.cholesky(scenario.prior_cov)

        def train(rng: np.random.Generator, count: int):
            pert = np.random.default_rng([seed, int(rng.integers(2 ** 63))])
            s = rng.standard_normal((count, chol.shape[0])) @ chol.T
            h = mixing + entry_std * pert.standard_normal((count, *mixing.shape))
            x = (np.einsum("tij,tj->ti", h, s)
                 + noise_std * rng.standard_normal((count, mixing.shape[0])))
            return s, x
    else:
        raise ValueError("csi_perturb applies to sampled-mixing scenarios")
    return dataclasses.replace(scenario, name=f"{scenario.name}+csi",
                               train_sampler=train)
