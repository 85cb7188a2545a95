"""
Dual-dataset decomposition: a continuous-time generator for the known part
of the dynamics fitted on collocation points, and a discrete residual
operator fitted on trajectory snapshots. Observables are Theta(chi, u) =
[phi(chi); u], inputs held constant along the flow.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import expm

from ..config import DIVERGENCE_BOUND, N_COLLOCATION, PINV_TOL_REL
from ..errors import (DimensionMismatchError, DivergenceError, EmptyDatasetError,
                      InvalidInputError)
from .core import SnapshotDataset, as_vector, input_sequence, lift_columns, numerical_rank, pinv
from .serialization import load_container, save_container

logger = logging.getLogger(__name__)

KnownField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class CollocationSet:
    """States, inputs and the known vector field evaluated at each point."""

    def __init__(self, states: np.ndarray, inputs: Optional[np.ndarray], known_field: KnownField):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[0] == 0:
            raise EmptyDatasetError("collocation set needs at least one point")
        inputs = np.zeros((states.shape[0], 0)) if inputs is None else \
            np.asarray(inputs, dtype=np.float64).reshape(states.shape[0], -1)
        derivs = np.array([known_field(x, u) for x, u in zip(states, inputs)], dtype=np.float64)
        derivs = derivs.reshape(states.shape)
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(derivs))):
            raise InvalidInputError("known field must be finite on every collocation point")
        self.states = states
        self.inputs = inputs
        self.known_field = known_field
        self.derivatives = derivs

    def __len__(self):
        return self.states.shape[0]

    @classmethod
    def sample(cls, known_field: KnownField, low, high, input_low=None, input_high=None,
               n: int = N_COLLOCATION, seed: int = 0) -> "CollocationSet":
        """Uniform seeded sampling over a state box and an optional input box."""
        rng = np.random.default_rng(seed)
        low, high = np.atleast_1d(low).astype(float), np.atleast_1d(high).astype(float)
        states = rng.uniform(low, high, size=(n, low.size))
        inputs = None
        if input_low is not None:
            ilow, ihigh = np.atleast_1d(input_low).astype(float), np.atleast_1d(input_high).astype(float)
            inputs = rng.uniform(ilow, ihigh, size=(n, ilow.size))
        return cls(states, inputs, known_field)


@dataclass(frozen=True)
class GeneratorOperator:
    L: np.ndarray
    half_step: np.ndarray
    dtau: float
    dict_id: str
    n_inputs: int = 0
    rank_deficient: bool = False

    def save(self, path: Union[str, Path]) -> Path:
        meta = {"dtau": self.dtau, "dict_id": self.dict_id, "n_inputs": self.n_inputs,
                "rank_deficient": self.rank_deficient}
        return save_container(path, "generator_operator", meta, {"L": self.L, "half_step": self.half_step})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GeneratorOperator":
        meta, arrays = load_container(path, "generator_operator")
        return cls(L=arrays["L"], half_step=arrays["half_step"], **meta)


@dataclass(frozen=True)
class ResidualOperator:
    H: np.ndarray
    dtau: float
    dict_id: str

    def save(self, path: Union[str, Path]) -> Path:
        return save_container(path, "residual_operator", {"dtau": self.dtau, "dict_id": self.dict_id},
                              {"H": self.H})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ResidualOperator":
        meta, arrays = load_container(path, "residual_operator")
        return cls(H=arrays["H"], **meta)


def _theta(dictionary, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Column observables [phi(X); U] for n x N states and m x N inputs."""
    return np.vstack([lift_columns(dictionary, X), U])


def fit_generator(cs: CollocationSet, dictionary, dtau: float,
                  tol_rel: float = PINV_TOL_REL) -> GeneratorOperator:
    """
    Least-squares generator L with dTheta/dtau ~ L Theta on the collocation set

    Args:
        cs: collocation points with known-field derivatives
        dictionary: state dictionary; inputs are stacked linearly after it
        dtau: sampling interval of the discrete model
        tol_rel: pseudoinverse cutoff

    Returns:
        GeneratorOperator with half_step = expm(L * dtau / 2)
    """
    if not dtau > 0:
        raise InvalidInputError(f"dtau must be positive, got {dtau}")
    if cs.states.shape[1] != dictionary.in_dim:
        raise DimensionMismatchError(
            f"dictionary lifts {dictionary.in_dim}-dim states, collocation states are {cs.states.shape[1]}-dim")
    Theta = _theta(dictionary, cs.states.T, cs.inputs.T)
    dphi = np.stack([dictionary.state_jacobian(x) @ f for x, f in zip(cs.states, cs.derivatives)], axis=1)
    dTheta = np.vstack([dphi, np.zeros_like(cs.inputs.T)])

    rank = numerical_rank(Theta, tol_rel)
    rank_deficient = rank < Theta.shape[0]
    if rank_deficient:
        logger.warning(f"--> Collocation regression is rank deficient ({rank} < {Theta.shape[0]})")
    L = dTheta @ pinv(Theta, tol_rel)
    # expm uses scaling and squaring with a Pade approximant
    half = expm(L * (dtau / 2.0))
    logger.debug(f"--> Fitted generator on {len(cs)} collocation points, kappa={L.shape[0]}")
    return GeneratorOperator(L=L, half_step=half, dtau=float(dtau), dict_id=dictionary.dict_id,
                             n_inputs=cs.inputs.shape[1], rank_deficient=rank_deficient)


def fit_residual(gen: GeneratorOperator, ds: SnapshotDataset, dictionary,
                 tol_rel: float = PINV_TOL_REL) -> ResidualOperator:
    """H = K^+ Theta(X', U) (K Theta(X, U))^+ with K the generator's half step."""
    if not np.isclose(ds.dt, gen.dtau, rtol=1e-9, atol=0.0):
        raise InvalidInputError(f"snapshot dt {ds.dt} differs from generator dtau {gen.dtau}")
    if dictionary.dict_id != gen.dict_id:
        raise InvalidInputError("generator was fitted with a different dictionary")
    if ds.input_dim != gen.n_inputs:
        raise DimensionMismatchError(f"snapshots carry {ds.input_dim} inputs, generator expects {gen.n_inputs}")
    K = gen.half_step
    Theta = _theta(dictionary, ds.X, ds.U)
    Theta_p = _theta(dictionary, ds.Xp, ds.U)
    H = pinv(K, tol_rel) @ Theta_p @ pinv(K @ Theta, tol_rel)
    return ResidualOperator(H=H, dtau=gen.dtau, dict_id=gen.dict_id)


def _raw_selector(dictionary) -> np.ndarray:
    if dictionary.raw_indices is None:
        raise InvalidInputError("composed prediction needs a dictionary that embeds the raw state")
    return dictionary.raw_indices


def predict_composed(gen: GeneratorOperator, res: Optional[ResidualOperator], dictionary, chi0,
                     us=None, k: int = 1) -> np.ndarray:
    """
    Roll K_half H K_half forward k steps, projecting and re-lifting each step

    Returns:
        (k, n) predicted states
    """
    if dictionary.dict_id != gen.dict_id:
        raise InvalidInputError("generator was fitted with a different dictionary")
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    raw = _raw_selector(dictionary)
    chi = as_vector(chi0, "chi0")
    if chi.size != dictionary.in_dim:
        raise DimensionMismatchError(f"chi0 must have {dictionary.in_dim} entries, got {chi.size}")

    us = input_sequence(gen.n_inputs, us, k)

    K = gen.half_step
    step = K if res is None else K @ res.H
    step = step @ K
    out = np.empty((k, dictionary.in_dim))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(k):
            theta = np.concatenate([dictionary.lift(chi), us[i]])
            theta = step @ theta
            chi = theta[raw]
            if not np.all(np.isfinite(theta)) or np.max(np.abs(chi)) > DIVERGENCE_BOUND:
                raise DivergenceError(i + 1, f"Composed prediction diverged at step {i + 1}")
            out[i] = chi
    return out


def predict_known(gen: GeneratorOperator, dictionary, chi0, us=None, k: int = 1) -> np.ndarray:
    """Known-dynamics-only prediction (residual taken as identity)."""
    return predict_composed(gen, None, dictionary, chi0, us, k)
