"""
Observable dictionaries lifting states into spaces where dynamics are close
to linear. Every fixed dictionary embeds the raw state as its leading block
so that decoding is an exact copy.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.cluster import KMeans
from sklearn.preprocessing import PolynomialFeatures

from ..config import FOURIER_HARMONICS, RBF_CENTERS, RBF_KMEANS_INIT
from ..errors import DimensionMismatchError, InvalidInputError, UnsupportedOperationError
from .encoder import EncoderParams, MlpEncoder
from .serialization import load_container, save_container

logger = logging.getLogger(__name__)

_REGISTRY: Dict[str, type] = {}


def _register(cls):
    _REGISTRY[cls.kind] = cls
    return cls


class Dictionary:
    """
    Base observable map chi -> phi(chi).

    Subclasses implement _lift_rows (N, in) -> (N, out) and _state_jacobian.
    raw_indices lists where each raw state coordinate sits in the lifted
    vector, or is None when the state is not embedded.
    """
    kind = "base"

    def __init__(self, in_dim: int, out_dim: int, raw_indices: Optional[np.ndarray]):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.raw_indices = None if raw_indices is None else np.asarray(raw_indices, dtype=np.int64)
        if self.raw_indices is not None and self.out_dim < self.in_dim:
            raise DimensionMismatchError("an embedding dictionary needs out_dim >= in_dim")
        self.dict_id = self._digest()

    @property
    def leading_block(self) -> bool:
        return self.raw_indices is not None and np.array_equal(self.raw_indices, np.arange(self.in_dim))

    def hyperparameters(self) -> Dict[str, Any]:
        return {}

    def arrays(self) -> Dict[str, np.ndarray]:
        return {}

    def _digest(self) -> str:
        h = hashlib.sha1()
        h.update(json.dumps({"kind": self.kind, "in": self.in_dim, "out": self.out_dim,
                             "hyper": self.hyperparameters()}, sort_keys=True).encode())
        for name, arr in sorted(self.arrays().items()):
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def _check_rows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise DimensionMismatchError(f"{self.kind} dictionary lifts {self.in_dim}-dim states, got {X.shape}")
        return X

    def lift(self, chi) -> np.ndarray:
        chi = np.asarray(chi, dtype=np.float64)
        if chi.shape != (self.in_dim,):
            raise DimensionMismatchError(f"{self.kind} dictionary lifts {self.in_dim}-dim states, got {chi.shape}")
        return self.lift_batch(chi[None, :])[0]

    def lift_batch(self, X) -> np.ndarray:
        X = self._check_rows(X)
        out = self._lift_rows(X)
        if self.raw_indices is not None:
            # raw coordinates are copied, never recomputed
            out[:, self.raw_indices] = X
        return out

    def state_jacobian(self, chi) -> np.ndarray:
        """(out_dim, in_dim) derivative of lift at chi."""
        chi = np.asarray(chi, dtype=np.float64)
        if chi.shape != (self.in_dim,):
            raise DimensionMismatchError(f"expected a {self.in_dim}-dim state, got {chi.shape}")
        return self._state_jacobian(chi)

    def _lift_rows(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _state_jacobian(self, chi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _record(self) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
        return {"kind": self.kind, "in_dim": self.in_dim, "hyper": self.hyperparameters()}, self.arrays()

    @classmethod
    def _from_record(cls, meta: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> "Dictionary":
        raise NotImplementedError

    def save(self, path: Union[str, Path]) -> Path:
        meta, arrays = self._record()
        meta["dict_id"] = self.dict_id
        return save_container(path, "dictionary", meta, arrays)

    @staticmethod
    def load(path: Union[str, Path]) -> "Dictionary":
        meta, arrays = load_container(path, "dictionary")
        d = dictionary_from_record(meta, arrays)
        if d.dict_id != meta.get("dict_id"):
            raise InvalidInputError(f"{path}: dictionary id mismatch after load")
        return d

    def __repr__(self):
        return f"{type(self).__name__}(in_dim={self.in_dim}, out_dim={self.out_dim}, id={self.dict_id[:8]})"


def dictionary_to_record(dictionary: Dictionary) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """(meta, arrays) pair that dictionary_from_record rebuilds; meta carries dict_id."""
    meta, arrays = dictionary._record()
    meta["dict_id"] = dictionary.dict_id
    return meta, arrays


def dictionary_from_record(meta: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> Dictionary:
    kind = meta["kind"]
    if kind not in _REGISTRY:
        raise InvalidInputError(f"Unknown dictionary kind: {kind}")
    return _REGISTRY[kind]._from_record(meta, arrays)


@_register
class IdentityDictionary(Dictionary):
    kind = "identity"

    def __init__(self, in_dim: int):
        super().__init__(in_dim, in_dim, np.arange(in_dim))

    def _lift_rows(self, X):
        return X.copy()

    def _state_jacobian(self, chi):
        return np.eye(self.in_dim)

    @classmethod
    def _from_record(cls, meta, arrays):
        return cls(meta["in_dim"])


@_register
class PolynomialDictionary(Dictionary):
    """Monomials up to `degree`, degree-1 terms first, optional constant last."""
    kind = "polynomial"

    def __init__(self, in_dim: int, degree: int, constant: bool = False):
        if degree < 1:
            raise InvalidInputError(f"polynomial degree must be >= 1, got {degree}")
        self.degree = int(degree)
        self.constant = bool(constant)
        if in_dim > 0:
            poly = PolynomialFeatures(degree=self.degree, include_bias=False).fit(np.zeros((1, in_dim)))
            self.powers = poly.powers_.astype(np.int64)
        else:
            self.powers = np.zeros((0, 0), dtype=np.int64)
        super().__init__(in_dim, len(self.powers) + int(self.constant), np.arange(in_dim))

    def hyperparameters(self):
        return {"degree": self.degree, "constant": self.constant}

    def _lift_rows(self, X):
        feats = np.prod(X[:, None, :] ** self.powers[None, :, :], axis=2) if len(self.powers) else \
            np.zeros((X.shape[0], 0))
        if self.constant:
            feats = np.hstack([feats, np.ones((X.shape[0], 1))])
        return feats

    def _state_jacobian(self, chi):
        J = np.zeros((self.out_dim, self.in_dim))
        for j in range(self.in_dim):
            coeff = self.powers[:, j]
            lowered = self.powers.copy()
            lowered[:, j] = np.maximum(lowered[:, j] - 1, 0)
            J[:len(self.powers), j] = coeff * np.prod(chi[None, :] ** lowered, axis=1)
        return J

    @classmethod
    def _from_record(cls, meta, arrays):
        return cls(meta["in_dim"], **meta["hyper"])


def affine_dictionary(in_dim: int) -> PolynomialDictionary:
    """[chi, 1]: exact for motions that are affine in the state."""
    return PolynomialDictionary(in_dim, degree=1, constant=True)


@_register
class RBFDictionary(Dictionary):
    """
    Gaussian radial features exp(-||(chi - c) / s||^2 / (2 w^2)) after the raw block.
    """
    kind = "rbf"

    def __init__(self, centers: np.ndarray, width: float, scale: Optional[np.ndarray] = None):
        centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        if width <= 0:
            raise InvalidInputError(f"rbf width must be positive, got {width}")
        in_dim = centers.shape[1]
        self.centers = centers
        self.width = float(width)
        self.scale = np.ones(in_dim) if scale is None else np.asarray(scale, dtype=np.float64)
        if self.scale.shape != (in_dim,) or np.any(self.scale <= 0):
            raise InvalidInputError("rbf scale must be a positive vector matching the centers")
        super().__init__(in_dim, in_dim + len(centers), np.arange(in_dim))

    def hyperparameters(self):
        return {"width": self.width}

    def arrays(self):
        return {"centers": self.centers, "scale": self.scale}

    def _lift_rows(self, X):
        diff = (X[:, None, :] - self.centers[None, :, :]) / self.scale
        phi = np.exp(-np.sum(diff ** 2, axis=2) / (2.0 * self.width ** 2))
        return np.hstack([X, phi])

    def _state_jacobian(self, chi):
        diff = (chi[None, :] - self.centers) / self.scale
        phi = np.exp(-np.sum(diff ** 2, axis=1) / (2.0 * self.width ** 2))
        dphi = -phi[:, None] * diff / self.scale[None, :] / self.width ** 2
        return np.vstack([np.eye(self.in_dim), dphi])

    @classmethod
    def _from_record(cls, meta, arrays):
        return cls(arrays["centers"], meta["hyper"]["width"], arrays["scale"])


def rbf_from_data(X: np.ndarray, k: int = RBF_CENTERS, seed: int = 0) -> RBFDictionary:
    """
    RBF dictionary with k-means centres on standardized data and width equal
    to the median pairwise centre distance

    Args:
        X: (N, n) training states, one per row
        k: number of centres (capped by the number of distinct rows)
        seed: k-means seed
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("rbf_from_data needs a non-empty (N, n) array")
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Xs = X / scale
    k = min(int(k), len(np.unique(Xs, axis=0)))
    km = KMeans(n_clusters=k, n_init=RBF_KMEANS_INIT, random_state=seed).fit(Xs)
    centers_s = km.cluster_centers_
    width = float(np.median(pdist(centers_s))) if k > 1 else 1.0
    if not width > 0:
        width = 1.0
    logger.info(f"--> RBF dictionary: {k} centres, width {width:.4g}")
    return RBFDictionary(centers_s * scale, width, scale)


@_register
class FourierDictionary(Dictionary):
    """
    [chi, 1, sin(h w z), cos(h w z)] for h = 1..harmonics, z = (chi - mean) / scale.
    """
    kind = "fourier"

    def __init__(self, mean: np.ndarray, scale: np.ndarray, frequency: float,
                 harmonics: int = FOURIER_HARMONICS):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
        if self.mean.shape != self.scale.shape or np.any(self.scale <= 0):
            raise InvalidInputError("fourier mean/scale must be matching vectors with positive scale")
        if harmonics < 1 or not frequency > 0:
            raise InvalidInputError("fourier dictionary needs harmonics >= 1 and frequency > 0")
        self.frequency = float(frequency)
        self.harmonics = int(harmonics)
        in_dim = self.mean.size
        super().__init__(in_dim, in_dim + 1 + 2 * self.harmonics * in_dim, np.arange(in_dim))

    def hyperparameters(self):
        return {"frequency": self.frequency, "harmonics": self.harmonics}

    def arrays(self):
        return {"mean": self.mean, "scale": self.scale}

    @property
    def _rates(self) -> np.ndarray:
        return self.frequency * np.arange(1, self.harmonics + 1)

    def _lift_rows(self, X):
        z = (X - self.mean) / self.scale
        arg = (z[:, :, None] * self._rates[None, None, :]).reshape(X.shape[0], -1)
        return np.hstack([X, np.ones((X.shape[0], 1)), np.sin(arg), np.cos(arg)])

    def _state_jacobian(self, chi):
        z = (chi - self.mean) / self.scale
        arg = (z[:, None] * self._rates[None, :]).reshape(-1)
        # d arg / d chi_j is rate / scale_j on the rows belonging to coordinate j
        darg = np.zeros((arg.size, self.in_dim))
        for j in range(self.in_dim):
            rows = slice(j * self.harmonics, (j + 1) * self.harmonics)
            darg[rows, j] = self._rates / self.scale[j]
        return np.vstack([np.eye(self.in_dim), np.zeros((1, self.in_dim)),
                          np.cos(arg)[:, None] * darg, -np.sin(arg)[:, None] * darg])

    @classmethod
    def _from_record(cls, meta, arrays):
        return cls(arrays["mean"], arrays["scale"], **meta["hyper"])


def dominant_frequency(series: np.ndarray) -> float:
    """
    Base rate 2*pi*k/N from the strongest non-zero FFT bin of (N, n) rows,
    magnitudes summed over coordinates.
    """
    series = np.asarray(series, dtype=np.float64)
    N = series.shape[0]
    if N < 4:
        return 2.0 * np.pi / max(N, 1)
    spectrum = np.abs(np.fft.rfft(series - series.mean(axis=0), axis=0)).sum(axis=1)
    k_star = int(np.argmax(spectrum[1:])) + 1
    return 2.0 * np.pi * k_star / N


def fourier_from_data(X: np.ndarray, harmonics: int = FOURIER_HARMONICS) -> FourierDictionary:
    """
    Fourier dictionary standardized on X (time-ordered rows) with its base
    frequency taken from the dominant FFT bin of the standardized series.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("fourier_from_data needs a non-empty (N, n) array")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    freq = dominant_frequency((X - mean) / scale)
    logger.info(f"--> Fourier dictionary: base rate {freq:.4g}, {harmonics} harmonics")
    return FourierDictionary(mean, scale, freq, harmonics)


@_register
class TrainedDictionary(Dictionary):
    """[chi, mlp(chi)] with a trainable encoder head."""
    kind = "trained"

    def __init__(self, encoder: MlpEncoder):
        self.encoder = encoder
        super().__init__(encoder.input_dim, encoder.input_dim + encoder.output_dim,
                         np.arange(encoder.input_dim))

    def hyperparameters(self):
        return {"hidden": list(self.encoder.cfg.hidden), "projector_type": self.encoder.cfg.projector_type,
                "n_embed": self.encoder.output_dim}

    def arrays(self):
        out = {}
        for i, (W, b) in enumerate(self.encoder.params()):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out

    @property
    def params(self) -> EncoderParams:
        return self.encoder.params()

    def _lift_rows(self, X):
        return np.hstack([X, self.encoder.encode(X)])

    def _state_jacobian(self, chi):
        return np.vstack([np.eye(self.in_dim), self.encoder.input_jacobian(chi)])

    @classmethod
    def _from_record(cls, meta, arrays):
        n_layers = len([k for k in arrays if k.startswith("W")])
        params = [(arrays[f"W{i}"], arrays[f"b{i}"]) for i in range(n_layers)]
        return cls(MlpEncoder.from_params(params))


@_register
class CompositeDictionary(Dictionary):
    """
    Maps [xi_r; xi_w] to [xi_r; gamma_r(xi_r); xi_w; gamma_w(xi_w)].
    """
    kind = "composite"

    def __init__(self, robot: Dictionary, objects: Dictionary):
        self.robot = robot
        self.objects = objects
        raw = None
        if robot.raw_indices is not None and objects.raw_indices is not None:
            raw = np.concatenate([robot.raw_indices, objects.raw_indices + robot.out_dim])
        super().__init__(robot.in_dim + objects.in_dim, robot.out_dim + objects.out_dim, raw)

    def hyperparameters(self):
        return {"robot": self.robot.dict_id, "objects": self.objects.dict_id}

    @property
    def robot_block(self) -> slice:
        return slice(0, self.robot.out_dim)

    @property
    def object_block(self) -> slice:
        return slice(self.robot.out_dim, self.out_dim)

    def _lift_rows(self, X):
        return np.hstack([self.robot.lift_batch(X[:, :self.robot.in_dim]),
                          self.objects.lift_batch(X[:, self.robot.in_dim:])])

    def _state_jacobian(self, chi):
        J = np.zeros((self.out_dim, self.in_dim))
        J[self.robot_block, :self.robot.in_dim] = self.robot.state_jacobian(chi[:self.robot.in_dim])
        J[self.object_block, self.robot.in_dim:] = self.objects.state_jacobian(chi[self.robot.in_dim:])
        return J

    def _record(self):
        meta_r, arr_r = self.robot._record()
        meta_w, arr_w = self.objects._record()
        arrays = {f"r.{k}": v for k, v in arr_r.items()}
        arrays.update({f"w.{k}": v for k, v in arr_w.items()})
        return {"kind": self.kind, "in_dim": self.in_dim, "robot": meta_r, "objects": meta_w}, arrays

    @classmethod
    def _from_record(cls, meta, arrays):
        arr_r = {k[2:]: v for k, v in arrays.items() if k.startswith("r.")}
        arr_w = {k[2:]: v for k, v in arrays.items() if k.startswith("w.")}
        return cls(dictionary_from_record(meta["robot"], arr_r),
                   dictionary_from_record(meta["objects"], arr_w))


def compose_composite(dr: Dictionary, dw: Dictionary) -> CompositeDictionary:
    """
    Stack a robot-state and an object-state dictionary in block order
    [xi_r, gamma_r, xi_w, gamma_w]. Both must embed their raw state first.
    """
    for name, d in (("robot", dr), ("object", dw)):
        if not d.leading_block:
            raise InvalidInputError(f"{name} dictionary must carry its raw state as the leading block")
    return CompositeDictionary(dr, dw)


def _trained_encoder(dictionary: Dictionary) -> Tuple[MlpEncoder, int]:
    if isinstance(dictionary, TrainedDictionary):
        return dictionary.encoder, dictionary.in_dim
    if isinstance(dictionary, CompositeDictionary):
        raise UnsupportedOperationError("parameter gradients of composite dictionaries are taken per block")
    raise UnsupportedOperationError(f"{dictionary.kind} dictionary has no trainable parameters")


def lift_jacobian_params(dictionary: Dictionary, chi) -> EncoderParams:
    """
    d lift(chi) / d params for a trained dictionary

    Returns:
        Per layer (dW, db) with a leading out_dim axis; raw-block rows are zero
    """
    encoder, offset = _trained_encoder(dictionary)
    chi = np.asarray(chi, dtype=np.float64)
    if chi.shape != (dictionary.in_dim,):
        raise DimensionMismatchError(f"expected a {dictionary.in_dim}-dim state, got {chi.shape}")
    head = encoder.param_jacobian(chi)
    return [(np.concatenate([np.zeros((offset,) + gW.shape[1:]), gW]),
             np.concatenate([np.zeros((offset,) + gb.shape[1:]), gb])) for gW, gb in head]


def lift_param_vjp(dictionary: Dictionary, chi, cotangent) -> EncoderParams:
    """cotangent^T d lift(chi) / d params, one reverse pass."""
    encoder, offset = _trained_encoder(dictionary)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != (dictionary.out_dim,):
        raise DimensionMismatchError(f"cotangent must have shape ({dictionary.out_dim},)")
    return encoder.param_vjp(np.asarray(chi, dtype=np.float64), cotangent[offset:])
