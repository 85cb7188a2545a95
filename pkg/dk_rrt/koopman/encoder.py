import copy
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from addict import Dict as AttrDict

from ..config import ENCODER_HIDDEN, ENCODER_PROJECTOR
from ..errors import DimensionMismatchError, InvalidInputError

# [(weight (out, in), bias (out,)), ...] from input to output layer
EncoderParams = List[Tuple[np.ndarray, np.ndarray]]


def encoder_config(input_dim: int, n_embed: int, hidden: Sequence[int] = ENCODER_HIDDEN,
                   projector_type: str = ENCODER_PROJECTOR, seed: int = 0) -> AttrDict:
    return AttrDict(input_dim=int(input_dim), n_embed=int(n_embed), hidden=[int(h) for h in hidden],
                    projector_type=projector_type, seed=int(seed))


class MlpEncoder(nn.Module):
    """
    Small float64 MLP: tanh hidden layers and a linear head.

    Serves both as the feature extractor mapping observations to object
    states and as the trainable part of a lifting dictionary.
    """

    def __init__(self, cfg):

        super().__init__()

        self.cfg = cfg

        if cfg.projector_type == "linear":
            widths = [cfg.input_dim, cfg.n_embed]

        elif cfg.projector_type == "mlp_tanh":
            hidden = list(cfg.get("hidden", ENCODER_HIDDEN))
            if not hidden:
                raise ValueError("mlp_tanh projector needs at least one hidden layer")
            widths = [cfg.input_dim] + hidden + [cfg.n_embed]

        else:
            raise ValueError(f"Unknown projector type: {cfg.projector_type}")

        modules = []
        for i in range(len(widths) - 1):
            if i > 0:
                modules.append(nn.Tanh())
            modules.append(nn.Linear(widths[i], widths[i + 1], dtype=torch.float64))
        self.layers = nn.Sequential(*modules)
        self._init_glorot(np.random.default_rng(cfg.get("seed", 0)))

    def _init_glorot(self, rng: np.random.Generator):
        with torch.no_grad():
            for layer in self.linear_layers:
                fan_out, fan_in = layer.weight.shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                layer.weight.copy_(torch.from_numpy(rng.uniform(-limit, limit, size=(fan_out, fan_in))))
                layer.bias.zero_()

    @property
    def linear_layers(self) -> List[nn.Linear]:
        return [m for m in self.layers if isinstance(m, nn.Linear)]

    @property
    def input_dim(self) -> int:
        return self.cfg.input_dim

    @property
    def output_dim(self) -> int:
        return self.cfg.n_embed

    def forward(self, x):
        return self.layers(x)

    @classmethod
    def from_params(cls, params: EncoderParams, seed: int = 0) -> "MlpEncoder":
        """Rebuild an encoder from explicit layer matrices."""
        if len(params) == 0:
            raise InvalidInputError("encoder needs at least one layer")
        for i, (W, b) in enumerate(params):
            W, b = np.asarray(W), np.asarray(b)
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimensionMismatchError(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i > 0 and W.shape[1] != params[i - 1][0].shape[0]:
                raise DimensionMismatchError(f"layer {i} expects {W.shape[1]} inputs, "
                                             f"previous layer emits {params[i - 1][0].shape[0]}")
        hidden = [W.shape[0] for W, _ in params[:-1]]
        cfg = encoder_config(params[0][0].shape[1], params[-1][0].shape[0], hidden,
                             "mlp_tanh" if hidden else "linear", seed)
        enc = cls(cfg)
        enc.set_params(params)
        return enc

    def params(self) -> EncoderParams:
        return [(layer.weight.detach().numpy().copy(), layer.bias.detach().numpy().copy())
                for layer in self.linear_layers]

    def set_params(self, params: EncoderParams):
        layers = self.linear_layers
        if len(params) != len(layers):
            raise DimensionMismatchError(f"expected {len(layers)} layers, got {len(params)}")
        with torch.no_grad():
            for layer, (W, b) in zip(layers, params):
                W = np.asarray(W, dtype=np.float64)
                b = np.asarray(b, dtype=np.float64)
                if W.shape != tuple(layer.weight.shape) or b.shape != tuple(layer.bias.shape):
                    raise DimensionMismatchError(
                        f"layer shape {tuple(layer.weight.shape)} does not accept {W.shape}")
                if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                    raise InvalidInputError("encoder parameters must be finite")
                layer.weight.copy_(torch.from_numpy(W))
                layer.bias.copy_(torch.from_numpy(b))

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on a single input (in,) or a batch (N, in)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatchError(f"encoder expects {self.input_dim} inputs, got {x.shape[-1]}")
        with torch.no_grad():
            return self.forward(torch.from_numpy(np.ascontiguousarray(x))).numpy()

    def param_vjp(self, x: np.ndarray, cotangent: np.ndarray) -> EncoderParams:
        """
        Reverse-mode product cotangent^T d encode(x) / d params

        Args:
            x: single input (in,) or batch (N, in)
            cotangent: matching (out,) or (N, out)

        Returns:
            Gradients shaped like params()
        """
        x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64))
        cot = torch.from_numpy(np.ascontiguousarray(cotangent, dtype=np.float64))
        self.zero_grad(set_to_none=True)
        out = self.forward(x)
        if out.shape != cot.shape:
            raise DimensionMismatchError(f"cotangent shape {tuple(cot.shape)} != output {tuple(out.shape)}")
        (out * cot).sum().backward()
        grads = [(layer.weight.grad.numpy().copy(), layer.bias.grad.numpy().copy())
                 for layer in self.linear_layers]
        self.zero_grad(set_to_none=True)
        return grads

    def param_jacobian(self, x: np.ndarray) -> EncoderParams:
        """Full d encode(x) / d params with a leading output axis on every array."""
        per_output = [self.param_vjp(x, np.eye(self.output_dim)[k]) for k in range(self.output_dim)]
        return [(np.stack([g[i][0] for g in per_output]), np.stack([g[i][1] for g in per_output]))
                for i in range(len(self.linear_layers))]

    def input_jacobian(self, x: np.ndarray) -> np.ndarray:
        """(out, in) Jacobian of encode at a single input."""
        x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64))
        jac = torch.autograd.functional.jacobian(self.forward, x)
        return jac.detach().numpy()

    def sgd_step(self, grads: EncoderParams, learning_rate: float):
        """One plain SGD update from externally accumulated gradients."""
        layers = self.linear_layers
        if len(grads) != len(layers):
            raise DimensionMismatchError(f"expected {len(layers)} gradient pairs, got {len(grads)}")
        optimizer = torch.optim.SGD(self.parameters(), lr=learning_rate)
        optimizer.zero_grad(set_to_none=True)
        for layer, (gW, gb) in zip(layers, grads):
            layer.weight.grad = torch.from_numpy(np.array(gW, dtype=np.float64)).reshape(layer.weight.shape)
            layer.bias.grad = torch.from_numpy(np.array(gb, dtype=np.float64)).reshape(layer.bias.shape)
        optimizer.step()
        optimizer.zero_grad(set_to_none=True)

    def copy(self) -> "MlpEncoder":
        return copy.deepcopy(self)
