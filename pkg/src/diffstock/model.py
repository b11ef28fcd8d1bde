"""Two-stream graph network with a learnable diffusion operator per layer.

Each layer runs two branches in parallel:

  message stream   H_l  = act((Q_l * A) @ H_{l-1} @ W0_l)
  representation   H'_l = act(attention(H_l || H'_{l-1}) @ W1_l + b1_l)

where Q_l = sum_k theta_{l,k} T_{l,k} is a convex combination of trainable
column-stochastic transition matrices (softmax-parameterized, so the
constraints hold exactly after every optimizer step), ``*`` is the Hadamard
product with the day's adjacency, ``||`` concatenates features, and the
attention is multi-head scaled dot-product over the node axis. Keeping the
representation stream separate from message passing preserves per-node
information that repeated neighborhood averaging would wash out.

The weighted mean step index sum_k theta_{l,k} * k is the layer's
neighborhood radius: 0 means the layer trusts step-0 transitions only,
K-1 means it leans entirely on the most-diffused transition.

Transition matrices are N x N trainables, so a trained model is bound to the
universe (ticker list) it was trained on; checkpoints embed the universe
fingerprint and refuse evaluation on a mismatched dataset.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CompatibilityError, DimensionError, EvaluationError, ValidationError
from .graph import minmax_normalize, row_normalize, write_adjacency_csv

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DFSTCK01"


@dataclass
class ModelConfig:
    embed_dim: int = 128
    heads: int = 3
    layers: int = 8
    diffusion_steps: int = 9
    activation_slope: float = 0.01
    theta_mode: str = "softmax"  # "softmax" (exact constraint) or "raw" (penalty)
    coupled: bool = False        # ablation: representation stream = message stream
    frozen_onehop: bool = False  # ablation: fixed row-normalized one-hop propagation

    def __post_init__(self):
        if self.layers < 1 or self.diffusion_steps < 1 or self.heads < 1:
            raise ValidationError("layers, diffusion_steps, and heads must be >= 1")
        if self.embed_dim < self.heads:
            raise ValidationError("embed_dim must be at least the head count")
        if self.theta_mode not in ("softmax", "raw"):
            raise ValidationError(f"unknown theta_mode {self.theta_mode!r}")


def head_dims(embed_dim: int, heads: int) -> list[int]:
    """Split the embedding across heads as evenly as possible (sums exactly)."""
    base, extra = divmod(embed_dim, heads)
    return [base + (1 if i < extra else 0) for i in range(heads)]


class Model:
    """Parameter container plus forward pass for one fixed universe."""

    def __init__(self, n_nodes: int, feature_dim: int, cfg: ModelConfig, seed: int = 0):
        self.n_nodes = n_nodes
        self.feature_dim = feature_dim
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # -- construction -------------------------------------------------------

    def _uniform(self, rng, fan_in: int, shape) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _init_params(self, rng) -> None:
        cfg, n, d = self.cfg, self.n_nodes, self.cfg.embed_dim
        k = cfg.diffusion_steps
        self._add("embed.w", self._uniform(rng, self.feature_dim, (self.feature_dim, d)))
        self._add("embed.b", np.zeros(d))
        dims = head_dims(d, cfg.heads)
        for l in range(cfg.layers):
            if not cfg.frozen_onehop:
                # zero logits: uniform theta (radius (K-1)/2) and uniform columns
                self._add(f"layer{l}.theta", np.zeros(k))
                self._add(f"layer{l}.trans", np.zeros((k, n, n)))
            self._add(f"layer{l}.w_diff", self._uniform(rng, d, (d, d)))
            if not cfg.coupled:
                for h, dh in enumerate(dims):
                    self._add(f"layer{l}.head{h}.wq", self._uniform(rng, 2 * d, (2 * d, dh)))
                    self._add(f"layer{l}.head{h}.wk", self._uniform(rng, 2 * d, (2 * d, dh)))
                    self._add(f"layer{l}.head{h}.wv", self._uniform(rng, 2 * d, (2 * d, dh)))
                self._add(f"layer{l}.w_attn", self._uniform(rng, d, (d, d)))
                self._add(f"layer{l}.b_attn", np.zeros(d))
        self._add("mlp0.w", self._uniform(rng, d, (d, d)))
        self._add("mlp0.b", np.zeros(d))
        self._add("mlp1.w", self._uniform(rng, d, (d, d)))
        self._add("mlp1.b", np.zeros(d))
        self._add("mlp2.w", self._uniform(rng, d, (d, 2)))
        self._add("mlp2.b", np.zeros(2))

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- realized diffusion quantities --------------------------------------

    def realize_theta(self, l: int) -> Tensor:
        logits = self.params[f"layer{l}.theta"]
        if self.cfg.theta_mode == "softmax":
            return ad.softmax(logits, axis=0)
        return logits

    def realize_transitions(self, l: int) -> Tensor:
        """Stack of K column-stochastic transition matrices for layer ``l``."""
        return ad.softmax(self.params[f"layer{l}.trans"], axis=1)

    def realize_diffusion(self, l: int) -> Tensor:
        """Q_l: the theta-weighted combination of the layer's transitions."""
        return ad.mix(self.realize_theta(l), self.realize_transitions(l))

    def radius(self, l: int) -> Tensor:
        """Weighted mean diffusion step index of layer ``l`` (scalar tensor)."""
        theta = self.realize_theta(l)
        steps = Tensor(np.arange(self.cfg.diffusion_steps, dtype=np.float64))
        weighted = ad.sum_all(ad.mul(theta, steps))
        if self.cfg.theta_mode == "softmax":
            return weighted
        return ad.mul(weighted, ad.reciprocal(ad.sum_all(theta)))

    def radii_values(self) -> np.ndarray:
        if self.cfg.frozen_onehop:
            return np.zeros(self.cfg.layers)
        return np.array([float(self.radius(l).data) for l in range(self.cfg.layers)])

    # -- forward pass --------------------------------------------------------

    def _layer(self, l: int, h: Tensor, hp: Tensor, adj: np.ndarray,
               onehop: np.ndarray | None) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        slope = cfg.activation_slope
        if cfg.frozen_onehop:
            propagate = ad.matmul(Tensor(onehop), h)
        else:
            q = self.realize_diffusion(l)
            masked = ad.mul(q, Tensor(adj))
            propagate = ad.matmul(masked, h)
        h2 = ad.leaky_relu(ad.matmul(propagate, self.params[f"layer{l}.w_diff"]), slope)
        if cfg.coupled:
            return h2, h2

        z = ad.concat_cols(h2, hp)
        head_outs = []
        for head, dh in enumerate(head_dims(cfg.embed_dim, cfg.heads)):
            q_h = ad.matmul(z, self.params[f"layer{l}.head{head}.wq"])
            k_h = ad.matmul(z, self.params[f"layer{l}.head{head}.wk"])
            v_h = ad.matmul(z, self.params[f"layer{l}.head{head}.wv"])
            scores = ad.scale(ad.matmul(q_h, ad.transpose(k_h)), 1.0 / np.sqrt(dh))
            head_outs.append(ad.matmul(ad.softmax(scores, axis=1), v_h))
        cat = head_outs[0]
        for out in head_outs[1:]:
            cat = ad.concat_cols(cat, out)
        pre = ad.add_bias(ad.matmul(cat, self.params[f"layer{l}.w_attn"]),
                          self.params[f"layer{l}.b_attn"])
        return h2, ad.leaky_relu(pre, slope)

    def forward(self, features: np.ndarray, adj: np.ndarray) -> Tensor:
        """Per-node class logits (N, 2) for one day's features and adjacency."""
        n = self.n_nodes
        if features.shape != (n, self.feature_dim):
            raise DimensionError(
                f"forward: features {features.shape}, expected {(n, self.feature_dim)}"
            )
        if adj.shape != (n, n):
            raise DimensionError(f"forward: adjacency {adj.shape}, expected {(n, n)}")
        onehop = row_normalize(adj) if self.cfg.frozen_onehop else None

        h = ad.add_bias(ad.matmul(Tensor(features), self.params["embed.w"]),
                        self.params["embed.b"])
        hp = h
        for l in range(self.cfg.layers):
            h, hp = self._layer(l, h, hp, adj, onehop)
            if not (np.isfinite(h.data).all() and np.isfinite(hp.data).all()):
                raise EvaluationError(f"non-finite activation in layer {l}")
        slope = self.cfg.activation_slope
        x = ad.leaky_relu(ad.add_bias(ad.matmul(hp, self.params["mlp0.w"]),
                                      self.params["mlp0.b"]), slope)
        x = ad.leaky_relu(ad.add_bias(ad.matmul(x, self.params["mlp1.w"]),
                                      self.params["mlp1.b"]), slope)
        logits = ad.add_bias(ad.matmul(x, self.params["mlp2.w"]), self.params["mlp2.b"])
        if not np.isfinite(logits.data).all():
            raise EvaluationError("non-finite activation in classifier head")
        return logits


# ---------------------------------------------------------------------------
# diffusion dumps
# ---------------------------------------------------------------------------


def dump_diffusion(model: Model, layer: int, adj: np.ndarray, tickers: list[str],
                   out_dir, date: str) -> list:
    """Write Q_l and Q_l * A as CSV plus min-max normalized variants."""
    from pathlib import Path
    if not 0 <= layer < model.cfg.layers:
        raise ValidationError(f"layer {layer} outside 0..{model.cfg.layers - 1}")
    if model.cfg.frozen_onehop:
        q = row_normalize(adj)
    else:
        q = model.realize_diffusion(layer).data
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, matrix in [
        (f"diffusion_l{layer}_{date}.csv", q),
        (f"diffusion_l{layer}_{date}_normalized.csv", minmax_normalize(q)),
        (f"diffusion_masked_l{layer}_{date}.csv", q * adj),
        (f"diffusion_masked_l{layer}_{date}_normalized.csv", minmax_normalize(q * adj)),
    ]:
        path = out_dir / name
        write_adjacency_csv(matrix, tickers, path)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: Model, universe_fingerprint: str,
                    run_config: dict | None = None, extra: dict | None = None) -> None:
    """Single-file binary checkpoint; header JSON + raw float64 buffers.

    Written byte-deterministically (no timestamps) so identical runs produce
    identical files.
    """
    names = list(model.params)
    header = {
        "version": 1,
        "n_nodes": model.n_nodes,
        "feature_dim": model.feature_dim,
        "universe_fingerprint": universe_fingerprint,
        "model_config": {
            "embed_dim": model.cfg.embed_dim,
            "heads": model.cfg.heads,
            "layers": model.cfg.layers,
            "diffusion_steps": model.cfg.diffusion_steps,
            "activation_slope": model.cfg.activation_slope,
            "theta_mode": model.cfg.theta_mode,
            "coupled": model.cfg.coupled,
            "frozen_onehop": model.cfg.frozen_onehop,
        },
        "tensors": [{"name": n, "shape": list(model.params[n].data.shape)}
                    for n in names],
        "run_config": run_config or {},
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(model.params[name].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild a Model from a checkpoint; returns (model, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CompatibilityError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        if header.get("version") != 1:
            raise CompatibilityError(f"{path}: unsupported checkpoint version")
        cfg = ModelConfig(**header["model_config"])
        model = Model(header["n_nodes"], header["feature_dim"], cfg, seed=0)
        expected = [t["name"] for t in header["tensors"]]
        if expected != list(model.params):
            raise CompatibilityError(f"{path}: tensor list does not match model config")
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) if shape else 1
            buf = fh.read(size * 8)
            model.params[entry["name"]].data = (
                np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            )
    return model, header


def require_matching_universe(header: dict, fingerprint: str) -> None:
    if header["universe_fingerprint"] != fingerprint:
        raise CompatibilityError(
            "checkpoint was trained on a different universe than this dataset"
        )
