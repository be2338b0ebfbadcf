"""Gated temporal convolutions stacked with graph convolutions.

The network maps a (batch, k, n, n) stack of recent OD matrices to the
next OD matrix. Internally each origin tile is a graph node and its n
outgoing-flow values are the channel features, so the input is
rearranged to (batch, channels=n, time=k, nodes=n). Two
time/spatial/time blocks with batch normalization feed an output stage
that collapses the remaining time steps and projects back to n
destination channels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    RMSprop,
    Tensor,
    add,
    backward,
    batch_norm,
    glorot_uniform,
    hadamard,
    matmul,
    mse,
    no_grad,
    relu,
    sigmoid,
    temporal_conv1d,
    transpose,
)
from .pipeline import Adjacency


class ConfigError(ValueError):
    """Model configuration violates a shape or range constraint."""


@dataclass(frozen=True)
class ModelConfig:
    n: int
    k: int = 12
    l: int = 1
    channels: tuple[int, int] = (64, 64)
    kernel_t: int = 3
    eps_bn: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.n < 1:
            raise ConfigError(f"need at least one node, got n={self.n}")
        if self.l != 1:
            raise ConfigError("only single-step prediction is supported (l=1); the field is reserved")
        if len(self.channels) != 2 or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be two positive widths, got {self.channels}")
        if self.kernel_t < 1:
            raise ConfigError(f"temporal kernel must be >= 1, got {self.kernel_t}")
        # two blocks eat 4*(kernel_t-1) steps; at least one must remain for the output stage
        if self.k <= 4 * (self.kernel_t - 1):
            raise ConfigError(
                f"history length k={self.k} must exceed 4*(kernel_t-1)={4 * (self.kernel_t - 1)}"
            )

    @property
    def t_remaining(self) -> int:
        return self.k - 4 * (self.kernel_t - 1)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "l": self.l,
            "channels": list(self.channels),
            "kernel_t": self.kernel_t,
            "eps_bn": self.eps_bn,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Degree-scaled adjacency with self-loops: m[i,j] = a[i,j]/sqrt(d_i d_j)."""

    n: int
    m: np.ndarray


def normalize_adjacency(a, symmetrize: bool = True) -> NormalizedAdjacency:
    """Self-loops forced on the diagonal, degrees from row sums.

    ``symmetrize`` keeps the scaling meaningful for directed inputs by
    taking max(a, a^T) first; disable it to use raw row degrees.
    """
    raw = a.a if isinstance(a, Adjacency) else np.asarray(a)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ConfigError(f"adjacency must be square, got shape {raw.shape}")
    ahat = (raw > 0).astype(np.float64)
    if symmetrize:
        ahat = np.maximum(ahat, ahat.T)
    np.fill_diagonal(ahat, 1.0)
    d = ahat.sum(axis=1)
    m = ahat / np.sqrt(np.outer(d, d))
    return NormalizedAdjacency(raw.shape[0], m)


def adjacency_fingerprint(a: Adjacency | np.ndarray) -> dict:
    raw = np.asarray(a.a if isinstance(a, Adjacency) else a, dtype=np.uint8)
    return {
        "n": int(raw.shape[0]),
        "edges": int(raw.sum()),
        "sha256": hashlib.sha256(raw.tobytes(order="C")).hexdigest(),
    }


def time_block(x, w_lin, b_lin, w_gate, b_gate, w_res, b_res) -> Tensor:
    """Sigmoid-gated temporal convolution plus a convolved residual path."""
    gated = hadamard(temporal_conv1d(x, w_lin, b_lin), sigmoid(temporal_conv1d(x, w_gate, b_gate)))
    return relu(add(temporal_conv1d(x, w_res, b_res), gated))


def spatial_block(x, m, theta) -> Tensor:
    """Mix node features through the normalized adjacency, project, ReLU."""
    mat = m.m if isinstance(m, NormalizedAdjacency) else np.asarray(m, dtype=np.float64)
    if x.data.shape[3] != mat.shape[0]:
        raise ConfigError(f"node count {x.data.shape[3]} does not match adjacency {mat.shape}")
    mixed = matmul(x, Tensor(mat.T))  # out[...,v] = sum_u m[v,u] x[...,u]
    h = matmul(transpose(mixed, (0, 2, 3, 1)), theta)
    return relu(transpose(h, (0, 3, 1, 2)))


def st_gcn_block(x, m, params: dict, stats: dict, training: bool, eps: float = 1e-5) -> Tensor:
    """time_block -> spatial_block -> time_block -> batch_norm.

    ``params`` holds tensors keyed time1.*, spatial.theta, time2.*,
    norm.gamma, norm.beta; ``stats`` holds running mean/var arrays.
    """
    h = time_block(
        x,
        params["time1.w_lin"], params["time1.b_lin"],
        params["time1.w_gate"], params["time1.b_gate"],
        params["time1.w_res"], params["time1.b_res"],
    )
    h = spatial_block(h, m, params["spatial.theta"])
    h = time_block(
        h,
        params["time2.w_lin"], params["time2.b_lin"],
        params["time2.w_gate"], params["time2.b_gate"],
        params["time2.w_res"], params["time2.b_res"],
    )
    return batch_norm(
        h, params["norm.gamma"], params["norm.beta"],
        stats["mean"], stats["var"], training, momentum=0.1, eps=eps,
    )


class CrowdNet:
    """Two temporal/graph blocks plus a time-collapsing output stage."""

    def __init__(self, config: ModelConfig, adjacency, symmetrize: bool = True):
        self.config = config
        if isinstance(adjacency, NormalizedAdjacency):
            self.norm = adjacency
        else:
            self.norm = normalize_adjacency(adjacency, symmetrize=symmetrize)
        if self.norm.n != config.n:
            raise ConfigError(f"adjacency is {self.norm.n}-node but config.n={config.n}")
        self.params: dict[str, Tensor] = {}
        self.bn_stats: dict[str, np.ndarray] = {}
        self._init_params()

    def _init_params(self):
        rng = np.random.default_rng(self.config.seed)
        n, (c1, c2), kt = self.config.n, self.config.channels, self.config.kernel_t

        def conv(name, c_out, c_in, k):
            self.params[name + ".w"] = Tensor(
                glorot_uniform(rng, (c_out, c_in, k), c_in * k, c_out * k), requires_grad=True
            )
            self.params[name + ".b"] = Tensor(np.zeros(c_out), requires_grad=True)

        c_in = n
        for i in (1, 2):
            for leg in ("w_lin", "w_gate", "w_res"):
                self.params[f"block{i}.time1.{leg}"] = Tensor(
                    glorot_uniform(rng, (c1, c_in, kt), c_in * kt, c1 * kt), requires_grad=True
                )
                self.params[f"block{i}.time1.{leg.replace('w', 'b')}"] = Tensor(
                    np.zeros(c1), requires_grad=True
                )
            self.params[f"block{i}.spatial.theta"] = Tensor(
                glorot_uniform(rng, (c1, c2), c1, c2), requires_grad=True
            )
            for leg in ("w_lin", "w_gate", "w_res"):
                self.params[f"block{i}.time2.{leg}"] = Tensor(
                    glorot_uniform(rng, (c2, c2, kt), c2 * kt, c2 * kt), requires_grad=True
                )
                self.params[f"block{i}.time2.{leg.replace('w', 'b')}"] = Tensor(
                    np.zeros(c2), requires_grad=True
                )
            self.params[f"block{i}.norm.gamma"] = Tensor(np.ones(c2), requires_grad=True)
            self.params[f"block{i}.norm.beta"] = Tensor(np.zeros(c2), requires_grad=True)
            self.bn_stats[f"block{i}.norm.mean"] = np.zeros(c2)
            self.bn_stats[f"block{i}.norm.var"] = np.ones(c2)
            c_in = c2
        conv("head.time", c2, c2, self.config.t_remaining)
        conv("head.proj", n, c2, 1)

    def _block_group(self, i: int) -> tuple[dict, dict]:
        prefix = f"block{i}."
        group = {name[len(prefix):]: t for name, t in self.params.items() if name.startswith(prefix)}
        stats = {
            "mean": self.bn_stats[f"block{i}.norm.mean"],
            "var": self.bn_stats[f"block{i}.norm.var"],
        }
        return group, stats

    def forward(self, x, training: bool = False) -> Tensor:
        """x: (batch, k, n, n) history, newest slice last -> (batch, 1, n, n)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        b, k, n1, n2 = x.data.shape
        if k != self.config.k or n1 != self.config.n or n2 != self.config.n:
            raise ConfigError(
                f"input shape {x.data.shape} does not match (batch, {self.config.k}, "
                f"{self.config.n}, {self.config.n})"
            )
        h = transpose(x, (0, 3, 1, 2))  # destination features per origin node
        for i in (1, 2):
            group, stats = self._block_group(i)
            h = st_gcn_block(h, self.norm, group, stats, training, eps=self.config.eps_bn)
        h = temporal_conv1d(h, self.params["head.time.w"], self.params["head.time.b"])
        h = temporal_conv1d(h, self.params["head.proj.w"], self.params["head.proj.b"])
        return transpose(h, (0, 2, 3, 1))

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode forward over (count, k, n, n), no graph recording."""
        x = np.asarray(x, dtype=np.float64)
        outs = []
        with no_grad():
            for s in range(0, x.shape[0], batch_size):
                outs.append(self.forward(x[s : s + batch_size], training=False).data)
        return np.concatenate(outs, axis=0)

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        out.update(self.bn_stats)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ConfigError(f"parameter {name!r}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()
        for name in self.bn_stats:
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing statistic {name!r}")
            self.bn_stats[name][...] = arrays[name]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays().items()}


def aggregate_to_crowd(y, include_self: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Predicted OD slice (batch, 1, n, n) to per-tile (inflow, outflow).

    Negative predictions are clamped to zero before summing; the
    self-flow policy mirrors crowd_from_od.
    """
    data = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if data.ndim != 4 or data.shape[1] != 1 or data.shape[2] != data.shape[3]:
        raise ConfigError(f"expected (batch, 1, n, n) prediction, got shape {data.shape}")
    s = np.maximum(data[:, 0], 0.0)
    inflow = s.sum(axis=1)
    outflow = s.sum(axis=2)
    if not include_self:
        diag = np.einsum("bii->bi", s)
        inflow = inflow - diag
        outflow = outflow - diag
    return inflow, outflow


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # {"epoch", "train_mse", "val_mse"}
    best_val: float = float("inf")
    best_epoch: int = 0
    stopped_early: bool = False


def train_model(
    model: CrowdNet,
    train_windows: list,
    val_windows: list,
    epochs: int = 150,
    batch_size: int = 16,
    lr: float = 1e-4,
    patience: int = 10,
    min_delta: float = 1e-6,
    log_fn=None,
) -> TrainResult:
    """Mini-batch RMSprop on MSE over predicted OD slices.

    Validation MSE (eval mode) drives early stopping: no improvement
    beyond ``min_delta`` for max(patience, 1) consecutive epochs ends
    training, and the best-validation state is restored. Without
    validation windows the training loss is monitored instead.
    """
    if not train_windows:
        raise ConfigError("no training windows")
    xs = np.stack([w[0] for w in train_windows])
    ys = np.stack([w[1] for w in train_windows])
    vx = np.stack([w[0] for w in val_windows]) if val_windows else None
    vy = np.stack([w[1] for w in val_windows]) if val_windows else None
    rng = np.random.default_rng(model.config.seed)
    opt = RMSprop(model.param_list(), lr=lr)
    result = TrainResult()
    best_state = model.snapshot()
    stall = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(xs.shape[0])
        total = 0.0
        for s in range(0, order.size, batch_size):
            idx = order[s : s + batch_size]
            loss = mse(model.forward(Tensor(xs[idx]), training=True), Tensor(ys[idx]))
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += loss.item() * idx.size
        train_mse = total / order.size
        if vx is not None:
            with no_grad():
                val_mse = mse(Tensor(model.predict(vx)), Tensor(vy)).item()
        else:
            val_mse = train_mse
        result.history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse})
        if log_fn:
            log_fn(epoch, train_mse, val_mse)
        if val_mse < result.best_val - min_delta:
            result.best_val = val_mse
            result.best_epoch = epoch
            best_state = model.snapshot()
            stall = 0
        else:
            stall += 1
            if stall >= max(patience, 1):
                result.stopped_early = True
                break
    model.load_state(best_state)
    return result
