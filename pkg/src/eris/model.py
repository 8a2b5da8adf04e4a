"""The ERIS network: shared encoder, projections, energy heads, prototypes.

The encoder maps a multichannel window through a small stack of 1-D
convolutions (stride 1, same padding, ReLU), pools over time, and applies a
linear layer to produce the shared feature F0. Two projection matrices w_d
and w_l gate what the domain-energy and label-energy branches can see; a
squared-Frobenius penalty on w_d^T w_l (see losses) drives their column
spaces apart. Classification is by lowest consistency score: label energy
plus squared distance to a learnable class prototype.

All forward passes are pure functions of (params, input); caches returned by
the *_with_cache variants carry the intermediates the analytic backward
passes in losses.py need.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .linalg import Rng, frob_norm_sq

PARAMS_MAGIC = "ERIS-PARAMS"
PARAMS_VERSION = 1
INIT_STDDEV = 0.05


@dataclass
class ArchConfig:
    """Shapes of every component of the network."""

    channels_per_layer: tuple[int, ...] = (16, 16)  # conv output channels; empty = no convs
    kernel_size: int = 5
    in_channels: int = 3
    encoding_dim: int = 64      # width of the shared feature F0
    projection_dim: int = 32    # width after w_d / w_l
    mlp_hidden: int = 64        # hidden width of the two energy-head MLPs
    n_classes: int = 4
    n_domains: int = 4

    def __post_init__(self):
        self.channels_per_layer = tuple(int(c) for c in self.channels_per_layer)
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 1")
        if any(c < 1 for c in self.channels_per_layer):
            raise ValueError("conv channel counts must be >= 1")
        for name in ("in_channels", "encoding_dim", "projection_dim",
                     "mlp_hidden", "n_classes", "n_domains"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.projection_dim > self.encoding_dim:
            raise ValueError("projection_dim must not exceed encoding_dim")

    @property
    def n_conv_layers(self) -> int:
        return len(self.channels_per_layer)

    @property
    def conv_widths(self) -> tuple[int, ...]:
        """Channel widths through the conv stack, input first."""
        return (self.in_channels, *self.channels_per_layer)

    def to_dict(self) -> dict:
        return {
            "channels_per_layer": list(self.channels_per_layer),
            "kernel_size": self.kernel_size,
            "in_channels": self.in_channels,
            "encoding_dim": self.encoding_dim,
            "projection_dim": self.projection_dim,
            "mlp_hidden": self.mlp_hidden,
            "n_classes": self.n_classes,
            "n_domains": self.n_domains,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{k: tuple(v) if k == "channels_per_layer" else v for k, v in d.items()})


def tensor_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every parameter tensor, in serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    widths = arch.conv_widths
    for l in range(arch.n_conv_layers):
        shapes[f"conv{l}_w"] = (widths[l + 1], widths[l], arch.kernel_size)
        shapes[f"conv{l}_b"] = (widths[l + 1],)
    b, d, h = arch.encoding_dim, arch.projection_dim, arch.mlp_hidden
    shapes["enc_w"] = (widths[-1], b)
    shapes["enc_b"] = (b,)
    shapes["w_d"] = (b, d)
    shapes["w_l"] = (b, d)
    shapes["dom_w1"] = (d, h)
    shapes["dom_b1"] = (h,)
    shapes["dom_w2"] = (h, h)
    shapes["dom_b2"] = (h,)
    shapes["dom_w3"] = (h, arch.n_domains)
    shapes["dom_b3"] = (arch.n_domains,)
    shapes["lab_w1"] = (d, h)
    shapes["lab_b1"] = (h,)
    shapes["lab_w2"] = (h, h)
    shapes["lab_b2"] = (h,)
    shapes["lab_w3"] = (h, arch.n_classes)
    shapes["lab_b3"] = (arch.n_classes,)
    shapes["protos"] = (arch.n_classes, b)
    shapes["var_w"] = (d, arch.n_domains)
    shapes["var_b"] = (arch.n_domains,)
    shapes["disc_w1"] = (b, h)
    shapes["disc_b1"] = (h,)
    shapes["disc_w2"] = (h, arch.n_domains)
    shapes["disc_b2"] = (arch.n_domains,)
    return shapes


@dataclass
class ModelParams:
    """All learnable tensors, keyed by name in a fixed order."""

    arch: ArchConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors:
            raise KeyError(name)
        if value.shape != self.tensors[name].shape:
            raise ValueError(f"shape mismatch for {name}: {value.shape} vs {self.tensors[name].shape}")
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for v in self.tensors.values()])

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        """New ModelParams whose tensors are read out of a flat vector."""
        out = {}
        i = 0
        for k, v in self.tensors.items():
            out[k] = flat[i:i + v.size].reshape(v.shape).copy()
            i += v.size
        if i != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {i}")
        return ModelParams(self.arch, out)

    def check_finite(self) -> None:
        for k, v in self.tensors.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite entries in parameter {k}")


def flatten_grads(params: ModelParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[k].reshape(-1) for k in params.tensors])


def init_params(arch: ArchConfig, rng: Rng) -> ModelParams:
    """Gaussian(0, 0.05) weights, zero biases, zero prototypes.

    Prototypes are re-seeded to per-class feature means by the training
    warm-up; zero is only the pre-warm-up placeholder.
    """
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(arch).items():
        if "_b" in name or name == "protos":
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal_array(shape, INIT_STDDEV)
    return ModelParams(arch, tensors)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def conv1d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1, zero-padded 1-D convolution: [B, Cin, T] -> [B, Cout, T]."""
    B, Cin, T = x.shape
    Cout, Cin_w, K = w.shape
    if Cin_w != Cin:
        raise ValueError(f"conv input has {Cin} channels, kernel expects {Cin_w}")
    pad = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    z = np.broadcast_to(b[None, :, None], (B, Cout, T)).copy()
    for k in range(K):
        z += np.einsum("oi,bit->bot", w[:, :, k], xp[:, :, k:k + T])
    return z


@dataclass
class EncodeCache:
    """Intermediates of one encoder forward pass, for the backward pass."""

    activations: list[np.ndarray]   # a_0 = input, a_1 .. a_L post-ReLU
    preacts: list[np.ndarray]       # z_1 .. z_L
    pooled: np.ndarray              # [B, C_last]


def encode_with_cache(params: ModelParams, batch: np.ndarray) -> tuple[np.ndarray, EncodeCache]:
    arch = params.arch
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != arch.in_channels:
        raise ValueError(f"batch has {x.shape[1]} channels, arch expects {arch.in_channels}")
    activations = [x]
    preacts = []
    a = x
    for l in range(arch.n_conv_layers):
        z = conv1d_same(a, params[f"conv{l}_w"], params[f"conv{l}_b"])
        preacts.append(z)
        a = relu(z)
        activations.append(a)
    pooled = a.mean(axis=2)
    f0 = pooled @ params["enc_w"] + params["enc_b"]
    if not np.all(np.isfinite(f0)):
        raise ValueError("non-finite encoder output")
    return f0, EncodeCache(activations, preacts, pooled)


def encode(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Shared features F0 for a batch: [B, channels, length] -> [B, b]."""
    f0, _ = encode_with_cache(params, batch)
    return f0


@dataclass
class MlpCache:
    z: np.ndarray    # branch input (projected feature), [B, d]
    p1: np.ndarray
    h1: np.ndarray
    p2: np.ndarray
    h2: np.ndarray


def _mlp3_forward(z, w1, b1, w2, b2, w3, b3) -> tuple[np.ndarray, MlpCache]:
    p1 = z @ w1 + b1
    h1 = relu(p1)
    p2 = h1 @ w2 + b2
    h2 = relu(p2)
    out = h2 @ w3 + b3
    return out, MlpCache(z, p1, h1, p2, h2)


def domain_energy_batch(params: ModelParams, f0: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Per-domain energies for each row of f0: [B, b] -> [B, N_d]."""
    zd = f0 @ params["w_d"]
    return _mlp3_forward(zd, params["dom_w1"], params["dom_b1"],
                         params["dom_w2"], params["dom_b2"],
                         params["dom_w3"], params["dom_b3"])


def label_energy_batch(params: ModelParams, f0: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Per-class energies for each row of f0: [B, b] -> [B, N_y]."""
    zl = f0 @ params["w_l"]
    return _mlp3_forward(zl, params["lab_w1"], params["lab_b1"],
                         params["lab_w2"], params["lab_b2"],
                         params["lab_w3"], params["lab_b3"])


def energy_domain(params: ModelParams, f0_row: np.ndarray) -> np.ndarray:
    """Domain energies for a single feature row (length N_d, lower = better)."""
    out, _ = domain_energy_batch(params, np.asarray(f0_row, dtype=np.float64)[None, :])
    return out[0]


def energy_label(params: ModelParams, f0_row: np.ndarray) -> np.ndarray:
    """Label energies for a single feature row (length N_y, lower = better)."""
    out, _ = label_energy_batch(params, np.asarray(f0_row, dtype=np.float64)[None, :])
    return out[0]


def proto_sq_dists(params: ModelParams, f0: np.ndarray) -> np.ndarray:
    """Squared distances to each class prototype: [B, b] -> [B, N_y]."""
    diff = f0[:, None, :] - params["protos"][None, :, :]
    return np.sum(diff * diff, axis=2)


def consistency_error(params: ModelParams, f0_row: np.ndarray) -> np.ndarray:
    """Per-class consistency score: label energy + squared prototype distance."""
    f0 = np.asarray(f0_row, dtype=np.float64)[None, :]
    e_y, _ = label_energy_batch(params, f0)
    return (e_y + proto_sq_dists(params, f0))[0]


@dataclass
class EnergyScores:
    """The three per-sample score vectors: domain, label, and consistency."""

    e_d: np.ndarray
    e_y: np.ndarray
    c_y: np.ndarray


def energy_scores(params: ModelParams, f0_row: np.ndarray) -> EnergyScores:
    f0 = np.asarray(f0_row, dtype=np.float64)[None, :]
    e_d, _ = domain_energy_batch(params, f0)
    e_y, _ = label_energy_batch(params, f0)
    c_y = e_y + proto_sq_dists(params, f0)
    return EnergyScores(e_d[0], e_y[0], c_y[0])


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def predict_batch(params: ModelParams, f0: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(classes, confidences, probs) for each row; probs = softmax(-C_y)."""
    e_y, _ = label_energy_batch(params, f0)
    c_y = e_y + proto_sq_dists(params, f0)
    probs = softmax(-c_y, axis=1)
    classes = np.argmin(c_y, axis=1)
    confidences = probs[np.arange(len(classes)), classes]
    return classes, confidences, probs


def predict(params: ModelParams, f0_row: np.ndarray) -> tuple[int, float, np.ndarray]:
    """Lowest-consistency class with its softmax(-C_y) confidence."""
    classes, conf, probs = predict_batch(params, np.asarray(f0_row, dtype=np.float64)[None, :])
    return int(classes[0]), float(conf[0]), probs[0]


def variance_head_batch(params: ModelParams, f0: np.ndarray) -> np.ndarray:
    """Per-domain predictive variances, strictly positive: [B, b] -> [B, N_d]."""
    zd = f0 @ params["w_d"]
    return np.exp(zd @ params["var_w"] + params["var_b"])


def variance_head(params: ModelParams, f0_row: np.ndarray) -> np.ndarray:
    return variance_head_batch(params, np.asarray(f0_row, dtype=np.float64)[None, :])[0]


def discriminate_domain_batch(params: ModelParams, f0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Domain logits from the adversarial discriminator; returns (logits, hidden)."""
    g1 = relu(f0 @ params["disc_w1"] + params["disc_b1"])
    logits = g1 @ params["disc_w2"] + params["disc_b2"]
    return logits, g1


def discriminate_domain(params: ModelParams, f0_row: np.ndarray) -> np.ndarray:
    logits, _ = discriminate_domain_batch(params, np.asarray(f0_row, dtype=np.float64)[None, :])
    return logits[0]


def cross_norm(params: ModelParams) -> float:
    """Frobenius norm of w_d^T w_l, the quantity the orthogonality loss drives to 0."""
    return float(np.sqrt(frob_norm_sq(params["w_d"].T @ params["w_l"])))


@dataclass
class CostEstimate:
    time_macs: int
    param_count: int
    activation_count: int


def estimate_cost(arch: ArchConfig, length: int) -> CostEstimate:
    """Closed-form per-sample cost of the canonical forward pass.

    time_macs counts multiply-accumulates of the conv stack at input length
    ``length`` (stride 1, same padding, so every output position costs
    K * C_in * C_out) plus one shared two-hidden-layer trunk with two linear
    output heads. param_count counts conv kernels plus trunk weights;
    activation_count counts the live tensors: input, encoding, and the two
    energy vectors with their paired score vectors.
    """
    widths = arch.conv_widths
    conv_macs = sum(length * arch.kernel_size * widths[l] * widths[l + 1]
                    for l in range(arch.n_conv_layers))
    b, h = arch.encoding_dim, arch.mlp_hidden
    head_macs = b * h + h * h + h * (arch.n_classes + arch.n_domains)
    conv_params = sum(arch.kernel_size * widths[l] * widths[l + 1]
                      for l in range(arch.n_conv_layers))
    head_params = b * h + h * h + h * (arch.n_classes + arch.n_domains)
    activations = length * arch.in_channels + b + 2 * arch.n_classes + 2 * arch.n_domains
    return CostEstimate(time_macs=conv_macs + head_macs,
                        param_count=conv_params + head_params,
                        activation_count=activations)


def save_params(params: ModelParams, path: str) -> None:
    """Serialize params: ASCII header with the arch, then named tensors as
    length-prefixed little-endian float64 arrays in fixed order. Bit-exact."""
    arch = params.arch
    with open(path, "wb") as f:
        chans = ";".join(str(c) for c in arch.channels_per_layer)
        header = (f"{PARAMS_MAGIC},{PARAMS_VERSION},{arch.n_conv_layers},"
                  f"{arch.kernel_size},{arch.in_channels},{chans},"
                  f"{arch.encoding_dim},{arch.projection_dim},{arch.mlp_hidden},"
                  f"{arch.n_classes},{arch.n_domains}\n")
        f.write(header.encode("ascii"))
        for name, tensor in params.tensors.items():
            f.write(f"{name},{tensor.size}\n".encode("ascii"))
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


class ParamsFormatError(ValueError):
    """Raised for malformed parameter files."""


def load_params(path: str) -> ModelParams:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").rstrip("\n").split(",")
        if len(header) != 11 or header[0] != PARAMS_MAGIC:
            raise ParamsFormatError("malformed parameter file header")
        if int(header[1]) != PARAMS_VERSION:
            raise ParamsFormatError(f"unsupported version {header[1]}")
        n_layers = int(header[2])
        chans = tuple(int(c) for c in header[5].split(";")) if header[5] else ()
        if len(chans) != n_layers:
            raise ParamsFormatError("conv layer count does not match channel list")
        arch = ArchConfig(
            channels_per_layer=chans,
            kernel_size=int(header[3]),
            in_channels=int(header[4]),
            encoding_dim=int(header[6]),
            projection_dim=int(header[7]),
            mlp_hidden=int(header[8]),
            n_classes=int(header[9]),
            n_domains=int(header[10]),
        )
        tensors: dict[str, np.ndarray] = {}
        for name, shape in tensor_shapes(arch).items():
            line = f.readline().decode("ascii").rstrip("\n").split(",")
            if len(line) != 2 or line[0] != name:
                raise ParamsFormatError(f"expected tensor {name}, found {line!r}")
            size = int(line[1])
            expected = int(np.prod(shape))
            if size != expected:
                raise ParamsFormatError(f"tensor {name}: declared {size} values, expected {expected}")
            raw = f.read(size * 8)
            if len(raw) != size * 8:
                raise ParamsFormatError(f"tensor {name}: file truncated")
            tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if f.read(1):
            raise ParamsFormatError("trailing bytes after final tensor")
    params = ModelParams(arch, tensors)
    params.check_finite()
    return params
