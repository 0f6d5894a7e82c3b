"""Convolutional feature extractor with analytic forward and backward passes.

The reference architecture stacks 3x3 convolutions (ReLU activations) in
blocks, each block followed by a 2x2 stride-2 max pool, and ends in a 2D
global max pool that reduces the final feature map to one value per
channel. No fully connected head exists; the feature dimension equals the
last convolution's channel count.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import CacheMismatch, ShapeError
from .gasf import ScenarioImage

WEIGHT_MAGIC = b"DTSAWGT1"
WEIGHT_VERSION = 1

_TAG_CONV, _TAG_RELU, _TAG_POOL, _TAG_GMP = 1, 2, 3, 4


def conv_out_size(n_in: int, pd: int, k_size: int, sd_conv: int) -> int:
    """Spatial size after a convolution: floor((n_in + 2*pd - k)/stride) + 1."""
    if n_in < 1 or k_size < 1 or sd_conv < 1 or pd < 0:
        raise ShapeError(f"invalid conv geometry ({n_in}, {pd}, {k_size}, {sd_conv})")
    span = n_in + 2 * pd - k_size
    if span < 0:
        raise ShapeError(f"kernel {k_size} exceeds padded input {n_in + 2 * pd}")
    if span % sd_conv:
        warnings.warn(
            f"conv stride {sd_conv} does not divide span {span}; border pixels dropped",
            stacklevel=2,
        )
    return span // sd_conv + 1


def pool_out_size(p_in: int, f_size: int, sd_pool: int) -> int:
    """Spatial size after pooling: floor((p_in - f_size)/stride) + 1."""
    if p_in < 1 or f_size < 1 or sd_pool < 1:
        raise ShapeError(f"invalid pool geometry ({p_in}, {f_size}, {sd_pool})")
    span = p_in - f_size
    if span < 0:
        raise ShapeError(f"pool filter {f_size} exceeds input {p_in}")
    if span % sd_pool:
        warnings.warn(
            f"pool stride {sd_pool} does not divide span {span}; border pixels dropped",
            stacklevel=2,
        )
    return span // sd_pool + 1


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int
    padding: int
    weights: np.ndarray  # (out, in, k, k)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        expected = (self.in_channels, self.kernel_size, self.kernel_size)
        if self.weights.shape != (self.out_channels,) + expected:
            raise ShapeError(f"conv weights shape {self.weights.shape} mismatch")
        if self.biases.shape != (self.out_channels,):
            raise ShapeError(f"conv biases shape {self.biases.shape} mismatch")
        self.weights.setflags(write=False)
        self.biases.setflags(write=False)


@dataclass(frozen=True)
class PoolLayerSpec:
    filter_size: int = 2
    stride: int = 2


@dataclass(frozen=True)
class ReluSpec:
    pass


@dataclass(frozen=True)
class GmpSpec:
    pass


@dataclass(frozen=True)
class NetConfig:
    """Architecture description: conv blocks, each followed by a max pool.

    blocks is a tuple of tuples of output channel counts; the desk-scale
    default keeps end-to-end runs and gradient checks fast, while
    vgg13_gmp_config() gives the full-size reference network.
    """

    input_size: int = 32
    input_channels: int = 3
    blocks: tuple = ((8,), (16,), (32,))
    kernel_size: int = 3
    padding: int = 1
    conv_stride: int = 1
    pool_size: int = 2
    pool_stride: int = 2
    dtype: str = "float64"

    def feature_dim(self) -> int:
        return self.blocks[-1][-1]


def vgg13_gmp_config(input_size: int = 224, dtype: str = "float32") -> NetConfig:
    """Full-size reference config: 13 convs in 5 blocks, 5 pools, D=512."""
    return NetConfig(
        input_size=input_size,
        blocks=((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512)),
        dtype=dtype,
    )


def desk_config(input_size: int = 32, channels=(8, 16, 32), dtype: str = "float64") -> NetConfig:
    """Small test-default config: one conv per block, one pool per conv."""
    return NetConfig(input_size=input_size, blocks=tuple((c,) for c in channels), dtype=dtype)


def shape_chain(config: NetConfig) -> dict:
    """Spatial sizes through the network, without allocating any weights.

    Returns {'conv_sizes': [...], 'pool_sizes': [...], 'final_size': int,
    'feature_dim': int}; pool_sizes holds the size after each pool stage.
    """
    size = config.input_size
    conv_sizes, pool_sizes = [], []
    for block in config.blocks:
        for _ in block:
            size = conv_out_size(size, config.padding, config.kernel_size, config.conv_stride)
            conv_sizes.append(size)
        size = pool_out_size(size, config.pool_size, config.pool_stride)
        pool_sizes.append(size)
    return {
        "conv_sizes": conv_sizes,
        "pool_sizes": pool_sizes,
        "final_size": size,
        "feature_dim": config.feature_dim(),
    }


@dataclass(frozen=True)
class NetworkState:
    """Immutable stack of layer specs ending in global max pooling."""

    layers: tuple
    input_size: int
    input_channels: int = 3
    seed: int = -1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers or not isinstance(self.layers[-1], GmpSpec):
            raise ShapeError("network must end with a global max pool layer")
        if sum(isinstance(l, GmpSpec) for l in self.layers) != 1:
            raise ShapeError("exactly one global max pool layer allowed")
        channels = self.input_channels
        size = self.input_size
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for layer in self.layers[:-1]:
                if isinstance(layer, ConvLayerSpec):
                    if layer.in_channels != channels:
                        raise ShapeError(
                            f"conv expects {layer.in_channels} channels, chain carries {channels}"
                        )
                    size = conv_out_size(size, layer.padding, layer.kernel_size, layer.stride)
                    channels = layer.out_channels
                elif isinstance(layer, PoolLayerSpec):
                    size = pool_out_size(size, layer.filter_size, layer.stride)
                elif not isinstance(layer, ReluSpec):
                    raise ShapeError(f"unknown layer {layer!r}")
        object.__setattr__(self, "_feature_dim", channels)
        object.__setattr__(self, "_final_size", size)

    @property
    def feature_dim(self) -> int:
        return self._feature_dim

    @property
    def dtype(self):
        for layer in self.layers:
            if isinstance(layer, ConvLayerSpec):
                return layer.weights.dtype
        raise ShapeError("network has no convolution layers")

    def signature(self) -> tuple:
        sig = [("input", self.input_channels, self.input_size)]
        for layer in self.layers:
            if isinstance(layer, ConvLayerSpec):
                sig.append(
                    (
                        "conv",
                        layer.in_channels,
                        layer.out_channels,
                        layer.kernel_size,
                        layer.stride,
                        layer.padding,
                    )
                )
            elif isinstance(layer, PoolLayerSpec):
                sig.append(("pool", layer.filter_size, layer.stride))
            elif isinstance(layer, ReluSpec):
                sig.append(("relu",))
            else:
                sig.append(("gmp",))
        return tuple(sig)

    def parameter_count(self) -> int:
        total = 0
        for layer in self.layers:
            if isinstance(layer, ConvLayerSpec):
                total += layer.weights.size + layer.biases.size
        return total


def init_weights(config: NetConfig, seed: int) -> NetworkState:
    """He-initialized network: w ~ N(0, 2/fan_in), zero biases, per-seed."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    layers = []
    in_ch = config.input_channels
    for block in config.blocks:
        for out_ch in block:
            fan_in = in_ch * config.kernel_size * config.kernel_size
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, config.kernel_size, config.kernel_size))
            layers.append(
                ConvLayerSpec(
                    in_ch,
                    out_ch,
                    config.kernel_size,
                    config.conv_stride,
                    config.padding,
                    w.astype(dtype),
                    np.zeros(out_ch, dtype=dtype),
                )
            )
            layers.append(ReluSpec())
            in_ch = out_ch
        layers.append(PoolLayerSpec(config.pool_size, config.pool_stride))
    layers.append(GmpSpec())
    return NetworkState(tuple(layers), config.input_size, config.input_channels, seed=seed)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def conv_forward(x: np.ndarray, spec: ConvLayerSpec) -> np.ndarray:
    """Zero-padded cross-correlation with per-channel bias."""
    if x.ndim != 3 or x.shape[0] != spec.in_channels:
        raise ShapeError(f"conv input shape {x.shape} does not match {spec.in_channels} channels")
    conv_out_size(x.shape[1], spec.padding, spec.kernel_size, spec.stride)
    conv_out_size(x.shape[2], spec.padding, spec.kernel_size, spec.stride)
    return _kernels.conv2d_forward(
        np.ascontiguousarray(x), spec.weights, spec.biases, spec.stride, spec.padding
    )


def maxpool_forward(x: np.ndarray, spec: PoolLayerSpec):
    """Per-window maximum plus flat argmax indices for backward routing."""
    if x.ndim != 3:
        raise ShapeError(f"pool input must be 3-d, got {x.shape}")
    pool_out_size(x.shape[1], spec.filter_size, spec.stride)
    pool_out_size(x.shape[2], spec.filter_size, spec.stride)
    return _kernels.maxpool_forward(np.ascontiguousarray(x), spec.filter_size, spec.stride)


def gmp_forward(x: np.ndarray):
    """Per-channel spatial maximum; returns (features, flat argmax per channel)."""
    if x.ndim != 3 or x.shape[1] * x.shape[2] < 1:
        raise ShapeError(f"gmp input must be (C, H, W), got {x.shape}")
    flat = np.ascontiguousarray(x).reshape(x.shape[0], -1)
    arg = flat.argmax(axis=1)
    return flat[np.arange(x.shape[0]), arg], arg


def image_to_input(img: ScenarioImage, dtype) -> np.ndarray:
    """Channel-first float input scaled to [0, 1]."""
    return np.ascontiguousarray(img.pixels.transpose(2, 0, 1)).astype(dtype) / 255.0


@dataclass
class ForwardCache:
    signature: tuple
    records: list


def forward(img, net: NetworkState):
    """Run the network on one image; returns (features, cache).

    Accepts a ScenarioImage (pixels are scaled by 1/255) or a raw (C, H, W)
    array. The cache retains every layer input and argmax needed by
    backward.
    """
    if isinstance(img, ScenarioImage):
        x = image_to_input(img, net.dtype)
    else:
        x = np.ascontiguousarray(img, dtype=net.dtype)
    if x.shape != (net.input_channels, net.input_size, net.input_size):
        raise ShapeError(
            f"input shape {x.shape} does not match network input "
            f"({net.input_channels}, {net.input_size}, {net.input_size})"
        )
    records = []
    for layer in net.layers:
        if isinstance(layer, ConvLayerSpec):
            records.append(("conv", x))
            x = conv_forward(x, layer)
        elif isinstance(layer, ReluSpec):
            records.append(("relu", x))
            x = relu(x)
        elif isinstance(layer, PoolLayerSpec):
            y, arg = maxpool_forward(x, layer)
            records.append(("pool", (x.shape, arg)))
            x = y
        else:
            feats, arg = gmp_forward(x)
            records.append(("gmp", (x.shape, arg)))
            return feats, ForwardCache(net.signature(), records)
    raise ShapeError("network ended without a global max pool")  # pragma: no cover


def backward(dl_dz: np.ndarray, cache: ForwardCache, net: NetworkState):
    """Exact reverse-mode gradients for one cached forward pass.

    Returns (weight_grads, input_grad) where weight_grads is a list
    aligned with net.layers holding (dw, db) for conv layers and None
    elsewhere.
    """
    if cache.signature != net.signature():
        raise CacheMismatch("activation cache belongs to a different network")
    if len(cache.records) != len(net.layers):
        raise CacheMismatch("cache record count does not match layer count")
    grads = [None] * len(net.layers)

    kind, (shape, arg) = cache.records[-1]
    if kind != "gmp":  # pragma: no cover - signature check catches this
        raise CacheMismatch("cache does not end with a global max pool record")
    dl_dz = np.asarray(dl_dz, dtype=net.dtype)
    dx = np.zeros((shape[0], shape[1] * shape[2]), dtype=net.dtype)
    dx[np.arange(shape[0]), arg] = dl_dz
    dx = dx.reshape(shape)

    for idx in range(len(net.layers) - 2, -1, -1):
        layer = net.layers[idx]
        kind, rec = cache.records[idx]
        if isinstance(layer, ConvLayerSpec):
            x = rec
            dx, dw, db = _kernels.conv2d_backward(
                x, layer.weights, layer.stride, layer.padding, np.ascontiguousarray(dx)
            )
            grads[idx] = (dw, db)
        elif isinstance(layer, ReluSpec):
            dx = dx * (rec > 0)
        elif isinstance(layer, PoolLayerSpec):
            shape, arg = rec
            dx = _kernels.maxpool_backward(np.ascontiguousarray(dx), arg, shape[1], shape[2])
    return grads, dx


def apply_gradients(net: NetworkState, grads, learning_rate: float) -> NetworkState:
    """Plain gradient-descent step; returns a new NetworkState."""
    new_layers = []
    for layer, g in zip(net.layers, grads):
        if isinstance(layer, ConvLayerSpec) and g is not None:
            dw, db = g
            new_layers.append(
                replace(
                    layer,
                    weights=(layer.weights - learning_rate * dw).astype(net.dtype),
                    biases=(layer.biases - learning_rate * db).astype(net.dtype),
                )
            )
        else:
            new_layers.append(layer)
    return NetworkState(tuple(new_layers), net.input_size, net.input_channels, seed=net.seed)


def compute_features(inputs, net: NetworkState) -> np.ndarray:
    """Feature matrix (n, D) in float64 for a list of images/arrays."""
    feats = np.empty((len(inputs), net.feature_dim), dtype=np.float64)
    for i, img in enumerate(inputs):
        z, _ = forward(img, net)
        feats[i] = z
    return feats


def vgg16_head_layer_params() -> tuple:
    """Weight counts of the three dense layers the architecture drops."""
    return (25088 * 4096, 4096 * 4096, 4096 * 1000)


def param_count_vgg16_head() -> int:
    """Total weight count of the removed fully connected head."""
    return sum(vgg16_head_layer_params())


def save_weights(net: NetworkState, path) -> None:
    """Versioned binary weight file; float32 payload regardless of dtype."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(
            struct.pack(
                "<HHHH",
                WEIGHT_VERSION,
                net.input_size,
                net.input_channels,
                len(net.layers),
            )
        )
        for layer in net.layers:
            if isinstance(layer, ConvLayerSpec):
                fh.write(struct.pack("<B", _TAG_CONV))
                fh.write(
                    struct.pack(
                        "<HHHHH",
                        layer.out_channels,
                        layer.in_channels,
                        layer.kernel_size,
                        layer.stride,
                        layer.padding,
                    )
                )
                fh.write(np.ascontiguousarray(layer.weights, dtype=np.float32).tobytes())
                fh.write(np.ascontiguousarray(layer.biases, dtype=np.float32).tobytes())
            elif isinstance(layer, ReluSpec):
                fh.write(struct.pack("<B", _TAG_RELU))
            elif isinstance(layer, PoolLayerSpec):
                fh.write(struct.pack("<B", _TAG_POOL))
                fh.write(struct.pack("<HH", layer.filter_size, layer.stride))
            else:
                fh.write(struct.pack("<B", _TAG_GMP))


def load_weights(path, dtype: str = "float64") -> NetworkState:
    """Load a weight file; validates the layer chain before accepting."""
    target = np.dtype(dtype)
    with open(path, "rb") as fh:
        if fh.read(8) != WEIGHT_MAGIC:
            raise ShapeError(f"{path}: not a weight file")
        version, input_size, input_channels, n_layers = struct.unpack("<HHHH", fh.read(8))
        if version != WEIGHT_VERSION:
            raise ShapeError(f"{path}: unsupported weight file version {version}")
        layers = []
        for _ in range(n_layers):
            (tag,) = struct.unpack("<B", fh.read(1))
            if tag == _TAG_CONV:
                out_ch, in_ch, k, stride, pad = struct.unpack("<HHHHH", fh.read(10))
                wbuf = fh.read(4 * out_ch * in_ch * k * k)
                bbuf = fh.read(4 * out_ch)
                if len(wbuf) != 4 * out_ch * in_ch * k * k or len(bbuf) != 4 * out_ch:
                    raise ShapeError(f"{path}: truncated conv payload")
                w = np.frombuffer(wbuf, dtype=np.float32).reshape(out_ch, in_ch, k, k)
                b = np.frombuffer(bbuf, dtype=np.float32)
                layers.append(
                    ConvLayerSpec(in_ch, out_ch, k, stride, pad, w.astype(target), b.astype(target))
                )
            elif tag == _TAG_RELU:
                layers.append(ReluSpec())
            elif tag == _TAG_POOL:
                size, stride = struct.unpack("<HH", fh.read(4))
                layers.append(PoolLayerSpec(size, stride))
            elif tag == _TAG_GMP:
                layers.append(GmpSpec())
            else:
                raise ShapeError(f"{path}: unknown layer tag {tag}")
    return NetworkState(tuple(layers), input_size, input_channels, seed=-1)
