"""VGG-style embedding network with Siamese (weight-shared) application.

The topology is a fixed family: a stack of 3x3 stride-1 pad-1 conv blocks
(conv, relu, pool) where every block but the last ends in a 2x2 average
pool and the last in a global average pool, followed by one fully
connected layer mapping onto the 64-dimensional embedding. Widths are
configurable; the embedding dimension is not.

A Siamese pair forward never copies parameters: both towers read the same
tensors, and the pair backward sums both towers' contributions into one
gradient set.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops as T
from .errors import CheckpointError, ConfigError, ShapeError, VersionError

EMBED_DIM = 64
IN_CHANNELS = 3
SSVW_MAGIC = b"SSVW"
SSVW_VERSION = 1

CONV, RELU, AVGPOOL2, GLOBAL_AVGPOOL, FC = (
    "conv", "relu", "avgpool2", "global_avgpool", "fc")


@dataclass
class Layer:
    """One network layer; weights/bias are None for parameter-free kinds."""
    kind: str
    weights: np.ndarray = None
    bias: np.ndarray = None


@dataclass
class Model:
    layers: list = field(default_factory=list)
    embedding_dim: int = EMBED_DIM

    def weighted_layers(self):
        """(model index, Layer) for conv/fc layers, in network order."""
        return [(i, l) for i, l in enumerate(self.layers)
                if l.kind in (CONV, FC)]

    def clone(self):
        m = Model(embedding_dim=self.embedding_dim)
        for l in self.layers:
            m.layers.append(Layer(
                l.kind,
                None if l.weights is None else l.weights.copy(),
                None if l.bias is None else l.bias.copy()))
        return m


def build_model(widths=(16, 32, 64), seed=0, embed_dim=EMBED_DIM):
    """Construct and He-initialize the default topology.

    Args:
        widths: output channels of each conv block, at least one.
        seed: initialization seed; same seed gives identical parameters.
        embed_dim: must be 64, the embedding contract.

    Raises:
        ConfigError: empty widths, non-positive width, or embed_dim != 64.
    """
    if embed_dim != EMBED_DIM:
        raise ConfigError(f"model.embed_dim: must be {EMBED_DIM}, "
                          f"got {embed_dim}")
    widths = list(widths)
    if not widths:
        raise ConfigError("model.widths: need at least one conv width")
    if any(int(w) != w or w < 1 for w in widths):
        raise ConfigError(f"model.widths: positive integers required: "
                          f"{widths}")
    model = Model()
    in_ch = IN_CHANNELS
    for bi, out_ch in enumerate(widths):
        fan_in = in_ch * 9
        w = T.he_init((out_ch, in_ch, 3, 3), fan_in,
                      np.random.SeedSequence((seed, bi)))
        model.layers.append(Layer(CONV, w, np.zeros(out_ch)))
        model.layers.append(Layer(RELU))
        last = bi == len(widths) - 1
        model.layers.append(Layer(GLOBAL_AVGPOOL if last else AVGPOOL2))
        in_ch = out_ch
    w = T.he_init((embed_dim, in_ch), in_ch,
                  np.random.SeedSequence((seed, len(widths))))
    model.layers.append(Layer(FC, w, np.zeros(embed_dim)))
    return model


def forward(model, x, with_cache=False):
    """Embed one input cube; optionally keep activations for backward."""
    h = np.asarray(x, dtype=np.float64)
    cache = []
    for layer in model.layers:
        if layer.kind == CONV:
            cache.append(h)
            h = T.conv2d_forward(h, layer.weights, layer.bias,
                                 stride=1, pad=1)
        elif layer.kind == RELU:
            cache.append(h)
            h = T.relu_forward(h)
        elif layer.kind == AVGPOOL2:
            cache.append(h.shape)
            h = T.avg_pool2_forward(h)
        elif layer.kind == GLOBAL_AVGPOOL:
            cache.append(h.shape)
            h = T.global_avg_pool_forward(h)
        elif layer.kind == FC:
            cache.append(h)
            h = T.fc_forward(h, layer.weights, layer.bias)
        else:
            raise ShapeError(f"unknown layer kind {layer.kind!r}")
    if h.shape != (model.embedding_dim,):
        raise ShapeError(f"embedding shape {h.shape}, expected "
                         f"({model.embedding_dim},)")
    return (h, cache) if with_cache else h


def forward_pair(model, x1, x2, with_cache=False):
    """Both towers of the Siamese pair, sharing one parameter set."""
    e1, c1 = forward(model, x1, with_cache=True)
    e2, c2 = forward(model, x2, with_cache=True)
    return (e1, e2, c1, c2) if with_cache else (e1, e2)


def distance(e1, e2):
    """Euclidean distance between two embeddings."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ShapeError(f"embedding shapes differ: {e1.shape} {e2.shape}")
    return float(np.sqrt(np.sum((e1 - e2) ** 2)))


def zero_grads(model):
    """ParamGrads of all zeros, one (grad_w, grad_b) per weighted layer."""
    return [(np.zeros_like(l.weights), np.zeros_like(l.bias))
            for _, l in model.weighted_layers()]


def _backward_tower(model, cache, grad_emb, grads):
    """Accumulate one tower's parameter gradients into grads (in place)."""
    g = np.asarray(grad_emb, dtype=np.float64)
    wi = len(grads) - 1
    first_conv = min(i for i, _ in model.weighted_layers())
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        saved = cache[li]
        if layer.kind == FC:
            gi, gw, gb = T.fc_backward(g, saved, layer.weights)
            grads[wi] = (grads[wi][0] + gw, grads[wi][1] + gb)
            wi -= 1
            g = gi
        elif layer.kind == CONV:
            gi, gw, gb = T.conv2d_backward(
                g, saved, layer.weights, stride=1, pad=1,
                need_input_grad=(li != first_conv))
            grads[wi] = (grads[wi][0] + gw, grads[wi][1] + gb)
            wi -= 1
            g = gi
        elif layer.kind == RELU:
            g = T.relu_backward(g, saved)
        elif layer.kind == AVGPOOL2:
            g = T.avg_pool2_backward(g, saved)
        elif layer.kind == GLOBAL_AVGPOOL:
            g = T.global_avg_pool_backward(g, saved)
    return grads


def backward(model, caches, grad_e1, grad_e2):
    """Parameter gradients of a pair forward, summed over both towers.

    Args:
        caches: (cache1, cache2) from forward_pair(..., with_cache=True).
        grad_e1, grad_e2: upstream gradients on the two embeddings.

    Returns:
        list of (grad_w, grad_b), one entry per weighted layer.
    """
    c1, c2 = caches
    grads = zero_grads(model)
    _backward_tower(model, c1, grad_e1, grads)
    _backward_tower(model, c2, grad_e2, grads)
    return grads


def save_checkpoint(model, path):
    """Write all parameter tensors: SSVW magic, version, shapes, f64 data."""
    weighted = model.weighted_layers()
    with open(path, "wb") as f:
        f.write(SSVW_MAGIC)
        f.write(struct.pack("<II", SSVW_VERSION, len(weighted)))
        for _, layer in weighted:
            shape = layer.weights.shape
            f.write(struct.pack("<I", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
            f.write(np.ascontiguousarray(layer.weights,
                                         dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild a Model from save_checkpoint output.

    The layer interleaving (relu and pooling between conv blocks, global
    pool before the fc) is reconstructed from the rank pattern: rank-4
    tensors are conv blocks, rank-2 tensors fc layers.

    Raises:
        CheckpointError: bad magic, truncation, or a rank pattern outside
            the supported topology family.
        VersionError: version field mismatch.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != SSVW_MAGIC:
        raise CheckpointError(f"{path}: missing SSVW magic")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != SSVW_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, "
                           f"expected {SSVW_VERSION}")
    off = 12
    params = []
    for k in range(n_layers):
        try:
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            if rank not in (2, 4):
                raise CheckpointError(
                    f"{path}: layer {k} has rank {rank}, expected 2 or 4")
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n_w = int(np.prod(shape))
            w = np.frombuffer(blob, dtype="<f8", offset=off,
                              count=n_w).reshape(shape).copy()
            if w.size != n_w:
                raise CheckpointError(f"{path}: truncated weights")
            off += 8 * n_w
            b = np.frombuffer(blob, dtype="<f8", offset=off,
                              count=shape[0]).copy()
            if b.size != shape[0]:
                raise CheckpointError(f"{path}: truncated bias")
            off += 8 * shape[0]
        except (struct.error, ValueError) as e:
            raise CheckpointError(f"{path}: truncated checkpoint") from e
        params.append((w, b))
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")

    convs = [p for p in params if p[0].ndim == 4]
    fcs = [p for p in params if p[0].ndim == 2]
    if not convs or not fcs:
        raise CheckpointError(f"{path}: need conv and fc layers")
    if [p[0].ndim for p in params] != [4] * len(convs) + [2] * len(fcs):
        raise CheckpointError(f"{path}: unsupported layer order")

    model = Model()
    for bi, (w, b) in enumerate(convs):
        model.layers.append(Layer(CONV, w, b))
        model.layers.append(Layer(RELU))
        last = bi == len(convs) - 1
        model.layers.append(Layer(GLOBAL_AVGPOOL if last else AVGPOOL2))
    for w, b in fcs:
        model.layers.append(Layer(FC, w, b))

    prev_out = None
    for _, layer in model.weighted_layers():
        n_in = layer.weights.shape[1]
        if prev_out is not None and n_in != prev_out:
            raise CheckpointError(
                f"{path}: layer shapes do not compose "
                f"({prev_out} -> {n_in})")
        prev_out = layer.weights.shape[0]
    if prev_out != EMBED_DIM:
        raise CheckpointError(
            f"{path}: final layer outputs {prev_out}, expected {EMBED_DIM}")
    return model
