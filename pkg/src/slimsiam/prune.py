"""Group-norm analysis, threshold pruning, compaction, and benchmarking.

Pruning is two-phase. apply_mask zeroes dropped groups in place, keeping
shapes; compact physically removes them, shrinking each layer's output
side and rewiring the next weighted layer's input side. The two must be
forward-equivalent; that equivalence is the module's core theorem and is
what makes the measured speedups honest.

The final weighted layer produces the 64-dim embedding and must never be
compacted away; compact refuses masks that drop any of its groups.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import net as N
from . import tensor_ops as T
from .errors import BenchError, ContractError, DomainError, ShapeError
from .losses import layer_groups


@dataclass
class GroupNormReport:
    """Per weighted layer, the Euclidean norm of each group's weights."""
    norms: list = field(default_factory=list)


@dataclass
class PruneMask:
    """Per weighted layer, a boolean keep flag per group."""
    keep: list = field(default_factory=list)
    tau: float = 0.0


@dataclass
class CompactionMap:
    """Kept output indices and the input remapping, per weighted layer."""
    kept_outputs: list = field(default_factory=list)
    kept_inputs: list = field(default_factory=list)


@dataclass
class SparsityStats:
    per_layer: list
    total: float


def group_norms(model):
    """Euclidean norm of every group; biases excluded."""
    report = GroupNormReport()
    for _, layer in model.weighted_layers():
        g = layer_groups(layer)
        report.norms.append(np.sqrt(np.sum(np.square(g), axis=1)))
    return report


def prune_mask(report, tau):
    """Keep groups with norm >= tau; never empty a layer entirely.

    A layer whose every group falls below tau keeps its single
    largest-norm group (ties resolve to the lowest index).
    """
    if tau < 0:
        raise DomainError(f"tau must be >= 0: {tau}")
    mask = PruneMask(tau=tau)
    for norms in report.norms:
        keep = norms >= tau
        if not keep.any():
            keep = np.zeros(norms.size, dtype=bool)
            keep[int(np.argmax(norms))] = True
        mask.keep.append(keep)
    return mask


def with_embedding_kept(mask):
    """Copy of mask with the final (embedding) layer fully kept."""
    out = PruneMask(keep=[k.copy() for k in mask.keep], tau=mask.tau)
    out.keep[-1][:] = True
    return out


def _check_mask(model, mask):
    weighted = model.weighted_layers()
    if len(mask.keep) != len(weighted):
        raise ShapeError(
            f"mask covers {len(mask.keep)} layers, model has "
            f"{len(weighted)} weighted layers")
    for k, ((_, layer), keep) in enumerate(zip(weighted, mask.keep)):
        if keep.shape != (layer.weights.shape[0],):
            raise ShapeError(f"mask layer {k}: {keep.shape} flags for "
                             f"{layer.weights.shape[0]} groups")
        if not keep.any():
            raise ContractError(f"mask layer {k} keeps no group")


def apply_mask(model, mask):
    """Zero the weights and bias of every dropped group; shapes unchanged."""
    _check_mask(model, mask)
    out = model.clone()
    for (_, layer), keep in zip(out.weighted_layers(), mask.keep):
        dropped = ~keep
        layer.weights[dropped] = 0.0
        layer.bias[dropped] = 0.0
    return out


def compact(model, mask):
    """Physically remove dropped groups and rewire downstream inputs.

    Kept output channels of each layer become, through the channel-wise
    relu/pool layers (and 1:1 through the global average pool), the kept
    input indices of the next weighted layer.

    Returns:
        (compacted model, CompactionMap).

    Raises:
        ContractError: the mask drops groups of the embedding layer.
    """
    _check_mask(model, mask)
    if not mask.keep[-1].all():
        raise ContractError("embedding layer groups cannot be pruned")
    out = N.Model(embedding_dim=model.embedding_dim)
    cmap = CompactionMap()
    weighted_at = {i for i, _ in model.weighted_layers()}
    k = 0
    kept_in = None          # None: network input channels, never pruned
    for i, layer in enumerate(model.layers):
        if i not in weighted_at:
            out.layers.append(N.Layer(layer.kind))
            continue
        keep = mask.keep[k]
        kept_out = np.flatnonzero(keep)
        w = layer.weights
        if kept_in is not None:
            w = w[:, kept_in]
            cmap.kept_inputs.append([int(c) for c in kept_in])
        else:
            cmap.kept_inputs.append(list(range(w.shape[1])))
        w = w[kept_out]
        out.layers.append(N.Layer(layer.kind, w.copy(),
                                  layer.bias[kept_out].copy()))
        cmap.kept_outputs.append([int(c) for c in kept_out])
        kept_in = kept_out
        k += 1
    return out, cmap


def sparsity_stats(model, tau):
    """Fraction of groups with norm < tau, per layer and overall."""
    if tau < 0:
        raise DomainError(f"tau must be >= 0: {tau}")
    report = group_norms(model)
    per_layer = [float(np.mean(n < tau)) for n in report.norms]
    n_small = sum(int(np.sum(n < tau)) for n in report.norms)
    n_total = sum(n.size for n in report.norms)
    return SparsityStats(per_layer, n_small / n_total)


def _layer_forward(layer, x):
    if layer.kind == N.CONV:
        return T.conv2d_forward(x, layer.weights, layer.bias,
                                stride=1, pad=1)
    if layer.kind == N.FC:
        return T.fc_forward(x, layer.weights, layer.bias)
    raise ShapeError(f"bench supports conv/fc layers, not {layer.kind!r}")


def bench_layer(layer, input_shape, repeats=50, seed=0):
    """Median single-thread wall time (ns) of one layer forward.

    Five warmup runs precede the measured repeats; the input is a fixed
    seeded tensor so every call times identical work.

    Raises:
        DomainError: repeats < 20 gives a meaningless median.
        BenchError: the timer resolved the median to zero.
    """
    if repeats < 20:
        raise DomainError(f"repeats must be >= 20: {repeats}")
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.normal(size=input_shape)
    times = np.empty(repeats)
    with threadpool_limits(limits=1):
        for _ in range(5):
            _layer_forward(layer, x)
        for r in range(repeats):
            t0 = time.perf_counter_ns()
            _layer_forward(layer, x)
            times[r] = time.perf_counter_ns() - t0
    median = float(np.median(times))
    if median <= 0:
        raise BenchError("timer resolution too coarse: zero median")
    return median


def _weighted_input_shapes(model):
    """Input shape seen by each weighted layer for the standard cube."""
    shapes = []
    h = (N.IN_CHANNELS, 256, 100)
    for layer in model.layers:
        if layer.kind == N.CONV:
            shapes.append(h)
            h = (layer.weights.shape[0], h[1], h[2])
        elif layer.kind == N.AVGPOOL2:
            h = (h[0], (h[1] + 1) // 2, (h[2] + 1) // 2)
        elif layer.kind == N.GLOBAL_AVGPOOL:
            h = (h[0],)
        elif layer.kind == N.FC:
            shapes.append(h)
            h = (layer.weights.shape[0],)
    return shapes


def bench_models(dense, compacted, repeats=50, seed=0):
    """Per-layer dense vs compacted timings for two checkpoints.

    Returns rows of (layer index, dense_ns, compact_ns, speedup).
    """
    dw = dense.weighted_layers()
    cw = compacted.weighted_layers()
    if len(dw) != len(cw):
        raise ShapeError("models have different weighted layer counts")
    rows = []
    d_shapes = _weighted_input_shapes(dense)
    c_shapes = _weighted_input_shapes(compacted)
    for k, ((_, dl), (_, cl)) in enumerate(zip(dw, cw)):
        d_ns = bench_layer(dl, d_shapes[k], repeats, seed)
        c_ns = bench_layer(cl, c_shapes[k], repeats, seed)
        rows.append((k, d_ns, c_ns, d_ns / c_ns))
    return rows


def group_norms_csv(report):
    lines = ["layer,group,norm"]
    for li, norms in enumerate(report.norms):
        for gi, v in enumerate(norms):
            lines.append(f"{li},{gi},{v:.17g}")
    return "\n".join(lines) + "\n"


def bench_csv(rows):
    lines = ["layer,dense_ns,compact_ns,speedup"]
    for layer, d_ns, c_ns, speedup in rows:
        lines.append(f"{layer},{d_ns:.0f},{c_ns:.0f},{speedup:.17g}")
    return "\n".join(lines) + "\n"
