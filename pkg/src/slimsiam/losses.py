"""Training objective: contrastive pair loss, L2 decay, group lasso.

The combined loss is

    L = L_data + lambda_r * l2(W) + lambda_gs * sum_m s_m * L_gs(W^m)

where L_data is the batch-mean contrastive loss, l2 is half the squared
L2 norm of all weights (biases excluded), L_gs sums the Euclidean norms
of a layer's groups, and s_m = 1/sqrt(|G(W^m)|) scales each layer by its
group count. A group is one conv filter (all weights producing one output
channel) or one fc neuron's incoming weight row; groups partition the
layer's weight tensor and never include biases.
"""

from dataclasses import dataclass

import numpy as np

from . import net as N
from .errors import DomainError

SUBGRAD_EPS = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    lambda_r: float = 0.0
    lambda_gs: float = 0.0
    eta: float = 1.0

    def __post_init__(self):
        if self.lambda_r < 0:
            raise DomainError(f"lambda_r must be >= 0: {self.lambda_r}")
        if self.lambda_gs < 0:
            raise DomainError(f"lambda_gs must be >= 0: {self.lambda_gs}")
        if self.eta <= 0:
            raise DomainError(f"eta must be > 0: {self.eta}")


def contrastive_pair_loss(D, y, eta):
    """Genuine pairs pay half squared distance, impostors the margin rest."""
    if D < 0:
        raise DomainError(f"distance must be >= 0: {D}")
    if y not in (0, 1):
        raise DomainError(f"pair label must be 0 or 1: {y}")
    if y == 1:
        return 0.5 * D * D
    return 0.5 * max(0.0, eta - D) ** 2


def contrastive_batch_loss(pairs, eta):
    """Arithmetic mean of per-pair losses over (D, y) tuples."""
    if not pairs:
        raise DomainError("empty batch")
    return sum(contrastive_pair_loss(D, y, eta) for D, y in pairs) / len(pairs)


def contrastive_grad_D(D, y, eta):
    """d(pair loss)/dD. Zero for impostors past the margin."""
    if D < 0:
        raise DomainError(f"distance must be >= 0: {D}")
    if y == 1:
        return D
    return -max(0.0, eta - D)


def layer_groups(layer):
    """Groups of a weighted layer as rows of a (n_groups, size) view."""
    return layer.weights.reshape(layer.weights.shape[0], -1)


def group_lasso(groups):
    """Sum of Euclidean norms over groups (rows of a matrix or a list)."""
    return float(sum(np.sqrt(np.sum(np.square(g))) for g in groups))


def group_lasso_subgrad(w, eps_g=SUBGRAD_EPS):
    """Subgradient of ||w||_2: w/||w|| away from 0, the zero vector at 0."""
    w = np.asarray(w, dtype=np.float64)
    n = np.sqrt(np.sum(np.square(w)))
    if n <= eps_g:
        return np.zeros_like(w)
    return w / n


def group_lasso_term(model):
    """sum_m (1/sqrt(|G_m|)) * group_lasso(layer m), over weighted layers."""
    total = 0.0
    for _, layer in model.weighted_layers():
        g = layer_groups(layer)
        total += group_lasso(g) / np.sqrt(g.shape[0])
    return total


def l2_term(model):
    """Half the squared L2 norm of all weights; biases excluded."""
    return 0.5 * sum(float(np.sum(np.square(l.weights)))
                     for _, l in model.weighted_layers())


def total_loss(model, batch, hp, return_parts=False):
    """Combined loss and its parameter gradients over one pair batch.

    Args:
        model: the shared-weight embedding network.
        batch: list of (cube1, cube2, y) with y = 1 genuine, 0 impostor.
        hp: Hyperparams.
        return_parts: also return a dict with the loss decomposition.

    Returns:
        (loss, grads) or (loss, grads, parts); grads is one
        (grad_w, grad_b) per weighted layer, pairs accumulated in batch
        order, regularizers added once per batch.
    """
    if not batch:
        raise DomainError("empty batch")
    n = len(batch)
    grads = N.zero_grads(model)
    data_loss = 0.0
    for x1, x2, y in batch:
        e1, e2, c1, c2 = N.forward_pair(model, x1, x2, with_cache=True)
        D = N.distance(e1, e2)
        data_loss += contrastive_pair_loss(D, y, hp.eta)
        dC = contrastive_grad_D(D, y, hp.eta) / n
        if D > 0.0 and dC != 0.0:
            ge1 = (dC / D) * (e1 - e2)
        else:
            # At D = 0 the distance is not differentiable; the zero
            # vector is a valid subgradient for both labels.
            ge1 = np.zeros_like(e1)
        pair_grads = N.backward(model, (c1, c2), ge1, -ge1)
        for k, (gw, gb) in enumerate(pair_grads):
            grads[k] = (grads[k][0] + gw, grads[k][1] + gb)
    data_loss /= n

    gs_term = 0.0
    for k, (_, layer) in enumerate(model.weighted_layers()):
        g = layer_groups(layer)
        scale = 1.0 / np.sqrt(g.shape[0])
        gs_term += scale * group_lasso(g)
        gw = grads[k][0]
        if hp.lambda_r > 0.0:
            gw = gw + hp.lambda_r * layer.weights
        if hp.lambda_gs > 0.0:
            sub = np.vstack([group_lasso_subgrad(row) for row in g])
            gw = gw + (hp.lambda_gs * scale) * sub.reshape(layer.weights.shape)
        grads[k] = (gw, grads[k][1])

    l2 = l2_term(model)
    loss = data_loss + hp.lambda_r * l2 + hp.lambda_gs * gs_term
    if not np.isfinite(loss):
        raise DomainError(f"non-finite loss: {loss}")
    if return_parts:
        parts = {"data": data_loss, "l2": l2, "group_lasso": gs_term}
        return loss, grads, parts
    return loss, grads
