"""One graph-convolutional autoencoder block and its training machinery.

Encoder: graph conv + tanh, then a tied fully-connected layer to the latent
code (linear, so the scale-control regularizer on latents has teeth).
Decoder mirrors it: tied FC transpose, tanh, graph conv, tanh. The loss is
weighted reconstruction + geodesically gated group sparsity on the tied
matrix + a hinge keeping latent magnitudes near a target scale. Gradients
are analytic; the optimizer is ADAM with exponential learning-rate decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Adjacency

MU = 9

CONV_INIT_SCALE = 0.05
FC_INIT_SCALE = 0.01
L21_EPS = 0.0  # subgradient at a zero group is defined as zero


@dataclass
class GraphConvParams:
    w_point: np.ndarray     # (mu, mu)
    w_neighbor: np.ndarray  # (mu, mu)
    b: np.ndarray           # (mu,)


@dataclass
class TiedFCParams:
    c: np.ndarray  # (k_z, mu * V), shared by encoder and decoder


@dataclass
class AEBlockParams:
    conv_enc: GraphConvParams
    fc: TiedFCParams
    conv_dec: GraphConvParams
    k_z: int
    d: float                 # locality radius in normalized geodesic units
    centers: np.ndarray      # (k_z,) component center vertices
    mask: np.ndarray         # (k_z, V) binary sparsity gate

    @property
    def vertex_count(self) -> int:
        return self.fc.c.shape[1] // MU

    def c_rows(self) -> np.ndarray:
        """Tied matrix reshaped to (k_z, V, mu); row k is component k."""
        return self.fc.c.reshape(self.k_z, self.vertex_count, MU)

    def tensors(self, prefix: str = "") -> dict:
        return {
            f"{prefix}w_point_enc": self.conv_enc.w_point,
            f"{prefix}w_neighbor_enc": self.conv_enc.w_neighbor,
            f"{prefix}b_enc": self.conv_enc.b,
            f"{prefix}c": self.fc.c,
            f"{prefix}w_point_dec": self.conv_dec.w_point,
            f"{prefix}w_neighbor_dec": self.conv_dec.w_neighbor,
            f"{prefix}b_dec": self.conv_dec.b,
        }


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.95
    decay_steps: int = 1000
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        return self.lr * self.decay ** (self.step / self.decay_steps)


def init_ae_block(rng: np.random.Generator, k_z: int, vertex_count: int, d: float) -> AEBlockParams:
    """Small uniform weights keep tanh in its linear regime early on."""
    def conv():
        return GraphConvParams(
            w_point=rng.uniform(-CONV_INIT_SCALE, CONV_INIT_SCALE, size=(MU, MU)),
            w_neighbor=rng.uniform(-CONV_INIT_SCALE, CONV_INIT_SCALE, size=(MU, MU)),
            b=np.zeros(MU),
        )

    c = rng.uniform(-FC_INIT_SCALE, FC_INIT_SCALE, size=(k_z, MU * vertex_count))
    return AEBlockParams(
        conv_enc=conv(),
        fc=TiedFCParams(c=c),
        conv_dec=conv(),
        k_z=k_z,
        d=d,
        centers=np.zeros(k_z, dtype=np.int64),
        mask=np.ones((k_z, vertex_count)),
    )


def transpose_mean(mean):
    """Transpose of the averaging matrix, sparse or dense."""
    return mean.T.tocsr() if hasattr(mean, "tocsr") else np.ascontiguousarray(mean.T)


def apply_mean(mean, x: np.ndarray) -> np.ndarray:
    """Neighbor averaging along the vertex axis of (..., V, mu) arrays;
    mean may be scipy sparse or a dense ndarray."""
    if x.ndim == 2:
        return mean @ x
    lead = x.shape[:-2]
    v, mu = x.shape[-2:]
    flat = x.reshape(-1, v, mu).transpose(1, 0, 2).reshape(v, -1)
    out = mean @ flat
    return out.reshape(v, -1, mu).transpose(1, 0, 2).reshape(*lead, v, mu)


def graph_conv(params: GraphConvParams, x: np.ndarray, adj: Adjacency) -> np.ndarray:
    """Pre-activation output of the per-vertex linear combination: the vertex
    itself, the mean of its 1-ring, and a bias. Callers apply tanh."""
    mean = adj.mean_matrix()
    return x @ params.w_point.T + apply_mean(mean, x) @ params.w_neighbor.T + params.b


def ae_forward(params: AEBlockParams, x: np.ndarray, adj: Adjacency):
    """Single-shape forward pass: returns (latent z, reconstruction)."""
    cache = forward_block(params, x[None, :, :], adj.mean_matrix())
    return cache["z"][0], cache["xh"][0]


def forward_block(params: AEBlockParams, x: np.ndarray, mean: sp.csr_matrix) -> dict:
    """Batched forward pass keeping every intermediate for the backward pass.

    x has shape (B, V, mu); the latent layer is linear, everything else tanh.
    """
    b, v, mu = x.shape
    xm = apply_mean(mean, x)
    a = x @ params.conv_enc.w_point.T + xm @ params.conv_enc.w_neighbor.T + params.conv_enc.b
    h = np.tanh(a)
    z = h.reshape(b, v * mu) @ params.fc.c.T
    g = (z @ params.fc.c).reshape(b, v, mu)
    u = np.tanh(g)
    um = apply_mean(mean, u)
    bc = u @ params.conv_dec.w_point.T + um @ params.conv_dec.w_neighbor.T + params.conv_dec.b
    xh = np.tanh(bc)
    return {"x": x, "xm": xm, "h": h, "z": z, "u": u, "um": um, "xh": xh, "mean": mean}


def group_norms(params: AEBlockParams) -> np.ndarray:
    """Per-(component, vertex) Euclidean norms of the tied matrix rows."""
    return np.linalg.norm(params.c_rows(), axis=2)


def loss_ae(params: AEBlockParams, x: np.ndarray, xh: np.ndarray, z: np.ndarray,
            lambda1: float, lambda2: float, theta: float):
    """Total loss and its raw parts for a batch.

    recon averages squared Frobenius error over the batch; sparsity is the
    masked group-l21 norm of the tied matrix scaled by 1/k_z; nontrivial is
    the per-latent hinge on the batch maximum |z| above theta.
    """
    if x.ndim == 2:
        x, xh, z = x[None], xh[None], z[None]
    b = x.shape[0]
    recon = float(np.sum((x - xh) ** 2) / b)
    norms = group_norms(params)
    sparsity = float(np.sum(params.mask * norms) / params.k_z)
    peak = np.abs(z).max(axis=0)
    nontrivial = float(np.maximum(peak - theta, 0.0).sum() / params.k_z)
    total = lambda1 * recon + lambda2 * sparsity + nontrivial
    return total, {"recon": recon, "sparsity": sparsity, "nontrivial": nontrivial}


def _nontrivial_z_grad(z: np.ndarray, theta: float, k_z: int) -> np.ndarray:
    """Subgradient of the latent hinge; ties resolve to the first batch row."""
    dz = np.zeros_like(z)
    peak_idx = np.abs(z).argmax(axis=0)
    cols = np.arange(z.shape[1])
    peak_vals = z[peak_idx, cols]
    active = np.abs(peak_vals) > theta
    dz[peak_idx[active], cols[active]] = np.sign(peak_vals[active]) / k_z
    return dz


def sparsity_c_grad(params: AEBlockParams, lambda2: float) -> np.ndarray:
    """d(lambda2 * Omega)/dC; zero groups contribute a zero subgradient."""
    rows = params.c_rows()
    norms = np.linalg.norm(rows, axis=2)
    safe = np.where(norms > 0, norms, 1.0)
    grad = (lambda2 / params.k_z) * params.mask[:, :, None] * rows / safe[:, :, None]
    grad[norms == 0] = 0.0
    return grad.reshape(params.fc.c.shape)


def backward_block(params: AEBlockParams, cache: dict,
                   lambda1: float, lambda2: float, theta: float,
                   dxh_extra: np.ndarray | None = None,
                   include_regularizers: bool = True):
    """Analytic gradients of the block loss for the cached batch.

    dxh_extra is an optional upstream gradient w.r.t. the reconstruction
    (used by the stacked model where residuals feed later blocks). Returns
    (grads dict, dL/dx) so callers can keep backpropagating.
    """
    x, xm, h, z, u, um, xh, mean = (
        cache["x"], cache["xm"], cache["h"], cache["z"], cache["u"], cache["um"],
        cache["xh"], cache["mean"],
    )
    b, v, mu = x.shape
    dxh = -(2.0 * lambda1 / b) * (x - xh)
    if dxh_extra is not None:
        dxh = dxh + dxh_extra
    dbc = dxh * (1.0 - xh ** 2)
    g_wpd = np.einsum("bvj,bvi->ji", dbc, u)
    g_wnd = np.einsum("bvj,bvi->ji", dbc, um)
    g_bd = dbc.sum(axis=(0, 1))
    mean_t = transpose_mean(mean)
    du = dbc @ params.conv_dec.w_point + apply_mean(mean_t, dbc @ params.conv_dec.w_neighbor)
    dg = du * (1.0 - u ** 2)
    dg_flat = dg.reshape(b, v * mu)
    dz = dg_flat @ params.fc.c.T
    g_c = z.T @ dg_flat
    if include_regularizers:
        dz = dz + _nontrivial_z_grad(z, theta, params.k_z)
    dh_flat = dz @ params.fc.c
    g_c = g_c + dz.T @ h.reshape(b, v * mu)
    dh = dh_flat.reshape(b, v, mu)
    da = dh * (1.0 - h ** 2)
    g_wpe = np.einsum("bvj,bvi->ji", da, x)
    g_wne = np.einsum("bvj,bvi->ji", da, xm)
    g_be = da.sum(axis=(0, 1))
    dx = da @ params.conv_enc.w_point + apply_mean(mean_t, da @ params.conv_enc.w_neighbor)
    # reconstruction target term: d/dx of lambda1/b * ||x - xh||^2
    dx = dx + (2.0 * lambda1 / b) * (x - xh)
    if include_regularizers:
        g_c = g_c + sparsity_c_grad(params, lambda2)
    grads = {
        "w_point_enc": g_wpe,
        "w_neighbor_enc": g_wne,
        "b_enc": g_be,
        "c": g_c,
        "w_point_dec": g_wpd,
        "w_neighbor_dec": g_wnd,
        "b_dec": g_bd,
    }
    return grads, dx


def backward(params: AEBlockParams, batch: np.ndarray, adj: Adjacency,
             lambda1: float, lambda2: float, theta: float) -> dict:
    """Gradients of the standalone block loss w.r.t. every parameter tensor."""
    x = batch if batch.ndim == 3 else batch[None]
    cache = forward_block(params, x, adj.mean_matrix())
    grads, _ = backward_block(params, cache, lambda1, lambda2, theta)
    return grads


def update_sparsity_mask(params: AEBlockParams, geo) -> AEBlockParams:
    """Recenter each component at its strongest vertex and rebuild the gate.

    geo maps a source vertex to its normalized distance field. The gate is 0
    (exempt from the sparsity penalty) strictly inside radius d and 1 at
    distances >= d.
    """
    norms = group_norms(params)
    centers = norms.argmax(axis=1).astype(np.int64)
    v = params.vertex_count
    mask = np.ones((params.k_z, v))
    for k, ck in enumerate(centers):
        mask[k] = (geo(int(ck)) >= params.d).astype(float)
    return AEBlockParams(
        conv_enc=params.conv_enc,
        fc=params.fc,
        conv_dec=params.conv_dec,
        k_z=params.k_z,
        d=params.d,
        centers=centers,
        mask=mask,
    )


def adam_step(state: AdamState, params: dict, grads: dict):
    """Standard bias-corrected ADAM over named tensors, in place.

    The learning rate decays exponentially with the (fractional) step count.
    Tensors present in params but absent from grads are left untouched.
    """
    state.step += 1
    lr = state.current_lr()
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
        v = state.v.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.v[name] = v
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** state.step)
        v_hat = v / (1.0 - b2 ** state.step)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
