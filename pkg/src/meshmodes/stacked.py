"""Two-level stacked autoencoders with attention-routed residuals.

The first block reconstructs the whole feature; soft per-vertex attention
masks derived from its tied matrix split the reconstruction residual among
one second-level block per first-level latent dimension. Everything trains
jointly against the summed block losses by default; switches exist to force
uniform attention or to stop gradients at the residual for ablations.
After training, activating single latent dimensions yields the deformation
components; weak ones are pruned by a mean-active-norm strength score.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .acap import MU, FeatureScaler
from .mesh import Adjacency, TriangleMesh
from .network import (
    AdamState,
    AEBlockParams,
    GraphConvParams,
    TiedFCParams,
    adam_step,
    apply_mean,
    backward_block,
    forward_block,
    init_ae_block,
    loss_ae,
    update_sparsity_mask,
)

MODEL_MAGIC = b"MDCA1"
MODEL_VERSION = 1

LOG_COLUMNS = (
    "step", "recon0", "sparsity0", "nontrivial0",
    "recon_second", "sparsity_second", "nontrivial_second", "total",
)


class TrainingError(Exception):
    """Training aborted; carries the offending step and last finite losses."""

    def __init__(self, message, step=None, last_parts=None):
        super().__init__(message)
        self.step = step
        self.last_parts = last_parts


class ModelFormatError(Exception):
    """Checkpoint file is malformed, corrupted, or from a newer version."""


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 10.0
    lambda2: float = 1.0
    theta: float = 5.0
    d1: float = 0.4
    d2: float = 0.2
    k_z0: int = 10
    k_z1: int = 5
    learning_rate: float = 1e-3
    decay: float = 0.95
    decay_steps: int = 1000
    batch_size: int = 256
    epochs: int = 3000
    eps1: float = 1e-6
    eps2: float = 1e-2
    stop_gradient_through_residual: bool = False
    use_attention: bool = True
    levels: int = 2
    center_update_every: int = 1
    train_decoder_bias: bool = False
    probe_magnitude1: float = 5.0
    probe_magnitude2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.levels not in (1, 2):
            raise ValueError("levels must be 1 or 2")
        if self.levels == 2 and not self.d1 > self.d2:
            raise ValueError("multiscale training requires d1 > d2")
        for name in ("eps1", "eps2", "theta", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.center_update_every < 1:
            raise ValueError("batch_size, epochs, center_update_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class AttentionMasks:
    am: np.ndarray  # (K, V), columns sum to 1


@dataclass
class StackedParams:
    ae0: AEBlockParams
    second: list
    scaler: FeatureScaler
    config: TrainConfig
    reference: TriangleMesh

    @property
    def vertex_count(self) -> int:
        return self.ae0.vertex_count

    @property
    def k(self) -> int:
        return len(self.second)


@dataclass(frozen=True)
class Component:
    level: int
    parent: int | None
    index: int
    magnitude: float
    feature: np.ndarray  # (V, mu) unscaled deformation delta
    strength: float
    kept: bool
    center: int


@dataclass(frozen=True)
class ComponentSet:
    components: tuple

    def kept(self):
        return [c for c in self.components if c.kept]

    def level(self, level):
        return [c for c in self.components if c.level == level]


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def append(self, step, parts0, parts2, total):
        self.rows.append((
            step,
            parts0["recon"], parts0["sparsity"], parts0["nontrivial"],
            parts2["recon"], parts2["sparsity"], parts2["nontrivial"],
            total,
        ))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def extract_attention(ae0: AEBlockParams) -> AttentionMasks:
    """Soft routing masks from the first block's tied matrix.

    Raw mass of component k at vertex i is the squared norm of that row
    chunk; columns are normalized to sum to one, with an all-zero column
    falling back to uniform 1/K so residual conservation survives.
    """
    rows = ae0.c_rows()
    raw = np.sum(rows ** 2, axis=2)
    return AttentionMasks(am=_normalize_attention(raw))


def _normalize_attention(raw: np.ndarray) -> np.ndarray:
    den = raw.sum(axis=0)
    k = raw.shape[0]
    out = np.where(den > 0, raw / np.where(den > 0, den, 1.0), 1.0 / k)
    return out


def route_residuals(x: np.ndarray, xhat0: np.ndarray, masks: AttentionMasks) -> np.ndarray:
    """Split the residual x - xhat0 into K per-block inputs that sum back to it."""
    xr = x - xhat0
    return masks.am[:, :, None] * xr[None, :, :]


def component_strength(x_diff: np.ndarray, eps1: float) -> float:
    """Mean per-vertex feature norm over vertices whose norm exceeds eps1;
    zero when nothing does (an identically quiet component prunes itself)."""
    norms = np.linalg.norm(x_diff, axis=1)
    active = norms > eps1
    if not active.any():
        return 0.0
    return float(norms[active].mean())


class _Workspace:
    """View of all parameters with the second level stacked along a leading
    K axis so the whole level computes in single einsums.

    With bind=True the per-block tensors are rebound to views into the
    stacked arrays: in-place optimizer updates stay visible through the
    blocks (mask recentering reads live weights) and nothing needs copying
    back after training. Inference paths use bind=False so a read-only
    forward never mutates the model.
    """

    def __init__(self, ae0: AEBlockParams, second: list, mean, bind: bool = False):
        # mean may be scipy sparse or a dense ndarray (tiny meshes are faster
        # dense; the gradient-check harness exploits that)
        self.mean = mean
        self.mean_t = mean.T.tocsr() if hasattr(mean, "tocsr") else np.ascontiguousarray(mean.T)
        self.ae0 = ae0
        self.k = len(second)
        self.wpe0 = ae0.conv_enc.w_point
        self.wne0 = ae0.conv_enc.w_neighbor
        self.be0 = ae0.conv_enc.b
        self.c0 = ae0.fc.c
        self.wpd0 = ae0.conv_dec.w_point
        self.wnd0 = ae0.conv_dec.w_neighbor
        self.bd0 = ae0.conv_dec.b
        if self.k:
            self.k1 = second[0].k_z
            self.wpe2 = np.stack([s.conv_enc.w_point for s in second])
            self.wne2 = np.stack([s.conv_enc.w_neighbor for s in second])
            self.be2 = np.stack([s.conv_enc.b for s in second])
            self.c2 = np.stack([s.fc.c for s in second])
            self.wpd2 = np.stack([s.conv_dec.w_point for s in second])
            self.wnd2 = np.stack([s.conv_dec.w_neighbor for s in second])
            self.bd2 = np.stack([s.conv_dec.b for s in second])
            self.mask2 = np.stack([s.mask for s in second])
            # transposed views for the batched matmuls; they alias the
            # stacked arrays so in-place optimizer updates stay visible
            self.wpe2_t = self.wpe2.transpose(0, 2, 1)
            self.wne2_t = self.wne2.transpose(0, 2, 1)
            self.wpd2_t = self.wpd2.transpose(0, 2, 1)
            self.wnd2_t = self.wnd2.transpose(0, 2, 1)
            self.c2_t = self.c2.transpose(0, 2, 1)
            if bind:
                for k, s in enumerate(second):
                    s.conv_enc.w_point = self.wpe2[k]
                    s.conv_enc.w_neighbor = self.wne2[k]
                    s.conv_enc.b = self.be2[k]
                    s.fc.c = self.c2[k]
                    s.conv_dec.w_point = self.wpd2[k]
                    s.conv_dec.w_neighbor = self.wnd2[k]
                    s.conv_dec.b = self.bd2[k]
        else:
            self.k1 = 0

    def tensors(self) -> dict:
        out = {
            "wpe0": self.wpe0, "wne0": self.wne0, "be0": self.be0, "c0": self.c0,
            "wpd0": self.wpd0, "wnd0": self.wnd0, "bd0": self.bd0,
        }
        if self.k:
            out.update({
                "wpe2": self.wpe2, "wne2": self.wne2, "be2": self.be2, "c2": self.c2,
                "wpd2": self.wpd2, "wnd2": self.wnd2, "bd2": self.bd2,
            })
        return out

    def sync_masks(self, ae0: AEBlockParams, second: list) -> None:
        self.ae0 = ae0
        if self.k:
            self.mask2 = np.stack([s.mask for s in second])


def _forward_stacked(ws: _Workspace, x: np.ndarray, cfg: TrainConfig) -> dict:
    """Full forward pass for a batch (B, V, mu); all intermediates cached.

    Second-level arrays are laid out (K, B, V, mu): per-block GEMMs then run
    over (B*V, mu) slabs instead of broadcasting tiny matrices over B*K.
    """
    cache0 = forward_block(ws.ae0, x, ws.mean)
    out = {"x": x, "cache0": cache0}
    if ws.k == 0 or cfg.levels == 1:
        return out
    raw = np.sum(ws.c0.reshape(ws.c0.shape[0], -1, MU) ** 2, axis=2)
    am = _normalize_attention(raw) if cfg.use_attention else np.full_like(raw, 1.0 / ws.k)
    xr = x - cache0["xh"]
    b, v, mu = x.shape
    k = ws.k
    y = am[:, None, :, None] * xr[None, :, :, :]          # (k,b,v,mu)
    ym = apply_mean(ws.mean, y)
    y_cv = y.reshape(k, b * v, mu)
    a2 = y_cv @ ws.wpe2_t + ym.reshape(k, b * v, mu) @ ws.wne2_t + ws.be2[:, None, :]
    h2 = np.tanh(a2)                                       # (k, b*v, mu)
    h2f = h2.reshape(k, b, v * mu)
    z2 = h2f @ ws.c2_t                                     # (k,b,l)
    g2 = z2 @ ws.c2                                        # (k,b,v*mu)
    u2 = np.tanh(g2).reshape(k, b, v, mu)
    u2m = apply_mean(ws.mean, u2)
    b2 = (u2.reshape(k, b * v, mu) @ ws.wpd2_t
          + u2m.reshape(k, b * v, mu) @ ws.wnd2_t + ws.bd2[:, None, :])
    yh = np.tanh(b2).reshape(k, b, v, mu)
    out.update({"am": am, "raw_am": raw, "xr": xr, "y": y, "ym": ym,
                "h2": h2.reshape(k, b, v, mu), "z2": z2, "u2": u2, "u2m": u2m,
                "yh": yh})
    return out


def _group_norms_stacked(c2: np.ndarray) -> np.ndarray:
    k, k1, p = c2.shape
    return np.linalg.norm(c2.reshape(k, k1, -1, MU), axis=3)


def _loss_stacked(ws: _Workspace, cache: dict, cfg: TrainConfig):
    x = cache["x"]
    b = x.shape[0]
    cache0 = cache["cache0"]
    total0, parts0 = loss_ae(ws.ae0, x, cache0["xh"], cache0["z"], cfg.lambda1, cfg.lambda2, cfg.theta)
    if "y" not in cache:
        zero = {"recon": 0.0, "sparsity": 0.0, "nontrivial": 0.0}
        return total0, parts0, zero
    y, yh, z2 = cache["y"], cache["yh"], cache["z2"]
    recon2 = float(np.sum((y - yh) ** 2) / b)
    norms2 = _group_norms_stacked(ws.c2)
    sparsity2 = float(np.sum(ws.mask2 * norms2) / ws.k1)
    peak = np.abs(z2).max(axis=1)  # max over the batch, per (k, latent)
    nontrivial2 = float(np.maximum(peak - cfg.theta, 0.0).sum() / ws.k1)
    parts2 = {"recon": recon2, "sparsity": sparsity2, "nontrivial": nontrivial2}
    total = total0 + cfg.lambda1 * recon2 + cfg.lambda2 * sparsity2 + nontrivial2
    return total, parts0, parts2


def _hinge_grad_stacked(z2: np.ndarray, theta: float, k1: int) -> np.ndarray:
    # z2 is (k, b, l); the hinge acts on the batch maximum per (k, latent)
    dz = np.zeros_like(z2)
    idx = np.abs(z2).argmax(axis=1)
    kk, ll = np.meshgrid(np.arange(z2.shape[0]), np.arange(z2.shape[2]), indexing="ij")
    peak = z2[kk, idx, ll]
    active = np.abs(peak) > theta
    dz[kk[active], idx[active], ll[active]] = np.sign(peak[active]) / k1
    return dz


def _sparsity_grad_stacked(c2: np.ndarray, mask2: np.ndarray, lambda2: float, k1: int) -> np.ndarray:
    k, nk1, p = c2.shape
    rows = c2.reshape(k, nk1, -1, MU)
    norms = np.linalg.norm(rows, axis=3)
    safe = np.where(norms > 0, norms, 1.0)
    g = (lambda2 / k1) * mask2[:, :, :, None] * rows / safe[:, :, :, None]
    g[norms == 0] = 0.0
    return g.reshape(c2.shape)


def _backward_stacked(ws: _Workspace, cache: dict, cfg: TrainConfig) -> dict:
    """Analytic gradients of the summed losses w.r.t. every tensor.

    Gradients pass through the residual and the attention masks into the
    first block unless cfg.stop_gradient_through_residual is set.
    """
    x = cache["x"]
    b = x.shape[0]
    lam1, lam2, theta = cfg.lambda1, cfg.lambda2, cfg.theta
    grads = {}
    dxh0_extra = None
    if "y" in cache:
        y, ym, h2, z2, u2, u2m, yh = (cache[n] for n in ("y", "ym", "h2", "z2", "u2", "u2m", "yh"))
        am, raw, xr = cache["am"], cache["raw_am"], cache["xr"]
        k, v = am.shape
        bv = b * v
        cv = (k, bv, MU)  # per-block GEMM view of the (k, b, v, mu) arrays

        dyh = -(2.0 * lam1 / b) * (y - yh)
        db2 = (dyh * (1.0 - yh ** 2)).reshape(cv)
        grads["wpd2"] = db2.transpose(0, 2, 1) @ u2.reshape(cv)
        grads["wnd2"] = db2.transpose(0, 2, 1) @ u2m.reshape(cv)
        grads["bd2"] = db2.sum(axis=1)
        du2 = (db2 @ ws.wpd2).reshape(y.shape) \
            + apply_mean(ws.mean_t, (db2 @ ws.wnd2).reshape(y.shape))
        dg2 = du2 * (1.0 - u2 ** 2)
        dg2f = dg2.reshape(k, b, v * MU)
        h2f = h2.reshape(k, b, v * MU)
        dz2 = dg2f @ ws.c2_t
        gc2 = z2.transpose(0, 2, 1) @ dg2f
        dz2 = dz2 + _hinge_grad_stacked(z2, theta, ws.k1)
        gc2 = gc2 + dz2.transpose(0, 2, 1) @ h2f
        dh2 = (dz2 @ ws.c2).reshape(y.shape)
        da2 = (dh2 * (1.0 - h2 ** 2)).reshape(cv)
        grads["wpe2"] = da2.transpose(0, 2, 1) @ y.reshape(cv)
        grads["wne2"] = da2.transpose(0, 2, 1) @ ym.reshape(cv)
        grads["be2"] = da2.sum(axis=1)
        gc2 = gc2 + _sparsity_grad_stacked(ws.c2, ws.mask2, lam2, ws.k1)
        grads["c2"] = gc2
        dy = ((da2 @ ws.wpe2).reshape(y.shape)
              + apply_mean(ws.mean_t, (da2 @ ws.wne2).reshape(y.shape))
              + (2.0 * lam1 / b) * (y - yh))
        if not cfg.stop_gradient_through_residual:
            dxr = np.einsum("kv,kbvj->bvj", am, dy)
            dxh0_extra = -dxr
            if cfg.use_attention:
                dam = np.einsum("kbvj,bvj->kv", dy, xr)
                den = raw.sum(axis=0)
                ok = den > 0
                inner = dam - np.sum(dam * am, axis=0, keepdims=True)
                draw = np.where(ok, inner / np.where(ok, den, 1.0), 0.0)
                c0_rows = ws.c0.reshape(k, v, MU)
                gc0_att = 2.0 * c0_rows * draw[:, :, None]
                grads["c0_attention"] = gc0_att.reshape(ws.c0.shape)
    grads0, _ = backward_block(ws.ae0, cache["cache0"], lam1, lam2, theta, dxh_extra=dxh0_extra)
    grads["wpe0"] = grads0["w_point_enc"]
    grads["wne0"] = grads0["w_neighbor_enc"]
    grads["be0"] = grads0["b_enc"]
    grads["c0"] = grads0["c"] + grads.pop("c0_attention", 0.0)
    grads["wpd0"] = grads0["w_point_dec"]
    grads["wnd0"] = grads0["w_neighbor_dec"]
    grads["bd0"] = grads0["b_dec"]
    return grads


def stacked_loss(ws: _Workspace, x: np.ndarray, cfg: TrainConfig) -> float:
    total, _, _ = _loss_stacked(ws, _forward_stacked(ws, x, cfg), cfg)
    return total


def stacked_loss_and_grads(ws: _Workspace, x: np.ndarray, cfg: TrainConfig):
    cache = _forward_stacked(ws, x, cfg)
    total, parts0, parts2 = _loss_stacked(ws, cache, cfg)
    grads = _backward_stacked(ws, cache, cfg)
    return total, parts0, parts2, grads, cache


def build_model(cfg: TrainConfig, reference: TriangleMesh, scaler: FeatureScaler,
                adj: Adjacency, rng: np.random.Generator) -> StackedParams:
    """Freshly initialized stacked model (masks still need a geodesic pass)."""
    v = reference.vertex_count
    ae0 = init_ae_block(rng, cfg.k_z0, v, cfg.d1)
    second = []
    if cfg.levels == 2:
        second = [init_ae_block(rng, cfg.k_z1, v, cfg.d2) for _ in range(cfg.k_z0)]
    return StackedParams(ae0=ae0, second=second, scaler=scaler, config=cfg, reference=reference)


def train_joint(features, reference: TriangleMesh, adj: Adjacency, geo,
                cfg: TrainConfig, scaler: FeatureScaler, step_callback=None,
                init_ae0: AEBlockParams | None = None, freeze_ae0: bool = False):
    """End-to-end joint training of the stacked model.

    features: (N, V, mu) scaled training features. One optimizer step per
    epoch on a randomly sampled batch (without replacement, capped at the
    dataset size). Masks and centers refresh every cfg.center_update_every
    steps. Aborts with diagnostics if the loss goes non-finite.

    init_ae0 warm-starts the first block (copied); freeze_ae0 excludes its
    tensors from optimization. Together they implement the two-phase
    "train the first level, freeze it, then train the second" ablation.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[0] < 1:
        raise TrainingError("features must be a non-empty (N, V, mu) array")
    n = feats.shape[0]
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, reference, scaler, adj, rng)
    if init_ae0 is not None:
        src = init_ae0
        dst = model.ae0
        dst.conv_enc.w_point[...] = src.conv_enc.w_point
        dst.conv_enc.w_neighbor[...] = src.conv_enc.w_neighbor
        dst.conv_enc.b[...] = src.conv_enc.b
        dst.fc.c[...] = src.fc.c
        dst.conv_dec.w_point[...] = src.conv_dec.w_point
        dst.conv_dec.w_neighbor[...] = src.conv_dec.w_neighbor
        dst.conv_dec.b[...] = src.conv_dec.b
    ws = _Workspace(model.ae0, model.second, adj.mean_matrix(), bind=True)
    _refresh_masks_ws(ws, model, geo)
    state = AdamState(lr=cfg.learning_rate, decay=cfg.decay, decay_steps=cfg.decay_steps)
    tensors = ws.tensors()
    ae0_tensors = ("wpe0", "wne0", "be0", "c0", "wpd0", "wnd0", "bd0")
    log = TrainingLog()
    last_parts = None
    batch_size = min(cfg.batch_size, n)
    for step in range(1, cfg.epochs + 1):
        idx = rng.permutation(n)[:batch_size]
        x = feats[idx]
        if step > 1 and step % cfg.center_update_every == 0:
            _refresh_masks_ws(ws, model, geo)
        total, parts0, parts2, grads, cache = stacked_loss_and_grads(ws, x, cfg)
        if not np.isfinite(total):
            raise TrainingError(
                f"non-finite loss at step {step}; last finite parts: {last_parts}",
                step=step, last_parts=last_parts,
            )
        if not cfg.train_decoder_bias:
            grads.pop("bd0", None)
            grads.pop("bd2", None)
        if freeze_ae0:
            for name in ae0_tensors:
                grads.pop(name, None)
        adam_step(state, tensors, grads)
        log.append(step, parts0, parts2, total)
        last_parts = (parts0, parts2)
        if step_callback is not None:
            step_callback(step, {
                "model": model, "workspace": ws, "cache": cache,
                "parts0": parts0, "parts2": parts2, "total": total, "batch": idx,
            })
    _refresh_masks_ws(ws, model, geo)
    return model, log


def _refresh_masks_ws(ws: _Workspace, model: StackedParams, geo) -> None:
    # parameter storage is shared with the workspace; update_sparsity_mask
    # only swaps the center and mask arrays
    model.ae0 = update_sparsity_mask(model.ae0, geo)
    model.second = [update_sparsity_mask(s, geo) for s in model.second]
    ws.sync_masks(model.ae0, model.second)


def forward_full(model: StackedParams, x: np.ndarray, adj: Adjacency):
    """Reconstruct one shape (V, mu): returns (xh0, [per-block xh], xh_total)."""
    ws = _Workspace(model.ae0, model.second, adj.mean_matrix())
    cache = _forward_stacked(ws, x[None], model.config)
    xh0 = cache["cache0"]["xh"][0]
    if "yh" not in cache:
        return xh0, [], xh0
    parts = [cache["yh"][k, 0] for k in range(model.k)]
    total = xh0 + cache["yh"][:, 0].sum(axis=0)
    return xh0, parts, total


def save_model(model: StackedParams, path) -> None:
    """Checkpoint: magic, version, JSON header, float64 blobs, crc32."""
    names = []
    blobs = []

    def add(name, arr, dtype="<f8"):
        arr = np.ascontiguousarray(arr, dtype=dtype)
        names.append([name, list(arr.shape), dtype])
        blobs.append(arr.tobytes())

    ae0 = model.ae0
    add("ae0.w_point_enc", ae0.conv_enc.w_point)
    add("ae0.w_neighbor_enc", ae0.conv_enc.w_neighbor)
    add("ae0.b_enc", ae0.conv_enc.b)
    add("ae0.c", ae0.fc.c)
    add("ae0.w_point_dec", ae0.conv_dec.w_point)
    add("ae0.w_neighbor_dec", ae0.conv_dec.w_neighbor)
    add("ae0.b_dec", ae0.conv_dec.b)
    add("ae0.centers", ae0.centers, "<i8")
    add("ae0.mask", ae0.mask)
    for k, s in enumerate(model.second):
        add(f"second.{k}.w_point_enc", s.conv_enc.w_point)
        add(f"second.{k}.w_neighbor_enc", s.conv_enc.w_neighbor)
        add(f"second.{k}.b_enc", s.conv_enc.b)
        add(f"second.{k}.c", s.fc.c)
        add(f"second.{k}.w_point_dec", s.conv_dec.w_point)
        add(f"second.{k}.w_neighbor_dec", s.conv_dec.w_neighbor)
        add(f"second.{k}.b_dec", s.conv_dec.b)
        add(f"second.{k}.centers", s.centers, "<i8")
        add(f"second.{k}.mask", s.mask)
    add("reference.positions", model.reference.positions)
    add("reference.faces", model.reference.faces, "<i8")
    header = {
        "config": model.config.to_dict(),
        "dims": {"v": model.vertex_count, "mu": MU, "k_z0": model.ae0.k_z,
                 "k": model.k, "k_z1": model.second[0].k_z if model.second else 0},
        "s_block_convention": 1,
        "scaler": model.scaler.to_dict(),
        "reference_name": model.reference.name,
        "tensors": names,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = header_bytes + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(bytes([MODEL_VERSION]))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_model(path) -> StackedParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError("bad checkpoint magic")
    version = blob[len(MODEL_MAGIC)]
    if version > MODEL_VERSION:
        raise ModelFormatError(f"checkpoint version {version} is newer than supported {MODEL_VERSION}")
    off = len(MODEL_MAGIC) + 1
    (header_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    payload = blob[off:-4]
    if len(blob) < off + header_len + 4:
        raise ModelFormatError("checkpoint truncated: checksum failure")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise ModelFormatError("checksum failure")
    header = json.loads(payload[:header_len].decode("utf-8"))
    data = payload[header_len:]
    arrays = {}
    pos = 0
    for name, shape, dtype in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        itemsize = np.dtype(dtype).itemsize
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
        arrays[name] = arr
        pos += count * itemsize
    cfg = TrainConfig.from_dict(header["config"])
    dims = header["dims"]

    def block(prefix, k_z, d):
        return AEBlockParams(
            conv_enc=GraphConvParams(
                w_point=arrays[f"{prefix}.w_point_enc"],
                w_neighbor=arrays[f"{prefix}.w_neighbor_enc"],
                b=arrays[f"{prefix}.b_enc"],
            ),
            fc=TiedFCParams(c=arrays[f"{prefix}.c"]),
            conv_dec=GraphConvParams(
                w_point=arrays[f"{prefix}.w_point_dec"],
                w_neighbor=arrays[f"{prefix}.w_neighbor_dec"],
                b=arrays[f"{prefix}.b_dec"],
            ),
            k_z=k_z,
            d=d,
            centers=arrays[f"{prefix}.centers"],
            mask=arrays[f"{prefix}.mask"],
        )

    ae0 = block("ae0", dims["k_z0"], cfg.d1)
    second = [block(f"second.{k}", dims["k_z1"], cfg.d2) for k in range(dims["k"])]
    reference = TriangleMesh(
        arrays["reference.positions"], arrays["reference.faces"].astype(np.int64),
        name=header.get("reference_name", ""),
    )
    scaler = FeatureScaler.from_dict(header["scaler"])
    return StackedParams(ae0=ae0, second=second, scaler=scaler, config=cfg, reference=reference)


def decode_block(block: AEBlockParams, z: np.ndarray, mean) -> np.ndarray:
    """Raw decoder output of one block for an explicit latent vector."""
    v = block.vertex_count
    g = (z @ block.fc.c).reshape(v, MU)
    u = np.tanh(g)
    um = apply_mean(mean, u)
    bc = u @ block.conv_dec.w_point.T + um @ block.conv_dec.w_neighbor.T + block.conv_dec.b
    return np.tanh(bc)


def extract_components(model: StackedParams, adj: Adjacency,
                       magnitude1: float | None = None,
                       magnitude2: float | None = None) -> ComponentSet:
    """Decode one-hot latents through every block and score the results.

    Second-level decodes are raw decoder outputs (no attention routing).
    Deltas are reported in unscaled feature space; components weaker than
    eps2 are marked pruned.
    """
    cfg = model.config
    mag1 = cfg.probe_magnitude1 if magnitude1 is None else magnitude1
    mag2 = cfg.probe_magnitude2 if magnitude2 is None else magnitude2
    mean = adj.mean_matrix()
    comps = []
    for k in range(model.ae0.k_z):
        z = np.zeros(model.ae0.k_z)
        z[k] = mag1
        delta = model.scaler.inverse(decode_block(model.ae0, z, mean))
        strength = component_strength(delta, cfg.eps1)
        comps.append(Component(
            level=1, parent=None, index=k, magnitude=mag1, feature=delta,
            strength=strength, kept=strength >= cfg.eps2,
            center=int(model.ae0.centers[k]),
        ))
    for parent, block in enumerate(model.second):
        for l in range(block.k_z):
            z = np.zeros(block.k_z)
            z[l] = mag2
            delta = model.scaler.inverse(decode_block(block, z, mean))
            strength = component_strength(delta, cfg.eps1)
            comps.append(Component(
                level=2, parent=parent, index=l, magnitude=mag2, feature=delta,
                strength=strength, kept=strength >= cfg.eps2,
                center=int(block.centers[l]),
            ))
    return ComponentSet(components=tuple(comps))


def component_similarity(cset: ComponentSet) -> np.ndarray:
    """Cosine similarity between flattened first-level component features;
    a zero component is defined to have similarity 0 against anything."""
    firsts = cset.level(1)
    k = len(firsts)
    out = np.zeros((k, k))
    flat = [c.feature.ravel() for c in firsts]
    norms = [np.linalg.norm(f) for f in flat]
    for i in range(k):
        for j in range(k):
            if norms[i] == 0 or norms[j] == 0:
                out[i, j] = 0.0
            else:
                out[i, j] = float(flat[i] @ flat[j] / (norms[i] * norms[j]))
    return out
