import numpy as np
import pytest

from meshmodes.acap import encode_dataset
from meshmodes.datagen import BarSpec, gen_bar_dataset
from meshmodes.mesh import GeodesicProvider, build_adjacency, cotangent_weights
from meshmodes.stacked import TrainConfig, train_joint


@pytest.fixture(scope="session")
def tiny_trained():
    """Small trained bar model shared by editing/service tests."""
    spec = BarSpec(segments=12, ring=8, length=3.0, radius=0.2, bump_sigma=0.2)
    meshes, table = gen_bar_dataset(spec, 12)
    feats, scaler = encode_dataset(meshes)
    ref = meshes[0]
    adj = build_adjacency(ref)
    geo = GeodesicProvider(ref, adj)
    cfg = TrainConfig(k_z0=3, k_z1=2, d1=0.6, d2=0.3, epochs=700, seed=0,
                      learning_rate=2e-3)
    x = np.stack([f.x for f in feats])
    model, log = train_joint(x, ref, adj, geo, cfg, scaler)
    return {
        "spec": spec,
        "meshes": meshes,
        "table": table,
        "features": feats,
        "scaler": scaler,
        "reference": ref,
        "adj": adj,
        "geo": geo,
        "config": cfg,
        "model": model,
        "log": log,
        "weights": cotangent_weights(ref),
    }
