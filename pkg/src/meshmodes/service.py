"""HTTP JSON API over a trained checkpoint.

Stateless endpoints: metadata, the reference mesh, decoding explicit weight
settings, and control-point fits. Bodies are parsed by hand so the status
codes stay exact (400 malformed request or bad index, 422 non-finite value,
503 before a model is loaded); responses are serialized deterministically so
identical requests produce identical bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles

from .editing import ControlConstraint, EditingError, apply_weights, fit_latents, make_context
from .mesh import build_adjacency
from .stacked import extract_components, load_model


def _json_response(payload: dict, status: int = 200) -> Response:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return Response(content=body, status_code=status, media_type="application/json")


def _error(status: int, message: str) -> Response:
    return _json_response({"error": message, "code": status}, status)


def _mesh_payload(positions: np.ndarray, faces: np.ndarray) -> dict:
    return {
        "positions": [float(v) for v in positions.ravel()],
        "faces": [int(v) for v in faces.ravel()],
    }


class _ModelState:
    def __init__(self, model):
        self.model = model
        self.adj = build_adjacency(model.reference)
        self.context = make_context(model, self.adj)
        self.components = extract_components(model, self.adj)

    def component_entry(self, comp) -> dict:
        norms = np.linalg.norm(comp.feature, axis=1)
        region = (np.nonzero(norms > 0.05 * norms.max())[0].tolist()
                  if norms.max() > 0 else [])
        return {
            "level": comp.level,
            "parent": comp.parent,
            "index": comp.index,
            "strength": comp.strength,
            "kept": comp.kept,
            "center": comp.center,
            "active_region": region,
        }


def create_app(checkpoint=None, model=None, ui_dir=None) -> FastAPI:
    """App factory; pass a checkpoint path or an in-memory model."""
    app = FastAPI(title="meshmodes service", docs_url=None, redoc_url=None)
    state: dict = {"model": None}
    if model is not None:
        state["model"] = _ModelState(model)
    elif checkpoint is not None and Path(checkpoint).exists():
        state["model"] = _ModelState(load_model(checkpoint))

    def need_model():
        return state["model"]

    @app.get("/api/model")
    def get_model():
        ms = need_model()
        if ms is None:
            return _error(503, "no model loaded")
        model = ms.model
        cfg = model.config
        second = []
        for k in range(len(model.second)):
            entries = [ms.component_entry(c) for c in ms.components.components
                       if c.level == 2 and c.parent == k and c.kept]
            second.append(entries)
        first_components = [ms.component_entry(c) for c in ms.components.components
                            if c.level == 1]
        return _json_response({
            "levels": cfg.levels,
            "first_level": model.ae0.k_z,
            "second_level": second,
            "first_level_components": first_components,
            "d": [cfg.d1, cfg.d2],
            "vertex_count": model.vertex_count,
            "face_count": model.reference.face_count,
            "probe_magnitudes": [cfg.probe_magnitude1, cfg.probe_magnitude2],
        })

    @app.get("/api/reference")
    def get_reference():
        ms = need_model()
        if ms is None:
            return _error(503, "no model loaded")
        ref = ms.model.reference
        return _json_response(_mesh_payload(ref.positions, ref.faces))

    @app.post("/api/decode")
    async def post_decode(request: Request):
        ms = need_model()
        if ms is None:
            return _error(503, "no model loaded")
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _error(400, "malformed JSON body")
        if not isinstance(body, dict) or not isinstance(body.get("weights", []), list):
            return _error(400, "body must be {\"weights\": [...]}")
        weight_map = {}
        for row in body.get("weights", []):
            if not isinstance(row, dict):
                return _error(400, "each weight must be an object")
            try:
                level = int(row["level"])
                ae = int(row.get("ae", 0))
                index = int(row["index"])
                value = float(row["value"])
            except (KeyError, TypeError, ValueError):
                return _error(400, f"bad weight entry: {row!r}")
            if not math.isfinite(value):
                return _error(422, f"non-finite value for latent {(level, ae, index)}")
            weight_map[(level, ae, index)] = value
        model = ms.model
        for (level, ae, index) in weight_map:
            if level == 1:
                if not 0 <= index < model.ae0.k_z:
                    return _error(400, f"level-1 index {index} out of range")
            elif level == 2:
                if not (0 <= ae < len(model.second)
                        and model.second and 0 <= index < model.second[0].k_z):
                    return _error(400, f"level-2 index {(ae, index)} out of range")
            else:
                return _error(400, f"invalid level {level}")
        mesh = apply_weights(model, ms.adj, weight_map, context=ms.context)
        disp = np.linalg.norm(mesh.positions - model.reference.positions, axis=1)
        payload = _mesh_payload(mesh.positions, mesh.faces)
        payload["displacement"] = [float(v) for v in disp]
        return _json_response(payload)

    @app.post("/api/fit")
    async def post_fit(request: Request):
        ms = need_model()
        if ms is None:
            return _error(503, "no model loaded")
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _error(400, "malformed JSON body")
        rows = body.get("constraints") if isinstance(body, dict) else None
        if not isinstance(rows, list) or not rows:
            return _error(400, "body must be {\"constraints\": [at least one]}")
        model = ms.model
        constraints = []
        for row in rows:
            if not isinstance(row, dict):
                return _error(400, "each constraint must be an object")
            try:
                vertex = int(row["vertex"])
                target = [float(v) for v in row["target"]]
                weight = float(row.get("weight", 1.0))
            except (KeyError, TypeError, ValueError):
                return _error(400, f"bad constraint entry: {row!r}")
            if len(target) != 3:
                return _error(400, "constraint target must have 3 coordinates")
            if not all(math.isfinite(v) for v in target) or not math.isfinite(weight):
                return _error(422, "non-finite constraint value")
            if not 0 <= vertex < model.vertex_count:
                return _error(400, f"constraint vertex {vertex} out of range")
            if vertex == ms.context.anchor:
                return _error(400, f"vertex {vertex} is the reconstruction anchor")
            if weight <= 0:
                return _error(400, "constraint weight must be positive")
            constraints.append(ControlConstraint(vertex=vertex, target=target, weight=weight))
        try:
            sol = fit_latents(model, ms.adj, constraints, context=ms.context)
        except EditingError as exc:
            return _error(400, str(exc))
        disp = np.linalg.norm(sol.mesh.positions - model.reference.positions, axis=1)
        payload = _mesh_payload(sol.mesh.positions, sol.mesh.faces)
        payload["displacement"] = [float(v) for v in disp]
        return _json_response({
            "weights": {
                "z0": [float(v) for v in sol.z0],
                "second": [[float(v) for v in row] for row in np.atleast_2d(sol.z_second)],
            },
            "mesh": payload,
            "residual": sol.residual,
        })

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
