"""Command-line pipeline: generate, encode, train, export, evaluate, edit, serve.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Configuration comes from an optional JSON file (--config) holding any
TrainConfig field plus "split"; command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .acap import (
    AcapError,
    encode_dataset,
    encode_shape,
    read_feature_cache,
    reconstruct_positions,
    write_feature_cache,
    AcapFeature,
)
from .datagen import BarSpec, gen_bar_dataset
from .editing import ControlConstraint, EditingError, apply_weights, fit_latents, make_context
from .mesh import GeodesicProvider, MeshError, ObjParseError, build_adjacency, cotangent_weights, load_obj, save_obj
from .metrics import MetricsError, apply_unit_ball, build_report, unit_ball_transform
from .stacked import (
    ModelFormatError,
    TrainConfig,
    TrainingError,
    component_similarity,
    extract_components,
    forward_full,
    load_model,
    save_model,
    train_joint,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

FORMATS_EPILOG = """\
file formats:
  dataset dir     bar_###.obj (ASCII OBJ, `v x y z` and `f a b c`, 1-based)
                  plus params.json (generation parameter table)
  feature cache   magic ACAPF01\\n, u32 N,V,mu (LE), s-block convention byte
                  (1 = S-I deviations), N*V*mu float64 LE, JSON trailer
                  {"scaler": {...}}
  checkpoint      magic MDCA1, version byte, u32 header length, JSON header,
                  float64 tensor blobs, crc32 of header+blobs
  loss log CSV    step,recon0,sparsity0,nontrivial0,recon_second,
                  sparsity_second,nontrivial_second,total
  constraints     JSON list of {"vertex": int, "target": [x,y,z],
                  "weight": float (optional, default 1)}
  split rule      "every-nth:N" (index % N == 0 trains) or "ratio:R"
                  (seeded shuffle, first R*N shapes train)
"""


class UsageError(Exception):
    pass


def _load_config(path, overrides: dict) -> dict:
    cfg = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _train_config(raw: dict) -> TrainConfig:
    fields = {k: v for k, v in raw.items() if k in TrainConfig.__dataclass_fields__}
    return TrainConfig(**fields)


def _split_indices(rule: str, n: int, seed: int):
    kind, _, value = rule.partition(":")
    if kind == "every-nth":
        step = int(value or 10)
        if step < 1:
            raise UsageError("every-nth split needs a positive N")
        train = [i for i in range(n) if i % step == 0]
    elif kind == "ratio":
        ratio = float(value or 0.5)
        if not 0 < ratio < 1:
            raise UsageError("ratio split needs 0 < R < 1")
        order = np.random.default_rng(seed).permutation(n)
        count = max(1, int(np.ceil(ratio * n)))
        train = sorted(int(i) for i in order[:count])
    else:
        raise UsageError(f"unknown split rule {rule!r}")
    test = [i for i in range(n) if i not in set(train)]
    if not train or not test:
        raise UsageError(f"split {rule!r} leaves an empty train or test set for n={n}")
    return train, test


def _load_dataset(data_dir) -> list:
    root = Path(data_dir)
    paths = sorted(root.glob("*.obj"))
    if not paths:
        raise MeshError(f"no .obj files in {root}")
    return [load_obj(p) for p in paths]


def cmd_gen(args) -> int:
    raw = _load_config(args.config, {})
    bar_keys = {k: v for k, v in raw.get("bar", {}).items()}
    for name in ("segments", "ring", "length", "radius"):
        val = getattr(args, name, None)
        if val is not None:
            bar_keys[name] = val
    if args.seed is not None:
        bar_keys["seed"] = args.seed
    spec = BarSpec(**bar_keys)
    meshes, table = gen_bar_dataset(spec, args.count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, mesh in enumerate(meshes):
        save_obj(mesh, out / f"bar_{i:03d}.obj")
    with open(out / "params.json", "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
    print(f"wrote {len(meshes)} shapes to {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    meshes = _load_dataset(args.data)
    features, scaler = encode_dataset(meshes, reference_index=args.reference_index)
    write_feature_cache(args.cache, features, scaler)
    print(f"encoded {len(features)} shapes -> {args.cache}")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = _load_config(args.config, {"seed": args.seed, "epochs": args.epochs})
    cfg = _train_config(raw)
    meshes = _load_dataset(args.data)
    cache = Path(args.cache) if args.cache else None
    if cache and cache.exists():
        features, scaler = read_feature_cache(cache)
        if len(features) != len(meshes):
            raise AcapError(f"cache holds {len(features)} shapes, dataset has {len(meshes)}")
    else:
        features, scaler = encode_dataset(meshes, reference_index=0)
        if cache:
            write_feature_cache(cache, features, scaler)
    split_rule = raw.get("split", args.split or "every-nth:10")
    train_idx, test_idx = _split_indices(split_rule, len(meshes), cfg.seed)
    reference = meshes[0]
    adj = build_adjacency(reference)
    geo = GeodesicProvider(reference, adj)
    x = np.stack([features[i].x for i in train_idx])
    model, log = train_joint(x, reference, adj, geo, cfg, scaler)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, args.checkpoint)
    log.to_csv(out / "loss_log.csv")
    with open(out / "train_meta.json", "w", encoding="utf-8") as fh:
        json.dump({
            "config": cfg.to_dict(),
            "split": split_rule,
            "train_indices": train_idx,
            "test_indices": test_idx,
            "data": str(args.data),
        }, fh, indent=2, sort_keys=True)
    print(f"trained {cfg.epochs} steps; checkpoint -> {args.checkpoint}")
    return EXIT_OK


def cmd_components(args) -> int:
    model = load_model(args.checkpoint)
    adj = build_adjacency(model.reference)
    ctx = make_context(model, adj)
    cset = extract_components(model, adj)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for comp in cset.components:
        norms = np.linalg.norm(comp.feature, axis=1)
        region = np.nonzero(norms > 0.05 * norms.max())[0].tolist() if norms.max() > 0 else []
        entry = {
            "level": comp.level,
            "parent": comp.parent,
            "index": comp.index,
            "strength": comp.strength,
            "kept": comp.kept,
            "center": comp.center,
            "active_region": region,
        }
        if comp.kept:
            if comp.level == 1:
                weights = {(1, 0, comp.index): comp.magnitude}
                name = f"component_l1_{comp.index:02d}.obj"
            else:
                weights = {(2, comp.parent, comp.index): comp.magnitude}
                name = f"component_l2_{comp.parent:02d}_{comp.index:02d}.obj"
            mesh = apply_weights(model, adj, weights, context=ctx)
            save_obj(mesh, out / name)
            entry["obj"] = name
        index.append(entry)
    with open(out / "components.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    sim = component_similarity(cset)
    with open(out / "similarity.csv", "w", encoding="utf-8") as fh:
        for row in sim:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    kept = sum(1 for c in cset.components if c.kept)
    print(f"exported {kept} kept of {len(cset.components)} components -> {out}")
    return EXIT_OK


def cmd_recon(args) -> int:
    model = load_model(args.checkpoint)
    meshes = _load_dataset(args.data)
    reference = model.reference
    adj = build_adjacency(reference)
    w = cotangent_weights(reference)
    ctx = make_context(model, adj)
    split_rule = args.split or "every-nth:10"
    _, test_idx = _split_indices(split_rule, len(meshes), model.config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in test_idx:
        raw = encode_shape(reference, meshes[i], w, adj)
        scaled = model.scaler.forward(raw)
        _, _, total = forward_full(model, scaled, adj)
        feat = AcapFeature(np.clip(total, -1.0, 1.0))
        mesh = reconstruct_positions(feat, model.scaler, reference, w, adj, context=ctx)
        name = f"recon_{i:03d}.obj"
        save_obj(mesh.with_positions(mesh.positions, name=name), out / name)
        written.append({"index": i, "obj": name})
    with open(out / "recon_meta.json", "w", encoding="utf-8") as fh:
        json.dump({"split": split_rule, "shapes": written}, fh, indent=2, sort_keys=True)
    print(f"reconstructed {len(written)} held-out shapes -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    ground_all = _load_dataset(args.data)
    recon_dir = Path(args.recon)
    with open(recon_dir / "recon_meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    indices = [row["index"] for row in meta["shapes"]]
    recon = [load_obj(recon_dir / row["obj"]) for row in meta["shapes"]]
    ground = [ground_all[i] for i in indices]
    center, radius = unit_ball_transform(ground)
    ground_n = [apply_unit_ball(m, center, radius) for m in ground]
    recon_n = [apply_unit_ball(m, center, radius) for m in recon]
    reference = model.reference
    adj = build_adjacency(reference)
    w = cotangent_weights(reference)
    feats_g = [model.scaler.forward(encode_shape(reference, m, w, adj)) for m in ground]
    feats_r = [model.scaler.forward(encode_shape(reference, m, w, adj)) for m in recon]
    report = build_report(ground_n, recon_n, feats_g, feats_r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    print(report.to_table())
    return EXIT_OK


def cmd_edit(args) -> int:
    model = load_model(args.checkpoint)
    adj = build_adjacency(model.reference)
    with open(args.constraints, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    constraints = [
        ControlConstraint(vertex=row["vertex"], target=row["target"],
                          weight=row.get("weight", 1.0))
        for row in rows
    ]
    sol = fit_latents(model, adj, constraints)
    save_obj(sol.mesh, args.out)
    print(json.dumps({
        "residual": sol.residual,
        "z0": sol.z0.tolist(),
        "z_second": sol.z_second.tolist(),
        "iterations": len(sol.objective_trace),
    }, indent=2))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint=args.checkpoint, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshmodes",
        description="Multiscale localized deformation components for mesh sets.",
        epilog=FORMATS_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic bar dataset",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=50, help="number of shapes (default 50)")
    p.add_argument("--config", help="JSON config; the 'bar' section overrides BarSpec fields")
    p.add_argument("--seed", type=int, help="generator seed recorded in params.json")
    p.add_argument("--segments", type=int, help="rings along the bar length")
    p.add_argument("--ring", type=int, help="vertices per ring")
    p.add_argument("--length", type=float, help="bar length")
    p.add_argument("--radius", type=float, help="bar radius")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("encode", help="encode a dataset into a feature cache",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True, help="dataset directory of .obj files")
    p.add_argument("--cache", required=True, help="output feature cache path")
    p.add_argument("--reference-index", type=int, default=0)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the stacked model",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--cache", help="feature cache (created if absent)")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--out", help="directory for loss_log.csv and train_meta.json")
    p.add_argument("--config", help="JSON config file with TrainConfig fields")
    p.add_argument("--seed", type=int, help="training seed (overrides config)")
    p.add_argument("--epochs", type=int, help="optimizer steps (overrides config)")
    p.add_argument("--split", help="train/test split rule (default every-nth:10)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("components", help="export kept components as OBJ + index",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_components)

    p = sub.add_parser("recon", help="reconstruct held-out shapes",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for recon OBJs")
    p.add_argument("--split", help="split rule; must match training")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="evaluate reconstructions against ground truth",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="ground-truth dataset directory")
    p.add_argument("--recon", required=True, help="directory produced by `recon`")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("edit", help="fit latent weights to control-point constraints",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--constraints", required=True, help="JSON constraint file")
    p.add_argument("--out", required=True, help="output OBJ path")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("serve", help="serve the HTTP API (and the web UI if present)",
                       epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", help="static UI directory to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MeshError, ObjParseError, ModelFormatError, MetricsError, EditingError,
            FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AcapError, TrainingError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
