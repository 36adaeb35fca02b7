"""Command-line entry point.

Subcommands: synth, train-h, train-encoder, densify, retrieve, eval, and
exp {interp, extrap, sweep, encoders, stray}. Every command takes an
optional JSON config file; individual flags (and generic --set dot.path=value
overrides) take precedence over config keys. Each run echoes its fully
resolved configuration next to its outputs.

Exit codes: 0 success, 1 validation error or bad usage, 2 I/O error.
stdout carries machine-readable output only; human-facing logs go to
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import benchmarks
from .densify import (
    METHOD_LIN_INTERP,
    METHOD_LIN_REG,
    METHOD_NONLIN_REG,
    DensifyConfig,
    densify_map,
    gen_extrap_grid,
    gen_interp_targets,
    subsample_trajectory,
)
from .errors import CoprError, InvalidConfig, IoError
from .evaluate import (
    emit_report,
    exp_encoders,
    exp_extrapolation,
    exp_interpolation,
    exp_stray,
    localize_and_summarize,
    train_scene_regressor,
)
from .neural.model_io import load_model, save_model
from .neural.training import TrainConfig, build_training_pairs, train_encoder, train_regressor
from .synth import (
    FieldConfig,
    SceneConfig,
    gen_scene,
    load_scene,
    make_encoder_dataset,
    make_stray_case,
    save_scene,
)
from .vpr_map import load_descriptor_block, load_map, retrieve, save_map

_METHOD_FLAGS = {
    "lin-interp": METHOD_LIN_INTERP,
    "lin-reg": METHOD_LIN_REG,
    "nonlin-reg": METHOD_NONLIN_REG,
}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from exc


def _apply_set_overrides(cfg: dict, overrides) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise InvalidConfig(f"--set expects dot.path=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise InvalidConfig(f"--set path {dotted!r} crosses a non-object key")
        node[keys[-1]] = value
    return cfg


def _echo_config(resolved: dict, out_path: Path) -> None:
    echo_path = out_path.parent / (out_path.name + ".config.json")
    echo_path.parent.mkdir(parents=True, exist_ok=True)
    echo_path.write_text(json.dumps(resolved, indent=2, default=str) + "\n", encoding="utf-8")


def _train_config(section: dict, seed_override: int | None) -> TrainConfig:
    kwargs = dict(section)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrainConfig(**kwargs)


def _densify_config(section: dict, args) -> DensifyConfig:
    kwargs = dict(section)
    if getattr(args, "stride", None) is not None:
        kwargs["stride"] = args.stride
    if getattr(args, "e_step", None) is not None:
        kwargs["grid_step"] = args.e_step
    if getattr(args, "e_span", None) is not None:
        kwargs["grid_span"] = args.e_span
    if getattr(args, "neighbors", None) is not None:
        kwargs["neighbors"] = args.neighbors
    if getattr(args, "dedupe_radius", None) is not None:
        kwargs["dedupe_radius"] = args.dedupe_radius
    kwargs.setdefault("grid_span", max(kwargs.get("grid_step", 0.05), 0.05))
    return DensifyConfig(**kwargs)


def _scene_model(args, scene, cfg: dict, default_cap: float):
    if getattr(args, "model", None):
        return load_model(args.model), 0.0
    train_section = cfg.get("train", {})
    tc = _train_config(train_section, getattr(args, "seed", None))
    cap = cfg.get("pair_cap", default_cap)
    max_pairs = cfg.get("max_pairs", 6000)
    _log(f"training regressor (cap={cap} m, max_pairs={max_pairs}, seed={tc.seed})")
    return train_scene_regressor(scene, tc, cap, max_pairs, pair_seed=tc.seed)


def _cmd_synth(args) -> int:
    cfg = _apply_set_overrides(_load_config(args.config), args.set)
    if args.benchmark:
        scene_cfg, field_cfg = benchmarks.NAMED_SCENES[args.benchmark]
        if args.seed is not None:
            scene_cfg = SceneConfig(**{**asdict(scene_cfg), "seed": args.seed})
    else:
        if "scene" not in cfg or "field" not in cfg:
            raise InvalidConfig("synth needs --benchmark or a config with 'scene' and 'field' sections")
        scene_kwargs = dict(cfg["scene"])
        if args.seed is not None:
            scene_kwargs["seed"] = args.seed
        scene_cfg = SceneConfig(**scene_kwargs)
        field_cfg = FieldConfig(**cfg["field"])
    scene = gen_scene(scene_cfg, field_cfg)
    out = Path(args.out)
    save_scene(scene, out)
    _echo_config(
        {"command": "synth", "scene_config": asdict(scene_cfg), "field_config": asdict(field_cfg)},
        out / "scene.json",
    )
    _log(f"scene written to {out} ({len(scene.gt_dense)} refs, {len(scene.queries)} queries)")
    return 0


def _cmd_train_h(args) -> int:
    cfg = _apply_set_overrides(_load_config(args.config), args.set)
    scene = load_scene(args.scene)
    model, seconds = _scene_model(args, scene, cfg, default_cap=1.0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    _echo_config({"command": "train-h", "scene": str(args.scene), "config": cfg, "seconds": seconds}, out)
    _log(f"regressor written to {out} ({seconds:.1f}s)")
    return 0


def _cmd_train_encoder(args) -> int:
    cfg = _apply_set_overrides(_load_config(args.config), args.set)
    scene = load_scene(args.scene)
    dataset = make_encoder_dataset(scene, nuisance_sigma=cfg.get("nuisance_sigma", 1.0))
    tc = _train_config(cfg.get("train", {}), args.seed) if cfg.get("train") or args.seed is not None else None
    encoder = train_encoder(dataset, args.variant, tc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(encoder, out)
    _echo_config({"command": "train-encoder", "variant": args.variant, "config": cfg}, out)
    _log(f"{args.variant} encoder written to {out}")
    return 0


def _cmd_densify(args) -> int:
    cfg = _apply_set_overrides(_load_config(args.config), args.set)
    scene = load_scene(args.scene)
    dc = _densify_config(cfg.get("densify", {}), args)
    method = _METHOD_FLAGS[args.method]
    sparse = scene.gt_dense
    if args.scheme == "interp":
        anchors, dropped = subsample_trajectory(sparse, dc.stride)
        plan = gen_interp_targets(anchors, dropped=dropped)
        base = anchors
    else:
        anchors, _ = subsample_trajectory(sparse, dc.stride)
        plan = gen_extrap_grid(anchors, dc)
        base = sparse
    model = None
    if method == METHOD_NONLIN_REG:
        model, _ = _scene_model(args, scene, cfg, default_cap=max(1.0, dc.grid_span * 2))
    dense = densify_map(base, plan, method, model=model, neighbors=dc.neighbors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_map(dense, out / "dense_poses.csv", out / "dense_descriptors.bin")
    (out / "plan.json").write_text(plan.to_json() + "\n", encoding="utf-8")
    _echo_config(
        {"command": "densify", "method": args.method, "scheme": args.scheme, "densify_config": asdict(dc)},
        out / "dense_poses.csv",
    )
    _log(f"dense map written to {out} ({len(dense)} entries, {len(plan.targets)} regressed)")
    return 0


def _cmd_retrieve(args) -> int:
    ref_map = load_map(Path(args.map) / "refs_poses.csv", Path(args.map) / "refs_descriptors.bin")
    if args.query_poses:
        queries = load_map(args.query_poses, args.query)
        ids = queries.ids
        descriptors = queries.descriptors
        poses = [queries.pose(i) for i in range(len(queries))]
    else:
        descriptors = load_descriptor_block(args.query)
        ids = [f"q{i:05d}" for i in range(descriptors.shape[0])]
        poses = [None] * descriptors.shape[0]

    def _num(v):
        return None if v != v else v  # NaN when the query pose is unknown

    for i, query_id in enumerate(ids):
        matches = retrieve(descriptors[i], ref_map, args.k, query_pose=poses[i])
        line = {
            "query_id": query_id,
            "matches": [
                {
                    "ref_id": m.ref_id,
                    "feature_distance": m.feature_distance,
                    "translation_error": _num(m.translation_error),
                    "rotation_error": _num(m.rotation_error),
                }
                for m in matches
            ],
        }
        print(json.dumps(line))
    return 0


def _cmd_eval(args) -> int:
    scene = load_scene(args.scene)
    if args.map:
        ref_map = load_map(Path(args.map) / "dense_poses.csv", Path(args.map) / "dense_descriptors.bin")
    else:
        ref_map = scene.gt_dense
    summary = localize_and_summarize(scene.queries, ref_map)
    doc = {
        "mte_m": summary.mte_m,
        "mre_deg": summary.mre_deg,
        "queries": len(summary.per_query),
        "map_size": len(ref_map),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        _echo_config({"command": "eval", "scene": str(args.scene), "map": str(args.map)}, Path(args.out))
    else:
        print(json.dumps(doc))
    return 0


def _cmd_exp(args) -> int:
    cfg = _apply_set_overrides(_load_config(args.config), args.set)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    if args.kind == "stray":
        scene_section = cfg.get("scene")
        field_section = cfg.get("field")
        if args.scene:
            scene = load_scene(args.scene)
            scene_cfg, field_cfg = scene.scene_cfg, scene.field_cfg
        elif scene_section and field_section:
            scene_cfg = SceneConfig(**scene_section)
            field_cfg = FieldConfig(**field_section)
            scene = gen_scene(scene_cfg, field_cfg)
        else:
            scene_cfg, field_cfg = benchmarks.MULTI_SCENE, benchmarks.MULTI_FIELD
            scene = gen_scene(scene_cfg, field_cfg)
        cases = [
            make_stray_case(scene_cfg, field_cfg, args.similarity, case_seed=i)
            for i in range(args.cases)
        ]
        model, _ = _scene_model(args, scene, cfg, default_cap=benchmarks.MULTI_PAIR_CAP)
        report = exp_stray(cases, model)
    else:
        scene = load_scene(args.scene)
        if args.kind == "interp":
            stride = args.stride if args.stride is not None else cfg.get("stride", 50)
            methods = tuple(_METHOD_FLAGS[m] for m in args.methods) if args.methods else (
                METHOD_LIN_INTERP,
                METHOD_LIN_REG,
                METHOD_NONLIN_REG,
            )
            model = t_train = None
            if METHOD_NONLIN_REG in methods:
                model, t_train = _scene_model(args, scene, cfg, default_cap=1.0)
            report = exp_interpolation(
                scene, stride, methods=methods, model=model, seed=seed, t_train_s=t_train or 0.0
            )
        elif args.kind in ("extrap", "sweep"):
            dc = _densify_config(cfg.get("densify", {}), args)
            methods = tuple(_METHOD_FLAGS[m] for m in args.methods) if args.methods else (
                METHOD_LIN_REG,
                METHOD_NONLIN_REG,
            )
            steps = None
            if args.kind == "sweep":
                steps = (
                    [float(s) for s in args.steps.split(",")] if args.steps else list(benchmarks.SWEEP_STEPS)
                )
            model = t_train = None
            if METHOD_NONLIN_REG in methods:
                model, t_train = _scene_model(args, scene, cfg, default_cap=max(1.0, dc.grid_span * 2))
            report = exp_extrapolation(
                scene, dc, methods=methods, model=model, step_list=steps, seed=seed, t_train_s=t_train or 0.0
            )
        else:  # encoders
            dc = _densify_config(cfg.get("densify", {}), args)
            report = exp_encoders(
                scene,
                dc,
                encoder_cfgs=benchmarks.ENCODER_CONFIGS,
                regressor_cfg=benchmarks.ENCODER_REGRESSOR,
                max_translation=cfg.get("pair_cap", benchmarks.MULTI_PAIR_CAP),
                max_pairs=cfg.get("max_pairs", benchmarks.ENCODER_PAIR_MAX),
                nuisance_sigma=cfg.get("nuisance_sigma", benchmarks.MULTI_NUISANCE_SIGMA),
                seed=seed,
            )

    emit_report(report, args.format, out)
    _echo_config({"command": f"exp {args.kind}", "config": cfg, "seed": seed}, out)
    _log(f"report written to {out} ({len(report.rows)} rows)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copr", description="Descriptor-map densification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a config key (dot path)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("synth", help="generate and export a synthetic scene")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--benchmark", choices=sorted(benchmarks.NAMED_SCENES))
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-h", help="train the descriptor regressor on a scene")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_h)

    p = sub.add_parser("train-encoder", help="train a synthetic feature encoder")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--variant", choices=("triplet", "relative", "distance"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_encoder)

    p = sub.add_parser("densify", help="densify a scene's reference map")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--method", choices=sorted(_METHOD_FLAGS), required=True)
    p.add_argument("--scheme", choices=("interp", "extrap"), required=True)
    p.add_argument("--model", help="pre-trained regressor for nonlin-reg")
    p.add_argument("--stride", type=int)
    p.add_argument("--e-step", type=float, dest="e_step")
    p.add_argument("--e-span", type=float, dest="e_span")
    p.add_argument("--neighbors", type=int)
    p.add_argument("--dedupe-radius", type=float, dest="dedupe_radius")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_densify)

    p = sub.add_parser("retrieve", help="nearest-neighbor matches for query descriptors")
    common(p)
    p.add_argument("--map", required=True, help="scene directory holding refs_poses.csv/refs_descriptors.bin")
    p.add_argument("--query", required=True, help="query descriptor binary")
    p.add_argument("--query-poses", dest="query_poses", help="query pose CSV")
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("eval", help="localize a scene's queries against a map")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--map", help="densified map directory (defaults to the scene's own refs)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("exp", help="run an experiment protocol")
    common(p)
    p.add_argument("kind", choices=("interp", "extrap", "sweep", "encoders", "stray"))
    p.add_argument("--scene", help="scene directory (required except for stray with a config)")
    p.add_argument("--model", help="pre-trained regressor to reuse")
    p.add_argument("--methods", nargs="*", choices=sorted(_METHOD_FLAGS))
    p.add_argument("--stride", type=int)
    p.add_argument("--e-step", type=float, dest="e_step")
    p.add_argument("--e-span", type=float, dest="e_span")
    p.add_argument("--neighbors", type=int)
    p.add_argument("--dedupe-radius", type=float, dest="dedupe_radius")
    p.add_argument("--steps", help="comma-separated grid steps for sweep")
    p.add_argument("--similarity", type=float, default=benchmarks.STRAY_SIMILARITY)
    p.add_argument("--cases", type=int, default=benchmarks.STRAY_CASES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_exp)

    return parser


def dispatch(argv) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except IoError as exc:
        _log(f"io error: {exc}")
        return 2
    except OSError as exc:
        _log(f"io error: {exc}")
        return 2
    except CoprError as exc:
        _log(f"error: {exc}")
        return 1
    except (ValueError, KeyError) as exc:
        _log(f"error: {exc}")
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
