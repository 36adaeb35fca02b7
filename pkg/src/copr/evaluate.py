"""Localization metrics, experiment protocols, and report emission.

The metrics are the median translation error (meters) and median rotation
error (degrees) over all queries, medians taken independently; even-sized
sets use the mean of the two middle values. Experiments mirror the
standard protocol shapes: subsample a trajectory, densify it back with one
or more regressors, and compare retrieval error against the sparse map,
the ground-truth dense map, and an oracle retriever that always returns
the physically closest reference.
"""

from __future__ import annotations

import csv as csv_module
import io
import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .densify import (
    METHOD_LIN_INTERP,
    METHOD_LIN_REG,
    METHOD_NONLIN_REG,
    DensifyConfig,
    TargetPlan,
    densify_map,
    gen_extrap_grid,
    gen_interp_targets,
    subsample_trajectory,
)
from .errors import DimMismatch, EmptyMap, InvalidConfig, IoError
from .geometry import Pose, relative_pose
from .neural.core import MlpModel, forward_batch, regress_nonlinear
from .neural.training import TrainConfig, build_training_pairs, train_regressor
from .synth import SyntheticScene, make_encoder_dataset, make_observations
from .vpr_map import Origin, ReferenceMap, oracle_retrieve, retrieve

METHOD_LABELS = {
    METHOD_LIN_INTERP: "LinInterp",
    METHOD_LIN_REG: "LinReg",
    METHOD_NONLIN_REG: "NonLinReg",
}

CSV_COLUMNS = [
    "experiment",
    "map",
    "densification",
    "retrieval",
    "mte_m",
    "mre_deg",
    "map_size",
    "t_train_s",
    "t_dense_ms",
    "t_enc_ms",
    "t_match_ms",
    "t_retr_ms",
    "seed",
]


@dataclass(frozen=True)
class PerQuery:
    translation_error: float
    rotation_error: float
    matched_id: str
    matched_origin: str


@dataclass(frozen=True)
class ErrorSummary:
    """Median errors plus the per-query results they summarize."""

    mte_m: float
    mre_deg: float
    per_query: tuple[PerQuery, ...]


def localize_and_summarize(queries, ref_map: ReferenceMap) -> ErrorSummary:
    """Retrieve the top match per query and summarize the pose errors.

    Each query is a (descriptor, pose) pair; its estimated pose is the
    retrieved reference's pose, so the translation error is the Euclidean
    gap between the two translations and the rotation error the quaternion
    angle. MTE and MRE are medians taken independently.
    """
    if len(ref_map) == 0:
        raise EmptyMap("cannot localize against an empty map")
    results = []
    for desc, pose in queries:
        match = retrieve(desc, ref_map, k=1, query_pose=pose)[0]
        results.append(
            PerQuery(
                translation_error=match.translation_error,
                rotation_error=match.rotation_error,
                matched_id=match.ref_id,
                matched_origin=ref_map.origins[match.ref_index].value,
            )
        )
    t_errs = np.asarray([r.translation_error for r in results])
    r_errs = np.asarray([r.rotation_error for r in results])
    return ErrorSummary(
        mte_m=float(np.median(t_errs)) if len(results) else float("nan"),
        mre_deg=float(np.median(r_errs)) if len(results) else float("nan"),
        per_query=tuple(results),
    )


def _oracle_summary(queries, ref_map: ReferenceMap) -> ErrorSummary:
    results = []
    for _, pose in queries:
        match = oracle_retrieve(pose, ref_map)
        results.append(
            PerQuery(
                translation_error=match.translation_error,
                rotation_error=match.rotation_error,
                matched_id=match.ref_id,
                matched_origin=ref_map.origins[match.ref_index].value,
            )
        )
    return ErrorSummary(
        mte_m=float(np.median([r.translation_error for r in results])),
        mre_deg=float(np.median([r.rotation_error for r in results])),
        per_query=tuple(results),
    )


@dataclass(frozen=True)
class ExperimentRow:
    experiment: str
    map: str
    densification: str
    retrieval: str
    mte_m: float
    mre_deg: float
    map_size: int
    t_train_s: float = 0.0
    t_dense_ms: float = 0.0
    t_enc_ms: float = 0.0
    t_match_ms: float = 0.0
    t_retr_ms: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ExperimentRow, ...]
    config: dict

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "rows": [asdict(r) for r in self.rows]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        doc = json.loads(text)
        return cls(rows=tuple(ExperimentRow(**r) for r in doc["rows"]), config=doc["config"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv_module.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            d = asdict(r)
            writer.writerow([_csv_cell(d[c]) for c in CSV_COLUMNS])
        return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


@dataclass(frozen=True)
class StrayRow:
    case_seed: int
    similarity: float
    rank_before: int
    rank_after: int
    demoted: bool
    stray_id: str


@dataclass(frozen=True)
class StrayReport:
    rows: tuple[StrayRow, ...]
    config: dict

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "rows": [asdict(r) for r in self.rows]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StrayReport":
        doc = json.loads(text)
        return cls(rows=tuple(StrayRow(**r) for r in doc["rows"]), config=doc["config"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv_module.writer(buf, lineterminator="\n")
        cols = ["case_seed", "similarity", "rank_before", "rank_after", "demoted", "stray_id"]
        writer.writerow(cols)
        for r in self.rows:
            d = asdict(r)
            writer.writerow([_csv_cell(d[c]) for c in cols])
        return buf.getvalue()


def emit_report(report, fmt: str, path) -> None:
    """Write a report as CSV (6 significant digits) or lossless JSON."""
    if fmt not in ("csv", "json"):
        raise InvalidConfig(f"unknown report format {fmt!r}")
    text = report.to_csv() if fmt == "csv" else report.to_json()
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            if fmt == "json":
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write report: {exc}") from exc


def report_signature(report: ExperimentReport) -> str:
    """Canonical report content with timing fields stripped.

    Two runs with identical seeds must agree on this signature exactly;
    wall-clock timings are the one legitimately nondeterministic part.
    """
    rows = []
    for r in report.rows:
        rows.append(
            replace(r, t_train_s=0.0, t_dense_ms=0.0, t_enc_ms=0.0, t_match_ms=0.0, t_retr_ms=0.0)
        )
    return ExperimentReport(rows=tuple(rows), config=report.config).to_json()


def oracle_violations(report: ExperimentReport) -> list[tuple[str, str, float, float]]:
    """Rows where a VPR MTE beats the oracle MTE of the same experiment group."""
    groups: dict[str, list[ExperimentRow]] = {}
    for row in report.rows:
        groups.setdefault(row.experiment, []).append(row)
    bad = []
    for name, rows in groups.items():
        oracle = [r.mte_m for r in rows if r.retrieval == "Oracle"]
        if not oracle:
            continue
        omte = min(oracle)
        for r in rows:
            if r.retrieval == "VPR" and r.mte_m < omte - 1e-12:
                bad.append((name, r.densification, omte, r.mte_m))
    return bad


def _timed_localize(queries, ref_map: ReferenceMap):
    start = time.perf_counter()
    summary = localize_and_summarize(queries, ref_map)
    elapsed_ms = (time.perf_counter() - start) * 1e3
    return summary, elapsed_ms / max(len(queries), 1)


def _time_encoding(scene: SyntheticScene) -> float:
    """Per-query field-evaluation time in ms (the synthetic 'encoder')."""
    t = np.asarray([pose.t for _, pose in scene.queries])
    q = np.asarray([pose.q for _, pose in scene.queries])
    start = time.perf_counter()
    scene.field.eval_many(t, q)
    return (time.perf_counter() - start) * 1e3 / max(len(scene.queries), 1)


def train_scene_regressor(
    scene: SyntheticScene,
    cfg: TrainConfig,
    max_translation: float,
    max_pairs: int = 6000,
    pair_seed: int = 0,
) -> tuple[MlpModel, float]:
    """Train the descriptor regressor on the scene's training traverse.

    Returns (model, wall seconds). Pairs are ordered traverse pairs with
    relative translation capped at ``max_translation``.
    """
    start = time.perf_counter()
    pairs = build_training_pairs(scene.train_refs, max_translation, max_pairs, pair_seed)
    model = train_regressor(pairs, cfg, scene.dim)
    return model, time.perf_counter() - start


def _method_rows(
    experiment: str,
    scene_queries,
    sparse: ReferenceMap,
    plan: TargetPlan,
    methods,
    model: MlpModel | None,
    neighbors: int,
    seed: int,
    t_enc_ms: float,
    t_train_s: float,
    sparse_train_s: float = 0.0,
):
    """Oracle row, sparse row, and one VPR row per densification method."""
    rows = []
    dense_maps = {}
    dense_times = {}
    for method in methods:
        start = time.perf_counter()
        dense_maps[method] = densify_map(
            sparse, plan, method, model=model if method == METHOD_NONLIN_REG else None, neighbors=neighbors
        )
        dense_times[method] = (time.perf_counter() - start) * 1e3

    oracle_map = next(iter(dense_maps.values())) if dense_maps else sparse
    osum = _oracle_summary(scene_queries, oracle_map)
    rows.append(
        ExperimentRow(
            experiment=experiment,
            map="M_dense" if dense_maps else "M_sparse",
            densification="-",
            retrieval="Oracle",
            mte_m=osum.mte_m,
            mre_deg=osum.mre_deg,
            map_size=len(oracle_map),
            seed=seed,
        )
    )
    ssum, t_match = _timed_localize(scene_queries, sparse)
    rows.append(
        ExperimentRow(
            experiment=experiment,
            map="M_sparse",
            densification="-",
            retrieval="VPR",
            mte_m=ssum.mte_m,
            mre_deg=ssum.mre_deg,
            map_size=len(sparse),
            t_train_s=sparse_train_s,
            t_enc_ms=t_enc_ms,
            t_match_ms=t_match,
            t_retr_ms=t_enc_ms + t_match,
            seed=seed,
        )
    )
    for method in methods:
        msum, t_match = _timed_localize(scene_queries, dense_maps[method])
        rows.append(
            ExperimentRow(
                experiment=experiment,
                map="M_dense",
                densification=METHOD_LABELS[method],
                retrieval="VPR",
                mte_m=msum.mte_m,
                mre_deg=msum.mre_deg,
                map_size=len(dense_maps[method]),
                t_train_s=t_train_s if method == METHOD_NONLIN_REG else 0.0,
                t_dense_ms=dense_times[method],
                t_enc_ms=t_enc_ms,
                t_match_ms=t_match,
                t_retr_ms=t_enc_ms + t_match,
                seed=seed,
            )
        )
    return rows


def exp_interpolation(
    scene: SyntheticScene,
    stride: int,
    methods=(METHOD_LIN_INTERP, METHOD_LIN_REG, METHOD_NONLIN_REG),
    model: MlpModel | None = None,
    neighbors: int = 4,
    seed: int = 0,
    t_train_s: float = 0.0,
) -> ExperimentReport:
    """Subsample the trajectory and regress the dropped poses back.

    Emits: oracle on the dense pose set, VPR on the ground-truth dense
    map, VPR on the sparse map, and VPR on each densified map.
    """
    gt = scene.gt_dense
    anchors, dropped = subsample_trajectory(gt, stride)
    if len(anchors) >= 2:
        plan = gen_interp_targets(anchors, dropped=dropped)
    else:
        plan = TargetPlan(scheme="interpolation", targets=())
    t_enc = _time_encoding(scene)

    rows = []
    osum = _oracle_summary(scene.queries, gt)
    rows.append(
        ExperimentRow(
            experiment="interp",
            map="M_dense",
            densification="-",
            retrieval="Oracle",
            mte_m=osum.mte_m,
            mre_deg=osum.mre_deg,
            map_size=len(gt),
            seed=seed,
        )
    )
    gsum, t_match = _timed_localize(scene.queries, gt)
    rows.append(
        ExperimentRow(
            experiment="interp",
            map="M_dense",
            densification="GTMap",
            retrieval="VPR",
            mte_m=gsum.mte_m,
            mre_deg=gsum.mre_deg,
            map_size=len(gt),
            t_enc_ms=t_enc,
            t_match_ms=t_match,
            t_retr_ms=t_enc + t_match,
            seed=seed,
        )
    )
    ssum, t_match = _timed_localize(scene.queries, anchors)
    rows.append(
        ExperimentRow(
            experiment="interp",
            map="M_sparse",
            densification="-",
            retrieval="VPR",
            mte_m=ssum.mte_m,
            mre_deg=ssum.mre_deg,
            map_size=len(anchors),
            t_enc_ms=t_enc,
            t_match_ms=t_match,
            t_retr_ms=t_enc + t_match,
            seed=seed,
        )
    )
    for method in methods:
        start = time.perf_counter()
        dense = densify_map(
            anchors, plan, method, model=model if method == METHOD_NONLIN_REG else None, neighbors=neighbors
        )
        t_dense = (time.perf_counter() - start) * 1e3
        msum, t_match = _timed_localize(scene.queries, dense)
        rows.append(
            ExperimentRow(
                experiment="interp",
                map="M_dense",
                densification=METHOD_LABELS[method],
                retrieval="VPR",
                mte_m=msum.mte_m,
                mre_deg=msum.mre_deg,
                map_size=len(dense),
                t_train_s=t_train_s if method == METHOD_NONLIN_REG else 0.0,
                t_dense_ms=t_dense,
                t_enc_ms=t_enc,
                t_match_ms=t_match,
                t_retr_ms=t_enc + t_match,
                seed=seed,
            )
        )
    config = {
        "experiment": "interp",
        "stride": stride,
        "methods": list(methods),
        "neighbors": neighbors,
        "seed": seed,
        "scene_config": asdict(scene.scene_cfg),
        "field_config": asdict(scene.field_cfg),
    }
    return ExperimentReport(rows=tuple(rows), config=config)


def exp_extrapolation(
    scene: SyntheticScene,
    cfg: DensifyConfig,
    methods=(METHOD_LIN_REG, METHOD_NONLIN_REG),
    model: MlpModel | None = None,
    step_list=None,
    seed: int = 0,
    t_train_s: float = 0.0,
) -> ExperimentReport:
    """Grid-extrapolate around trajectory anchors and relocalize.

    The full trajectory is the sparse map; every ``cfg.stride``-th entry
    becomes a grid anchor. With ``step_list``, one row group is emitted
    per grid step (the dedupe radius scales proportionally with the step).
    """
    sparse = scene.gt_dense
    anchors, _ = subsample_trajectory(sparse, cfg.stride)
    t_enc = _time_encoding(scene)
    steps = list(step_list) if step_list is not None else [cfg.grid_step]
    rows = []
    for step in steps:
        step_cfg = replace(
            cfg,
            grid_step=step,
            grid_span=max(cfg.grid_span, step),
            dedupe_radius=cfg.dedupe_radius * (step / cfg.grid_step),
        )
        plan = gen_extrap_grid(anchors, step_cfg)
        label = "extrap" if step_list is None else f"extrap[step={step:g}]"
        rows.extend(
            _method_rows(
                label, scene.queries, sparse, plan, methods, model, cfg.neighbors, seed, t_enc, t_train_s
            )
        )
    config = {
        "experiment": "extrap" if step_list is None else "sweep",
        "densify_config": asdict(cfg),
        "steps": steps,
        "methods": list(methods),
        "seed": seed,
        "scene_config": asdict(scene.scene_cfg),
        "field_config": asdict(scene.field_cfg),
    }
    return ExperimentReport(rows=tuple(rows), config=config)


def exp_encoders(
    scene: SyntheticScene,
    densify_cfg: DensifyConfig,
    variants=("triplet", "relative", "distance"),
    encoder_cfgs: dict | None = None,
    regressor_cfg: TrainConfig | None = None,
    max_translation: float = 1.2,
    max_pairs: int = 4000,
    nuisance_sigma: float = 1.0,
    seed: int = 0,
) -> ExperimentReport:
    """Sparse-vs-dense localization for each encoder training objective.

    For every variant an encoder is trained on the scene's observation
    dataset, all maps are re-encoded through it, a regressor is trained in
    that descriptor space, and the extrapolation protocol runs on the
    encoded maps. Emits a {sparse, dense} row pair (plus an oracle row)
    per variant.
    """
    from .neural.training import train_encoder

    dataset = make_encoder_dataset(scene, nuisance_sigma=nuisance_sigma, seed=seed)
    n = scene.dim
    seeds = np.random.SeedSequence([scene.scene_cfg.seed, 613, seed]).spawn(3)
    ref_rng = np.random.default_rng(seeds[0])
    query_rng = np.random.default_rng(seeds[1])
    rows = []
    encoder_seconds = {}
    for variant in variants:
        cfg = (encoder_cfgs or {}).get(variant)
        start = time.perf_counter()
        encoder = train_encoder(dataset, variant, cfg)
        encoder_seconds[variant] = time.perf_counter() - start

        ref_obs = make_observations(
            scene.field, scene.gt_dense.translations, scene.gt_dense.quaternions,
            np.random.default_rng(ref_rng.integers(2**63)), nuisance_sigma,
        )
        ref_desc, _ = forward_batch(encoder, ref_obs)
        sparse_e = ReferenceMap(
            ids=scene.gt_dense.ids,
            descriptors=ref_desc,
            translations=scene.gt_dense.translations,
            quaternions=scene.gt_dense.quaternions,
            origins=scene.gt_dense.origins,
        )
        q_t = np.asarray([pose.t for _, pose in scene.queries])
        q_q = np.asarray([pose.q for _, pose in scene.queries])
        enc_start = time.perf_counter()
        q_obs = make_observations(
            scene.field, q_t, q_q, np.random.default_rng(query_rng.integers(2**63)), nuisance_sigma
        )
        q_desc, _ = forward_batch(encoder, q_obs)
        t_enc = (time.perf_counter() - enc_start) * 1e3 / max(len(scene.queries), 1)
        queries_e = [(q_desc[i], pose) for i, (_, pose) in enumerate(scene.queries)]

        train_desc, _ = forward_batch(encoder, dataset.observations)
        train_e = ReferenceMap(
            ids=scene.train_refs.ids,
            descriptors=train_desc,
            translations=scene.train_refs.translations,
            quaternions=scene.train_refs.quaternions,
            origins=scene.train_refs.origins,
        )
        h_start = time.perf_counter()
        pairs = build_training_pairs(train_e, max_translation, max_pairs, seed)
        h_model = train_regressor(pairs, regressor_cfg or TrainConfig(seed=seed), n)
        t_train = time.perf_counter() - h_start

        anchors, _ = subsample_trajectory(sparse_e, densify_cfg.stride)
        plan = gen_extrap_grid(anchors, densify_cfg)
        rows.extend(
            _method_rows(
                f"encoders:{variant}",
                queries_e,
                sparse_e,
                plan,
                (METHOD_NONLIN_REG,),
                h_model,
                densify_cfg.neighbors,
                seed,
                t_enc,
                t_train,
                sparse_train_s=encoder_seconds[variant],
            )
        )
    config = {
        "experiment": "encoders",
        "variants": list(variants),
        "densify_config": asdict(densify_cfg),
        "max_translation": max_translation,
        "max_pairs": max_pairs,
        "nuisance_sigma": nuisance_sigma,
        "seed": seed,
        "scene_config": asdict(scene.scene_cfg),
        "field_config": asdict(scene.field_cfg),
    }
    return ExperimentReport(rows=tuple(rows), config=config)


def exp_stray(cases, model: MlpModel) -> StrayReport:
    """Rank the stray reference before and after adding a regressed entry.

    The regressed entry stands at the query pose, predicted from the
    nearest of the four honest local references. Ranks are 1-based
    positions in the retrieval ordering.
    """
    rows = []
    for case in cases:
        if model.output_dim != case.refs.dim:
            raise DimMismatch("regressor output dim does not match the stray-case descriptor dim")
        before = case.refs.extended(
            [(case.stray_id, case.stray_descriptor, case.stray_pose, Origin.ANCHOR)]
        )
        matches = retrieve(case.query_descriptor, before, k=len(before))
        rank_before = 1 + next(i for i, m in enumerate(matches) if m.ref_id == case.stray_id)

        nearest = oracle_retrieve(case.query_pose, case.refs)
        dp = relative_pose(case.refs.pose(nearest.ref_index), case.query_pose)
        regressed = regress_nonlinear(model, case.refs.descriptors[nearest.ref_index], dp)
        after = before.extended([("regressed#q", regressed, case.query_pose, Origin.REGRESSED)])
        matches = retrieve(case.query_descriptor, after, k=len(after))
        rank_after = 1 + next(i for i, m in enumerate(matches) if m.ref_id == case.stray_id)
        rows.append(
            StrayRow(
                case_seed=case.case_seed,
                similarity=case.similarity,
                rank_before=rank_before,
                rank_after=rank_after,
                demoted=rank_after > 1,
                stray_id=case.stray_id,
            )
        )
    config = {"experiment": "stray", "cases": len(rows)}
    return StrayReport(rows=tuple(rows), config=config)
