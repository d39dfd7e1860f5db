"""End-to-end runs with two message rounds, experiment sweeps and CSV output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import codepth, cofl, perception, wire
from .geometry import VoxelGrid, build_voxel_pixel_map, frustum_voxel_index, make_binning
from .metrics import Region, average_precision, depth_accuracy
from .scene import Scene, SceneConfig, generate_scene, load_scene, perturb_pose, render

IOU_THRESHOLDS = (0.3, 0.5, 0.7, 0.8)


@dataclass(frozen=True)
class RunConfig:
    # scene
    scene_file: str | None = None
    n_agents: int = 4
    n_boxes: int = 12
    bev_range: tuple[float, float, float, float] = (-20.0, -20.0, 20.0, 20.0)
    box_length: tuple[float, float] = (3.0, 3.4)
    box_width: tuple[float, float] = (2.0, 2.4)
    box_height: tuple[float, float] = (1.4, 1.7)
    min_gap: float = 1.0
    camera_height: float = 8.0
    image_h: int = 48
    image_w: int = 96
    hfov_deg: float = 90.0
    # depth binning
    depth_mode: str = "uniform"
    d_min: float = 1.0
    d_max: float = 61.0
    n_bins: int = 30
    # voxel grid (z relative to the ground plane)
    cell_xy: float = 1.6
    z_min: float = -0.25
    z_max: float = 2.25
    dz: float = 0.5
    n_channels: int = 4
    # analog-network noise
    sigma_f: float = 0.1
    sigma_d: float = 0.5
    kappa0: float = 4.0
    kappa_slope: float = 30.0
    pose_sigma: float = 0.0
    # collaboration
    co_depth: bool = True
    co_fl: bool = True
    u_thre: float = 4.0
    p_thre: float = 0.1
    c_thre: float = 0.2
    budget: float | None = None
    per_pair_budget: bool = False
    alpha: float = 1.0
    beta: float = 0.75
    gamma: float = 0.0
    # decoding / evaluation
    conf_scale: float = 3.0
    conf_floor: float = 0.1
    nms_iou: float = 0.3
    size_prior: tuple[float, float, float] = (3.2, 2.2, 1.55)
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    # reproducibility
    seed: int = 0
    repetitions: int = 20

    def __post_init__(self):
        if self.n_agents < 1 or self.repetitions < 1:
            raise ValueError("need at least one agent and one repetition")

    def scene_config(self) -> SceneConfig:
        return SceneConfig(
            n_boxes=(self.n_boxes, self.n_boxes),
            box_length=self.box_length,
            box_width=self.box_width,
            box_height=self.box_height,
            n_agents=self.n_agents,
            bev_range=self.bev_range,
            camera_height=self.camera_height,
            image_hw=(self.image_h, self.image_w),
            hfov_deg=self.hfov_deg,
            min_gap=self.min_gap,
        )

    def binning(self):
        return make_binning(self.depth_mode, self.d_min, self.d_max, self.n_bins)

    def grid(self, ground_z: float = 0.0, bev_range=None) -> VoxelGrid:
        return VoxelGrid.from_range(
            bev_range or self.bev_range,
            self.cell_xy,
            ground_z + self.z_min,
            ground_z + self.z_max,
            self.dz,
        )


def config_from_dict(doc: dict, base: RunConfig | None = None) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    vals = {}
    for k, v in doc.items():
        vals[k] = tuple(v) if isinstance(v, list) else v
    return replace(base or RunConfig(), **vals)


def load_config(path) -> RunConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def config_to_dict(config: RunConfig) -> dict:
    return asdict(config)


@dataclass
class RunRow:
    rep: int
    agent: int
    n_agents: int
    ap: dict
    depth_acc_full: float | None
    depth_acc_fg: float | None
    depth_acc_full_single: float | None
    depth_acc_fg_single: float | None
    bytes_sent: int
    bytes_round1: int
    bytes_round2: int
    sweep: str = ""
    sweep_value: str = ""

    @property
    def log2_volume(self) -> float | None:
        total = self.bytes_round1 + self.bytes_round2
        return wire.comm_volume_log2(total) if total > 0 else None


@dataclass
class AgentResult:
    """Everything one agent produced in a run, for inspection and tests."""

    view: object
    features: np.ndarray
    dist: np.ndarray
    voxels: perception.VoxelTensor
    fused_prob: np.ndarray
    score: np.ndarray | None
    bev: np.ndarray
    fused_bev: np.ndarray
    heatmap: perception.DenseHeatmap
    detections: list
    gt_offset: np.ndarray


@dataclass
class PipelineResult:
    rows: list[RunRow]
    agents: list[AgentResult]
    ledger: wire.CommLedger
    thresholds: dict
    seconds: float


def _seed(config: RunConfig, rep: int, agent: int, stream: int):
    return np.random.SeedSequence([config.seed, rep, agent, stream])


_FEAT, _DEPTH, _POSE = 1, 2, 3


def scene_for(config: RunConfig, rep: int) -> Scene:
    if config.scene_file:
        return load_scene(Path(config.scene_file).read_text())
    scene_seed = int(np.random.SeedSequence([config.seed, rep, 0xC0C0]).generate_state(1)[0])
    return generate_scene(config.scene_config(), scene_seed)


def run_pipeline(scene: Scene, config: RunConfig, rep: int = 0, dump_dir=None) -> PipelineResult:
    """One scene through render, per-agent perception and both collaboration rounds."""
    t0 = time.perf_counter()
    binning = config.binning()
    grid = config.grid(scene.ground_z, scene.bev_range)
    templates = perception.class_templates(config.n_channels)
    agents = list(scene.agents)
    n = len(agents)
    ledger = wire.CommLedger()
    thresholds = {"u_thre": config.u_thre, "c_thre": config.c_thre}

    believed, views, feats, dists, vmaps, vts = [], [], [], [], [], []
    for rig in agents:
        a = rig.agent_id
        belief = perturb_pose(rig, config.pose_sigma, _seed(config, rep, a, _POSE))
        view = render(scene, a)
        F = perception.encode(view, config.sigma_f, _seed(config, rep, a, _FEAT), config.n_channels)
        dist = perception.estimate_depth(
            view, binning, config.kappa0, config.kappa_slope, config.sigma_d,
            _seed(config, rep, a, _DEPTH),
        )
        vmap = build_voxel_pixel_map(grid, belief.projection(), rig.H, rig.W, binning)
        believed.append(belief)
        views.append(view)
        feats.append(F)
        dists.append(dist)
        vmaps.append(vmap)
        vts.append(perception.voxelize(F, dist, vmap))

    # round 1: collaborative depth
    fused_probs = [vt.prob for vt in vts]
    scores: list = [None] * n
    if config.co_depth and n > 1:
        Us = [codepth.uncertainty_map(d) for d in dists]
        send = True
        u_thre = config.u_thre
        if config.budget is not None:
            cal = wire.calibrate_depth_threshold(
                Us, vmaps, config.n_channels, config.budget, config.per_pair_budget
            )
            u_thre, send = cal.threshold, cal.affordable
            thresholds["u_thre"] = u_thre
        if send:
            inbox = _exchange(
                n, agents, ledger, 1, dump_dir, rep,
                lambda j, i: codepth.pack_depth_message(
                    vts[j], Us[j], vmaps[j], u_thre, agents[j].agent_id, agents[i].agent_id
                ),
            )
            for i in range(n):
                scores[i] = codepth.matching_score(vts[i], inbox[i], config.p_thre)
                fused_probs[i] = codepth.fuse_depth(
                    vts[i].prob, scores[i], vts[i].present,
                    config.alpha, config.beta, config.gamma,
                )
    bevs = [perception.collapse(vt, p) for vt, p in zip(vts, fused_probs)]

    # round 2: collaborative detection features
    fused_bevs = list(bevs)
    if config.co_fl and n > 1:
        confs = [cofl.confidence_map(b, templates, config.conf_scale) for b in bevs]
        send = True
        c_thre = config.c_thre
        if config.budget is not None:
            cal = wire.calibrate_detection_threshold(
                confs, config.n_channels, config.budget, config.per_pair_budget
            )
            c_thre, send = cal.threshold, cal.affordable
            thresholds["c_thre"] = c_thre
        if send:
            inbox = _exchange(
                n, agents, ledger, 2, dump_dir, rep,
                lambda j, i: cofl.pack_detection_message(
                    bevs[j], confs[j], c_thre, agents[j].agent_id, agents[i].agent_id
                ),
            )
            fused_bevs = [cofl.fuse_features(bevs[i], inbox[i]) for i in range(n)]

    rows, results = [], []
    l_prior, w_prior, h_prior = config.size_prior
    for i, rig in enumerate(agents):
        hm = perception.decode(fused_bevs[i], templates, grid, (l_prior, w_prior), config.conf_scale)
        dets = perception.nms(hm, grid, config.conf_floor, config.nms_iou, h_prior, scene.ground_z)
        # detections live in the agent's believed frame; so must the GT
        offset = np.subtract(believed[i].position, rig.position)[:2]
        gts = [replace(b, x=b.x + offset[0], y=b.y + offset[1]) for b in scene.boxes]
        pairs = [(d.box, d.score) for d in dets]
        ap = {t: average_precision(pairs, gts, t).ap for t in config.iou_thresholds}
        single_full = depth_accuracy(dists[i], views[i], binning, Region.FULL_PLANE)
        single_fg = depth_accuracy(dists[i], views[i], binning, Region.FOREGROUND)
        if scores[i] is not None:
            fidx = frustum_voxel_index(grid, believed[i].projection(), rig.H, rig.W, binning)
            bins = codepth.fused_pixel_depth(
                dists[i], scores[i], fidx, config.alpha, config.beta, config.gamma
            )
            full = depth_accuracy(bins, views[i], binning, Region.FULL_PLANE)
            fg = depth_accuracy(bins, views[i], binning, Region.FOREGROUND)
        else:
            full, fg = single_full, single_fg
        a = rig.agent_id
        rows.append(
            RunRow(
                rep, a, n, ap, full, fg, single_full, single_fg,
                ledger.sent_by(a), ledger.round_total(1), ledger.round_total(2),
            )
        )
        results.append(
            AgentResult(views[i], feats[i], dists[i], vts[i], fused_probs[i], scores[i],
                        bevs[i], fused_bevs[i], hm, dets, offset)
        )
    return PipelineResult(rows, results, ledger, thresholds, time.perf_counter() - t0)


def _exchange(n, agents, ledger, round_, dump_dir, rep, pack):
    """Fully connected exchange through the wire codec; returns each agent's inbox."""
    inbox = [[] for _ in range(n)]
    for j in range(n):
        for i in range(n):
            if i == j:
                continue
            frame = wire.encode_frame(pack(j, i))
            ledger.record(agents[j].agent_id, agents[i].agent_id, round_, frame)
            if dump_dir is not None:
                path = Path(dump_dir)
                path.mkdir(parents=True, exist_ok=True)
                name = f"rep{rep:03d}_round{round_}_{agents[j].agent_id}_to_{agents[i].agent_id}.bin"
                (path / name).write_bytes(frame)
            inbox[i].append(wire.decode_frame(frame))
    return inbox


# -- repetitions and sweeps ----------------------------------------------------


@dataclass
class RunReport:
    rows: list[RunRow]
    seconds: list[float] = field(default_factory=list)

    def mean(self, metric: str) -> float:
        vals = [v for v in (_metric(r, metric) for r in self.rows) if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def std(self, metric: str) -> float:
        vals = [v for v in (_metric(r, metric) for r in self.rows) if v is not None]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def _metric(row: RunRow, metric: str):
    if metric.startswith("ap"):
        return row.ap.get(int(metric[2:]) / 100)
    if metric == "log2_volume":
        return row.log2_volume
    return getattr(row, metric)


def _threads() -> int:
    env = os.environ.get("COCA_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_repetitions(config: RunConfig, dump_dir=None, tag: tuple[str, str] = ("", "")) -> RunReport:
    """R seeded scenes; rows come back in repetition order whatever the thread count."""

    def one(rep):
        res = run_pipeline(scene_for(config, rep), config, rep, dump_dir)
        for r in res.rows:
            r.sweep, r.sweep_value = tag
        return res

    workers = min(_threads(), config.repetitions)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(config.repetitions)))
    else:
        results = [one(r) for r in range(config.repetitions)]
    rows = [row for res in results for row in res.rows]
    return RunReport(rows, [res.seconds for res in results])


@dataclass
class SweepResult:
    name: str
    values: list
    reports: list[RunReport]

    @property
    def rows(self) -> list[RunRow]:
        return [r for rep in self.reports for r in rep.rows]

    def summary(self, metrics=("ap30", "ap50", "ap70", "ap80")) -> list[dict]:
        out = []
        for v, rep in zip(self.values, self.reports):
            entry = {self.name: v}
            for m in metrics:
                entry[f"{m}_mean"] = rep.mean(m)
                entry[f"{m}_std"] = rep.std(m)
            out.append(entry)
        return out


def sweep_agents(config: RunConfig, n_list, dump_dir=None) -> SweepResult:
    reports = [
        run_repetitions(replace(config, n_agents=int(n)), dump_dir, ("agents", str(int(n))))
        for n in n_list
    ]
    return SweepResult("agents", list(n_list), reports)


def sweep_bandwidth(config: RunConfig, budgets, dump_dir=None) -> SweepResult:
    budgets = list(budgets)
    if budgets != sorted(budgets):
        raise ValueError("budgets must be sorted ascending")
    reports = [
        run_repetitions(replace(config, budget=float(b)), dump_dir, ("budget", _fmt(float(b))))
        for b in budgets
    ]
    return SweepResult("budget", budgets, reports)


def sweep_pose_noise(config: RunConfig, sigmas, dump_dir=None) -> SweepResult:
    if any(s < 0 for s in sigmas):
        raise ValueError("pose noise must be nonnegative")
    reports = [
        run_repetitions(replace(config, pose_sigma=float(s)), dump_dir, ("pose_sigma", _fmt(float(s))))
        for s in sigmas
    ]
    return SweepResult("pose_sigma", list(sigmas), reports)


def sweep_spacing(config: RunConfig, dump_dir=None) -> SweepResult:
    modes = ["uniform", "linear"]
    reports = [
        run_repetitions(replace(config, depth_mode=m), dump_dir, ("spacing", m)) for m in modes
    ]
    return SweepResult("spacing", modes, reports)


# -- CSV ---------------------------------------------------------------------

CSV_COLUMNS = (
    "sweep", "sweep_value", "rep", "agent", "n_agents",
    "ap30", "ap50", "ap70", "ap80",
    "depth_acc_full", "depth_acc_fg", "depth_acc_full_single", "depth_acc_fg_single",
    "bytes_sent", "bytes_round1", "bytes_round2", "log2_volume",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(_metric(r, c) if c.startswith("ap") or c == "log2_volume" else getattr(r, c))
                    for c in CSV_COLUMNS])
    return buf.getvalue()
