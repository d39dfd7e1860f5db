"""Synthetic worlds: boxes on a ground plane observed by pinhole-camera agents."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .geometry import ProjectionMatrix, camera_rotation


class PlacementFailure(RuntimeError):
    """Rejection sampling could not place a box."""


class SceneParseError(ValueError):
    """Malformed scene document; the message names the offending field."""


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


@dataclass(frozen=True)
class GroundTruthBox:
    cls: int
    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    yaw: float

    def __post_init__(self):
        if min(self.h, self.w, self.l) <= 0:
            raise ValueError("box dimensions must be positive")
        if not (-math.pi < self.yaw <= math.pi):
            raise ValueError(f"yaw {self.yaw} outside (-pi, pi]")

    def corners_bev(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise; ``l`` runs along the heading."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


@dataclass(frozen=True)
class AgentRig:
    agent_id: int
    position: tuple[float, float, float]
    yaw: float
    fx: float
    fy: float
    cx: float
    cy: float
    H: int
    W: int
    pitch: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(p) for p in self.position))
        if self.H <= 0 or self.W <= 0:
            raise ValueError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def projection(self) -> ProjectionMatrix:
        return ProjectionMatrix.from_camera(
            self.fx, self.fy, self.cx, self.cy, self.position, self.yaw, self.pitch
        )


@dataclass(frozen=True)
class Scene:
    boxes: tuple[GroundTruthBox, ...]
    agents: tuple[AgentRig, ...]
    ground_z: float
    bev_range: tuple[float, float, float, float]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "bev_range", tuple(float(v) for v in self.bev_range))
        if not self.agents:
            raise ValueError("a scene needs at least one agent")
        xmin, ymin, xmax, ymax = self.bev_range
        for b in self.boxes:
            if not (xmin <= b.x <= xmax and ymin <= b.y <= ymax):
                raise ValueError(f"box at ({b.x}, {b.y}) is outside the detection range")

    def agent(self, agent_id: int) -> AgentRig:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(f"no agent with id {agent_id}")


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the random scene generator."""

    n_boxes: tuple[int, int] = (12, 12)
    box_length: tuple[float, float] = (3.0, 3.4)
    box_width: tuple[float, float] = (2.0, 2.4)
    box_height: tuple[float, float] = (1.4, 1.7)
    box_class: int = 1
    n_agents: int = 1
    bev_range: tuple[float, float, float, float] = (-20.0, -20.0, 20.0, 20.0)
    ground_z: float = 0.0
    camera_height: float = 8.0
    image_hw: tuple[int, int] = (48, 96)
    hfov_deg: float = 90.0
    min_gap: float = 1.0
    edge_margin: float = 3.0
    # explicit (x, y) agent positions; otherwise agents sit on the range perimeter
    agent_positions: tuple | None = None
    max_attempts: int = 1000


@dataclass(frozen=True)
class RenderedView:
    depth: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray


def _boxes_overlap(a: GroundTruthBox, b: GroundTruthBox, gap: float) -> bool:
    """Separating-axis test on footprints inflated by ``gap / 2`` each."""
    pa = _inflate(a, gap / 2).corners_bev()
    pb = _inflate(b, gap / 2).corners_bev()
    for poly in (pa, pb):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            ra, rb = pa @ axis, pb @ axis
            if ra.max() <= rb.min() or rb.max() <= ra.min():
                return False
    return True


def _inflate(b: GroundTruthBox, m: float) -> GroundTruthBox:
    return replace(b, w=b.w + 2 * m, l=b.l + 2 * m)


def perimeter_point(bev_range, angle: float) -> tuple[float, float]:
    """Where the ray from the range center at ``angle`` leaves the rectangle."""
    xmin, ymin, xmax, ymax = bev_range
    cx, cy = (xmin + xmax) / 2, (ymin + ymax) / 2
    dx, dy = math.cos(angle), math.sin(angle)
    ts = []
    if dx:
        ts.append(((xmax if dx > 0 else xmin) - cx) / dx)
    if dy:
        ts.append(((ymax if dy > 0 else ymin) - cy) / dy)
    t = min(ts)
    return cx + t * dx, cy + t * dy


def make_rig(agent_id, position, target, hw, hfov_deg) -> AgentRig:
    """Camera at ``position`` whose optical axis passes through ``target``."""
    H, W = hw
    d = np.asarray(target, float) - np.asarray(position, float)
    yaw = math.atan2(d[1], d[0])
    pitch = math.atan2(-d[2], math.hypot(d[0], d[1]))
    f = (W / 2) / math.tan(math.radians(hfov_deg) / 2)
    return AgentRig(
        agent_id, tuple(position), yaw, f, f, (W - 1) / 2, (H - 1) / 2, H, W, pitch
    )


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Random non-overlapping boxes plus agents aimed at the range center.

    Boxes and agents draw from independent streams, so changing the agent
    count never moves the boxes. Perimeter agents are spread evenly in angle
    from a random phase, which nests the agent sets for N = 1, 2, 4, 8.
    """
    box_rng, agent_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    xmin, ymin, xmax, ymax = config.bev_range
    m = config.edge_margin
    lo_n, hi_n = config.n_boxes
    n_boxes = int(box_rng.integers(lo_n, hi_n + 1))
    boxes: list[GroundTruthBox] = []
    for _ in range(n_boxes):
        for _attempt in range(config.max_attempts):
            h = box_rng.uniform(*config.box_height)
            cand = GroundTruthBox(
                config.box_class,
                float(box_rng.uniform(xmin + m, xmax - m)),
                float(box_rng.uniform(ymin + m, ymax - m)),
                config.ground_z + float(h) / 2,
                float(h),
                float(box_rng.uniform(*config.box_width)),
                float(box_rng.uniform(*config.box_length)),
                wrap_angle(float(box_rng.uniform(-math.pi, math.pi))),
            )
            if not any(_boxes_overlap(cand, b, config.min_gap) for b in boxes):
                boxes.append(cand)
                break
        else:
            raise PlacementFailure(
                f"could not place box {len(boxes) + 1} of {n_boxes} "
                f"after {config.max_attempts} attempts"
            )

    center = ((xmin + xmax) / 2, (ymin + ymax) / 2, config.ground_z)
    if config.agent_positions is not None:
        xys = [tuple(p) for p in config.agent_positions][: config.n_agents]
        if len(xys) < config.n_agents:
            raise ValueError("fewer agent positions than agents")
    else:
        phase = agent_rng.uniform(-math.pi, math.pi)
        xys = [
            perimeter_point(config.bev_range, phase + 2 * math.pi * i / _slots(config.n_agents))
            for i in _slot_order(config.n_agents)
        ]
    agents = [
        make_rig(
            i,
            (x, y, config.ground_z + config.camera_height),
            center,
            config.image_hw,
            config.hfov_deg,
        )
        for i, (x, y) in enumerate(xys)
    ]
    return Scene(tuple(boxes), tuple(agents), config.ground_z, config.bev_range, int(seed))


def _slots(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _slot_order(n: int) -> list[int]:
    """Bit-reversed slot order so the first k agents are spread evenly."""
    slots = _slots(n)
    bits = max(0, slots.bit_length() - 1)
    order = [int(format(i, f"0{bits}b")[::-1], 2) if bits else 0 for i in range(slots)]
    return order[:n]


def pixel_rays(rig: AgentRig) -> np.ndarray:
    """World-frame ray directions (H, W, 3) scaled so that camera-frame z = 1."""
    v, u = np.meshgrid(np.arange(rig.H, dtype=float), np.arange(rig.W, dtype=float), indexing="ij")
    cam = np.stack([(u - rig.cx) / rig.fx, (v - rig.cy) / rig.fy, np.ones_like(u)], axis=-1)
    R = camera_rotation(rig.yaw, rig.pitch)
    return cam @ R  # R.T applied to each row vector


def ray_box_hits(origin, dirs: np.ndarray, box: GroundTruthBox) -> np.ndarray:
    """Ray parameter of the first hit with an upright yawed cuboid (+inf on miss)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    o = np.asarray(origin, float) - np.array([box.x, box.y, box.z])
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    ol = rot @ o
    dl = dirs @ rot.T
    half = np.array([box.l / 2, box.w / 2, box.h / 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - ol) / dl
        t2 = (half - ol) / dl
    tmin = np.fmin(t1, t2)
    tmax = np.fmax(t1, t2)
    # axis-parallel rays: inside the slab -> unbounded, outside -> miss
    parallel = dl == 0
    inside = np.abs(ol) <= half
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def render(scene: Scene, agent_id: int, rig: AgentRig | None = None) -> RenderedView:
    """Ray-cast depth, class and instance maps for one agent.

    Depth is z-depth along the optical axis (the same quantity as the third
    projection component); pixels that hit nothing get +inf.
    """
    rig = rig or scene.agent(agent_id)
    dirs = pixel_rays(rig)
    origin = np.asarray(rig.position)
    depth = np.full((rig.H, rig.W), np.inf)
    instance = np.full((rig.H, rig.W), -1, dtype=np.int64)
    semantic = np.zeros((rig.H, rig.W), dtype=np.int64)

    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (scene.ground_z - origin[2]) / dz
    ground_hit = (dz < 0) & (t_ground > 0)
    depth = np.where(ground_hit, t_ground, depth)

    for idx, box in enumerate(scene.boxes):
        t = ray_box_hits(origin, dirs, box)
        # ties resolve to the lower box index regardless of iteration order
        closer = (t < depth) | ((t == depth) & (instance > idx))
        depth = np.where(closer, t, depth)
        instance = np.where(closer, idx, instance)
        semantic = np.where(closer, box.cls, semantic)
    return RenderedView(depth, semantic, instance)


def perturb_pose(rig: AgentRig, sigma: float, seed) -> AgentRig:
    """Add i.i.d. Gaussian(0, sigma^2) noise to each position axis; yaw is kept."""
    if sigma < 0:
        raise ValueError(f"negative sigma {sigma}")
    if sigma == 0:
        return rig
    rng = np.random.default_rng(seed)
    offset = rng.normal(0.0, sigma, size=3)
    return replace(rig, position=tuple(np.asarray(rig.position) + offset))


# -- scene documents -------------------------------------------------------

_BOX_KEYS = ("class", "x", "y", "z", "h", "w", "l", "yaw")
_AGENT_KEYS = ("id", "pos", "yaw", "fx", "fy", "cx", "cy", "H", "W")


def scene_to_dict(scene: Scene) -> dict:
    return {
        "range": list(scene.bev_range),
        "ground_z": scene.ground_z,
        "boxes": [
            {"class": b.cls, "x": b.x, "y": b.y, "z": b.z, "h": b.h, "w": b.w, "l": b.l, "yaw": b.yaw}
            for b in scene.boxes
        ],
        "agents": [
            {
                "id": a.agent_id,
                "pos": list(a.position),
                "yaw": a.yaw,
                "pitch": a.pitch,
                "fx": a.fx,
                "fy": a.fy,
                "cx": a.cx,
                "cy": a.cy,
                "H": a.H,
                "W": a.W,
            }
            for a in scene.agents
        ],
        "seed": scene.seed,
    }


def save_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2) + "\n"


def _field(obj, key, where, kind=float):
    if not isinstance(obj, dict) or key not in obj:
        raise SceneParseError(f"{where}: missing field {key!r}")
    val = obj[key]
    try:
        if kind is int:
            if isinstance(val, bool) or not float(val).is_integer():
                raise TypeError
            return int(val)
        if isinstance(val, bool):
            raise TypeError
        return float(val)
    except (TypeError, ValueError):
        raise SceneParseError(f"{where}: field {key!r} has invalid value {val!r}") from None


def load_scene(text: str) -> Scene:
    """Parse a scene document written by :func:`save_scene` (or by hand)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise SceneParseError("line 1: top level must be an object")
    for key in ("range", "ground_z", "boxes", "agents", "seed"):
        if key not in doc:
            raise SceneParseError(f"missing top-level key {key!r}")
    rng = doc["range"]
    if not isinstance(rng, list) or len(rng) != 4:
        raise SceneParseError("field 'range' must be [xmin, ymin, xmax, ymax]")
    boxes = []
    for i, b in enumerate(_as_list(doc, "boxes")):
        where = f"boxes[{i}]"
        vals = {k: _field(b, k, where, int if k == "class" else float) for k in _BOX_KEYS}
        try:
            boxes.append(
                GroundTruthBox(
                    vals["class"], vals["x"], vals["y"], vals["z"],
                    vals["h"], vals["w"], vals["l"], vals["yaw"],
                )
            )
        except ValueError as e:
            raise SceneParseError(f"{where}: {e}") from None
    agents = []
    for i, a in enumerate(_as_list(doc, "agents")):
        where = f"agents[{i}]"
        if not isinstance(a, dict) or "pos" not in a:
            raise SceneParseError(f"{where}: missing field 'pos'")
        pos = a["pos"]
        if not isinstance(pos, list) or len(pos) != 3:
            raise SceneParseError(f"{where}: field 'pos' must be [x, y, z]")
        try:
            pos = tuple(float(p) for p in pos)
        except (TypeError, ValueError):
            raise SceneParseError(f"{where}: field 'pos' has invalid value {pos!r}") from None
        pitch = _field(a, "pitch", where) if "pitch" in a else 0.0
        try:
            agents.append(
                AgentRig(
                    _field(a, "id", where, int), pos, _field(a, "yaw", where),
                    _field(a, "fx", where), _field(a, "fy", where),
                    _field(a, "cx", where), _field(a, "cy", where),
                    _field(a, "H", where, int), _field(a, "W", where, int), pitch,
                )
            )
        except ValueError as e:
            raise SceneParseError(f"{where}: {e}") from None
    try:
        return Scene(
            tuple(boxes),
            tuple(agents),
            _field(doc, "ground_z", "scene"),
            tuple(float(v) for v in rng),
            _field(doc, "seed", "scene", int),
        )
    except ValueError as e:
        if isinstance(e, SceneParseError):
            raise
        raise SceneParseError(f"scene: {e}") from None


def _as_list(doc, key):
    val = doc[key]
    if not isinstance(val, list):
        raise SceneParseError(f"field {key!r} must be a list")
    return val


def config_to_dict(config: SceneConfig) -> dict:
    return asdict(config)
