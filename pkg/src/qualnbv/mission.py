"""The exploration loop: sense, integrate, find frontiers, pick a view, fly."""

from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from qualnbv.frontier import FrontierSet, FrontierTracker, mark_unreachable
from qualnbv.path_planning import PathPlanner, Polyline, TrapezoidProfile
from qualnbv.quality import QualityConfig
from qualnbv.scenes import GroundTruthScene
from qualnbv.sensor import Pose, SensorModel, freespace_points, scan
from qualnbv.tsdf_map import MapConfig, VoxelMap, integrate_scan, points_clear
from qualnbv.view_evaluation import (RobotState, ScoreBreakdown, info_gain_batch, rank,
                                     score_candidates, write_score_log)
from qualnbv.view_generation import ViewCandidate, ViewGenConfig, ViewGenerator

log = logging.getLogger(__name__)


class MissionError(RuntimeError):
    """Precondition violated (e.g. the start pose is not collision-free)."""


class Planner(enum.Enum):
    QUALITY_GUIDED = "ours"
    CLOSEST_FRONTIER = "closest"
    FRONTIER_COUNT = "count"

    @classmethod
    def parse(cls, name: str) -> Planner:
        aliases = {"ours": cls.QUALITY_GUIDED, "quality": cls.QUALITY_GUIDED,
                   "qualityguided": cls.QUALITY_GUIDED, "closest": cls.CLOSEST_FRONTIER,
                   "closestfrontier": cls.CLOSEST_FRONTIER, "count": cls.FRONTIER_COUNT,
                   "frontiercount": cls.FRONTIER_COUNT}
        key = name.lower().replace("-", "").replace("_", "")
        if key not in aliases:
            raise ValueError(f"unknown planner {name!r}")
        return aliases[key]


class Status(str, enum.Enum):
    COMPLETE = "complete"
    EXHAUSTED = "complete_by_exhaustion"
    TIME_LIMIT = "time_limit"


@dataclass
class MissionConfig:
    planner: Planner = Planner.QUALITY_GUIDED
    time_limit: float = 900.0
    v_max: float = 4.5
    a_max: float = 4.8
    replan_distance: float | None = 1.5  # None: replan on arrival only
    alpha: float = 0.5
    beta: float = 0.5
    seed: int = 0
    robot_radius: float = 1.0
    planning_margin: float = 0.25
    scan_interval: float = 1.0
    scan_duration: float = 0.1
    max_target_visits: int = 3
    start_jitter: float = 0.5
    truncation: float = 1.0
    takeoff_range: float = 3.0  # 0 disables the takeoff sweep
    sensor: SensorModel = field(default_factory=SensorModel)

    def __post_init__(self):
        if isinstance(self.planner, str):
            self.planner = Planner.parse(self.planner)
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("v_max and a_max must be positive")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["planner"] = self.planner.value
        d["sensor"] = {k: float(v) for k, v in asdict(self.sensor).items()}
        return d


@dataclass
class RoundRecord:
    index: int
    time: float
    position: list
    velocity: list
    n_frontiers: int
    n_c_rem: int
    n_marked: int
    total_weight: float
    selected: dict | None = None
    score: dict | None = None
    leg_length: float = 0.0
    leg_time: float = 0.0


@dataclass
class RoundInfo:
    """What a round did, handed to the optional callback."""

    record: RoundRecord
    planning_states: np.ndarray | None
    planning_free: np.ndarray | None
    executed: np.ndarray | None  # executed polyline vertices
    weight_before: float
    weight_after: float
    terminated: bool


@dataclass
class MissionLog:
    status: Status = Status.TIME_LIMIT
    sim_time: float = 0.0
    travel_time: float = 0.0
    scan_time: float = 0.0
    n_scans: int = 0
    path_length: float = 0.0
    rounds: list[RoundRecord] = field(default_factory=list)
    trajectory: list[tuple[float, float, float, float, float]] = field(default_factory=list)
    leg_times: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    quality: dict = field(default_factory=dict)
    wall_time: float = 0.0
    map: VoxelMap | None = None
    frontiers: FrontierSet | None = None

    def summary(self) -> dict:
        return {"status": self.status.value, "sim_time": self.sim_time,
                "travel_time": self.travel_time, "scan_time": self.scan_time,
                "n_scans": self.n_scans, "n_rounds": len(self.rounds),
                "path_length": self.path_length,
                "n_frontiers_left": len(self.frontiers) if self.frontiers else 0,
                "n_c_rem": len(self.frontiers.c_rem) if self.frontiers else 0,
                "config": self.config, "quality": self.quality}

    def to_json(self, path, extra: dict | None = None) -> None:
        data = self.summary()
        data.update(extra or {})
        data["rounds"] = [asdict(r) for r in self.rounds]
        Path(path).write_text(json.dumps(data, indent=1, sort_keys=True, default=_jsonable))

    def write_trajectory(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x,y,z,yaw\n")
            for row in self.trajectory:
                fh.write(",".join(f"{v:.6f}" for v in row) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(f"cannot serialize {type(o)}")


def baseline_score(candidates: Sequence[ViewCandidate], vmap: VoxelMap, frontiers: FrontierSet,
                   kind: Planner, state: RobotState, q: QualityConfig) -> ViewCandidate:
    """Pick with a baseline heuristic: nearest view, or most visible frontiers."""
    if not candidates:
        raise LookupError("no view candidates to select from")
    scores = score_candidates(vmap, state, candidates, frontiers, q)
    return candidates[order_candidates(kind, candidates, scores)[0]]


def order_candidates(kind: Planner, candidates: Sequence[ViewCandidate],
                     scores: Sequence[ScoreBreakdown]) -> list[int]:
    if kind is Planner.QUALITY_GUIDED:
        values = [s.total for s in scores]
    elif kind is Planner.CLOSEST_FRONTIER:
        values = [-s.distance for s in scores]
    elif kind is Planner.FRONTIER_COUNT:
        values = [float(s.n_visible) for s in scores]
    else:
        raise ValueError(kind)
    return rank(candidates, values, scores)


def make_map(scene: GroundTruthScene, cfg: MissionConfig) -> VoxelMap:
    return VoxelMap(MapConfig(voxel_size=scene.voxel_size, truncation=cfg.truncation,
                              origin=tuple(scene.origin), bounds_min=tuple(scene.bounds_min),
                              bounds_max=tuple(scene.bounds_max),
                              min_range=cfg.sensor.r_min, max_range=cfg.sensor.r_max))


def _start_position(scene: GroundTruthScene, cfg: MissionConfig,
                    rng: np.random.Generator) -> np.ndarray:
    nominal = scene.start if scene.start is not None else scene.find_free_start(cfg.robot_radius)
    if not scene.clearance_ok(nominal, cfg.robot_radius):
        raise MissionError(f"start {nominal} is within {cfg.robot_radius} m of an obstacle")
    if cfg.start_jitter > 0:
        for _ in range(20):
            p = nominal + rng.uniform(-cfg.start_jitter, cfg.start_jitter, 3)
            key = scene.key_of(p)
            # keep a voxel of slack: the reconstructed surface sits up to
            # one voxel in front of the true one
            if scene.contains_key(key) and not scene.occupancy[key] \
                    and scene.clearance_ok(p, cfg.robot_radius + scene.voxel_size):
                return p
    return np.array(nominal, float)


class _Mission:
    def __init__(self, scene, cfg, q, log_dir, callback):
        self.scene, self.cfg, self.q = scene, cfg, q
        self.log_dir = Path(log_dir) if log_dir else None
        self.callback = callback
        self.rng = np.random.default_rng(cfg.seed)
        self.map = make_map(scene, cfg)
        self.tracker = FrontierTracker(self.map)
        self.gen = ViewGenerator(ViewGenConfig(robot_radius=cfg.robot_radius,
                                               clearance_margin=cfg.planning_margin,
                                               vert_min=cfg.sensor.vert_min,
                                               vert_max=cfg.sensor.vert_max))
        self.log = MissionLog(config=cfg.as_dict(), quality=q.as_dict(), map=self.map)
        self.t = 0.0
        self.visits: dict[tuple, int] = {}

    # sensing ------------------------------------------------------------
    def do_scan(self, position, yaw, models: Sequence[SensorModel] | None = None):
        models = models or [self.cfg.sensor]
        parts = []
        for model in models:
            pts = scan(self.scene, Pose(position, yaw), model, self.rng)
            parts.append(pts.subset(pts.is_hit))
            parts.append(freespace_points(pts, model.r_max))
        first = parts[0]
        both = type(first)(first.sensor, np.vstack([p.points for p in parts]),
                           np.concatenate([p.kinds for p in parts]),
                           np.vstack([p.ray_dirs for p in parts]))
        integrate_scan(self.map, position, both)
        self.t += self.cfg.scan_duration
        self.log.scan_time += self.cfg.scan_duration
        self.log.n_scans += 1

    def takeoff_models(self) -> list[SensorModel]:
        """Regular FoV plus the two blind cones at short range.

        The vehicle sweeps its sensor through the cones while pitching
        during takeoff. Without this the Unknown space directly above and
        below the start boxes the robot in.
        """
        sm = self.cfg.sensor
        r = min(self.cfg.takeoff_range, sm.r_max)
        cones = []
        if sm.vert_max < math.pi / 2:
            cones.append(replace(sm, vert_min=sm.vert_max, vert_max=math.pi / 2, r_max=r))
        if sm.vert_min > -math.pi / 2:
            cones.append(replace(sm, vert_min=-math.pi / 2, vert_max=sm.vert_min, r_max=r))
        return [sm] + cones

    def record_pose(self, position, yaw):
        self.log.trajectory.append((self.t, *map(float, position), float(yaw)))

    # main loop ----------------------------------------------------------
    def run(self) -> MissionLog:
        wall0 = time.perf_counter()
        cfg = self.cfg
        pos = _start_position(self.scene, cfg, self.rng)
        vel = np.zeros(3)
        yaw = 0.0
        self.map.assume_free(pos, cfg.robot_radius)
        self.record_pose(pos, yaw)
        self.do_scan(pos, yaw, self.takeoff_models() if cfg.takeoff_range > 0 else None)
        index = 0
        while True:
            w0 = self.map.total_weight()
            fs = self.tracker.update()
            rec = RoundRecord(index, self.t, pos.tolist(), vel.tolist(), len(fs),
                              len(fs.c_rem), 0, w0)
            if self.t >= cfg.time_limit - 1e-12:
                self.log.status = Status.TIME_LIMIT
                self._finish(rec, None, None, w0, True)
                break
            marked_before = len(fs.c_rem)
            for k in list(fs.frontiers):
                if self.visits.get(k, 0) >= cfg.max_target_visits:
                    mark_unreachable(fs, k)
            cands = self.gen.generate(self.map, fs, self.q)
            if not cands:
                rec.n_marked = len(fs.c_rem) - marked_before
                rec.n_c_rem = len(fs.c_rem)
                self.log.status = Status.COMPLETE if not fs.c_rem else Status.EXHAUSTED
                self._finish(rec, None, None, w0, True)
                break
            choice = self.select(cands, fs, pos, vel, yaw)
            rec.n_marked = len(fs.c_rem) - marked_before
            rec.n_c_rem = len(fs.c_rem)
            if choice is None:
                self._finish(rec, None, None, w0, False)
                index += 1
                continue
            cand, score, path = choice
            planning = (self.map.states().copy(), self.map.free_override.copy()) \
                if self.callback else (None, None)
            rec.selected = {"position": cand.position.tolist(),
                            "frontier": list(cand.frontier_key), "band": cand.band.value}
            rec.score = {"j_raw": score.j_raw, "n_visible": score.n_visible,
                         "j_info": score.j_info, "j_nav": score.j_nav, "total": score.total}
            executed, pos, vel, yaw, arrived = self.fly(path, cand, rec)
            if arrived:
                self.visits[cand.frontier_key] = self.visits.get(cand.frontier_key, 0) + 1
            self._finish(rec, planning, executed, w0, False)
            index += 1
        self.log.sim_time = self.t
        self.log.frontiers = self.tracker.set
        self.log.wall_time = time.perf_counter() - wall0
        return self.log

    def _finish(self, rec, planning, executed, w0, terminated):
        self.log.rounds.append(rec)
        if self.callback:
            self.callback(RoundInfo(rec, planning[0] if planning else None,
                                    planning[1] if planning else None, executed, w0,
                                    self.map.total_weight(), terminated))

    def select(self, cands, fs, pos, vel, yaw):
        """Walk candidates in score order until one has a path; frontiers
        whose candidate cannot be reached go to C_rem and the normalizers
        are recomputed over what is left."""
        cfg = self.cfg
        state = RobotState(pos, vel, yaw)
        jraw, nvis = info_gain_batch(self.map, cands, fs, self.q)
        planner = PathPlanner(self.map, pos, cfg.robot_radius, cfg.planning_margin)
        alive = list(range(len(cands)))
        round_scores = None
        while alive:
            sub = [cands[i] for i in alive]
            scores = score_candidates(self.map, state, sub, fs, self.q, cfg.alpha, cfg.beta,
                                      gains=(jraw[alive], nvis[alive]))
            if round_scores is None:
                round_scores = (sub, scores)
            order = order_candidates(cfg.planner, sub, scores)
            best = order[0]
            path = planner.plan(sub[best].position)
            if path is not None:
                if self.log_dir:
                    sel = next((i for i, c in enumerate(round_scores[0]) if c is sub[best]),
                               None)
                    write_score_log(self.log_dir / f"scores_round_{len(self.log.rounds):04d}.csv",
                                    round_scores[0], round_scores[1], sel)
                return sub[best], scores[best], path
            mark_unreachable(fs, sub[best].frontier_key)
            self.gen.invalidate(sub[best].frontier_key)
            alive.pop(best)
        return None

    def _safe_stop(self, line: Polyline, s: float, step: float = 0.1) -> float:
        """First arc length at or after s whose clearance includes the
        planning margin, so a stop does not strand the robot when the next
        scan thickens a nearby surface. Falls back to the goal."""
        cfg = self.cfg
        if s >= line.length:
            return line.length
        ss = np.append(np.arange(s, line.length, step), line.length)
        ok = points_clear(self.map, np.array([line.at(v) for v in ss]),
                          cfg.robot_radius + cfg.planning_margin)
        hit = np.flatnonzero(ok)
        return float(ss[hit[0]]) if len(hit) else line.length

    def fly(self, path, cand: ViewCandidate, rec: RoundRecord):
        """Follow the path under the trapezoidal profile, scanning every
        scan_interval seconds of flight, and stop at the replan trigger,
        on arrival, or when the clock runs out."""
        cfg = self.cfg
        line = Polyline(path)
        prof = TrapezoidProfile(line.length, cfg.v_max, cfg.a_max)
        trigger = cfg.replan_distance
        # replan when about to reach the goal; short legs just fly to it
        s_goal = line.length - trigger if trigger is not None and line.length > 2 * trigger \
            else line.length
        s_goal = self._safe_stop(line, s_goal)
        t_goal = prof.time_at(s_goal)
        t0 = self.t
        n_scans = 0
        t_stop = t_goal
        truncated = False
        k = 1
        while k * cfg.scan_interval < t_goal - 1e-9:
            tk = k * cfg.scan_interval
            if t0 + tk + n_scans * cfg.scan_duration >= cfg.time_limit:
                break
            s = prof.distance(tk)
            p = line.at(s)
            y = _heading(line, s)
            self.t = t0 + tk + n_scans * cfg.scan_duration
            self.record_pose(p, y)
            self.do_scan(p, y)
            n_scans += 1
            k += 1
        if t0 + t_stop + n_scans * cfg.scan_duration > cfg.time_limit:
            t_stop = max(cfg.time_limit - t0 - n_scans * cfg.scan_duration, 0.0)
            truncated = True
        s_stop = s_goal if not truncated else prof.distance(t_stop)
        pos = line.at(s_stop)
        executed = line.truncated(s_stop).points
        arrived = not truncated and s_stop >= line.length - 1e-9
        yaw = cand.yaw if arrived else _heading(line, s_stop)
        self.t = t0 + t_stop + n_scans * cfg.scan_duration
        self.log.travel_time += t_stop
        self.log.leg_times.append(t_stop)
        self.log.path_length += s_stop
        rec.leg_length = s_stop
        rec.leg_time = t_stop
        self.record_pose(pos, yaw)
        speed = 0.0 if arrived else prof.speed(t_stop)
        vel = line.tangent(s_stop) * speed
        if self.t < cfg.time_limit - 1e-12:
            self.do_scan(pos, yaw)
        return executed, pos, vel, yaw, arrived


def _heading(line: Polyline, s: float) -> float:
    h = line.tangent(s)
    return math.atan2(h[1], h[0]) if np.any(h[:2]) else 0.0


def run_mission(scene: GroundTruthScene, cfg: MissionConfig, q: QualityConfig,
                log_dir=None, callback: Callable[[RoundInfo], None] | None = None,
                extra: dict | None = None) -> MissionLog:
    """Explore ``scene`` until no reachable frontier is left or time runs out.

    With ``log_dir`` set, per-round score tables, mission.json (with
    ``extra`` merged into its top level) and trajectory.csv are written.
    """
    if log_dir:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
    mission = _Mission(scene, cfg, q, log_dir, callback)
    result = mission.run()
    if log_dir:
        result.to_json(Path(log_dir) / "mission.json", extra)
        result.write_trajectory(Path(log_dir) / "trajectory.csv")
    return result
