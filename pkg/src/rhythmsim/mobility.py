"""Vehicle mobility: CSV trace ingestion and random-waypoint synthesis.

Traces hold per-vehicle timestamped samples (t in seconds, x/y in meters);
positions between samples are linearly interpolated, and held flat beyond the
first/last sample.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .util import child_rng


class TraceError(ValueError):
    pass


class MobilityTrace:
    """Per-vehicle sample arrays, queryable at arbitrary times."""

    def __init__(self, samples: dict):
        # samples: vehicle id -> (t, x, y) float64 arrays, t strictly increasing
        if not samples:
            raise TraceError("trace holds no vehicles")
        self.vehicle_ids = sorted(samples)
        self._samples = samples
        for vid, (t, x, y) in samples.items():
            if len(t) == 0:
                raise TraceError(f"vehicle {vid}: no samples")
            if np.any(np.diff(t) < 0):
                raise TraceError(f"vehicle {vid}: decreasing timestamps")

    @property
    def population(self) -> int:
        return len(self.vehicle_ids)

    def duration_s(self) -> float:
        return max(float(t[-1]) for t, _, _ in self._samples.values())

    def _dedup(self, vid):
        t, x, y = self._samples[vid]
        if len(t) == 1:
            # Flat track: duplicate the sample so interpolation has a segment.
            return (
                np.array([t[0], t[0] + 1.0]),
                np.array([x[0], x[0]]),
                np.array([y[0], y[0]]),
            )
        keep = np.concatenate(([True], np.diff(t) > 0))
        return t[keep], x[keep], y[keep]

    def positions_at(self, times_s) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) arrays of shape (len(times), population), vehicles in id order."""
        times_s = np.ascontiguousarray(times_s, dtype=np.float64)
        xs = np.empty((len(times_s), self.population))
        ys = np.empty((len(times_s), self.population))
        for col, vid in enumerate(self.vehicle_ids):
            t, x, y = self._dedup(vid)
            xs[:, col] = kernels.linear_interp(times_s, t, x)
            ys[:, col] = kernels.linear_interp(times_s, t, y)
        return xs, ys

    def position_of(self, vehicle_id, t_s: float) -> tuple[float, float]:
        if vehicle_id not in self._samples:
            raise KeyError(vehicle_id)
        t, x, y = self._dedup(vehicle_id)
        q = np.array([float(t_s)])
        return float(kernels.linear_interp(q, t, x)[0]), float(kernels.linear_interp(q, t, y)[0])


def load_trace(path) -> MobilityTrace:
    """Parse a `vehicle_id,t,x,y` CSV; errors carry the offending line number."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: empty file")
        if [h.strip() for h in header] != ["vehicle_id", "t", "x", "y"]:
            raise TraceError(f"{path}: expected header vehicle_id,t,x,y, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise TraceError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            vid = row[0].strip()
            try:
                t, x, y = float(row[1]), float(row[2]), float(row[3])
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: {exc}")
            bucket = rows.setdefault(vid, ([], [], []))
            if bucket[0] and t < bucket[0][-1]:
                raise TraceError(
                    f"{path}:{lineno}: timestamp {t} decreases for vehicle {vid}"
                )
            bucket[0].append(t)
            bucket[1].append(x)
            bucket[2].append(y)
    if not rows:
        raise TraceError(f"{path}: no data rows")
    samples = {
        vid: (np.array(t), np.array(x), np.array(y)) for vid, (t, x, y) in rows.items()
    }
    return MobilityTrace(samples)


@dataclass(frozen=True)
class WaypointParams:
    """Random-waypoint synthesis in a rectangular area."""

    population: int
    duration_s: float
    area_m: tuple = (2000.0, 2000.0)
    speed_mps: tuple = (8.0, 15.0)
    pause_s: tuple = (0.0, 5.0)
    sample_hz: float = 1.0

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if self.area_m[0] <= 0 or self.area_m[1] <= 0:
            raise ValueError("area must have positive extent")
        if self.speed_mps[0] < 0 or self.speed_mps[1] < self.speed_mps[0]:
            raise ValueError("speed range must be 0 <= vmin <= vmax")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")


def synth_mobility(params: WaypointParams, seed: int) -> MobilityTrace:
    """Deterministic random-waypoint trace sampled on a regular time grid."""
    w, h = params.area_m
    vmin, vmax = params.speed_mps
    n_samples = int(math.floor(params.duration_s * params.sample_hz)) + 1
    sample_t = np.arange(n_samples, dtype=np.float64) / params.sample_hz

    samples = {}
    for idx in range(params.population):
        vid = f"V{idx:03d}"
        rng = child_rng(seed, "mobility", idx)
        wp_t = [0.0]
        wp_x = [rng.uniform(0.0, w)]
        wp_y = [rng.uniform(0.0, h)]
        t = 0.0
        while t < params.duration_s and vmax > 0:
            tx, ty = rng.uniform(0.0, w), rng.uniform(0.0, h)
            speed = rng.uniform(vmin, vmax)
            dist = math.hypot(tx - wp_x[-1], ty - wp_y[-1])
            if speed <= 0 or dist == 0:
                continue
            t += dist / speed
            wp_t.append(t)
            wp_x.append(tx)
            wp_y.append(ty)
            pause = rng.uniform(*params.pause_s)
            if pause > 0:
                t += pause
                wp_t.append(t)
                wp_x.append(tx)
                wp_y.append(ty)
        if len(wp_t) == 1:  # stationary vehicle
            wp_t.append(params.duration_s + 1.0)
            wp_x.append(wp_x[0])
            wp_y.append(wp_y[0])
        wt = np.array(wp_t)
        wx = np.array(wp_x)
        wy = np.array(wp_y)
        samples[vid] = (
            sample_t,
            kernels.linear_interp(sample_t, wt, wx),
            kernels.linear_interp(sample_t, wt, wy),
        )
    return MobilityTrace(samples)


def grid_layout(population: int, spacing_m: float) -> MobilityTrace:
    """Static near-square lattice; with spacing below the radio range the
    unit-disk graph is connected (used by the epidemic-completeness checks)."""
    cols = int(math.ceil(math.sqrt(population)))
    samples = {}
    for idx in range(population):
        x = (idx % cols) * spacing_m
        y = (idx // cols) * spacing_m
        samples[f"V{idx:03d}"] = (
            np.array([0.0, 1.0]),
            np.array([x, x], dtype=np.float64),
            np.array([y, y], dtype=np.float64),
        )
    return MobilityTrace(samples)


def neighbors(trace: MobilityTrace, vehicle_id, t_s: float, range_m: float) -> set:
    """Unit-disk neighborhood of one vehicle at time t (symmetric by distance)."""
    if range_m <= 0:
        raise ValueError("range must be positive")
    x0, y0 = trace.position_of(vehicle_id, t_s)
    xs, ys = trace.positions_at(np.array([t_s]))
    out = set()
    for col, vid in enumerate(trace.vehicle_ids):
        if vid == vehicle_id:
            continue
        dx = xs[0, col] - x0
        dy = ys[0, col] - y0
        if dx * dx + dy * dy <= range_m * range_m:
            out.add(vid)
    return out
