"""Procedural 1-D height fields and the robot-centred elevation scan."""
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidSpec

KINDS = ("flat", "rough", "gaps", "stepping_stones")


@dataclass(frozen=True)
class HeightField:
    """Elevation samples ``samples[k]`` at ``origin + k * spacing``.

    ``oob`` is ``"clamp"`` (edge value continues) or a float used as the
    elevation everywhere outside the sampled range (e.g. ``-pit_depth``).
    """

    origin: float
    spacing: float
    samples: np.ndarray
    oob: Union[str, float] = "clamp"

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.spacing <= 0:
            raise InvalidSpec("spacing must be positive")
        if s.ndim != 1 or s.size < 2:
            raise InvalidSpec("a height field needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise InvalidSpec("elevation samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.oob != "clamp":
            object.__setattr__(self, "oob", float(self.oob))

    @property
    def x_end(self):
        return self.origin + (self.samples.size - 1) * self.spacing

    @property
    def fill(self):
        """(left, right) elevations used outside the sampled range."""
        if self.oob == "clamp":
            return float(self.samples[0]), float(self.samples[-1])
        return self.oob, self.oob

    def height_at(self, x):
        return height_at(self, x)

    def to_text(self):
        xs = self.origin + self.spacing * np.arange(self.samples.size)
        rows = [f"{x:.6f} {h:.9g}" for x, h in zip(xs, self.samples)]
        return "# x_m elevation_m\n" + "\n".join(rows) + "\n"


@dataclass(frozen=True)
class TerrainSpec:
    kind: str = "flat"
    seed: int = 0
    start_x: float = -5.0
    length: float = 200.0
    spacing: float = 0.05
    flat_start: float = 3.0
    pit_depth: float = 3.0
    gap_width: float = 1.0
    ground_length: float = 2.0
    stone_width: float = 0.4
    amplitude: float = 0.05
    correlation_length: float = 0.3
    jitter: float = 0.0
    oob: Union[str, float] = "clamp"

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown terrain kind {self.kind!r}")
        positive = ["length", "spacing", "pit_depth", "gap_width", "ground_length",
                    "stone_width", "amplitude", "correlation_length"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidSpec(f"{name} must be positive")
        if self.flat_start < 0 or not 0 <= self.jitter < 1:
            raise InvalidSpec("flat_start must be >= 0 and jitter in [0, 1)")


def _bands(xs, start, on_width, off_width, rng, jitter):
    """Boolean mask of 'off' bands (pits) in a periodic on/off pattern beginning at ``start``."""
    pit = np.zeros(xs.size, dtype=bool)
    x = start
    end = xs[-1]
    while x <= end:
        on = on_width * (1.0 + jitter * rng.uniform(-1.0, 1.0))
        x += on
        off = off_width * (1.0 + jitter * rng.uniform(-1.0, 1.0))
        pit |= (xs > x) & (xs < x + off)
        x += off
    return pit


def generate(spec: TerrainSpec) -> HeightField:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.length / spec.spacing)) + 1
    xs = spec.start_x + spec.spacing * np.arange(n)
    h = np.zeros(n)
    platform_end = spec.flat_start
    if spec.kind == "gaps":
        h[_bands(xs, platform_end, spec.ground_length, spec.gap_width, rng, spec.jitter)] = -spec.pit_depth
    elif spec.kind == "stepping_stones":
        h[_bands(xs, platform_end, spec.stone_width, spec.gap_width, rng, spec.jitter)] = -spec.pit_depth
    elif spec.kind == "rough":
        noise = rng.standard_normal(n)
        sigma = spec.correlation_length / spec.spacing
        half = int(np.ceil(4 * sigma))
        k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
        smooth = np.convolve(noise, k / k.sum(), mode="same")
        h = spec.amplitude * smooth / np.max(np.abs(smooth))
    oob = spec.oob
    return HeightField(origin=float(xs[0]), spacing=spec.spacing, samples=h, oob=oob)


def flat(start_x=-5.0, length=200.0, spacing=0.05) -> HeightField:
    return generate(TerrainSpec(kind="flat", start_x=start_x, length=length, spacing=spacing))


def height_at(field: HeightField, x):
    """Linear interpolation between samples; out-of-range per ``field.oob``."""
    x = np.asarray(x, dtype=np.float64)
    s = field.samples
    last = s.size - 1
    u = (x - field.origin) / field.spacing
    i = np.clip(np.floor(u), 0, last - 1).astype(np.intp)
    frac = u - i
    h = s[i] + frac * (s[i + 1] - s[i])
    left, right = field.fill
    h = np.where(u < 0, left, np.where(u > last, right, h))
    return float(h) if h.ndim == 0 else h


def scan_offsets(n_cells: int, cell: float) -> np.ndarray:
    """Cell-centre x offsets of a scan row centred on the base."""
    return (np.arange(n_cells) - (n_cells - 1) / 2.0) * cell


def sample_heightmap(field: HeightField, state, n_cells: int = 9, cell: float = 0.3) -> np.ndarray:
    """Terrain height minus base height at ``n_cells`` cells centred under the base.

    ``state`` is anything exposing ``x`` and ``z`` (a ``RobotState`` or a pair).
    """
    if n_cells < 1 or cell <= 0:
        raise InvalidSpec("need n_cells >= 1 and cell > 0")
    if hasattr(state, "x"):
        x, z = state.x, state.z
    else:
        x, z = state
    return np.asarray(height_at(field, x + scan_offsets(n_cells, cell)), dtype=np.float64).reshape(n_cells) - z


def pack(fields):
    """Pack height fields into the padded arrays the physics kernel reads."""
    width = max(f.samples.size for f in fields)
    samples = np.zeros((len(fields), width))
    count = np.empty(len(fields), dtype=np.int64)
    origin = np.empty(len(fields))
    spacing = np.empty(len(fields))
    left = np.empty(len(fields))
    right = np.empty(len(fields))
    for i, f in enumerate(fields):
        samples[i, :f.samples.size] = f.samples
        count[i] = f.samples.size
        origin[i] = f.origin
        spacing[i] = f.spacing
        left[i], right[i] = f.fill
    return samples, count, origin, spacing, left, right
