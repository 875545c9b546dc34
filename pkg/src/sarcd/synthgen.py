"""Synthetic bi-temporal SAR scenes with known change masks.

Reflectivity R is the squared region amplitude. Each timestamp gets
independent L-look speckle s ~ Gamma(L, 1/L) (mean 1), amplitude = sqrt(R s),
and optional spike pixels whose amplitude is multiplied by U[4, 8]. Spikes
stand in for speckle-induced false changes and never enter the truth mask.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

SPIKE_RANGE = (4.0, 8.0)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Rectangle (top, left, height, width) or polygon of (row, col) vertices."""

    name: str
    value: float  # amplitude for base regions, amplitude delta for changes
    rect: tuple | None = None
    polygon: tuple | None = None

    def mask(self, shape) -> np.ndarray:
        M, N = shape
        if self.rect is not None:
            top, left, h, w = self.rect
            out = np.zeros(shape, dtype=bool)
            out[top:top + h, left:left + w] = True
            return out
        rr, cc = np.mgrid[0:M, 0:N]
        return _inside_polygon(rr + 0.5, cc + 0.5, np.asarray(self.polygon, dtype=float))

    def check_bounds(self, shape):
        M, N = shape
        if self.rect is not None:
            top, left, h, w = self.rect
            ok = h > 0 and w > 0 and top >= 0 and left >= 0 and top + h <= M and left + w <= N
        else:
            pts = np.asarray(self.polygon, dtype=float)
            ok = len(pts) >= 3 and pts[:, 0].min() >= 0 and pts[:, 1].min() >= 0 \
                and pts[:, 0].max() <= M and pts[:, 1].max() <= N
        if not ok:
            raise SceneError(f"region '{self.name}' lies outside the {M}x{N} scene")


def _inside_polygon(r, c, pts) -> np.ndarray:
    """Even-odd rule for pixel centres."""
    inside = np.zeros(r.shape, dtype=bool)
    n = len(pts)
    for i in range(n):
        r0, c0 = pts[i]
        r1, c1 = pts[(i + 1) % n]
        crosses = (r0 > r) != (r1 > r)
        with np.errstate(divide="ignore", invalid="ignore"):
            c_at = c0 + (r - r0) * (c1 - c0) / (r1 - r0)
        inside ^= crosses & (c < c_at)
    return inside


@dataclass(frozen=True)
class SceneSpec:
    rows: int
    cols: int
    background: float = 100.0
    regions: tuple = ()
    changes: tuple = ()
    looks: float = 4.0
    spike_fraction: float = 0.0
    rng_seed: int = 0

    def validate(self):
        if self.rows < 1 or self.cols < 1:
            raise SceneError("scene dimensions must be positive")
        if not self.looks >= 1:
            raise SceneError("looks must be >= 1")
        if not 0 <= self.spike_fraction <= 0.2:
            raise SceneError("spike_fraction must lie in [0, 0.2]")
        if self.background < 0:
            raise SceneError("background amplitude must be non-negative")
        for reg in self.regions + self.changes:
            reg.check_bounds((self.rows, self.cols))
        for reg in self.regions:
            if reg.value < 0:
                raise SceneError(f"region '{reg.name}' has negative amplitude")


def reflectivity(spec: SceneSpec):
    """Noise-free reflectivity maps (R1, R2) and the truth mask."""
    shape = (spec.rows, spec.cols)
    amp = np.full(shape, float(spec.background))
    for reg in spec.regions:
        amp[reg.mask(shape)] = reg.value
    amp2 = amp.copy()
    truth = np.zeros(shape, dtype=np.int64)
    for ch in spec.changes:
        m = ch.mask(shape)
        amp2[m] = np.maximum(amp[m] + ch.value, 0.0)
        truth[m] = 1
    return amp ** 2, amp2 ** 2, truth


def generate(spec: SceneSpec):
    """Return (I1, I2, truth): float amplitude images and a 0/1 change mask."""
    spec.validate()
    R1, R2, truth = reflectivity(spec)
    shape = R1.shape
    speckle1, speckle2, spikes1, spikes2 = (
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.rng_seed).spawn(4))
    L = float(spec.looks)
    out = []
    for R, g_s, g_p in ((R1, speckle1, spikes1), (R2, speckle2, spikes2)):
        amp = np.sqrt(R * g_s.gamma(L, 1.0 / L, size=shape))
        if spec.spike_fraction > 0:
            hit = g_p.random(shape) < spec.spike_fraction
            amp[hit] *= g_p.uniform(*SPIKE_RANGE, size=int(hit.sum()))
        out.append(amp)
    return out[0], out[1], truth


# ------------------------------------------------------------------ config I/O

def _region_from_section(name, sec, value_key):
    shape = sec.get("shape", "rect").strip()
    try:
        value = float(sec[value_key])
    except KeyError:
        raise SceneError(f"region '{name}' is missing '{value_key}'") from None
    if shape == "rect":
        try:
            rect = tuple(int(sec[k]) for k in ("top", "left", "height", "width"))
        except KeyError as exc:
            raise SceneError(f"region '{name}' is missing {exc}") from None
        return Region(name, value, rect=rect)
    if shape == "polygon":
        pts = [tuple(float(v) for v in p.split()) for p in sec["points"].split(",")]
        if any(len(p) != 2 for p in pts):
            raise SceneError(f"region '{name}': points must be 'row col' pairs")
        return Region(name, value, polygon=tuple(pts))
    raise SceneError(f"region '{name}': unknown shape '{shape}'")


_SCENE_KEYS = {"rows", "cols", "background", "looks", "spike_fraction", "seed"}


def parse_scene(text: str) -> SceneSpec:
    """Parse a scene file: a [scene] section plus [region NAME] / [change NAME] sections.

    Region sections carry shape = rect (top, left, height, width) or
    shape = polygon (points = "r c, r c, ..."); base regions set `amplitude`,
    change regions set `delta` (amplitude added at timestamp 2).
    """
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "scene" not in cp:
        raise SceneError("missing [scene] section")
    sc = cp["scene"]
    unknown = set(sc) - _SCENE_KEYS
    if unknown:
        raise SceneError(f"unknown [scene] keys: {sorted(unknown)}")
    missing = {"rows", "cols"} - set(sc)
    if missing:
        raise SceneError(f"missing [scene] keys: {sorted(missing)}")
    regions, changes = [], []
    for name in cp.sections():
        if name == "scene":
            continue
        kind, _, label = name.partition(" ")
        if kind == "region":
            regions.append(_region_from_section(label, cp[name], "amplitude"))
        elif kind == "change":
            changes.append(_region_from_section(label, cp[name], "delta"))
        else:
            raise SceneError(f"unknown section [{name}]")
    try:
        spec = SceneSpec(rows=sc.getint("rows"), cols=sc.getint("cols"),
                         background=sc.getfloat("background", 100.0),
                         regions=tuple(regions), changes=tuple(changes),
                         looks=sc.getfloat("looks", 4.0),
                         spike_fraction=sc.getfloat("spike_fraction", 0.0),
                         rng_seed=sc.getint("seed", 0))
    except (TypeError, ValueError) as exc:
        raise SceneError(f"bad [scene] value: {exc}") from None
    spec.validate()
    return spec


def scene_to_text(spec: SceneSpec) -> str:
    lines = ["[scene]", f"rows = {spec.rows}", f"cols = {spec.cols}",
             f"background = {spec.background}", f"looks = {spec.looks}",
             f"spike_fraction = {spec.spike_fraction}", f"seed = {spec.rng_seed}"]
    for kind, key, regs in (("region", "amplitude", spec.regions),
                            ("change", "delta", spec.changes)):
        for reg in regs:
            lines += ["", f"[{kind} {reg.name}]"]
            if reg.rect is not None:
                lines.append("shape = rect")
                lines += [f"{k} = {v}" for k, v in zip(("top", "left", "height", "width"), reg.rect)]
            else:
                lines.append("shape = polygon")
                lines.append("points = " + ", ".join(f"{r:g} {c:g}" for r, c in reg.polygon))
            lines.append(f"{key} = {reg.value}")
    return "\n".join(lines) + "\n"


def benchmark_scene(spike_fraction: float = 0.0, looks: float = 4.0, size: int = 256,
                    rng_seed: int = 0) -> SceneSpec:
    """Test scene: a few land-cover patches plus one 40 x 40 brightening change."""
    regions = (
        Region("field", 60.0, rect=(20, 20, 90, 110)),
        Region("urban", 160.0, rect=(150, 30, 70, 60)),
        Region("forest", 130.0, polygon=((30, 170), (120, 230), (60, 250))),
    )
    changes = (Region("new_structure", 120.0, rect=(140, 150, 40, 40)),)
    return SceneSpec(size, size, 100.0, regions, changes, looks, spike_fraction, rng_seed)
