"""Procedural binary wheel images used in place of a collected design set."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import WheelDomain, build_wheel_domain, element_radii


@dataclass(frozen=True)
class SyntheticWheelSpec:
    spoke_count: int = 5
    spoke_width: float = 0.14   # fraction of the outer radius
    twist: float = 0.0          # radians swept from hub boss to rim
    hub_boss: float = 0.32      # boss radius as a fraction of the outer radius
    phase: float = 0.0          # radians
    resolution: int = 64

    def __post_init__(self):
        if self.spoke_count < 2:
            raise ValueError("spoke_count must be >= 2")
        if not 0 < self.spoke_width < 1:
            raise ValueError("spoke_width must lie in (0, 1)")
        if not 0 <= self.hub_boss < 1:
            raise ValueError("hub_boss must lie in [0, 1)")


@dataclass(frozen=True)
class WheelFamily:
    """Parameter ranges sampled uniformly (spoke counts inclusive)."""

    spoke_counts: tuple[int, int] = (3, 8)
    spoke_width: tuple[float, float] = (0.08, 0.2)
    twist: tuple[float, float] = (0.0, 0.0)
    hub_boss: tuple[float, float] = (0.25, 0.4)
    random_phase: bool = True


STRAIGHT = WheelFamily()
TWISTED = WheelFamily(twist=(0.9, 1.4))


def render_wheel(spec: SyntheticWheelSpec, domain: WheelDomain | None = None) -> np.ndarray:
    """Rasterize one wheel; passive rim and void classes of the domain are respected."""
    if domain is None:
        domain = build_wheel_domain(spec.resolution)
    if domain.shape != (spec.resolution, spec.resolution):
        raise ValueError("domain resolution does not match the wheel spec")
    n = spec.resolution
    r = element_radii(n, n)
    ey, ex = np.mgrid[0:n, 0:n]
    px = ex + 0.5 - n / 2.0
    py = n / 2.0 - (ey + 0.5)
    theta = np.arctan2(py, px)

    outer = domain.outer_radius
    inner_rim = outer - domain.rim_thickness
    boss = spec.hub_boss * outer
    span = max(inner_rim - boss, 1e-9)
    sweep = spec.twist * np.clip((r - boss) / span, 0.0, 1.0)
    half_width = 0.5 * spec.spoke_width * outer

    solid = r <= boss
    pitch = 2.0 * math.pi / spec.spoke_count
    for k in range(spec.spoke_count):
        d = theta - (spec.phase + k * pitch + sweep)
        d = np.arctan2(np.sin(d), np.cos(d))
        solid |= (np.cos(d) > 0) & (r * np.abs(np.sin(d)) <= half_width)
    solid = (solid & domain.design_mask) | domain.passive_solid
    return solid.astype(float)


def sample_spec(rng: np.random.Generator, family: WheelFamily, resolution: int) -> SyntheticWheelSpec:
    lo, hi = family.spoke_counts
    return SyntheticWheelSpec(
        spoke_count=int(rng.integers(lo, hi + 1)),
        spoke_width=float(rng.uniform(*family.spoke_width)),
        twist=float(rng.uniform(*family.twist)),
        hub_boss=float(rng.uniform(*family.hub_boss)),
        phase=float(rng.uniform(0.0, 2.0 * math.pi)) if family.random_phase else 0.0,
        resolution=resolution,
    )


def generate_synthetic_wheels(count: int, resolution: int, family: WheelFamily = STRAIGHT,
                              seed: int = 0) -> list[np.ndarray]:
    """Deterministic list of ``count`` binary wheel images drawn from ``family``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    domain = build_wheel_domain(resolution)
    return [render_wheel(sample_spec(rng, family, resolution), domain) for _ in range(count)]
