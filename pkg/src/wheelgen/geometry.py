"""Wheel design domain: element classes, clamped hub nodes and rim surface loads.

Grid conventions used throughout the package
--------------------------------------------
* Element fields are 2D arrays of shape ``(nely, nelx)``; row ``ey`` counts
  downwards, column ``ex`` to the right, exactly like an image.
* Elements are numbered column-major, ``e = nely * ex + ey``
  (``field.ravel(order="F")``).
* Nodes ``(ix, iy)`` with ``0 <= ix <= nelx`` and ``0 <= iy <= nely`` are
  numbered ``n = (nely + 1) * ix + iy`` and carry dofs ``2n`` (x) and
  ``2n + 1`` (y).  The physical y axis points up, i.e. against ``iy``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MIN_RESOLUTION = 8
VF_MIN, VF_MAX = 0.05, 0.95


@dataclass(frozen=True)
class WheelDomain:
    """Square (or rectangular) design domain with passive element classes.

    ``passive_solid``, ``passive_void`` and ``design_mask`` partition the
    elements.  ``fixed_dofs`` are clamped; ``loaded_nodes`` are the nodes on
    which the rim surface traction acts.
    """

    nelx: int
    nely: int
    passive_solid: np.ndarray
    passive_void: np.ndarray
    design_mask: np.ndarray
    fixed_dofs: np.ndarray
    loaded_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    outer_radius: float = 0.0
    rim_thickness: float = 0.0
    hub_radius: float = 0.0

    def __post_init__(self) -> None:
        shape = (self.nely, self.nelx)
        for name in ("passive_solid", "passive_void", "design_mask"):
            arr = np.asarray(getattr(self, name), dtype=bool)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        total = (self.passive_solid.astype(int) + self.passive_void.astype(int)
                 + self.design_mask.astype(int))
        if not np.all(total == 1):
            raise ValueError("element classes must partition the grid")
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        if fixed.size == 0:
            raise ValueError("at least one fixed dof is required")
        if fixed[0] < 0 or fixed[-1] >= self.n_dofs:
            raise ValueError("fixed dof index out of range")
        fixed.setflags(write=False)
        object.__setattr__(self, "fixed_dofs", fixed)
        loaded = np.asarray(self.loaded_nodes, dtype=np.int64)
        loaded.setflags(write=False)
        object.__setattr__(self, "loaded_nodes", loaded)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nely, self.nelx)

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def center(self) -> tuple[float, float]:
        """Grid center in node coordinates ``(ix, iy)``."""
        return (self.nelx / 2.0, self.nely / 2.0)

    @property
    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.fixed_dofs)

    @cached_property
    def solve_dofs(self) -> np.ndarray:
        """Free dofs of nodes touching at least one element that is not passive void.

        Nodes surrounded by void carry only the E_min filler stiffness and no
        load, so they are held at zero instead of being solved for.
        """
        nodes = _node_ids(_touching_nodes(~self.passive_void))
        dofs = np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))
        dofs = np.setdiff1d(dofs, self.fixed_dofs)
        dofs.setflags(write=False)
        return dofs

    def node_index(self, ix, iy):
        return (self.nely + 1) * np.asarray(ix) + np.asarray(iy)


def element_radii(nelx: int, nely: int) -> np.ndarray:
    """Distance of every element center from the grid center, shape ``(nely, nelx)``."""
    ey, ex = np.mgrid[0:nely, 0:nelx]
    dx = ex + 0.5 - nelx / 2.0
    dy = ey + 0.5 - nely / 2.0
    return np.sqrt(dx * dx + dy * dy)


def _touching_nodes(mask: np.ndarray) -> np.ndarray:
    """Boolean node grid ``(nely+1, nelx+1)``: node touches at least one masked element."""
    p = np.pad(mask, 1, constant_values=False)
    return p[:-1, :-1] | p[1:, :-1] | p[:-1, 1:] | p[1:, 1:]


def _node_ids(node_mask: np.ndarray) -> np.ndarray:
    # node grid is indexed [iy, ix]; column-major flattening gives (nely+1)*ix + iy
    return np.flatnonzero(node_mask.ravel(order="F"))


def default_radii(resolution: int) -> tuple[float, float, float]:
    """Default ``(outer_radius, rim_thickness, hub_radius)`` for a resolution."""
    if resolution < 16:
        return (resolution / 2.0 - 1.0, 1.0, resolution / 10.0)
    return (resolution / 2.0 - 2.0, max(2.0, resolution / 32.0), resolution / 10.0)


def build_wheel_domain(resolution: int, outer_radius: float | None = None,
                       rim_thickness: float | None = None,
                       hub_radius: float | None = None) -> WheelDomain:
    """Build the square wheel domain of ``resolution`` x ``resolution`` elements.

    Elements are classified by the distance ``r`` of their center from the
    grid center: void outside the outer circle and inside the hub hole, solid
    in the rim annulus ``outer - rim < r <= outer``, free otherwise.  Nodes on
    the hub hole boundary are clamped; nodes between rim and outer void are
    the loaded surface.
    """
    if int(resolution) != resolution or resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be an integer >= {MIN_RESOLUTION}")
    resolution = int(resolution)
    d_outer, d_rim, d_hub = default_radii(resolution)
    outer = d_outer if outer_radius is None else float(outer_radius)
    rim = d_rim if rim_thickness is None else float(rim_thickness)
    hub = d_hub if hub_radius is None else float(hub_radius)
    if rim <= 0:
        raise ValueError("rim_thickness must be positive")
    if not 0 < hub < outer - rim:
        raise ValueError("radii must satisfy 0 < hub_radius < outer_radius - rim_thickness")
    if 2 * outer > resolution:
        raise ValueError("outer circle does not fit in the grid")

    r = element_radii(resolution, resolution)
    outside = r > outer
    hole = r < hub
    void = outside | hole
    solid = (r > outer - rim) & ~void
    design = ~(void | solid)

    hub_nodes = _touching_nodes(hole) & _touching_nodes(~hole)
    fixed_nodes = _node_ids(hub_nodes)
    fixed_dofs = np.sort(np.concatenate([2 * fixed_nodes, 2 * fixed_nodes + 1]))
    surface = _touching_nodes(solid) & _touching_nodes(outside)

    return WheelDomain(
        nelx=resolution, nely=resolution,
        passive_solid=solid, passive_void=void, design_mask=design,
        fixed_dofs=fixed_dofs, loaded_nodes=_node_ids(surface),
        outer_radius=outer, rim_thickness=rim, hub_radius=hub,
    )


@dataclass(frozen=True)
class LoadCase:
    force_ratio: float
    normal_magnitude: float
    shear_magnitude: float
    nodal_forces: np.ndarray


def build_surface_loads(domain: WheelDomain, force_ratio: float,
                        shear_scale: float | None = None) -> LoadCase:
    """Uniform rim traction: inward normal ``force_ratio * s`` and CCW shear ``s`` per node.

    Directions are taken in the physical frame (x right, y up) about the
    domain center.  By default ``s = 1 / n_loaded`` so the total shear
    traction is one unit whatever the resolution.
    """
    if not force_ratio >= 0:
        raise ValueError("force_ratio must be >= 0")
    nodes = domain.loaded_nodes
    if nodes.size == 0:
        raise ValueError("domain has no loaded surface nodes")
    if shear_scale is None:
        shear_scale = 1.0 / nodes.size
    ix, iy = np.divmod(nodes, domain.nely + 1)
    cx, cy = domain.center
    px = ix - cx
    py = cy - iy  # physical y points up
    rad = np.hypot(px, py)
    if np.any(rad == 0):
        raise ValueError("loaded node coincides with the domain center")
    ux, uy = px / rad, py / rad
    normal = force_ratio * shear_scale
    fx = -normal * ux - shear_scale * uy
    fy = -normal * uy + shear_scale * ux
    forces = np.zeros(domain.n_dofs)
    np.add.at(forces, 2 * nodes, fx)
    np.add.at(forces, 2 * nodes + 1, fy)
    forces[domain.fixed_dofs] = 0.0
    forces.setflags(write=False)
    return LoadCase(force_ratio=float(force_ratio), normal_magnitude=normal,
                    shear_magnitude=shear_scale, nodal_forces=forces)


def volume_fraction_of(reference: np.ndarray, domain: WheelDomain) -> float:
    """Solid share of the reference inside the free region, clamped to [0.05, 0.95]."""
    ref = np.asarray(reference)
    if ref.shape != domain.shape:
        raise ValueError(f"reference shape {ref.shape} does not match domain {domain.shape}")
    if not np.all((ref == 0) | (ref == 1)):
        raise ValueError("reference must be binary")
    n_design = int(domain.design_mask.sum())
    if n_design == 0:
        raise ValueError("domain has no design elements")
    f = float(ref[domain.design_mask].sum()) / n_design
    return min(max(f, VF_MIN), VF_MAX)
