"""Three-field SIMP with a reference-similarity term and OC updates.

The design variables ``x`` are density-filtered into ``x_filtered`` and then
Heaviside-projected into the physical field ``x_physical`` that the finite
element model sees.  Passive elements are pinned in the physical field.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import fea
from .geometry import LoadCase, WheelDomain, build_surface_loads, volume_fraction_of

KERNEL_EDGE_TOL = 1e-6
HISTORY_COLUMNS = ("iteration", "compliance", "similarity_l1", "volume", "beta", "change")


class VolumeBracketError(RuntimeError):
    """The OC bisection could not bracket the volume target."""


@dataclass(frozen=True)
class SimpConfig:
    p: float = 3.0
    E0: float = 1.0
    E_min: float = 1e-9
    nu: float = 0.3
    r_min: float = 1.3
    move: float = 0.2
    eta: float = 0.5
    tol: float = 0.01
    max_iterations: int = 300
    beta_initial: float = 1.0
    beta_growth: float = 2.0
    beta_cap: float = 64.0
    beta_interval: int = 40
    filter_mode: str = "density"  # "density" (three-field) or "sensitivity" (one-field)
    solver_tol: float | None = None
    lagrange_bracket: tuple[float, float] = (1e-9, 1e9)
    bisection_iterations: int = 60

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not 0 < self.move <= 1:
            raise ValueError("move limit must lie in (0, 1]")
        if not 0 < self.eta <= 1:
            raise ValueError("damping eta must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.r_min < 1:
            raise ValueError("r_min must be >= 1")
        if not 0 < self.beta_initial <= self.beta_cap or self.beta_growth < 1:
            raise ValueError("beta schedule must be positive and nondecreasing")
        if self.filter_mode not in ("density", "sensitivity"):
            raise ValueError(f"unknown filter mode {self.filter_mode!r}")

    @property
    def material(self) -> fea.SimpMaterial:
        return fea.SimpMaterial(E0=self.E0, E_min=self.E_min, p=self.p, nu=self.nu)


@dataclass(frozen=True)
class FilterKernel:
    """Linear hat weights ``r_min - dist`` over element centers closer than ``r_min``.

    ``H`` is indexed by column-major element numbers; ``Hs`` holds row sums.
    """

    H: sp.csr_matrix
    Hs: np.ndarray
    r_min: float
    shape: tuple[int, int]

    def neighbors(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        row = self.H.getrow(e)
        order = np.argsort(row.indices, kind="stable")
        return row.indices[order], row.data[order]


def build_filter_kernel(domain: WheelDomain, r_min: float) -> FilterKernel:
    if r_min < 1:
        raise ValueError("r_min must be >= 1")
    nelx, nely = domain.nelx, domain.nely
    reach = int(math.ceil(r_min)) - 1
    ex, ey = np.divmod(np.arange(nelx * nely), nely)
    rows, cols, vals = [], [], []
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            dist = math.hypot(dx, dy)
            if dist >= r_min - KERNEL_EDGE_TOL:  # vanishing weights are dropped
                continue
            fx, fy = ex + dx, ey + dy
            ok = (fx >= 0) & (fx < nelx) & (fy >= 0) & (fy < nely)
            rows.append(np.flatnonzero(ok))
            cols.append(nely * fx[ok] + fy[ok])
            vals.append(np.full(int(ok.sum()), r_min - dist))
    n = nelx * nely
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    H.sort_indices()
    Hs = np.asarray(H.sum(axis=1)).ravel()
    return FilterKernel(H=H, Hs=Hs, r_min=float(r_min), shape=domain.shape)


def _col(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=float).ravel(order="F")


def _img(v: np.ndarray, shape) -> np.ndarray:
    return v.reshape(shape, order="F")


def density_filter(x: np.ndarray, kernel: FilterKernel) -> np.ndarray:
    return _img(kernel.H @ _col(x) / kernel.Hs, kernel.shape)


def density_filter_transpose(g: np.ndarray, kernel: FilterKernel) -> np.ndarray:
    """Adjoint of :func:`density_filter` for chain-ruling gradients back to ``x``."""
    return _img(kernel.H.T @ (_col(g) / kernel.Hs), kernel.shape)


def sensitivity_filter(x: np.ndarray, dc: np.ndarray, kernel: FilterKernel,
                       x_floor: float = 1e-3) -> np.ndarray:
    xv = _col(x)
    out = kernel.H @ (xv * _col(dc)) / kernel.Hs / np.maximum(xv, x_floor)
    return _img(out, kernel.shape)


def heaviside_project(x_filtered: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Return the projected field and its derivative w.r.t. the filtered field."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    xt = np.asarray(x_filtered, dtype=float)
    e = math.exp(-beta)
    decay = np.exp(-beta * xt)
    return 1.0 - decay + xt * e, beta * decay + e


def similarity_sensitivity(reference: np.ndarray, lambda_sim: float) -> np.ndarray:
    """Constant gradient of the L1 similarity term: ``-lambda`` on solid reference pixels."""
    ref = np.asarray(reference, dtype=float)
    if not np.all((ref == 0) | (ref == 1)):
        raise ValueError("reference must be binary")
    if lambda_sim < 0:
        raise ValueError("lambda_sim must be >= 0")
    return -lambda_sim * ref


def _pin_passive(xbar: np.ndarray, domain: WheelDomain) -> np.ndarray:
    xbar = np.where(domain.passive_solid, 1.0, xbar)
    return np.where(domain.passive_void, 0.0, xbar)


def physical_field(x: np.ndarray, domain: WheelDomain, kernel: FilterKernel | None,
                   beta: float | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map design variables to ``(x_filtered, x_physical, d x_physical / d x_filtered)``.

    With ``kernel`` or ``beta`` set to None the corresponding stage is the
    identity.  Passive elements are pinned and get a zero derivative.
    """
    xt = density_filter(x, kernel) if kernel is not None else np.asarray(x, dtype=float)
    if beta is None:
        xbar, dxbar = xt.copy(), np.ones_like(xt)
    else:
        xbar, dxbar = heaviside_project(xt, beta)
    xbar = np.clip(_pin_passive(xbar, domain), 0.0, 1.0)
    dxbar = np.where(domain.design_mask, dxbar, 0.0)
    return xt, xbar, dxbar


def oc_update(x: np.ndarray, dobj: np.ndarray, dv: np.ndarray, target: float,
              config: SimpConfig, domain: WheelDomain,
              kernel: FilterKernel | None = None, beta: float | None = None,
              ) -> tuple[np.ndarray, float, float]:
    """Optimality-criteria step with the multiplier found by bisection.

    The multiplier is bisected (geometrically) inside ``config.lagrange_bracket``
    until the physical volume fraction over the free elements matches
    ``target``.  Returns ``(x_new, achieved_volume, multiplier)``.
    """
    x = np.asarray(x, dtype=float)
    design = domain.design_mask
    dobj = np.minimum(np.asarray(dobj, dtype=float), 0.0)
    dv = np.asarray(dv, dtype=float)
    if np.any(dv[design] <= 0):
        raise ValueError("volume gradient must be positive on free elements")
    lo_x = np.maximum(0.0, x - config.move)
    hi_x = np.minimum(1.0, x + config.move)
    ratio = np.where(design, -dobj / np.where(design, dv, 1.0), 0.0)

    def trial(lam: float) -> tuple[np.ndarray, float]:
        cand = np.clip(x * (ratio / lam) ** config.eta, lo_x, hi_x)
        cand = np.where(design, cand, x)
        _, xbar, _ = physical_field(cand, domain, kernel, beta)
        return cand, float(xbar[design].mean())

    lam_lo, lam_hi = config.lagrange_bracket
    x_lo, v_lo = trial(lam_lo)
    x_hi, v_hi = trial(lam_hi)
    if v_lo < target - 1e-3 or v_hi > target + 1e-3:
        raise VolumeBracketError(
            f"volume target {target:.4f} outside reachable range [{v_hi:.4f}, {v_lo:.4f}]")
    best = (x_lo, v_lo, lam_lo) if abs(v_lo - target) < abs(v_hi - target) else (x_hi, v_hi, lam_hi)
    for _ in range(config.bisection_iterations):
        lam = math.sqrt(lam_lo * lam_hi)
        cand, vol = trial(lam)
        if abs(vol - target) < abs(best[1] - target):
            best = (cand, vol, lam)
        if abs(vol - target) <= 1e-6:
            break
        if vol > target:
            lam_lo = lam
        else:
            lam_hi = lam
    return best


def _reachable(x: np.ndarray, target: float, config: SimpConfig, domain: WheelDomain,
               kernel: FilterKernel, beta: float, margin: float = 5e-4) -> bool:
    design = domain.design_mask
    down = np.where(design, np.maximum(0.0, x - config.move), x)
    up = np.where(design, np.minimum(1.0, x + config.move), x)
    v_down = physical_field(down, domain, kernel, beta)[1][design].mean()
    v_up = physical_field(up, domain, kernel, beta)[1][design].mean()
    return v_down <= target + margin and v_up >= target - margin


def next_beta(x: np.ndarray, target: float, config: SimpConfig, domain: WheelDomain,
              kernel: FilterKernel, beta: float) -> float:
    """Grow beta by ``beta_growth`` (capped), or less if the volume target would
    become unreachable within one move-limited OC step."""
    proposal = min(config.beta_cap, beta * config.beta_growth)
    if _reachable(x, target, config, domain, kernel, proposal):
        return proposal
    lo, hi = beta, proposal
    for _ in range(20):
        mid = math.sqrt(lo * hi)
        if _reachable(x, target, config, domain, kernel, mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class OptimizationResult:
    x_physical: np.ndarray
    x: np.ndarray
    compliance: float
    similarity_l1: float
    iterations: int
    converged: bool
    volume_fraction: float
    target_volume: float
    beta: float
    history: list[dict] = field(default_factory=list)


def _write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def compliance_gradient(x: np.ndarray, domain: WheelDomain, kernel: FilterKernel,
                        beta: float | None, loads: LoadCase | np.ndarray,
                        config: SimpConfig = SimpConfig()) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Compliance of the design ``x`` and its gradients w.r.t. ``x``.

    Returns ``(compliance, x_physical, dc_dx, dv_dx)``.  In density mode both
    gradients are chained through the projection and the filter adjoint; in
    sensitivity mode the compliance gradient is smoothed by the sensitivity
    filter and the volume gradient is one.
    """
    material = config.material
    three_field = config.filter_mode == "density"
    if three_field:
        _, xbar, dxbar = physical_field(x, domain, kernel, beta)
    else:
        _, xbar, dxbar = physical_field(x, domain, None, None)
    U = fea.assemble_and_solve(domain, xbar, loads, material, tol=config.solver_tol)
    c = fea.compliance(U, xbar, domain, material)
    dc = fea.compliance_sensitivity(U, xbar, domain, material)
    if three_field:
        return c, xbar, density_filter_transpose(dc * dxbar, kernel), density_filter_transpose(dxbar, kernel)
    return c, xbar, sensitivity_filter(x, dc, kernel), np.ones(domain.shape)


def run_topopt(domain: WheelDomain, reference: np.ndarray | None = None,
               lambda_sim: float = 0.0, force_ratio: float = 0.2,
               config: SimpConfig = SimpConfig(), volume_fraction: float | None = None,
               loads: LoadCase | None = None, history_dir: str | Path | None = None,
               snapshot_every: int = 0) -> OptimizationResult:
    """Minimize compliance plus ``lambda_sim * ||x* - x||_1`` under a volume constraint.

    The volume target comes from the reference unless ``volume_fraction`` is
    given.  Raises :class:`fea.SingularSystemError` if an analysis fails; a
    run that hits ``max_iterations`` is returned with ``converged=False``.
    """
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        target = volume_fraction if volume_fraction is not None else volume_fraction_of(reference, domain)
        sim_grad = similarity_sensitivity(reference, lambda_sim)
    else:
        if volume_fraction is None:
            raise ValueError("volume_fraction is required without a reference")
        target = float(volume_fraction)
        sim_grad = np.zeros(domain.shape)
    if loads is None:
        loads = build_surface_loads(domain, force_ratio)
    material = config.material
    three_field = config.filter_mode == "density"
    kernel = build_filter_kernel(domain, config.r_min)
    design = domain.design_mask

    x = _pin_passive(np.where(design, target, 0.0), domain)
    beta = config.beta_initial if three_field else None
    since_growth = 0
    history: list[dict] = []
    converged = False
    xbar_used, beta_used = None, beta
    it = 0

    out_dir = Path(history_dir) if history_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for it in range(1, config.max_iterations + 1):
        c, xbar, dc_x, dv = compliance_gradient(x, domain, kernel, beta, loads, config)
        dobj = np.where(design, dc_x + sim_grad, 0.0)
        x_new, vol, _ = oc_update(x, dobj, dv, target, config, domain,
                                  kernel if three_field else None, beta)
        change = float(np.max(np.abs(x_new - x)[design])) if design.any() else 0.0
        sim_l1 = float(np.abs(reference - xbar).sum()) if reference is not None else float("nan")
        history.append({"iteration": it, "compliance": c, "similarity_l1": sim_l1,
                        "volume": vol, "beta": float(beta) if beta is not None else 0.0,
                        "change": change})
        x = x_new
        beta_used = beta
        if out_dir is not None and snapshot_every > 0 and it % snapshot_every == 0:
            from .imageio import write_image
            _, snap, _ = physical_field(x, domain, kernel if three_field else None, beta)
            write_image(out_dir / f"iter_{it:04d}.pgm", snap)

        at_cap = beta is None or beta >= config.beta_cap
        if at_cap and change <= config.tol:
            converged = True
            break
        if not at_cap:
            since_growth += 1
            if since_growth >= config.beta_interval or change < config.tol:
                beta = next_beta(x, target, config, domain, kernel, beta)
                since_growth = 0

    _, xbar_used, _ = physical_field(x, domain, kernel if three_field else None, beta_used)
    U = fea.assemble_and_solve(domain, xbar_used, loads, material, tol=config.solver_tol)
    c = fea.compliance(U, xbar_used, domain, material)
    sim_l1 = float(np.abs(reference - xbar_used).sum()) if reference is not None else float("nan")
    if out_dir is not None:
        _write_history(history, out_dir / "history.csv")
    return OptimizationResult(
        x_physical=xbar_used, x=x, compliance=c, similarity_l1=sim_l1, iterations=it,
        converged=converged, volume_fraction=float(xbar_used[design].mean()),
        target_volume=float(target), beta=float(beta_used) if beta_used is not None else 0.0,
        history=history,
    )
