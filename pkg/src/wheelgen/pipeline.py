"""Iterative design exploration: topology optimization jobs, dedup, generator retraining,
attribute evaluation and Pareto extraction."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fea
from .began import BeganConfig, sample_designs, train_began
from .geometry import LoadCase, WheelDomain, build_surface_loads, build_wheel_domain
from .imageio import binarize, resample, write_image
from .novelty import NoveltyModel, novelty_scores, train_autoencoder
from .synthetic import STRAIGHT, generate_synthetic_wheels
from .topopt import SimpConfig, VolumeBracketError, run_topopt

log = logging.getLogger(__name__)

SIMILARITY_LEVELS = (0.0005, 0.005, 0.05, 0.5, 5.0)
FORCE_RATIO_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4)
DEDUP_THRESHOLD = 1000 / 128 ** 2
WORKERS_ENV = "WHEELGEN_WORKERS"
RECORD_COLUMNS = ("id", "iteration", "origin", "parent_id", "lambda_sim", "force_ratio",
                  "compliance", "cost", "novelty", "norm_compliance", "norm_cost",
                  "norm_novelty", "feasible")
PAIRWISE = {
    "compliance-cost": ("compliance", "cost"),
    "novelty-compliance": ("novelty", "compliance"),
    "novelty-cost": ("novelty", "cost"),
}


@dataclass(frozen=True)
class PipelineConfig:
    similarity_levels: tuple[float, ...] = SIMILARITY_LEVELS
    force_ratio_levels: tuple[float, ...] = FORCE_RATIO_LEVELS
    dedup_threshold: float = DEDUP_THRESHOLD
    termination_threshold: float = 0.3
    max_iterations: int = 5
    began_samples: int = 512
    max_generator_references: int = 0  # 0 keeps every surviving generated reference
    previous_count: int = 100         # synthetic previous designs when none are ingested
    resolution: int = 64
    workers: int = 1
    seed: int = 0
    evaluation_force_ratio: float = 0.2
    binarize_threshold: float = 0.5
    novelty_epochs: int = 50
    novelty_split: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "similarity_levels", tuple(float(v) for v in self.similarity_levels))
        object.__setattr__(self, "force_ratio_levels", tuple(float(v) for v in self.force_ratio_levels))
        if not self.similarity_levels or not self.force_ratio_levels:
            raise ValueError("level lists must be nonempty")
        if any(v < 0 for v in self.similarity_levels + self.force_ratio_levels):
            raise ValueError("levels must be nonnegative")
        if not self.dedup_threshold > 0:
            raise ValueError("dedup_threshold must be positive")
        if not self.termination_threshold > 0:
            raise ValueError("termination_threshold must be positive")
        if self.max_iterations < 1 or self.workers < 1 or self.began_samples < 0:
            raise ValueError("max_iterations and workers must be >= 1, began_samples >= 0")


@dataclass(frozen=True)
class Job:
    index: int
    reference_index: int
    reference_id: str
    lambda_sim: float
    force_ratio: float


@dataclass
class DesignRecord:
    id: str
    image: np.ndarray
    iteration: int
    origin: str                      # previous | topopt | generator
    parent_id: str = ""
    lambda_sim: float = float("nan")
    force_ratio: float = float("nan")
    compliance: float = float("nan")
    cost: float = float("nan")
    novelty: float = float("nan")
    normalized: tuple[float, float, float] = (float("nan"),) * 3
    feasible: bool = True


@dataclass(frozen=True)
class TerminationDecision:
    proceed: bool
    ratio: float | None

    def __bool__(self) -> bool:
        return self.proceed

    @property
    def stop(self) -> bool:
        return not self.proceed


def _levels(levels, defaults) -> list[float]:
    if isinstance(levels, (int, np.integer)):
        if not 1 <= levels <= len(defaults):
            raise ValueError(f"level count must lie in [1, {len(defaults)}]")
        return list(defaults[:levels])
    return [float(v) for v in levels]


def expand_conditions(references, similarity_levels=SIMILARITY_LEVELS,
                      force_ratio_levels=FORCE_RATIO_LEVELS) -> list[Job]:
    """Cartesian product of references, similarity levels and force ratios.

    ``references`` is a list of ids (or a count, giving ids ``0..n-1``); an
    integer level argument takes that many of the default levels.  Jobs are
    ordered by reference position, then ascending ``lambda``, then ascending
    force ratio.
    """
    refs = [str(i) for i in range(references)] if isinstance(references, (int, np.integer)) else [str(r) for r in references]
    lams = sorted(_levels(similarity_levels, SIMILARITY_LEVELS))
    frs = sorted(_levels(force_ratio_levels, FORCE_RATIO_LEVELS))
    if not refs or not lams or not frs:
        raise ValueError("references and level lists must be nonempty")
    jobs = []
    for ri, rid in enumerate(refs):
        for lam in lams:
            for fr in frs:
                jobs.append(Job(len(jobs), ri, rid, lam, fr))
    return jobs


def _flat_binary(images, shape=None) -> np.ndarray:
    imgs = [np.asarray(im, dtype=float) for im in images]
    if not imgs:
        return np.zeros((0, 0 if shape is None else int(np.prod(shape))))
    s = imgs[0].shape if shape is None else shape
    for im in imgs:
        if im.shape != s:
            raise ValueError(f"resolution mismatch: {im.shape} vs {s}")
    return np.stack([binarize(im).ravel() for im in imgs])


def l1_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise pixel L1 distances between rows of two binary matrices."""
    if a.size == 0 or b.size == 0:
        return np.zeros((len(a), len(b)))
    return a.sum(1)[:, None] + b.sum(1)[None, :] - 2.0 * (a @ b.T)


def dedup_filter(candidates, pool, threshold_fraction: float = DEDUP_THRESHOLD) -> list[int]:
    """Indices of candidates accepted by a greedy pass in the given order.

    A candidate is kept when its binarized L1 distance to every pooled image
    and every previously accepted candidate exceeds
    ``threshold_fraction * pixel_count``.
    """
    candidates = list(candidates)
    if not candidates:
        return []
    shape = np.asarray(candidates[0]).shape
    cand = _flat_binary(candidates, shape)
    base = _flat_binary(list(pool), shape)
    limit = threshold_fraction * cand.shape[1]
    if len(base):
        ok = l1_distances(cand, base).min(axis=1) > limit
    else:
        ok = np.ones(len(cand), bool)
    accepted: list[int] = []
    for i in range(len(cand)):
        if not ok[i]:
            continue
        if accepted:
            d = np.abs(cand[accepted] - cand[i]).sum(axis=1)
            if d.min() <= limit:
                continue
        accepted.append(i)
    return accepted


def termination_check(new_count: int, prev_total: int, threshold: float = 0.3,
                      first_iteration: bool = False) -> TerminationDecision:
    """Continue iff ``new_count / prev_total >= threshold``; the first iteration always continues."""
    if first_iteration:
        return TerminationDecision(True, new_count / prev_total if prev_total > 0 else None)
    if prev_total <= 0:
        raise ValueError("prev_total must be positive after the first iteration")
    ratio = new_count / prev_total
    return TerminationDecision(ratio >= threshold, ratio)


def summarize_counts(previous: int, topopt_counts, generator_counts=()) -> dict:
    """Stage counts in the per-iteration table layout, with running totals and ratios."""
    rows, total = [], 0
    gens = list(generator_counts) + [None] * (len(topopt_counts) - len(generator_counts))
    for i, (n, g) in enumerate(zip(topopt_counts, gens), start=1):
        ratio = None if i == 1 else n / total
        total += n
        rows.append({"iteration": i, "topopt_new": n, "accumulated": total,
                     "ratio": ratio, "generator_references": g})
    return {"previous": previous, "iterations": rows, "accumulated": total,
            "all_designs": previous + total}


# --- evaluation ------------------------------------------------------------

def has_load_path(design: np.ndarray, domain: WheelDomain) -> bool:
    """True when solid elements connect the clamped hub to the loaded rim (edge adjacency)."""
    solid = (np.asarray(design) >= 0.5) & ~domain.passive_void | domain.passive_solid
    labels, _ = ndimage.label(solid)
    fixed_nodes = np.unique(domain.fixed_dofs // 2)
    ix, iy = np.divmod(fixed_nodes, domain.nely + 1)
    hub = np.zeros(domain.shape, bool)
    for dy in (0, -1):
        for dx in (0, -1):
            ey, ex = iy + dy, ix + dx
            ok = (ey >= 0) & (ey < domain.nely) & (ex >= 0) & (ex < domain.nelx)
            hub[ey[ok], ex[ok]] = True
    hub_labels = set(np.unique(labels[hub & solid])) - {0}
    rim_labels = set(np.unique(labels[domain.passive_solid])) - {0}
    return bool(hub_labels & rim_labels)


def evaluate_attributes(design: np.ndarray, domain: WheelDomain, load_case: LoadCase,
                        novelty_model: NoveltyModel | None = None,
                        material: fea.SimpMaterial = fea.SimpMaterial()) -> dict:
    """Compliance, cost (solid share of the design region) and novelty of a binary design.

    Passive classes are imposed before the analysis.  Designs without a
    solid path from hub to rim are infeasible with infinite compliance.
    """
    img = np.asarray(design, dtype=float)
    if img.shape != domain.shape:
        raise ValueError(f"design shape {img.shape} does not match domain {domain.shape}")
    xbar = binarize(img)
    xbar[domain.passive_solid] = 1.0
    xbar[domain.passive_void] = 0.0
    cost = float(xbar[domain.design_mask].mean())
    novelty = novelty_scores(novelty_model, [xbar])[0] if novelty_model is not None else 0.0
    feasible = has_load_path(xbar, domain)
    c = math.inf
    if feasible:
        try:
            U = fea.assemble_and_solve(domain, xbar, load_case, material)
            c = fea.compliance(U, xbar, domain, material)
        except fea.SingularSystemError:
            feasible = False
    return {"compliance": c, "cost": cost, "novelty": float(novelty), "feasible": feasible}


def pareto_mask(objectives: np.ndarray) -> np.ndarray:
    """Non-dominated rows when every column is minimized.

    Rows are visited in lexicographic order, where any dominating row comes
    first, and each is compared with the front collected so far.
    """
    obj = np.asarray(objectives, dtype=float)
    n = len(obj)
    mask = np.zeros(n, bool)
    if n == 0:
        return mask
    order = np.lexsort(obj.T[::-1])
    front = np.empty((0, obj.shape[1]))
    for i in order:
        p = obj[i]
        if len(front):
            le = np.all(front <= p, axis=1)
            lt = np.any(front < p, axis=1)
            if np.any(le & lt):
                continue
        mask[i] = True
        front = np.vstack([front, p])
    return mask


def normalize_columns(values: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Min-max scaling over feasible rows; constant columns map to 0, infeasible rows to NaN."""
    out = np.full(values.shape, np.nan)
    v = values[feasible]
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    out[feasible] = np.where(hi > lo, (v - lo) / span, 0.0)
    return out


def normalize_and_pareto(records: list) -> dict:
    """Normalize (compliance, cost, novelty) and extract the 3D and pairwise Pareto sets.

    Compliance and cost are minimized, novelty maximized.  Returns indices
    into ``records`` under ``"pareto"`` and ``"pairwise"``; the normalized
    triple is written back to DesignRecord objects.
    """
    def get(r, k):
        return getattr(r, k) if not isinstance(r, dict) else r[k]

    vals = np.array([[get(r, "compliance"), get(r, "cost"), get(r, "novelty")] for r in records], float)
    feas = np.array([bool(get(r, "feasible")) and np.all(np.isfinite(v)) for r, v in zip(records, vals)])
    if not feas.any():
        raise ValueError("no feasible records")
    norm = normalize_columns(vals.reshape(-1, 3), feas)
    for r, nv in zip(records, norm):
        if isinstance(r, DesignRecord):
            r.normalized = tuple(float(v) for v in nv)
    idx = np.flatnonzero(feas)
    signed = vals[idx] * np.array([1.0, 1.0, -1.0])
    cols = {"compliance": 0, "cost": 1, "novelty": 2}
    pairwise = {}
    for name, (a, b) in PAIRWISE.items():
        pairwise[name] = [int(i) for i in idx[pareto_mask(signed[:, [cols[a], cols[b]]])]]
    return {"normalized": norm, "feasible": feas,
            "pareto": [int(i) for i in idx[pareto_mask(signed)]], "pairwise": pairwise}


# --- run -------------------------------------------------------------------

def resolve_workers(requested: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1")
        return n
    return requested


def _run_job(args) -> dict:
    job, domain, reference, simp = args
    t0 = time.perf_counter()
    try:
        res = run_topopt(domain, reference, job.lambda_sim, job.force_ratio, simp)
    except (fea.SingularSystemError, VolumeBracketError, FloatingPointError) as exc:
        return {"job": job, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    return {"job": job, "ok": True, "image": res.x_physical, "compliance": res.compliance,
            "similarity_l1": res.similarity_l1, "iterations": res.iterations,
            "converged": res.converged, "seconds": time.perf_counter() - t0}


def execute_jobs(jobs: list[Job], references: list[np.ndarray], domain: WheelDomain,
                 simp: SimpConfig, workers: int = 1) -> list[dict]:
    """Run jobs on a bounded pool; results come back in job order."""
    payload = [(j, domain, references[j.reference_index], simp) for j in jobs]
    if workers <= 1 or len(jobs) <= 1:
        results = map(_run_job, payload)
        return [_logged(r, k, len(jobs)) for k, r in enumerate(results, 1)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [_logged(r, k, len(jobs)) for k, r in enumerate(pool.map(_run_job, payload), 1)]


def _logged(result: dict, k: int, n: int) -> dict:
    j = result["job"]
    status = f"{result['iterations']} it" if result["ok"] else result["error"]
    log.info("job %d/%d ref=%s lambda=%g r=%g: %s", k, n, j.reference_id, j.lambda_sim,
              j.force_ratio, status)
    return result


def _fit(images, domain: WheelDomain, threshold: float) -> list[np.ndarray]:
    """Resample to the domain and binarize, imposing the passive classes."""
    out = []
    for im in images:
        b = binarize(resample(np.asarray(im, dtype=float), domain.nelx), threshold)
        b[domain.passive_solid] = 1.0
        b[domain.passive_void] = 0.0
        out.append(b)
    return out


def distinct_synthetic_wheels(count: int, domain: WheelDomain, threshold: float,
                              seed: int = 0) -> list[np.ndarray]:
    """First ``count`` synthetic wheels of a seeded stream that are mutually beyond the dedup distance."""
    drawn = 2 * count
    while True:
        images = _fit(generate_synthetic_wheels(drawn, domain.nelx, STRAIGHT, seed=seed), domain, 0.5)
        keep = dedup_filter(images, [], threshold)
        if len(keep) >= count:
            return [images[i] for i in keep[:count]]
        if drawn >= 64 * count:
            raise RuntimeError(f"could not draw {count} distinct synthetic wheels at this resolution")
        drawn *= 2


def run_pipeline(config: PipelineConfig, out_dir: str | Path,
                 simp: SimpConfig = SimpConfig(), began: BeganConfig = BeganConfig(),
                 previous_designs=None) -> Path:
    """Run the full exploration loop and write the run directory.

    Layout: ``designs/`` (PGM images), ``records.csv``, ``pareto.csv``,
    ``manifest.json`` and ``plots/`` (SVG).
    """
    from .plots import write_pipeline_plots

    out = Path(out_dir)
    (out / "designs").mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(config.workers)
    domain = build_wheel_domain(config.resolution)
    thr = config.binarize_threshold

    if previous_designs is None:
        previous_designs = distinct_synthetic_wheels(config.previous_count, domain,
                                                     config.dedup_threshold, config.seed)
    prev_imgs = _fit(previous_designs, domain, thr)
    keep = dedup_filter(prev_imgs, [], config.dedup_threshold)
    previous = [DesignRecord(f"p{k:05d}", prev_imgs[i], 0, "previous") for k, i in enumerate(keep)]
    pool = [r.image for r in previous]
    topopt: list[DesignRecord] = []
    references = [(r.id, r.image) for r in previous]
    iterations, failures, trace = [], [], []
    began_state = None

    for it in range(1, config.max_iterations + 1):
        cap = config.max_generator_references
        refs = references[:cap] if cap and it > 1 else references
        jobs = expand_conditions([rid for rid, _ in refs], config.similarity_levels,
                                 config.force_ratio_levels)
        results = execute_jobs(jobs, [img for _, img in refs], domain, simp, workers)
        ok = [r for r in results if r["ok"]]
        for r in results:
            if not r["ok"]:
                failures.append({"iteration": it, "reference": r["job"].reference_id,
                                 "lambda_sim": r["job"].lambda_sim,
                                 "force_ratio": r["job"].force_ratio, "error": r["error"]})
        if not ok:
            raise RuntimeError(f"iteration {it}: every topology optimization job failed")
        outputs = _fit([r["image"] for r in ok], domain, thr)
        accepted = dedup_filter(outputs, pool, config.dedup_threshold)
        prev_total = len(topopt)
        for i in accepted:
            j = ok[i]["job"]
            rec = DesignRecord(f"t{len(topopt):05d}", outputs[i], it, "topopt", j.reference_id,
                               j.lambda_sim, j.force_ratio)
            topopt.append(rec)
            pool.append(rec.image)
        decision = termination_check(len(accepted), prev_total, config.termination_threshold,
                                     first_iteration=(it == 1))
        row = {"iteration": it, "references": len(refs), "jobs": len(jobs),
               "jobs_succeeded": len(ok), "jobs_failed": len(results) - len(ok),
               "converged": int(sum(r["converged"] for r in ok)),
               "topopt_new": len(accepted), "accumulated": len(topopt),
               "ratio": decision.ratio, "continue": decision.proceed,
               "generator_samples": 0, "generator_references": 0}
        iterations.append(row)
        trace.append({"iteration": it, "new": len(accepted), "prev_total": prev_total,
                      "ratio": decision.ratio, "threshold": config.termination_threshold,
                      "decision": "bypass" if it == 1 else ("continue" if decision.proceed else "stop")})
        log.info("iteration %d: %d/%d jobs ok, %d new designs", it, len(ok), len(jobs), len(accepted))
        if not decision.proceed:
            break
        if it == config.max_iterations:
            trace[-1]["decision"] += " (max_iterations reached)"
            break
        # retrain the generator on everything gathered so far and sample new references
        train_set = [r.image for r in previous + topopt]
        bcfg = replace(began, seed=began.seed + it)
        if len(train_set) < 2 * bcfg.batch_size or config.began_samples == 0:
            trace[-1]["decision"] += " (generator skipped: too few designs)"
            break
        began_state = train_began(train_set, bcfg, out / "models" / f"began_iter{it}")
        samples = sample_designs(began_state, config.began_samples, seed=config.seed + it)
        fitted = _fit(samples, domain, thr)
        survivors = dedup_filter(fitted, pool, config.dedup_threshold)
        row["generator_samples"] = len(samples)
        row["generator_references"] = len(survivors)
        references = [(f"g{it}_{k:04d}", fitted[i]) for k, i in enumerate(survivors)]
        if not references:
            trace[-1]["decision"] += " (no generator references survived dedup)"
            break

    # attributes of the accumulated topopt designs
    model, held = None, []
    if len(previous) >= 10:
        model, held = train_autoencoder([r.image for r in previous], config.novelty_split,
                                        config.novelty_epochs, config.seed)
    load = build_surface_loads(domain, config.evaluation_force_ratio)
    for rec in topopt:
        attrs = evaluate_attributes(rec.image, domain, load, model, simp.material)
        rec.compliance, rec.cost, rec.novelty, rec.feasible = (
            attrs["compliance"], attrs["cost"], attrs["novelty"], attrs["feasible"])
    front = {"pareto": [], "pairwise": {k: [] for k in PAIRWISE}}
    if any(r.feasible for r in topopt):
        front = normalize_and_pareto(topopt)

    for rec in previous + topopt:
        write_image(out / "designs" / f"{rec.id}.pgm", rec.image)
    write_records_csv(out / "records.csv", topopt)
    write_pareto_csv(out / "pareto.csv", topopt, front)
    write_pipeline_plots(out / "plots", topopt, front)

    counts = summarize_counts(len(previous), [r["topopt_new"] for r in iterations],
                              [r["generator_references"] for r in iterations])
    manifest = {
        "config": asdict(config), "simp": asdict(simp), "began": asdict(began),
        "workers": workers, "previous": len(previous), "previous_input": len(prev_imgs),
        "iterations": iterations, "termination": trace, "failures": failures,
        "accumulated_topopt": len(topopt), "counts": counts,
        "feasible": int(sum(r.feasible for r in topopt)),
        "pareto_size": len(front["pareto"]),
        "novelty_heldout": [previous[i].id for i in held],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_records_csv(path: str | Path, records: list[DesignRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.id, r.iteration, r.origin, r.parent_id, _fmt(r.lambda_sim),
                        _fmt(r.force_ratio), _fmt(float(r.compliance)), _fmt(float(r.cost)),
                        _fmt(float(r.novelty)), *(_fmt(float(v)) for v in r.normalized),
                        int(r.feasible)])


def read_records_csv(path: str | Path) -> list[dict]:
    """Rows of a records file with numeric attributes parsed (blank -> NaN)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "compliance", "cost", "novelty"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"records file lacks columns: {sorted(missing)}")
        rows = []
        for row in reader:
            rec = dict(row)
            for k in ("compliance", "cost", "novelty"):
                rec[k] = float(row[k]) if row[k] not in ("", None) else float("nan")
            rec["feasible"] = row.get("feasible", "1") not in ("0", "False", "false")
            rows.append(rec)
    return rows


def write_pareto_csv(path: str | Path, records, front: dict) -> None:
    """One row per record on any front, with a membership flag per front."""
    def get(r, k):
        return getattr(r, k) if not isinstance(r, dict) else r[k]

    names = ["pareto3d", *PAIRWISE]
    sets = {"pareto3d": set(front["pareto"]), **{k: set(v) for k, v in front["pairwise"].items()}}
    members = sorted(set().union(*sets.values()))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "compliance", "cost", "novelty", *names])
        for i in members:
            r = records[i]
            w.writerow([get(r, "id"), repr(float(get(r, "compliance"))), repr(float(get(r, "cost"))),
                        repr(float(get(r, "novelty"))), *(int(i in sets[n]) for n in names)])
