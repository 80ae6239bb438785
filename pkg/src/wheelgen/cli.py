"""Command-line entry point: ``wheelgen <subcommand> [options]``.

Errors are reported as one line on stderr, ``wheelgen: error: <message>``,
with exit status 2 for usage problems and 1 for failures while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

PROG = "wheelgen"
IMAGE_SUFFIXES = (".pgm", ".png")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def _image_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"image directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no .pgm/.png images in {d}")
    return files


def _read_images(directory) -> tuple[list[str], list[np.ndarray]]:
    from .imageio import read_image

    files = _image_files(directory)
    return [p.stem for p in files], [read_image(p) for p in files]


def _need_file(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --- subcommands -----------------------------------------------------------

def cmd_gen_data(a) -> None:
    from .imageio import write_image
    from .synthetic import STRAIGHT, TWISTED, generate_synthetic_wheels

    family = {"straight": STRAIGHT, "twisted": TWISTED}[a.family]
    out = _outdir(a.out)
    for i, im in enumerate(generate_synthetic_wheels(a.count, a.resolution, family, a.seed)):
        write_image(out / f"wheel_{i:05d}.pgm", im)


def cmd_topopt(a) -> None:
    from .geometry import build_wheel_domain
    from .imageio import binarize, read_image, resample, write_image
    from .topopt import SimpConfig, run_topopt

    simp = SimpConfig()
    if a.config:
        from .config import load_config

        simp = load_config(a.config).simp
    overrides = {k: v for k, v in (("r_min", a.r_min), ("max_iterations", a.max_iterations)) if v is not None}
    if overrides:
        simp = SimpConfig(**{**simp.__dict__, **overrides})
    reference = None
    if a.ref:
        img = read_image(_need_file(a.ref))
        res = a.resolution or img.shape[0]
        reference = binarize(resample(img, res))
    elif a.volume_fraction is None:
        raise UsageError("either --ref or --volume-fraction is required")
    else:
        res = a.resolution or 64
    domain = build_wheel_domain(res)
    if reference is not None:
        reference[domain.passive_solid] = 1.0
        reference[domain.passive_void] = 0.0
    out = _outdir(a.out)
    result = run_topopt(domain, reference, a.lambda_sim, a.force_ratio, simp,
                        volume_fraction=a.volume_fraction, history_dir=out,
                        snapshot_every=a.snapshot_every)
    write_image(out / "design.pgm", result.x_physical)
    summary = {"compliance": result.compliance, "similarity_l1": result.similarity_l1,
               "iterations": result.iterations, "converged": result.converged,
               "volume_fraction": result.volume_fraction, "target_volume": result.target_volume,
               "beta": result.beta, "lambda_sim": a.lambda_sim, "force_ratio": a.force_ratio,
               "resolution": res}
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_train_began(a) -> None:
    from .began import BeganConfig, train_began
    from .plots import write_convergence_plot

    _, images = _read_images(a.data)
    out = _outdir(a.out)
    dims = a.latent_dim or [16]
    for dim in dims:
        cfg = BeganConfig(latent_dim=dim, epochs=a.epochs, side=a.side, seed=a.seed,
                          batch_size=a.batch_size, learning_rate=a.learning_rate,
                          checkpoint_every=a.checkpoint_every)
        target = out if len(dims) == 1 else _outdir(out / f"nz{dim}")
        state = train_began(images, cfg, target)
        write_convergence_plot(target / "convergence.svg", state.m_global)


def cmd_sample(a) -> None:
    from .began import load_began, sample_designs
    from .imageio import binarize, write_image

    state = load_began(_need_file(a.model))
    out = _outdir(a.out)
    for i, im in enumerate(sample_designs(state, a.count, a.seed)):
        write_image(out / f"sample_{i:05d}.pgm", binarize(im) if a.binarize else im)


def cmd_train_ae(a) -> None:
    from .novelty import save_novelty_model, train_autoencoder

    ids, images = _read_images(a.data)
    out = _outdir(a.out)
    model, held = train_autoencoder(images, a.split, a.epochs, a.seed, side=a.side)
    save_novelty_model(out / "novelty.ckpt", model)
    (out / "heldout.json").write_text(json.dumps([ids[i] for i in held], indent=2) + "\n")


def cmd_score(a) -> None:
    from .novelty import load_novelty_model, novelty_scores, write_confusion_json, write_scores_csv

    model = load_novelty_model(_need_file(a.model))
    ids, images = _read_images(a.designs)
    out = _outdir(a.out)
    scores = novelty_scores(model, images)
    write_scores_csv(out / "scores.csv", ids, scores)
    if a.generated:
        from .novelty import classify_top_half

        gids, gimgs = _read_images(a.generated)
        write_confusion_json(out / "confusion.json",
                             classify_top_half(scores, novelty_scores(model, gimgs)))


def cmd_evaluate(a) -> None:
    from .geometry import build_surface_loads, build_wheel_domain
    from .imageio import resample
    from .pipeline import DesignRecord, evaluate_attributes, normalize_and_pareto, write_records_csv

    ids, images = _read_images(a.designs)
    model = None
    if a.model:
        from .novelty import load_novelty_model

        model = load_novelty_model(_need_file(a.model))
    res = a.resolution or images[0].shape[0]
    domain = build_wheel_domain(res)
    load = build_surface_loads(domain, a.force_ratio)
    records = []
    for i, im in zip(ids, images):
        attrs = evaluate_attributes(resample(im, res), domain, load, model)
        records.append(DesignRecord(i, im, 0, "topopt", compliance=attrs["compliance"],
                                    cost=attrs["cost"], novelty=attrs["novelty"],
                                    feasible=attrs["feasible"]))
    if any(r.feasible for r in records):
        normalize_and_pareto(records)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records_csv(out, records)


def cmd_pareto(a) -> None:
    from .pipeline import normalize_and_pareto, read_records_csv, write_pareto_csv

    path = _need_file(a.records)
    rows = read_records_csv(path)
    if not rows:
        raise ValueError(f"no records in {path}")
    front = normalize_and_pareto(rows)
    out = Path(a.out) if a.out else path.with_name("pareto.csv")
    write_pareto_csv(out, rows, front)


def cmd_run(a) -> None:
    from .config import RunConfigFile, dump_config, load_config
    from .pipeline import run_pipeline

    cfg = load_config(a.config) if a.config else RunConfigFile()
    if a.print_config:
        sys.stdout.write(dump_config(cfg))
        return
    if not a.out:
        raise UsageError("--out is required unless --print-config is given")
    previous = _read_images(a.previous)[1] if a.previous else None
    run_pipeline(cfg.pipeline, a.out, cfg.simp, cfg.began, previous)


def cmd_plot(a) -> None:
    from .plots import write_convergence_plot, write_history_plot, write_pipeline_plots

    out = _outdir(a.out)
    if a.records:
        from .pipeline import normalize_and_pareto, read_records_csv

        rows = read_records_csv(_need_file(a.records))
        write_pipeline_plots(out, rows, normalize_and_pareto(rows))
    if a.history:
        import csv

        with open(_need_file(a.history), newline="") as fh:
            rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
        write_history_plot(out / "history.svg", rows)
    if a.log:
        import csv

        with open(_need_file(a.log), newline="") as fh:
            m = [float(r["m_global"]) for r in csv.DictReader(fh)]
        write_convergence_plot(out / "convergence.svg", m)
    if not (a.records or a.history or a.log):
        raise UsageError("give at least one of --records, --history, --log")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description="Reference-guided generative wheel design.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-data", help="write synthetic wheel images")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--family", choices=("straight", "twisted"), default="straight")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("topopt", help="single reference-guided optimization")
    s.add_argument("--ref", help="reference image (.pgm/.png)")
    s.add_argument("--volume-fraction", type=float, help="target when no reference is given")
    s.add_argument("--lambda", dest="lambda_sim", type=float, default=0.0)
    s.add_argument("--force-ratio", type=float, default=0.2)
    s.add_argument("--resolution", type=int)
    s.add_argument("--r-min", type=float)
    s.add_argument("--max-iterations", type=int)
    s.add_argument("--snapshot-every", type=int, default=0)
    s.add_argument("--config", help="YAML config whose simp section is used")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_topopt)

    s = sub.add_parser("train-began", help="train the generator on an image directory")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--latent-dim", type=int, nargs="+", choices=(16, 32, 64, 128))
    s.add_argument("--side", type=int, default=32)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--learning-rate", type=float, default=8e-5)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_began)

    s = sub.add_parser("sample", help="draw designs from a trained generator")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--binarize", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train-ae", help="train the novelty autoencoder")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--split", type=float, default=0.8)
    s.add_argument("--side", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_ae)

    s = sub.add_parser("score", help="novelty scores (and optional confusion matrix)")
    s.add_argument("--model", required=True)
    s.add_argument("--designs", required=True)
    s.add_argument("--generated", help="generated designs; --designs is then the previous test set")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("evaluate", help="compliance, cost and novelty of designs")
    s.add_argument("--designs", required=True)
    s.add_argument("--model", help="novelty checkpoint (novelty 0 without it)")
    s.add_argument("--force-ratio", type=float, default=0.2)
    s.add_argument("--resolution", type=int)
    s.add_argument("--out", required=True, help="records CSV path")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("pareto", help="Pareto sets of a records CSV")
    s.add_argument("--records", required=True)
    s.add_argument("--out", help="default: pareto.csv next to the records")
    s.set_defaults(func=cmd_pareto)

    s = sub.add_parser("run", help="full exploration pipeline")
    s.add_argument("--config", help="YAML config (defaults when omitted)")
    s.add_argument("--previous", help="directory of previous designs (synthetic when omitted)")
    s.add_argument("--print-config", action="store_true", help="print the full config and exit")
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("plot", help="SVG plots from run outputs")
    s.add_argument("--records")
    s.add_argument("--history")
    s.add_argument("--log", help="generator training log CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"{PROG}: error: usage: {_one_line(exc)}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - single-line report for every failure
        print(f"{PROG}: error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
