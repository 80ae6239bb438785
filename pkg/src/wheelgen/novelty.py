"""Novelty of a design as its reconstruction error under an autoencoder of prior designs."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .began import _as_batch, _loss_grad, prepare_dataset, reconstruction_loss
from .imageio import resample
from .neural import AdamState, Sequential, adam_step, autoencoder_spec, build_network, load_checkpoint, save_checkpoint

MIN_IMAGES = 10


@dataclass
class NoveltyModel:
    autoencoder: Sequential
    side: int
    norm: int = 1
    metadata: dict = field(default_factory=dict)


def dataset_hash(images) -> str:
    h = hashlib.sha256()
    for im in images:
        a = np.ascontiguousarray(np.asarray(im, dtype=np.float64))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def split_indices(n: int, split_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled (train, held-out) indices with ``floor(split_fraction * n)`` training items."""
    if not 0 < split_fraction < 1:
        raise ValueError("split_fraction must lie in (0, 1)")
    n_train = int(math.floor(split_fraction * n))
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def train_autoencoder(previous_designs, split_fraction: float = 0.8, epochs: int = 50, seed: int = 0,
                      side: int = 32, latent_dim: int = 64, base_channels: int = 16,
                      batch_size: int = 8, learning_rate: float = 1e-3,
                      norm: int = 1) -> tuple[NoveltyModel, list[int]]:
    """Fit the autoencoder to the training split; returns the model and held-out indices."""
    images = list(previous_designs)
    if len(images) < MIN_IMAGES:
        raise ValueError(f"need at least {MIN_IMAGES} images, got {len(images)}")
    if norm not in (1, 2):
        raise ValueError("norm must be 1 or 2")
    train_idx, held_idx = split_indices(len(images), split_fraction, seed)
    data = prepare_dataset([images[i] for i in train_idx], side)
    rng = np.random.default_rng(seed)
    net = build_network(autoencoder_spec(side, latent_dim, base_channels), rng)
    opt = AdamState(lr=learning_rate)
    bs = min(batch_size, len(data))
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(data), bs):
            batch = data[order[start:start + bs]]
            net.zero_grad()
            recon = net.forward(batch)
            per = reconstruction_loss(batch, recon, norm)
            net.backward(_loss_grad(batch, recon, norm, np.full(len(batch), 1.0 / len(batch))))
            adam_step(net.params(), opt)
            epoch_loss += float(per.sum())
        losses.append(epoch_loss / len(data))
    meta = {
        "dataset_hash": dataset_hash(images), "split_seed": seed, "split_fraction": split_fraction,
        "epochs": epochs, "train_count": int(len(train_idx)), "heldout": [int(i) for i in held_idx],
        "final_loss": losses[-1] if losses else None, "latent_dim": latent_dim,
    }
    model = NoveltyModel(net, side, norm, meta)
    return model, [int(i) for i in held_idx]


def novelty_scores(model: NoveltyModel, designs) -> np.ndarray:
    """Pixel-mean reconstruction error of each design (resampled to the model side)."""
    designs = list(designs)
    if not designs:
        return np.zeros(0)
    batch = _as_batch(np.stack([resample(np.asarray(d, dtype=float), model.side) for d in designs]))
    if batch.shape[1:3] != (model.side, model.side):
        raise ValueError("design does not match the model resolution")
    out = []
    for start in range(0, len(batch), 64):
        chunk = batch[start:start + 64]
        out.append(reconstruction_loss(chunk, model.autoencoder.forward(chunk), model.norm))
    return np.concatenate(out)


def novelty_score(model: NoveltyModel, design: np.ndarray) -> float:
    return float(novelty_scores(model, [design])[0])


def rank_scores(scores) -> np.ndarray:
    """1-based ranks, highest score first, ties broken by position."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranks = np.empty(len(scores), dtype=int)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def classify_top_half(previous_scores, generated_scores) -> dict:
    """Label the top half of the pooled scores as generated; generated is the positive class.

    Pooled ids are the previous designs first, then the generated ones, and
    ties in score are broken by that id.
    """
    prev = np.asarray(previous_scores, dtype=float)
    gen = np.asarray(generated_scores, dtype=float)
    if prev.size == 0 or gen.size == 0:
        raise ValueError("both score lists must be nonempty")
    scores = np.concatenate([prev, gen])
    truth = np.concatenate([np.zeros(prev.size, bool), np.ones(gen.size, bool)])
    ranks = rank_scores(scores)
    predicted = ranks <= scores.size // 2
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return {"TP": tp, "FP": fp, "FN": fn, "TN": tn, "precision": precision, "recall": recall}


def confusion_matrix_eval(model: NoveltyModel, previous_test, generated) -> dict:
    return classify_top_half(novelty_scores(model, previous_test), novelty_scores(model, generated))


def write_scores_csv(path: str | Path, ids, scores) -> None:
    ranks = rank_scores(scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["design_id", "score", "rank"])
        for i, s, r in zip(ids, scores, ranks):
            w.writerow([i, repr(float(s)), int(r)])


def write_confusion_json(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def save_novelty_model(path: str | Path, model: NoveltyModel) -> None:
    meta = {"side": model.side, "norm": model.norm, "metadata": model.metadata}
    save_checkpoint(path, {"autoencoder": model.autoencoder}, meta)


def load_novelty_model(path: str | Path) -> NoveltyModel:
    nets, meta = load_checkpoint(path)
    if "autoencoder" not in nets:
        raise ValueError("checkpoint holds no autoencoder")
    return NoveltyModel(nets["autoencoder"], int(meta["side"]), int(meta["norm"]), meta.get("metadata", {}))
