"""Boundary-equilibrium GAN over binary design images.

The discriminator is an autoencoder; its per-image reconstruction loss drives
both players, and the controller ``k`` balances how strongly generated
samples are pushed away from good reconstructions.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .neural import (AdamState, Sequential, adam_step, autoencoder_spec, build_network,
                     decoder_spec, load_checkpoint, save_checkpoint)

LOG_COLUMNS = ("step", "loss_real", "loss_fake", "k", "m_global")
LATENT_DIMS = (16, 32, 64, 128)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class BeganConfig:
    latent_dim: int = 16
    gamma: float = 0.7
    lambda_k: float = 0.001
    k_initial: float = 0.0
    batch_size: int = 16
    norm: int = 1
    learning_rate: float = 8e-5
    epochs: int = 30
    side: int = 32
    base_channels: int = 16
    seed: int = 0
    typeset_convergence: bool = False   # use Lx + |gamma (Lx - LG)| instead of Lx + |gamma Lx - LG|
    checkpoint_every: int = 0           # epochs; 0 disables periodic checkpoints

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.lambda_k > 0:
            raise ValueError("lambda_k must be positive")
        if not 0.0 <= self.k_initial <= 1.0:
            raise ValueError("k_initial must lie in [0, 1]")
        if self.norm not in (1, 2):
            raise ValueError("norm must be 1 or 2")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class BeganState:
    generator: Sequential
    discriminator: Sequential
    config: BeganConfig
    k: float = 0.0
    opt_g: AdamState = field(default_factory=AdamState)
    opt_d: AdamState = field(default_factory=AdamState)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    loss_real: list[float] = field(default_factory=list)
    loss_fake: list[float] = field(default_factory=list)
    k_history: list[float] = field(default_factory=list)
    m_global: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.m_global)


def init_began(config: BeganConfig) -> BeganState:
    rng = np.random.default_rng(config.seed)
    disc = build_network(autoencoder_spec(config.side, config.latent_dim, config.base_channels), rng)
    gen = build_network(decoder_spec(config.side, config.latent_dim, config.base_channels), rng)
    return BeganState(
        generator=gen, discriminator=disc, config=config, k=config.k_initial,
        opt_g=AdamState(lr=config.learning_rate), opt_d=AdamState(lr=config.learning_rate),
        rng=rng,
    )


def _as_batch(images) -> np.ndarray:
    v = np.asarray(images, dtype=float)
    if v.ndim == 2:
        v = v[None]
    if v.ndim == 3:
        v = v[..., None]
    if v.ndim != 4 or v.shape[-1] != 1:
        raise ValueError(f"expected (n, h, w) or (n, h, w, 1) images, got {v.shape}")
    return v


def reconstruction_loss(v: np.ndarray, reconstruction: np.ndarray, norm: int = 1) -> np.ndarray:
    """Per-image pixel mean of ``|v - A(v)|**norm``."""
    v, r = _as_batch(v), _as_batch(reconstruction)
    if v.shape != r.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {r.shape}")
    return (np.abs(v - r) ** norm).reshape(len(v), -1).mean(axis=1)


def autoencoder_loss(v: np.ndarray, autoencoder: Sequential, norm: int = 1) -> tuple[np.ndarray, float]:
    """Reconstruction loss of each image under ``autoencoder`` and the batch mean."""
    v = _as_batch(v)
    per = reconstruction_loss(v, autoencoder.forward(v), norm)
    return per, float(per.mean()) if len(per) else 0.0


def _loss_grad(v: np.ndarray, r: np.ndarray, norm: int, weights: np.ndarray) -> np.ndarray:
    """d/dr of sum_i w_i * mean_pixels |v_i - r_i|**norm."""
    diff = r - v
    npix = diff[0].size
    g = np.sign(diff) if norm == 1 else 2.0 * diff
    return g * (weights[:, None, None, None] / npix)


def wasserstein_lower_bound(m1: float, m2: float) -> float:
    return abs(m1 - m2)


def global_convergence(loss_real: float, loss_fake: float, gamma: float, typeset: bool = False) -> float:
    """Convergence measure: reconstruction quality plus the controller error."""
    if typeset:
        return loss_real + abs(gamma * (loss_real - loss_fake))
    return loss_real + abs(gamma * loss_real - loss_fake)


def update_k(k: float, loss_real: float, loss_fake: float, gamma: float, lambda_k: float) -> float:
    return min(1.0, max(0.0, k + lambda_k * (gamma * loss_real - loss_fake)))


def sample_latent(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(n, dim))


def discriminator_gradients(state: BeganState, real: np.ndarray, fake: np.ndarray) -> tuple[list[np.ndarray], float, float]:
    """Gradients of ``L(x) - k L(G(z_D))`` w.r.t. the discriminator, with the fake batch held constant."""
    cfg, disc = state.config, state.discriminator
    batch = np.concatenate([real, fake])
    disc.zero_grad()
    recon = disc.forward(batch)
    per = reconstruction_loss(batch, recon, cfg.norm)
    nr, nf = len(real), len(fake)
    weights = np.concatenate([np.full(nr, 1.0 / nr), np.full(nf, -state.k / nf)])
    disc.backward(_loss_grad(batch, recon, cfg.norm, weights))
    grads = [p.grad.copy() for p in disc.params()]
    return grads, float(per[:nr].mean()), float(per[nr:].mean())


def generator_gradients(state: BeganState, z: np.ndarray) -> tuple[list[np.ndarray], float]:
    """Gradients of ``L(G(z_G))`` w.r.t. the generator; the discriminator acts as a fixed map."""
    cfg, gen, disc = state.config, state.generator, state.discriminator
    gen.zero_grad()
    fake = gen.forward(z)
    recon = disc.forward(fake)
    per = reconstruction_loss(fake, recon, cfg.norm)
    w = np.full(len(z), 1.0 / len(z))
    g_recon = _loss_grad(fake, recon, cfg.norm, w)
    # loss depends on the fake image directly and through the reconstruction
    g_fake = -g_recon + disc.backward(g_recon)
    gen.backward(g_fake)
    disc.zero_grad()
    return [p.grad.copy() for p in gen.params()], float(per.mean())


def began_step(real_batch: np.ndarray, state: BeganState) -> BeganState:
    """One simultaneous update of both networks and the controller ``k``."""
    cfg = state.config
    real = _as_batch(real_batch)
    if len(real) != cfg.batch_size:
        raise ValueError(f"batch has {len(real)} images, expected {cfg.batch_size}")
    if real.shape[1:3] != (cfg.side, cfg.side):
        raise ValueError(f"images must be {cfg.side}x{cfg.side}")
    z_d = sample_latent(state.rng, cfg.batch_size, cfg.latent_dim)
    z_g = sample_latent(state.rng, cfg.batch_size, cfg.latent_dim)

    fake_d = state.generator.forward(z_d)
    d_grads, loss_real, _ = discriminator_gradients(state, real, fake_d)
    g_grads, loss_fake = generator_gradients(state, z_g)
    if not (math.isfinite(loss_real) and math.isfinite(loss_fake)):
        raise TrainingDivergedError(
            f"non-finite loss at step {state.steps}: L(x)={loss_real}, L(G)={loss_fake}")

    adam_step(state.discriminator.params(), state.opt_d, d_grads)
    adam_step(state.generator.params(), state.opt_g, g_grads)

    state.k = update_k(state.k, loss_real, loss_fake, cfg.gamma, cfg.lambda_k)
    state.loss_real.append(loss_real)
    state.loss_fake.append(loss_fake)
    state.k_history.append(state.k)
    state.m_global.append(global_convergence(loss_real, loss_fake, cfg.gamma, cfg.typeset_convergence))
    return state


def prepare_dataset(images, side: int) -> np.ndarray:
    from .imageio import resample

    return np.stack([resample(np.asarray(im, dtype=float), side) for im in images])[..., None]


def train_began(dataset, config: BeganConfig, checkpoint_dir: str | Path | None = None,
                state: BeganState | None = None) -> BeganState:
    """Train for ``config.epochs`` epochs over shuffled minibatches.

    Each epoch takes ``ceil(n / batch_size)`` steps; the last batch is topped
    up from the start of the shuffled order so every step sees a full batch.

    With ``checkpoint_dir`` a training log CSV is written, plus ``began.ckpt``
    at the end and every ``checkpoint_every`` epochs.  Divergence restores the
    last good checkpoint (if any) before re-raising.
    """
    data = prepare_dataset(dataset, config.side)
    n = len(data)
    if n < 2 * config.batch_size:
        raise ValueError(f"dataset has {n} images; at least {2 * config.batch_size} are required")
    state = state or init_began(config)
    out = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    steps_per_epoch = -(-n // config.batch_size)
    try:
        for epoch in range(config.epochs):
            order = np.resize(state.rng.permutation(n), steps_per_epoch * config.batch_size)
            for b in range(steps_per_epoch):
                began_step(data[order[b * config.batch_size:(b + 1) * config.batch_size]], state)
            if out is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_began(out / f"began_epoch{epoch + 1:04d}.ckpt", state)
                save_began(out / "began.ckpt", state)
    except TrainingDivergedError:
        if out is not None and (out / "began.ckpt").exists():
            good = load_began(out / "began.ckpt")
            state.generator, state.discriminator, state.k = good.generator, good.discriminator, good.k
        raise
    if out is not None:
        save_began(out / "began.ckpt", state)
        write_training_log(out / "training_log.csv", state)
    return state


def train_began_dims(dataset, config: BeganConfig, latent_dims=LATENT_DIMS,
                     checkpoint_dir: str | Path | None = None) -> dict[int, BeganState]:
    """Train one independent model per latent dimension."""
    results = {}
    for dim in latent_dims:
        cfg = BeganConfig(**{**asdict(config), "latent_dim": int(dim)})
        sub = None if checkpoint_dir is None else Path(checkpoint_dir) / f"nz{dim}"
        results[int(dim)] = train_began(dataset, cfg, sub)
    return results


def sample_designs(state: BeganState, n: int, seed: int = 0) -> list[np.ndarray]:
    """``n`` generator outputs for ``z`` uniform in [-1, 1], clamped to [0, 1]."""
    if n <= 0:
        return []
    rng = np.random.default_rng(seed)
    z = sample_latent(rng, n, state.config.latent_dim)
    imgs = np.clip(state.generator.forward(z)[..., 0], 0.0, 1.0)
    return [im.copy() for im in imgs]


def write_training_log(path: str | Path, state: BeganState) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for i in range(state.steps):
            w.writerow([i + 1, repr(state.loss_real[i]), repr(state.loss_fake[i]),
                        repr(state.k_history[i]), repr(state.m_global[i])])


def save_began(path: str | Path, state: BeganState) -> None:
    meta = {"config": asdict(state.config), "k": state.k, "steps": state.steps}
    save_checkpoint(path, {"generator": state.generator, "discriminator": state.discriminator}, meta)


def load_began(path: str | Path) -> BeganState:
    nets, meta = load_checkpoint(path)
    if set(nets) != {"generator", "discriminator"}:
        raise ValueError("checkpoint does not hold a generator/discriminator pair")
    cfg = BeganConfig(**meta["config"])
    return BeganState(generator=nets["generator"], discriminator=nets["discriminator"],
                      config=cfg, k=float(meta["k"]),
                      opt_g=AdamState(lr=cfg.learning_rate), opt_d=AdamState(lr=cfg.learning_rate))
