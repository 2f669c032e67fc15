"""Stage 2: 1-D encoder-decoder-encoder adversarial anomaly scorer.

The generator maps ``x -> z = G_E(x) -> x_hat = G_D(z)``, a second encoder
maps ``x_hat -> z_hat``, and a discriminator tells inputs from
reconstructions.  The anomaly score of a sample is ``||z - z_hat||``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .audit import training_zone
from .data import features_of

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ScorerConfig:
    latent_dim: int = 16
    conv_widths: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 4
    loss_weights: tuple[float, float, float] = (1.0, 50.0, 1.0)  # (adv, con, enc)
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 2e-4
    beta1: float = 0.5
    batch_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        self.conv_widths = tuple(int(w) for w in self.conv_widths)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if len(self.conv_widths) < 1:
            raise ValueError("need at least one conv layer")
        if len(self.loss_weights) != 3 or min(self.loss_weights) < 0 or sum(self.loss_weights) == 0:
            raise ValueError(f"loss_weights must be three nonnegative reals, not all zero: {self.loss_weights}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def padded_length(n_features: int, n_layers: int) -> int:
    step = 2 ** n_layers
    return int(math.ceil(n_features / step) * step)


def _conv_padding(k: int) -> tuple[int, int]:
    # (padding, output_padding) so stride-2 conv halves and transposed conv doubles the length
    return (k - 2) // 2 if k % 2 == 0 else (k - 1) // 2, k % 2


class Encoder1d(nn.Module):
    """Strided 1-D conv stack followed by a linear projection."""

    def __init__(self, length: int, widths, kernel: int, out_dim: int, batch_norm: bool):
        super().__init__()
        pad, _ = _conv_padding(kernel)
        layers: list[nn.Module] = []
        c_in = 1
        for i, w in enumerate(widths):
            layers.append(nn.Conv1d(c_in, w, kernel, stride=2, padding=pad, bias=False))
            if batch_norm and i > 0:
                layers.append(nn.BatchNorm1d(w))
            layers.append(nn.LeakyReLU(0.2))
            c_in = w
        self.body = nn.Sequential(*layers)
        self.flat_dim = widths[-1] * (length // 2 ** len(widths))
        self.head = nn.Linear(self.flat_dim, out_dim)

    def features(self, x):
        return self.body(x).flatten(1)

    def forward(self, x):
        return self.head(self.features(x))


class Decoder1d(nn.Module):
    def __init__(self, length: int, widths, kernel: int, latent_dim: int, batch_norm: bool):
        super().__init__()
        pad, out_pad = _conv_padding(kernel)
        self.widths = list(widths)
        self.base = length // 2 ** len(widths)
        self.head = nn.Linear(latent_dim, self.widths[-1] * self.base)
        rev = self.widths[::-1]
        layers: list[nn.Module] = []
        for i, w in enumerate(rev):
            last = i == len(rev) - 1
            c_out = 1 if last else rev[i + 1]
            layers.append(nn.ConvTranspose1d(w, c_out, kernel, stride=2, padding=pad,
                                             output_padding=out_pad, bias=False))
            if not last:
                if batch_norm:
                    layers.append(nn.BatchNorm1d(c_out))
                layers.append(nn.ReLU())
        layers.append(nn.Sigmoid())
        self.body = nn.Sequential(*layers)

    def forward(self, z):
        h = self.head(z).view(-1, self.widths[-1], self.base)
        return self.body(h)


class Generator(nn.Module):
    def __init__(self, n_features: int, cfg: ScorerConfig):
        super().__init__()
        self.n_features = n_features
        self.length = padded_length(n_features, len(cfg.conv_widths))
        args = (self.length, cfg.conv_widths, cfg.kernel_size)
        self.encoder = Encoder1d(*args, cfg.latent_dim, cfg.batch_norm)
        self.decoder = Decoder1d(*args, cfg.latent_dim, cfg.batch_norm)
        self.encoder2 = Encoder1d(*args, cfg.latent_dim, cfg.batch_norm)
        enc_shapes = [p.shape for p in self.encoder.parameters()]
        if enc_shapes != [p.shape for p in self.encoder2.parameters()]:
            raise AssertionError("second encoder must mirror the generator encoder layer for layer")

    def pad(self, x):
        return F.pad(x.unsqueeze(1), (0, self.length - self.n_features))

    def forward(self, x):
        """``x`` is (batch, n_features); returns padded x_hat, z, z_hat."""
        xp = self.pad(x)
        z = self.encoder(xp)
        x_hat = self.decoder(z)[:, :, : self.n_features]
        x_hat = F.pad(x_hat, (0, self.length - self.n_features))
        z_hat = self.encoder2(x_hat)
        return x_hat, z, z_hat


class Discriminator(nn.Module):
    def __init__(self, n_features: int, cfg: ScorerConfig):
        super().__init__()
        length = padded_length(n_features, len(cfg.conv_widths))
        self.net = Encoder1d(length, cfg.conv_widths, cfg.kernel_size, 1, cfg.batch_norm)

    def forward(self, xp):
        f = self.net.features(xp)
        return self.net.head(f).squeeze(1), f


def _init_weights(m):
    name = m.__class__.__name__
    if "Conv" in name:
        nn.init.normal_(m.weight, 0.0, 0.02)
    elif "BatchNorm" in name:
        nn.init.normal_(m.weight, 1.0, 0.02)
        nn.init.zeros_(m.bias)


@dataclass
class TrainingStats:
    epoch_losses: list[dict[str, float]] = field(default_factory=list)
    step_losses: list[tuple[float, float, float, float]] = field(default_factory=list)  # (total, adv, con, enc)
    d_reinits: int = 0

    @property
    def final(self) -> dict[str, float]:
        return self.epoch_losses[-1] if self.epoch_losses else {}


class AnomalyScorer:
    def __init__(self, n_features: int, config: ScorerConfig):
        self.config = config
        self.n_features = n_features
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.generator = Generator(n_features, config)
            self.discriminator = Discriminator(n_features, config)
            self.generator.apply(_init_weights)
            self.discriminator.apply(_init_weights)
        self.training_stats = TrainingStats()

    def _check(self, X: np.ndarray) -> torch.Tensor:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"scorer expects {self.n_features} features, got shape {X.shape}")
        return torch.from_numpy(X)

    @torch.no_grad()
    def score(self, data, batch_size: int = 4096) -> np.ndarray:
        """Raw anomaly scores ``||G_E(x) - E(G(x))||_2``."""
        X = self._check(features_of(data))
        self.generator.eval()
        out = []
        for start in range(0, X.shape[0], batch_size):
            _, z, z_hat = self.generator(X[start:start + batch_size])
            out.append(torch.linalg.vector_norm((z - z_hat).double(), dim=1))
        if not out:
            return np.zeros(0, dtype=np.float64)
        return torch.cat(out).numpy()

    def save(self, path: str | Path) -> None:
        torch.save({
            "config": asdict(self.config),
            "n_features": self.n_features,
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "epoch_losses": self.training_stats.epoch_losses,
        }, path)

    @classmethod
    def load(cls, path: str | Path) -> "AnomalyScorer":
        blob = torch.load(path, weights_only=False)
        scorer = cls(blob["n_features"], ScorerConfig.from_dict(blob["config"]))
        scorer.generator.load_state_dict(blob["generator"])
        scorer.discriminator.load_state_dict(blob["discriminator"])
        scorer.training_stats.epoch_losses = blob.get("epoch_losses", [])
        return scorer


def _batches(n: int, batch_size: int, gen: torch.Generator) -> list[torch.Tensor]:
    perm = torch.randperm(n, generator=gen)
    chunks = list(perm.split(max(1, min(batch_size, n))))
    # a trailing single-row batch would break batch norm
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = torch.cat([chunks[-2], chunks.pop()])
    return chunks


def train_scorer(normals, config: ScorerConfig | None = None) -> AnomalyScorer:
    """Fit the scorer on (mostly) normal, unlabelled samples."""
    config = config or ScorerConfig()
    with training_zone("stage2.train_scorer"):
        X = np.asarray(features_of(normals), dtype=np.float32)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("train_scorer needs a non-empty 2-D training matrix")
        scorer = AnomalyScorer(X.shape[1], config)
        _fit(scorer, torch.from_numpy(X), config)
    return scorer


def _fit(scorer: AnomalyScorer, X: torch.Tensor, cfg: ScorerConfig) -> None:
    G, D = scorer.generator, scorer.discriminator
    w_adv, w_con, w_enc = cfg.loss_weights
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, 0.999))
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, 0.999))
    gen = torch.Generator().manual_seed(cfg.seed)
    stats = scorer.training_stats
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed + 1)
        for epoch in range(cfg.epochs):
            G.train()
            D.train()
            sums = np.zeros(5)
            batches = _batches(X.shape[0], cfg.batch_size, gen)
            for step, idx in enumerate(batches):
                x = X[idx]
                xp = G.pad(x)
                x_hat, z, z_hat = G(x)

                _, f_real = D(xp)
                _, f_fake = D(x_hat)
                l_adv = F.mse_loss(f_fake, f_real.detach())
                l_con = F.l1_loss(x_hat, xp, reduction="sum") / x.numel()
                l_enc = F.mse_loss(z_hat, z)
                # total in float64 so it is exactly the weighted sum of the logged parts
                loss_g = w_adv * l_adv.double() + w_con * l_con.double() + w_enc * l_enc.double()
                if not torch.isfinite(loss_g):
                    raise TrainingDivergedError(
                        f"non-finite generator loss at epoch {epoch} step {step}: "
                        f"adv={l_adv.item()} con={l_con.item()} enc={l_enc.item()}")
                opt_g.zero_grad()
                loss_g.backward()
                opt_g.step()

                p_real, _ = D(xp)
                p_fake, _ = D(x_hat.detach())
                loss_d = 0.5 * (F.binary_cross_entropy_with_logits(p_real, torch.ones_like(p_real))
                                + F.binary_cross_entropy_with_logits(p_fake, torch.zeros_like(p_fake)))
                opt_d.zero_grad()
                loss_d.backward()
                opt_d.step()
                if loss_d.item() < 1e-5:
                    D.apply(_init_weights)
                    stats.d_reinits += 1

                row = (loss_g.item(), l_adv.item(), l_con.item(), l_enc.item())
                stats.step_losses.append(row)
                sums += (*row, loss_d.item())
            means = sums / len(batches)
            stats.epoch_losses.append(dict(zip(("total", "adv", "con", "enc", "disc"), map(float, means))))
            log.debug("epoch %d: %s", epoch, stats.epoch_losses[-1])
    G.eval()
    D.eval()


# ---------------------------------------------------------------------------
# score post-processing
# ---------------------------------------------------------------------------

@dataclass
class ScoreVector:
    raw: np.ndarray
    scaled: np.ndarray
    threshold: float
    predicted: np.ndarray

    def to_csv(self, sample_index=None) -> str:
        idx = np.arange(len(self.raw)) if sample_index is None else np.asarray(sample_index)
        rows = ["sample_index,raw,scaled,predicted"]
        rows += [f"{i},{r!r},{s!r},{p}" for i, r, s, p in
                 zip(idx.tolist(), self.raw.tolist(), self.scaled.tolist(), self.predicted.tolist())]
        return "\n".join(rows) + "\n"


def scale_scores(raw) -> np.ndarray:
    """Min-max scale scores over the given set; constant input scales to zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("cannot scale an empty score list")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def classify(scaled, th: float) -> np.ndarray:
    scaled = np.asarray(scaled, dtype=np.float64)
    if not 0.0 <= th <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {th}")
    return (scaled >= th).astype(np.int64)


def operating_cut(train_raw, quantile: float = 0.90) -> float:
    """Raw-score cut at a quantile of the training-fold scores."""
    return float(np.quantile(np.asarray(train_raw, dtype=np.float64), quantile))


def to_scaled_threshold(raw, cut: float) -> float:
    """Express a raw-score cut on the [0, 1] scale of ``raw``."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return 1.0 if cut > hi else 0.0
    return float(np.clip((cut - lo) / (hi - lo), 0.0, 1.0))


def score_vector(raw, cut: float) -> ScoreVector:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        return ScoreVector(raw, raw.copy(), 0.0, np.zeros(0, dtype=np.int64))
    scaled = scale_scores(raw)
    th = to_scaled_threshold(raw, cut)
    return ScoreVector(raw, scaled, th, classify(scaled, th))


def config_json(cfg: ScorerConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True)
