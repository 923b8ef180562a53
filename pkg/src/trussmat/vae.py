"""Variational autoencoder that embeds a material database in 2-D.

The encoder maps the four scaled material properties through one hidden
ReLU layer of 250 units to a mean and log-variance pair over a
two-dimensional latent space; the decoder mirrors it back through a
sigmoid head, so reconstructions stay inside the scaled (0, 1) box.
Training is full batch with the reparameterization trick and an Adam
update; inference (``encode``/``decode``) is deterministic and uses the
posterior mean only.

The trained decoder is the differentiable bridge from latent coordinates
to material properties: ``decode`` accepts an autodiff Variable and
returns one, which is what the design optimizer differentiates through.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .materials import ATTRIBUTES, Material, MaterialDatabase

HIDDEN_UNITS = 250
LATENT_DIM = 2
MODEL_FORMAT = "trussmat-vae-model v1"


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; ``epoch`` holds the index."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class ModelFormatError(ValueError):
    """A model file is malformed or has inconsistent layer dimensions."""


class ScalerMismatchError(ValueError):
    """A model's scaler does not match the provided database."""


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults follow the reference setup."""

    beta: float = 5e-5
    lr: float = 0.002
    epochs: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")


@dataclass
class VAEModel:
    """Trained weights, the training scaler, and per-material embeddings.

    Layers are (weights, bias) pairs. ``embeddings`` holds the encoder
    mean of every training material, in database row order.
    """

    enc_hidden: list
    enc_mu: list
    enc_logvar: list
    dec_hidden: list
    dec_out: list
    scaler_min: np.ndarray
    scaler_max: np.ndarray
    embeddings: np.ndarray = field(default=None)

    def parameters(self) -> list:
        return nets.chain_parameters(
            [self.enc_hidden, self.enc_mu, self.enc_logvar, self.dec_hidden, self.dec_out]
        )


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)), summed over latent
    dimensions and averaged over the batch."""
    mu = np.atleast_2d(mu)
    logvar = np.atleast_2d(logvar)
    per_sample = 0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar, axis=1)
    return float(per_sample.mean())


def _encode_mean(model: VAEModel, scaled: np.ndarray) -> np.ndarray:
    h = np.maximum(scaled @ model.enc_hidden[0] + model.enc_hidden[1], 0.0)
    return h @ model.enc_mu[0] + model.enc_mu[1]


def check_scaler(model: VAEModel, db: MaterialDatabase) -> None:
    """Raise :class:`ScalerMismatchError` unless the model was trained
    with exactly this database's scaling."""
    if not (
        np.array_equal(model.scaler_min, db.scaler_min)
        and np.array_equal(model.scaler_max, db.scaler_max)
    ):
        raise ScalerMismatchError(
            "model scaler does not match the database (was the model "
            "trained on a different database or subset?)"
        )


def train(db: MaterialDatabase, cfg: TrainConfig):
    """Train on every material in ``db`` (full batch).

    Returns ``(model, loss_history)``. The loss is the mean squared
    reconstruction error over scaled attributes plus ``beta`` times the
    closed-form KL divergence; sampling uses z = mu + sigma * eps with
    fresh standard-normal eps each epoch from the seeded generator.
    """
    X = db.scaled_properties()
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    enc_hidden = nets.init_affine(rng, 4, HIDDEN_UNITS)
    enc_mu = nets.init_affine(rng, HIDDEN_UNITS, LATENT_DIM)
    enc_logvar = nets.init_affine(rng, HIDDEN_UNITS, LATENT_DIM)
    dec_hidden = nets.init_affine(rng, LATENT_DIM, HIDDEN_UNITS)
    dec_out = nets.init_affine(rng, HIDDEN_UNITS, 4)
    model = VAEModel(
        enc_hidden,
        enc_mu,
        enc_logvar,
        dec_hidden,
        dec_out,
        scaler_min=db.scaler_min.copy(),
        scaler_max=db.scaler_max.copy(),
    )
    params = model.parameters()
    adam = nets.Adam(params, lr=cfg.lr)
    history = np.empty(cfg.epochs)

    for epoch in range(cfg.epochs):
        tape = ad.Tape()
        tracked = [tape.variable(p) for p in params]
        ehw, ehb, emw, emb, elw, elb, dhw, dhb, dow, dob = tracked

        h = ad.relu(nets.affine(X, ehw, ehb))
        mu = nets.affine(h, emw, emb)
        logvar = nets.affine(h, elw, elb)
        std = ad.exp(logvar * 0.5)
        eps = rng.standard_normal((n, LATENT_DIM))
        z = mu + std * eps
        decoded = ad.sigmoid(nets.affine(ad.relu(nets.affine(z, dhw, dhb)), dow, dob))

        recon = ((decoded - X) ** 2).sum() * (1.0 / X.size)
        sigma2 = std * std
        kl = ((mu**2).sum() + sigma2.sum() - logvar.sum() - n * LATENT_DIM) * (0.5 / n)
        loss = recon + cfg.beta * kl

        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"training diverged at epoch {epoch}", epoch=epoch)
        history[epoch] = value
        tape.backward(loss)
        adam.step([v.grad for v in tracked])

    model.embeddings = _encode_mean(model, X)
    return model, history


def encode(model: VAEModel, material) -> np.ndarray:
    """Deterministic latent mean for a material (no sampling).

    ``material`` may be a :class:`Material` or a raw property 4-vector.
    """
    zeta = material.properties() if isinstance(material, Material) else np.asarray(material)
    scaled = (zeta - model.scaler_min) / (model.scaler_max - model.scaler_min)
    return _encode_mean(model, scaled)


def decode(model: VAEModel, z):
    """Decode latent coordinates to unscaled properties (E, cost, rho,
    yield strength).

    Accepts a plain array (returns an array) or an autodiff Variable
    recorded on a tape (returns a Variable whose gradients w.r.t. ``z``
    flow through ``backward``). Batched input of shape (m, 2) decodes
    row-wise.
    """
    z_var = z if isinstance(z, ad.Variable) else ad.constant(z)
    hidden = ad.relu(nets.affine(z_var, *model.dec_hidden))
    scaled = ad.sigmoid(nets.affine(hidden, *model.dec_out))
    out = scaled * (model.scaler_max - model.scaler_min) + model.scaler_min
    return out if isinstance(z, ad.Variable) else out.value


@dataclass
class ReconstructionReport:
    """Per-material percentage reconstruction errors plus the column max."""

    names: tuple
    errors: np.ndarray  # (n, 4) percent
    max_errors: np.ndarray  # (4,) percent

    def format(self) -> str:
        width = max(len(n) for n in self.names + ("max error",)) + 2
        header = "material".ljust(width) + "".join(
            f"{'d' + a + ' %':>18}" for a in ATTRIBUTES
        )
        lines = [header]
        for name, row in zip(self.names, self.errors):
            lines.append(name.ljust(width) + "".join(f"{v:18.3f}" for v in row))
        lines.append("max error".ljust(width) + "".join(f"{v:18.3f}" for v in self.max_errors))
        return "\n".join(lines)


def reconstruction_report(model: VAEModel, db: MaterialDatabase) -> ReconstructionReport:
    """Percentage error |true - decoded| / true per material and attribute."""
    check_scaler(model, db)
    decoded = decode(model, model.embeddings)
    errors = np.abs(db.properties - decoded) / db.properties * 100.0
    return ReconstructionReport(db.names, errors, errors.max(axis=0))


def distance_matrix(model: VAEModel, db: MaterialDatabase) -> np.ndarray:
    """Pairwise Euclidean distances between latent embeddings; exactly
    symmetric with a zero diagonal."""
    check_scaler(model, db)
    emb = model.embeddings
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


def latent_grid(model: VAEModel, attribute: str, resolution: int):
    """Decode one attribute over a regular grid spanning [-3, 3]^2.

    Returns ``(z0_axis, z1_axis, values)`` with ``values[i, j]`` decoded
    at ``(z0_axis[i], z1_axis[j])``.
    """
    if attribute not in ATTRIBUTES:
        raise ValueError(f"unknown attribute {attribute!r}; expected one of {ATTRIBUTES}")
    if resolution < 2:
        raise ValueError(f"grid resolution must be at least 2, got {resolution}")
    column = ATTRIBUTES.index(attribute)
    axis = np.linspace(-3.0, 3.0, resolution)
    z0, z1 = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([z0.ravel(), z1.ravel()])
    values = decode(model, points)[:, column].reshape(resolution, resolution)
    return axis, axis, values


# -- persistence -----------------------------------------------------------

_ARRAY_SPECS = (
    ("enc_hidden_w", ("enc_hidden", 0)),
    ("enc_hidden_b", ("enc_hidden", 1)),
    ("enc_mu_w", ("enc_mu", 0)),
    ("enc_mu_b", ("enc_mu", 1)),
    ("enc_logvar_w", ("enc_logvar", 0)),
    ("enc_logvar_b", ("enc_logvar", 1)),
    ("dec_hidden_w", ("dec_hidden", 0)),
    ("dec_hidden_b", ("dec_hidden", 1)),
    ("dec_out_w", ("dec_out", 0)),
    ("dec_out_b", ("dec_out", 1)),
)


def save_model(model: VAEModel, path, header_lines=()) -> None:
    """Write the model as versioned plain text (deterministic bytes)."""
    arrays = {name: getattr(model, attr)[idx] for name, (attr, idx) in _ARRAY_SPECS}
    arrays["scaler_min"] = model.scaler_min
    arrays["scaler_max"] = model.scaler_max
    arrays["embeddings"] = model.embeddings
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(MODEL_FORMAT + "\n")
        for line in header_lines:
            handle.write(f"# {line}\n")
        for name, array in arrays.items():
            array = np.atleast_2d(np.asarray(array))
            dims = " ".join(str(d) for d in array.shape)
            handle.write(f"array {name} {dims}\n")
            for row in array:
                handle.write(" ".join(f"{v:.17e}" for v in row) + "\n")


def load_model(path) -> VAEModel:
    """Read a model written by :func:`save_model`, rejecting dimension
    mismatches between layers."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [ln.rstrip("\n") for ln in handle]
    if not lines or lines[0] != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT!r} file")
    arrays = {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "array" or len(parts) < 3:
            raise ModelFormatError(f"{path}: malformed array header {line!r}")
        name, dims = parts[1], [int(d) for d in parts[2:]]
        rows = []
        for _ in range(dims[0]):
            if i >= len(lines):
                raise ModelFormatError(f"{path}: truncated array {name!r}")
            rows.append([float(v) for v in lines[i].split()])
            i += 1
        array = np.array(rows)
        if array.shape != tuple(dims):
            raise ModelFormatError(
                f"{path}: array {name!r} has shape {array.shape}, header says {tuple(dims)}"
            )
        arrays[name] = array

    def fetch(name, squeeze=False):
        if name not in arrays:
            raise ModelFormatError(f"{path}: missing array {name!r}")
        value = arrays[name]
        return value[0] if squeeze else value

    enc_hidden = [fetch("enc_hidden_w"), fetch("enc_hidden_b", squeeze=True)]
    enc_mu = [fetch("enc_mu_w"), fetch("enc_mu_b", squeeze=True)]
    enc_logvar = [fetch("enc_logvar_w"), fetch("enc_logvar_b", squeeze=True)]
    dec_hidden = [fetch("dec_hidden_w"), fetch("dec_hidden_b", squeeze=True)]
    dec_out = [fetch("dec_out_w"), fetch("dec_out_b", squeeze=True)]
    model = VAEModel(
        enc_hidden,
        enc_mu,
        enc_logvar,
        dec_hidden,
        dec_out,
        scaler_min=fetch("scaler_min", squeeze=True),
        scaler_max=fetch("scaler_max", squeeze=True),
        embeddings=fetch("embeddings"),
    )
    hidden = enc_hidden[0].shape[1]
    expected = {
        "enc_hidden": (4, hidden),
        "enc_mu": (hidden, LATENT_DIM),
        "enc_logvar": (hidden, LATENT_DIM),
        "dec_hidden": (LATENT_DIM, hidden),
        "dec_out": (hidden, 4),
    }
    for name, shape in expected.items():
        w, b = getattr(model, name)
        if w.shape != shape or b.shape != (shape[1],):
            raise ModelFormatError(
                f"{path}: layer {name!r} dimensions {w.shape}/{b.shape} "
                f"inconsistent with {shape}"
            )
    if model.scaler_min.shape != (4,) or model.scaler_max.shape != (4,):
        raise ModelFormatError(f"{path}: scaler must hold 4 attributes")
    if model.embeddings.ndim != 2 or model.embeddings.shape[1] != LATENT_DIM:
        raise ModelFormatError(f"{path}: embeddings must have shape (n, {LATENT_DIM})")
    return model


# -- delimited-text exports --------------------------------------------------


def _write_lines(path, header_lines, column_header, rows) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for line in header_lines:
            handle.write(f"# {line}\n")
        handle.write(column_header + "\n")
        for row in rows:
            handle.write(row + "\n")


def write_loss_history(history, path, header_lines=()) -> None:
    rows = (f"{epoch},{value:.17e}" for epoch, value in enumerate(history))
    _write_lines(path, header_lines, "epoch,loss", rows)


def write_latent_scatter(model: VAEModel, db: MaterialDatabase, path, header_lines=()) -> None:
    check_scaler(model, db)
    rows = (
        f"{m.name},{m.class_},{z[0]:.17e},{z[1]:.17e}"
        for m, z in zip(db.materials, model.embeddings)
    )
    _write_lines(path, header_lines, "name,class,z0,z1", rows)


def write_distance_matrix(model: VAEModel, db: MaterialDatabase, path, header_lines=()) -> None:
    dist = distance_matrix(model, db)
    names = db.names
    rows = (
        name + "," + ",".join(f"{v:.17e}" for v in row) for name, row in zip(names, dist)
    )
    _write_lines(path, header_lines, "name," + ",".join(names), rows)


def write_latent_grid(model: VAEModel, attribute: str, resolution: int, path, header_lines=()) -> None:
    z0_axis, z1_axis, values = latent_grid(model, attribute, resolution)
    rows = (
        f"{z0_axis[i]:.17e},{z1_axis[j]:.17e},{values[i, j]:.17e}"
        for i in range(resolution)
        for j in range(resolution)
    )
    _write_lines(path, header_lines, f"z0,z1,{attribute}", rows)
