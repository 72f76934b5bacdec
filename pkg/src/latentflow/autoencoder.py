"""Encoder/decoder pre-training on cube-supported data and the latent round trip."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .flow_matching import Adam, TrainingDiverged, fmt
from .oracle import DiscreteTarget
from .tensor import ContractError, Tensor
from .transformer import TransformerNet, TransformerSpec, default_layout, forward_tensors, init_transformer

log = logging.getLogger(__name__)


def coder_spec(d_in: int, d_out: int, n_layers: int = 2, heads: int = 2, d_k: int = 4, d_v: int = 8, d_ff: int = 64) -> TransformerSpec:
    d_patch, tokens = default_layout(d_in, single_token_max=8)
    return TransformerSpec(
        d_in=d_patch * tokens,
        d_out=d_out,
        d_patch=d_patch,
        tokens=tokens,
        n_layers=n_layers,
        heads=heads,
        d_k=d_k,
        d_v=d_v,
        d_ff=d_ff,
    )


def _pad(x: np.ndarray, width: int) -> np.ndarray:
    if x.shape[-1] == width:
        return x
    return np.concatenate([x, np.zeros(x.shape[:-1] + (width - x.shape[-1],))], axis=-1)


@dataclass
class AutoencoderPair:
    encoder: TransformerNet
    decoder: TransformerNet
    data_dim: int
    latent_dim: int

    def __post_init__(self):
        if self.encoder.spec.d_out != self.latent_dim or self.decoder.spec.d_out != self.data_dim:
            raise ContractError("encoder must emit latent_dim values and decoder data_dim values")
        if self.encoder.spec.d_in < self.data_dim or self.decoder.spec.d_in < self.latent_dim:
            raise ContractError("network input too narrow for the data")

    def encode(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return np.clip(self.encoder(_pad(y, self.encoder.spec.d_in)), 0.0, 1.0)

    def decode(self, z) -> np.ndarray:
        z = np.clip(np.atleast_2d(np.asarray(z, dtype=np.float64)), 0.0, 1.0)
        return self.decoder(_pad(z, self.decoder.spec.d_in))

    def reconstruct(self, y) -> np.ndarray:
        return self.decode(self.encode(y))

    def save(self, directory) -> dict:
        """Write both networks plus a manifest with their sha256 digests."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, net in (("encoder", self.encoder), ("decoder", self.decoder)):
            path = directory / f"{name}.json"
            payload = json.dumps(net.to_dict()).encode("utf-8")
            path.write_bytes(payload)
            files[name] = {"file": path.name, "sha256": hashlib.sha256(payload).hexdigest()}
        manifest = {"data_dim": self.data_dim, "latent_dim": self.latent_dim, "files": files}
        (directory / "pair.json").write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
        return manifest

    @classmethod
    def load(cls, directory) -> "AutoencoderPair":
        directory = Path(directory)
        manifest = json.loads((directory / "pair.json").read_text(encoding="utf-8"))
        nets = {}
        for name, entry in manifest["files"].items():
            payload = (directory / entry["file"]).read_bytes()
            if hashlib.sha256(payload).hexdigest() != entry["sha256"]:
                raise ContractError(f"{entry['file']} does not match its manifest hash")
            nets[name] = TransformerNet.from_dict(json.loads(payload))
        return cls(nets["encoder"], nets["decoder"], manifest["data_dim"], manifest["latent_dim"])


def reconstruction_loss(pair: AutoencoderPair, data) -> float:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ContractError("empty data")
    resid = pair.reconstruct(data) - data
    return float((resid * resid).sum(axis=1).mean())


def encode_batch(pair: AutoencoderPair, batch) -> DiscreteTarget:
    """Uniform discrete latent target on the encoded points."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if np.any(batch < 0.0) or np.any(batch > 1.0):
        log.warning("encode_batch: inputs outside the unit cube were clamped")
        batch = np.clip(batch, 0.0, 1.0)
    return DiscreteTarget.uniform(pair.encode(batch))


def decode_batch(pair: AutoencoderPair, latent) -> np.ndarray:
    return pair.decode(latent)


@dataclass
class PretrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0


@dataclass
class PretrainResult:
    pair: AutoencoderPair
    log: list[dict] = field(default_factory=list)

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("epoch,loss\n")
            for row in self.log:
                fh.write(f"{row['epoch']},{fmt(row['loss'])}\n")


def _pair_loss(enc_spec, dec_spec, enc_params, dec_params, y: np.ndarray, latent_dim: int):
    z = tn.clip(forward_tensors(enc_spec, enc_params, Tensor(_pad(y, enc_spec.d_in))), 0.0, 1.0)
    if dec_spec.d_in > latent_dim:
        z = tn.concat([z, tn.zeros((z.shape[0], dec_spec.d_in - latent_dim))], axis=1)
    out = forward_tensors(dec_spec, dec_params, z)
    return tn.mul(tn.tensor_sum(tn.square(out - y)), 1.0 / y.shape[0])


def init_pair(enc_spec: TransformerSpec, dec_spec: TransformerSpec, data_dim: int, latent_dim: int, rng) -> AutoencoderPair:
    enc = init_transformer(enc_spec, rng)
    dec = init_transformer(dec_spec, rng)
    # start the encoder near the center of the latent box so the clamp is inactive
    enc.params["A_out"] = 0.1 * enc.params["A_out"]
    enc.params["b_out"] = np.full(latent_dim, 0.5)
    return AutoencoderPair(enc, dec, data_dim, latent_dim)


def pretrain(
    enc_spec: TransformerSpec,
    dec_spec: TransformerSpec,
    data,
    cfg: PretrainConfig,
    latent_dim: int | None = None,
) -> PretrainResult:
    """Minimize mean squared reconstruction error; returns the best epoch's pair."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ContractError("empty data")
    latent_dim = enc_spec.d_out if latent_dim is None else latent_dim
    if enc_spec.d_out != latent_dim or dec_spec.d_in < latent_dim:
        raise ContractError("encoder output dim must equal decoder input dim")
    init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    pair = init_pair(enc_spec, dec_spec, data.shape[1], latent_dim, np.random.default_rng(init_ss))
    shuffle = np.random.default_rng(shuffle_ss)
    params = {**{f"enc.{k}": v for k, v in pair.encoder.params.items()}, **{f"dec.{k}": v for k, v in pair.decoder.params.items()}}
    opt = Adam(params, cfg.lr, cfg.betas)

    def sync():
        for k, v in params.items():
            owner, name = k.split(".", 1)
            (pair.encoder if owner == "enc" else pair.decoder).params[name] = v

    loss = reconstruction_loss(pair, data)
    best = (loss, {k: v.copy() for k, v in params.items()})
    history = [{"epoch": 0, "loss": loss}]
    m = data.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(m)
        for start in range(0, m, cfg.batch_size):
            y = data[order[start : start + cfg.batch_size]]
            with tn.Tape() as tape:
                enc_t = pair.encoder.tensors()
                dec_t = pair.decoder.tensors()
                batch_loss = _pair_loss(enc_spec, dec_spec, enc_t, dec_t, y, latent_dim)
                grads = tape.backward(batch_loss)
            flat = {}
            for prefix, tensors in (("enc", enc_t), ("dec", dec_t)):
                for k, p in tensors.items():
                    flat[f"{prefix}.{k}"] = grads.get(p, np.zeros_like(p.data))
            opt.step(params, flat)
            sync()
        loss = reconstruction_loss(pair, data)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"reconstruction loss became {loss} at epoch {epoch}")
        if loss < best[0]:
            best = (loss, {k: v.copy() for k, v in params.items()})
        history.append({"epoch": epoch, "loss": loss})
    params.update(best[1])
    sync()
    return PretrainResult(pair, history)


# -- synthetic data ------------------------------------------------------


def curve_map(s) -> np.ndarray:
    """A smooth injective curve [0,1] -> [0,1]^4."""
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    return np.stack(
        [
            0.1 + 0.8 * s,
            0.5 + 0.3 * np.sin(2 * np.pi * s),
            0.5 + 0.3 * np.cos(np.pi * s),
            0.2 + 0.6 * s * s,
        ],
        axis=1,
    )


def plane_map(uv) -> np.ndarray:
    """A smooth injective surface [0,1]^2 -> [0,1]^8."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    u, v = uv[:, 0], uv[:, 1]
    return np.stack(
        [
            0.1 + 0.8 * u,
            0.1 + 0.8 * v,
            0.5 + 0.25 * np.sin(np.pi * (u + v)),
            0.5 + 0.25 * np.cos(np.pi * (u - v)),
            0.2 + 0.6 * u * v,
            0.5 + 0.2 * np.sin(2 * np.pi * u),
            0.5 + 0.2 * np.cos(2 * np.pi * v),
            0.1 + 0.4 * (u * u + v * v),
        ],
        axis=1,
    )


def curve_in_cube(m: int, rng: np.random.Generator) -> np.ndarray:
    return curve_map(rng.uniform(0.0, 1.0, size=m))


def plane_in_cube(m: int, rng: np.random.Generator) -> np.ndarray:
    return plane_map(rng.uniform(0.0, 1.0, size=(m, 2)))


def write_points_csv(points, path, prefix: str = "x") -> None:
    points = np.atleast_2d(points)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(f"{prefix}{i}" for i in range(points.shape[1])) + "\n")
        for row in points:
            fh.write(",".join(fmt(float(v)) for v in row) + "\n")
