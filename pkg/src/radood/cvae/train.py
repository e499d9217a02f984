"""ELBO training loop, Adam optimizer, checkpoints and loss traces.

Optimization is plain first-order Adam applied to the real view of every
parameter array (a complex parameter contributes its re/im pair as two real
coordinates).  Batches are visited in a seeded shuffled order; summation
order is fixed, so a (config, seed) pair reproduces training bit for bit.
"""

import csv
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import FormatError, InvalidArgumentError, TrainingError
from ..simulate import substream
from . import autodiff as ad
from .model import ConvBlockSpec, CvaeArchitecture, CvaeModel

_CKPT_MAGIC = b"CVCK"
_CKPT_VERSION = 1

_DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta: float = 0.01
    seed: int = 0


class Adam:
    """Adam over the float64 views of a parameter dict."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(_real_view(v.value)) for k, v in params.items()}
        self.v = {k: np.zeros_like(_real_view(v.value)) for k, v in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for name in sorted(self.params):
            var = self.params[name]
            if var.grad is None:
                continue
            g = _real_view(np.ascontiguousarray(var.grad))
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            _real_view(var.value)[...] -= corr * m / (np.sqrt(v) + self.eps)

    def zero_grad(self):
        for var in self.params.values():
            var.grad = None


def _real_view(a):
    return a.view(np.float64) if np.iscomplexobj(a) else a


def train(model, dataset, config):
    """Train in place on target-free profiles; returns the loss trace.

    dataset : (N, m) complex profiles, all H0.
    Raises TrainingError (with the epoch index) if the loss goes non-finite
    or exceeds 1e6.
    """
    Z = np.asarray(dataset, np.complex128)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise InvalidArgumentError("training dataset must be a nonempty (N, m) array")
    if Z.shape[1] != model.arch.input_len:
        raise InvalidArgumentError(
            f"profiles have length {Z.shape[1]}, model expects {model.arch.input_len}")
    opt = Adam(model.params, lr=config.learning_rate)
    rng = substream(config.seed, 0xC0FFEE)
    q = model.arch.latent_dim
    n = Z.shape[0]
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        recon_sum = kl_sum = total_sum = 0.0
        batches = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            eps_r = rng.standard_normal((idx.size, q))
            eps_i = rng.standard_normal((idx.size, q))
            loss, recon, kl = model.elbo_graph(Z[idx], config.beta, eps_r, eps_i)
            val = float(loss.value)
            if not np.isfinite(val) or val > _DIVERGENCE_LIMIT:
                raise TrainingError(f"training diverged at epoch {epoch} (loss {val})",
                                    epoch=epoch)
            if config.learning_rate != 0.0:
                opt.zero_grad()
                loss.backward()
                opt.step()
            recon_sum += recon
            kl_sum += kl
            total_sum += val
            batches += 1
        trace.append({"epoch": epoch, "recon": recon_sum / batches,
                      "kl": kl_sum / batches, "total": total_sum / batches})
    return trace


def write_loss_trace(trace, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "recon", "kl", "total"])
        for row in trace:
            w.writerow([row["epoch"], repr(row["recon"]), repr(row["kl"]),
                        repr(row["total"])])


def save_checkpoint(model, path, seed=0, train_config=None):
    """Versioned header + architecture descriptor + little-endian f64 payload."""
    names = sorted(model.params)
    manifest = []
    blobs = []
    for name in names:
        a = np.ascontiguousarray(model.params[name].value)
        manifest.append({"name": name, "shape": list(a.shape),
                         "dtype": "c16" if np.iscomplexobj(a) else "f8"})
        blobs.append(a.astype("<c16" if np.iscomplexobj(a) else "<f8").tobytes())
    header = {
        "arch": {
            "input_len": model.arch.input_len,
            "blocks": [[b.channels, b.kernel, b.pool] for b in model.arch.blocks],
            "activation": model.arch.activation,
            "latent_dim": model.arch.latent_dim,
            "norm": model.arch.norm,
        },
        "seed": int(seed),
        "train_config": asdict(train_config) if train_config is not None else None,
        "manifest": manifest,
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(hdr)))
        f.write(hdr)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Returns (model, header dict)."""
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise FormatError("bad checkpoint magic", offset=0)
        version, hlen = struct.unpack("<II", f.read(8))
        if version != _CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", offset=4)
        header = json.loads(f.read(hlen).decode())
        arch = CvaeArchitecture(
            input_len=header["arch"]["input_len"],
            blocks=tuple(ConvBlockSpec(*b) for b in header["arch"]["blocks"]),
            activation=header["arch"]["activation"],
            latent_dim=header["arch"]["latent_dim"],
            norm=header["arch"]["norm"],
        )
        params = {}
        for entry in header["manifest"]:
            shape = tuple(entry["shape"])
            dtype = "<c16" if entry["dtype"] == "c16" else "<f8"
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * np.dtype(dtype).itemsize)
            if len(raw) != count * np.dtype(dtype).itemsize:
                raise FormatError(f"truncated payload for {entry['name']}")
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
            params[entry["name"]] = ad.Var(
                arr.astype(np.complex128 if entry["dtype"] == "c16" else np.float64),
                requires_grad=True)
    return CvaeModel(arch, params), header
