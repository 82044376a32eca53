"""On-disk formats: binary feature files and JSON model checkpoints.

Feature file layout (little-endian):

    bytes 0..7    magic "HAADFT01"
    4 x uint32    h_p, w_p, d_in, sample_count
    bytes         one label per sample: 0 real, 1 fake, 255 unlabeled
    float32[]     sample-major, then patch-row-major feature payload

Features are stored as 32-bit floats (compact, matches upstream
extractors) and promoted to 64-bit on load.  The reader rejects a wrong
magic, truncated headers/labels/payloads, bad label bytes, and non-finite
floats, each with its own message.

Checkpoints are JSON documents holding every parameter array (decimal
float serialization, which round-trips 64-bit values exactly), the
potential/rollout/loss configurations, the graph construction parameters,
and the training seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .dynamics import RolloutConfig
from .potential import PotentialConfig, init_model, named_params, set_param
from .training import LossConfig

__all__ = [
    "FeatureFileError",
    "CheckpointError",
    "MAGIC",
    "UNLABELED",
    "FeatureSet",
    "write_features",
    "read_features",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"HAADFT01"
UNLABELED = 255
_HEADER = struct.Struct("<4I")
CHECKPOINT_FORMAT = 1


class FeatureFileError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class FeatureSet:
    """Decoded feature file: per-sample (N, d_in) float64 grids plus labels."""

    h_p: int
    w_p: int
    d_in: int
    feats: np.ndarray   # (count, N, d_in) float64
    labels: np.ndarray  # (count,) uint8

    @property
    def count(self):
        return int(self.labels.size)

    @property
    def n_patches(self):
        return self.h_p * self.w_p

    def labeled_pairs(self):
        """(features, label) pairs for the labeled samples only."""
        return [(self.feats[i], int(self.labels[i]))
                for i in range(self.count) if self.labels[i] != UNLABELED]


def write_features(path, h_p, w_p, samples):
    """Write (features, label) pairs; features are (h_p*w_p, d_in) arrays."""
    if not samples:
        raise FeatureFileError("cannot write an empty feature file")
    d_in = int(np.asarray(samples[0][0]).shape[1])
    n = h_p * w_p
    labels = bytearray()
    payload = bytearray()
    for feats, label in samples:
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape != (n, d_in):
            raise FeatureFileError(f"sample shape {feats.shape} does not match header ({n}, {d_in})")
        if not np.all(np.isfinite(feats)):
            raise FeatureFileError("refusing to write non-finite features")
        if label not in (0, 1, UNLABELED):
            raise FeatureFileError(f"bad label {label}; expected 0, 1, or 255")
        labels.append(label)
        payload += feats.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(h_p, w_p, d_in, len(samples)))
        fh.write(bytes(labels))
        fh.write(bytes(payload))


def read_features(path) -> FeatureSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + _HEADER.size:
        raise FeatureFileError("truncated header")
    if blob[:len(MAGIC)] != MAGIC:
        raise FeatureFileError(f"bad magic {blob[:len(MAGIC)]!r}; not a feature file")
    h_p, w_p, d_in, count = _HEADER.unpack_from(blob, len(MAGIC))
    if min(h_p, w_p, d_in, count) < 1:
        raise FeatureFileError("header fields must be positive")
    offset = len(MAGIC) + _HEADER.size
    if len(blob) < offset + count:
        raise FeatureFileError("truncated label block")
    labels = np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset)
    bad = set(np.unique(labels)) - {0, 1, UNLABELED}
    if bad:
        raise FeatureFileError(f"bad label byte(s) {sorted(bad)}")
    offset += count
    expected = count * h_p * w_p * d_in
    got = (len(blob) - offset) // 4
    if got != expected or (len(blob) - offset) % 4:
        raise FeatureFileError(f"truncated payload: expected {expected} floats, file holds {got}")
    flat = np.frombuffer(blob, dtype="<f4", count=expected, offset=offset)
    if not np.all(np.isfinite(flat)):
        raise FeatureFileError("payload contains non-finite floats")
    feats = flat.astype(np.float64).reshape(count, h_p * w_p, d_in)
    return FeatureSet(int(h_p), int(w_p), int(d_in), feats, labels.copy())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, rollout_cfg: RolloutConfig, loss_cfg: LossConfig,
                    graph_cfg, seed):
    """Serialize the model and run configuration as JSON.

    ``graph_cfg`` is a (k, sigma) pair for rebuilding the patch graph.
    Decimal serialization of the parameter arrays round-trips bit-exactly.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "d_in": model.d_in,
        "d_phy": model.d_phy,
        "potential": {"lambda_geo": model.config.lambda_geo,
                      "lambda_photo": model.config.lambda_photo},
        "rollout": {"steps": rollout_cfg.steps, "eta": rollout_cfg.eta,
                    "integrator": rollout_cfg.integrator,
                    "mass_mode": rollout_cfg.mass_mode},
        "loss": {"lambda": loss_cfg.lam, "gamma": loss_cfg.gamma},
        "graph": {"k": int(graph_cfg[0]), "sigma": float(graph_cfg[1])},
        "seed": int(seed),
        "mass_epsilon": model.mass.epsilon,
        "params": {name: arr.tolist() for name, arr in named_params(model).items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild (model, rollout_cfg, loss_cfg, graph_cfg, seed) from JSON."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"not a checkpoint: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r}")
    config = PotentialConfig(doc["potential"]["lambda_geo"], doc["potential"]["lambda_photo"])
    model = init_model(doc["d_in"], doc["d_phy"], seed=0, config=config)
    model.mass.epsilon = float(doc.get("mass_epsilon", 1e-3))
    expected = named_params(model)
    for name, value in doc["params"].items():
        if name not in expected:
            raise CheckpointError(f"unknown parameter '{name}'")
        arr = np.asarray(value, dtype=np.float64).reshape(expected[name].shape)
        set_param(model, name, arr)
    rollout_cfg = RolloutConfig(steps=doc["rollout"]["steps"], eta=doc["rollout"]["eta"],
                                integrator=doc["rollout"]["integrator"],
                                mass_mode=doc["rollout"]["mass_mode"])
    loss_cfg = LossConfig(lam=doc["loss"]["lambda"], gamma=doc["loss"]["gamma"])
    graph_cfg = (doc["graph"]["k"], doc["graph"]["sigma"])
    return model, rollout_cfg, loss_cfg, graph_cfg, int(doc["seed"])
