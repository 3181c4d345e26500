"""Named parameter storage, seeded initialization, and checkpoint I/O.

Checkpoint container: 8-byte magic, uint64-LE manifest length, JSON
manifest (names, shapes, seed, config hash), then one raw little-endian
float32 payload per parameter in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .tensor import Tensor

CKPT_MAGIC = b"ICCKPT01"


class ParameterStore:
    """Map from dotted parameter path to a trainable Tensor.

    Enumeration is always sorted by name; `version` increments on every
    in-place parameter mutation (used as a cache-invalidation key).
    """

    def __init__(self, seed=0, dtype=np.float32):
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self.dtype = dtype
        self._params: dict[str, Tensor] = {}
        self.version = 0

    def add(self, name, shape, init="linear"):
        """Create and register a parameter.

        init: "linear"    uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
              "zeros"     all zeros (biases)
              "embedding" normal(0, 0.02)
        """
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape, dtype=self.dtype)
        elif init == "embedding":
            data = self.rng.normal(0.0, 0.02, size=shape).astype(self.dtype)
        elif init == "linear":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            data = self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        else:
            raise ValueError(f"unknown init kind: {init}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grad(self):
        for _, t in self.items():
            t.grad = None

    def gradients(self):
        """Gradient map after backward(); unreachable params get zeros."""
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for n, t in self.items()}

    def bump_version(self):
        self.version += 1

    def config_hash(self, config=None):
        h = hashlib.sha256()
        h.update(json.dumps(
            {"seed": self.rng_seed,
             "shapes": {n: list(t.shape) for n, t in self.items()},
             "config": config},
            sort_keys=True).encode())
        return h.hexdigest()[:16]

    # -- checkpoint I/O ---------------------------------------------------

    def save(self, path, config=None):
        manifest = {
            "names": self.names(),
            "shapes": {n: list(t.shape) for n, t in self.items()},
            "seed": self.rng_seed,
            "config": config,
            "config_hash": self.config_hash(config),
        }
        blob = json.dumps(manifest, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(CKPT_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for name in manifest["names"]:
                f.write(self._params[name].data.astype("<f4").tobytes())

    def load(self, path):
        """Load payloads into already-registered parameters. Returns config."""
        with open(path, "rb") as f:
            if f.read(8) != CKPT_MAGIC:
                raise ValueError(f"{path}: not a checkpoint file")
            (blob_len,) = struct.unpack("<Q", f.read(8))
            manifest = json.loads(f.read(blob_len))
            if sorted(manifest["names"]) != self.names():
                raise ValueError("checkpoint parameter names do not match model")
            for name in manifest["names"]:
                shape = tuple(manifest["shapes"][name])
                if shape != self._params[name].shape:
                    raise ValueError(f"shape mismatch for {name}")
                n = int(np.prod(shape)) if shape else 1
                raw = np.frombuffer(f.read(4 * n), dtype="<f4")
                self._params[name].data = raw.reshape(shape).astype(self.dtype)
        self.bump_version()
        return manifest.get("config")

    @staticmethod
    def read_manifest(path):
        with open(path, "rb") as f:
            if f.read(8) != CKPT_MAGIC:
                raise ValueError(f"{path}: not a checkpoint file")
            (blob_len,) = struct.unpack("<Q", f.read(8))
            return json.loads(f.read(blob_len))
