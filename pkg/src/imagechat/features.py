"""Precomputed image-feature store.

File layout: 8-byte magic "IMFEAT01", uint64-LE manifest length, JSON
manifest {"image_ids": [...], "dim": 2048, "count": N}, then one raw
little-endian float32 row per id, in manifest order. Round-trips must
be bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"IMFEAT01"
FEATURE_DIM = 2048


class FeatureStore:
    def __init__(self, image_ids, matrix):
        matrix = np.asarray(matrix, dtype="<f4")
        if matrix.ndim != 2 or matrix.shape[0] != len(image_ids):
            raise ValueError("feature matrix rows must match image ids")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("non-finite feature values")
        if len(set(image_ids)) != len(image_ids):
            raise ValueError("duplicate image ids")
        self.image_ids = list(image_ids)
        self.matrix = matrix
        self._index = {iid: i for i, iid in enumerate(self.image_ids)}

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.image_ids)

    def __contains__(self, image_id):
        return image_id in self._index

    def get(self, image_id):
        if image_id not in self._index:
            raise KeyError(f"image id not in feature store: {image_id!r}")
        return self.matrix[self._index[image_id]]

    def batch(self, image_ids):
        return self.matrix[[self._index[i] for i in image_ids]]

    def save(self, path):
        manifest = json.dumps({"image_ids": self.image_ids,
                               "dim": int(self.dim),
                               "count": len(self.image_ids)}).encode()
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(manifest)))
            f.write(manifest)
            f.write(self.matrix.astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            if f.read(8) != MAGIC:
                raise ValueError(f"{path}: not an IMFEAT01 file")
            (mlen,) = struct.unpack("<Q", f.read(8))
            manifest = json.loads(f.read(mlen))
            count, dim = manifest["count"], manifest["dim"]
            raw = np.frombuffer(f.read(4 * count * dim), dtype="<f4")
            if raw.size != count * dim:
                raise ValueError(f"{path}: truncated payload")
        return cls(manifest["image_ids"], raw.reshape(count, dim))
