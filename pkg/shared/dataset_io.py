"""
Binary and CSV dataset files.

Layout: a fixed little-endian header followed by row-major float64 data.

    magic    4s   b"SGMT"
    version  u2
    ncols    u4
    nrows    u8
    dt       f8   (NaN when not a trajectory)
    seed     u8
    label    f8   (conditioning label of generated samples, NaN otherwise)

Column names travel in the CSV export and in manifests, not in the binary.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from shared.errors import InputError

MAGIC = b"SGMT"
FORMAT_VERSION = 1

HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("version", "<u2"),
    ("ncols", "<u4"),
    ("nrows", "<u8"),
    ("dt", "<f8"),
    ("seed", "<u8"),
    ("label", "<f8"),
])


@dataclass
class DatasetFile:
    """In-memory view of a dataset file."""

    data: np.ndarray
    dt: float = math.nan
    seed: int = 0
    label: float = math.nan

    @property
    def has_label(self) -> bool:
        return not math.isnan(self.label)


def write_dataset(path: str, data: np.ndarray, *, dt: Optional[float] = None,
                  seed: int = 0, label: Optional[float] = None) -> None:
    """Write a 2-D float array with its header."""
    data = np.ascontiguousarray(np.asarray(data, dtype="<f8"))
    if data.ndim != 2:
        raise InputError(f"dataset must be 2-D, got shape {data.shape}")
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = FORMAT_VERSION
    header["ncols"] = data.shape[1]
    header["nrows"] = data.shape[0]
    header["dt"] = math.nan if dt is None else float(dt)
    header["seed"] = int(seed)
    header["label"] = math.nan if label is None else float(label)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(data.tobytes(order="C"))


def read_dataset(path: str) -> DatasetFile:
    """Read a dataset written by write_dataset."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_DTYPE.itemsize:
        raise InputError(f"{path}: file too short for a dataset header")
    header = np.frombuffer(raw[:HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if bytes(header["magic"]) != MAGIC:
        raise InputError(f"{path}: bad magic {bytes(header['magic'])!r}")
    if int(header["version"]) != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported format version {int(header['version'])}")
    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    body = raw[HEADER_DTYPE.itemsize:]
    if len(body) != nrows * ncols * 8:
        raise InputError(
            f"{path}: expected {nrows * ncols * 8} data bytes, found {len(body)}"
        )
    data = np.frombuffer(body, dtype="<f8").reshape(nrows, ncols).astype(np.float64)
    return DatasetFile(
        data=data,
        dt=float(header["dt"]),
        seed=int(header["seed"]),
        label=float(header["label"]),
    )


def export_csv(path: str, data: np.ndarray, columns: Sequence[str]) -> None:
    """Mirror a dataset as CSV with a one-line header."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise InputError(f"{len(columns)} column names for data of shape {data.shape}")
    np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt="%.17g")
