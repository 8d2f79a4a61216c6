"""Genotype I/O and preprocessing.

Formats
-------
PLINK ``.bed/.bim/.fam``
    SNP-major binary genotypes. The ``.bed`` file starts with the magic bytes
    ``0x6C 0x1B`` and the mode byte ``0x01``, followed by ``ceil(n/4)`` bytes
    per marker. Each byte holds four samples, lowest bit pair first:
    ``00`` hom. first allele (dosage 2), ``01`` missing, ``10`` het (1),
    ``11`` hom. second allele (0). Pad pairs are written as ``00`` and
    ignored on read.
GMX1
    16-byte little-endian header (``b"GMX1"``, ``u32 m``, ``u32 n``,
    ``u32 flags``) followed by ``m*n`` column-major ``float64`` values.
CSV
    Header row ``c0,c1,...`` then one line per matrix row.
"""

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MISSING",
    "FormatError",
    "GenotypeMatrix",
    "StandardizedMatrix",
    "read_bed",
    "write_bed",
    "bed_paths",
    "impute_mean",
    "standardize",
    "row_scaling",
    "read_dense",
    "write_dense",
    "read_csv",
    "write_csv",
    "read_matrix",
]

MISSING = -1

BED_MAGIC = b"\x6c\x1b"
BED_SNP_MAJOR = 0x01
GMX_MAGIC = b"GMX1"
GMX_HEADER = struct.Struct("<4sIII")

# 2-bit code -> dosage
_CODE_TO_DOSAGE = np.array([2, MISSING, 1, 0], dtype=np.int8)
# dosage -> 2-bit code, indexed by dosage + 1 (MISSING, 0, 1, 2)
_DOSAGE_TO_CODE = np.array([0b01, 0b11, 0b10, 0b00], dtype=np.uint8)
# every byte decoded into its four dosages
_BYTE_TABLE = _CODE_TO_DOSAGE[(np.arange(256)[:, None] >> np.array([0, 2, 4, 6])) & 0b11]


class FormatError(ValueError):
    """Malformed or unsupported input file."""


@dataclass
class GenotypeMatrix:
    """Marker-major dosage matrix (``m`` markers x ``n`` samples).

    Entries are ``int8`` values in {0, 1, 2} or :data:`MISSING`.
    """

    dosages: np.ndarray
    marker_ids: list | None = None
    sample_ids: list | None = None

    def __post_init__(self):
        d = np.asarray(self.dosages)
        if d.ndim != 2:
            raise ValueError("dosages must be 2-D")
        if d.dtype != np.int8:
            if not np.all(np.isin(d, (0, 1, 2, MISSING))):
                raise ValueError("dosages must be 0, 1, 2 or MISSING")
            d = d.astype(np.int8)
        self.dosages = d
        if self.marker_ids is not None and len(self.marker_ids) != d.shape[0]:
            raise ValueError("marker_ids length does not match the marker count")
        if self.sample_ids is not None and len(self.sample_ids) != d.shape[1]:
            raise ValueError("sample_ids length does not match the sample count")

    @property
    def m(self):
        return self.dosages.shape[0]

    @property
    def n(self):
        return self.dosages.shape[1]

    @property
    def shape(self):
        return self.dosages.shape

    @property
    def missing(self):
        return self.dosages == MISSING

    def to_float(self):
        """Dosages as ``float64`` with NaN for missing entries."""
        X = self.dosages.astype(np.float64, order="F")
        X[self.missing] = np.nan
        return X

    def __eq__(self, other):
        if not isinstance(other, GenotypeMatrix):
            return NotImplemented
        return np.array_equal(self.dosages, other.dosages)


@dataclass
class StandardizedMatrix:
    """Row-centered and scaled marker matrix."""

    values: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    scheme: str
    zero_variance: np.ndarray = field(default=None)


def bed_paths(prefix):
    prefix = str(prefix)
    for ext in (".bed", ".bim", ".fam"):
        if prefix.endswith(ext):
            prefix = prefix[: -len(ext)]
    return Path(prefix + ".bed"), Path(prefix + ".bim"), Path(prefix + ".fam")


def _read_ids(path, column):
    ids = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts:
                ids.append(parts[column] if len(parts) > column else parts[0])
    return ids


def read_bed(bed_path, bim_path=None, fam_path=None):
    """Read a PLINK binary fileset into a :class:`GenotypeMatrix`.

    ``bed_path`` may also be a fileset prefix when the companions are omitted.
    """
    if bim_path is None or fam_path is None:
        bed_path, bim_path, fam_path = bed_paths(bed_path)
    marker_ids = _read_ids(bim_path, 1)
    sample_ids = _read_ids(fam_path, 1)
    m, n = len(marker_ids), len(sample_ids)

    raw = Path(bed_path).read_bytes()
    if len(raw) < 3 or raw[:2] != BED_MAGIC:
        raise FormatError(f"{bed_path}: not a PLINK .bed file (bad magic bytes)")
    if raw[2] == 0x00:
        raise FormatError(f"{bed_path}: individual-major .bed files are not supported")
    if raw[2] != BED_SNP_MAJOR:
        raise FormatError(f"{bed_path}: unknown .bed mode byte {raw[2]:#04x}")
    row_bytes = (n + 3) // 4
    expected = 3 + m * row_bytes
    if len(raw) != expected:
        raise FormatError(f"{bed_path}: expected {expected} bytes for {m} markers x {n} samples, found {len(raw)}")

    data = np.frombuffer(raw, dtype=np.uint8, offset=3).reshape(m, row_bytes)
    dosages = _BYTE_TABLE[data].reshape(m, row_bytes * 4)[:, :n]
    return GenotypeMatrix(np.asfortranarray(dosages), marker_ids, sample_ids)


def write_bed(g, prefix):
    """Write ``g`` as ``prefix.bed/.bim/.fam``; placeholder metadata is generated if absent."""
    bed, bim, fam = bed_paths(prefix)
    m, n = g.shape
    row_bytes = (n + 3) // 4
    codes = np.zeros((m, row_bytes * 4), dtype=np.uint8)
    codes[:, :n] = _DOSAGE_TO_CODE[g.dosages.astype(np.int16) + 1]
    quads = codes.reshape(m, row_bytes, 4)
    packed = quads[..., 0] | (quads[..., 1] << 2) | (quads[..., 2] << 4) | (quads[..., 3] << 6)
    with open(bed, "wb") as fh:
        fh.write(BED_MAGIC + bytes([BED_SNP_MAJOR]))
        fh.write(np.ascontiguousarray(packed, dtype=np.uint8).tobytes())

    marker_ids = g.marker_ids or [f"snp{i + 1}" for i in range(m)]
    sample_ids = g.sample_ids or [f"ind{j + 1}" for j in range(n)]
    with open(bim, "w") as fh:
        for i, mid in enumerate(marker_ids):
            fh.write(f"1\t{mid}\t0\t{i + 1}\tA\tG\n")
    with open(fam, "w") as fh:
        for sid in sample_ids:
            fh.write(f"{sid} {sid} 0 0 0 -9\n")
    return bed, bim, fam


def impute_mean(g):
    """Replace missing dosages by the marker's observed mean.

    Returns ``(X, all_missing)`` where ``X`` is a float matrix and
    ``all_missing`` flags markers with no observed value (filled with 0).
    """
    X = g.to_float() if isinstance(g, GenotypeMatrix) else np.array(g, dtype=np.float64, order="F")
    miss = np.isnan(X)
    observed = (~miss).sum(axis=1)
    sums = np.where(miss, 0.0, X).sum(axis=1)
    all_missing = observed == 0
    means = np.zeros(X.shape[0])
    np.divide(sums, observed, out=means, where=~all_missing)
    rows, _ = np.nonzero(miss)
    X[miss] = means[rows]
    return X, all_missing


def row_scaling(X, scheme="unit_variance"):
    """Per-row ``(means, scales, zero_variance)`` used by :func:`standardize`."""
    X = np.asarray(X, dtype=np.float64)
    if np.isnan(X).any():
        raise ValueError("standardize needs a complete matrix; impute missing values first")
    n = X.shape[1]
    means = X.mean(axis=1)
    sd = np.sqrt(np.mean((X - means[:, None]) ** 2, axis=1))
    zero_var = sd <= 1e-12 * np.maximum(1.0, np.abs(means))
    if scheme == "unit_variance":
        scales = sd.copy()
    elif scheme == "binomial":
        clamp = 1.0 / (2 * n + 2)
        p = np.clip(means / 2.0, clamp, 1.0 - clamp)
        scales = np.sqrt(p * (1.0 - p))
    else:
        raise ValueError(f"unknown scaling scheme {scheme!r}")
    scales[zero_var] = 0.0
    return means, scales, zero_var


def standardize(X, scheme="unit_variance"):
    """Center each marker row and scale it.

    ``unit_variance`` divides by the population (1/n) standard deviation;
    ``binomial`` divides by ``sqrt(p(1-p))`` with ``p = mean/2`` clamped to
    ``[1/(2n+2), 1 - 1/(2n+2)]``. Zero-variance rows become zero and are
    flagged in ``zero_variance``.
    """
    X = np.asarray(X, dtype=np.float64)
    means, scales, zero_var = row_scaling(X, scheme)
    inv = np.zeros_like(scales)
    np.divide(1.0, scales, out=inv, where=scales > 0)
    values = np.asfortranarray((X - means[:, None]) * inv[:, None])
    values[zero_var] = 0.0
    return StandardizedMatrix(values, means, scales, scheme, zero_var)


def write_dense(path, X, flags=0):
    """Write a float matrix in GMX1 format (or CSV when the path ends in ``.csv``)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if str(path).endswith(".csv"):
        return write_csv(path, X)
    m, n = X.shape
    with open(path, "wb") as fh:
        fh.write(GMX_HEADER.pack(GMX_MAGIC, m, n, flags))
        fh.write(np.asarray(X, dtype="<f8").tobytes(order="F"))


def read_dense(path):
    """Read a GMX1 (or ``.csv``) matrix."""
    if str(path).endswith(".csv"):
        return read_csv(path)
    raw = Path(path).read_bytes()
    if len(raw) < GMX_HEADER.size:
        raise FormatError(f"{path}: file too short for a GMX1 header")
    magic, m, n, _flags = GMX_HEADER.unpack_from(raw)
    if magic != GMX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {GMX_MAGIC!r}")
    if len(raw) != GMX_HEADER.size + 8 * m * n:
        raise FormatError(f"{path}: header says {m}x{n} but payload has {len(raw) - GMX_HEADER.size} bytes")
    data = np.frombuffer(raw, dtype="<f8", offset=GMX_HEADER.size)
    return np.array(data.reshape((m, n), order="F"), dtype=np.float64, order="F")


def write_csv(path, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    header = ",".join(f"c{j}" for j in range(X.shape[1]))
    np.savetxt(path, X, delimiter=",", header=header, comments="", fmt="%.17g")


def read_csv(path):
    try:
        X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return np.asfortranarray(X)


def read_matrix(path):
    """Load a float matrix from GMX1, CSV or a PLINK fileset (missing values mean-imputed)."""
    path = str(path)
    bed = bed_paths(path)[0]
    if path.endswith((".bed", ".bim", ".fam")) or (not os.path.exists(path) and bed.exists()):
        X, _ = impute_mean(read_bed(path))
        return X
    return read_dense(path)
