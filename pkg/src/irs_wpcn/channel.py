"""Block-fading channel generation and the cascaded feature representation.

Nodes: power beacon (B, M antennas), IRS (R, N elements), wireless-powered
source (S), destination (D) and an external interferer (I).  Every channel
entry is CN(0, L_c * d**-alpha) and is redrawn independently per coherence
block.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .rng import PRNG_ID, Stream

MAGIC = b"IWDS"
FORMAT_VERSION = 1
# magic, version, M, N, interference, count, seed, prng id
HEADER = struct.Struct("<4sIIIBQQI")
HEADER_SIZE = HEADER.size


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class SystemParams:
    """Physical constants and geometry.  Powers in watts, distances in metres."""

    M: int = 2
    N: int = 8
    P_B: float = 10.0
    P_I: float = 0.0
    sigma_z2: float = dbm_to_watt(-104.0)
    eta: float = 1.0
    T_c: float = 1.0
    L_c: float = 1e-3
    alpha_irs: float = 2.2
    alpha_direct: float = 2.57
    d_RS: float = 15.0
    d_IS: float = 15.0
    d_RD: float = 15.0
    d_IR: float = 15.0
    d_SD: float = 25.0
    d_BS: float = 25.0
    d_ID: float = 30.0
    d_BR: float = 15.0

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError(f"need M >= 1 and N >= 1, got M={self.M}, N={self.N}")
        if min(self.P_B, self.P_I, self.sigma_z2) < 0:
            raise ValueError("powers must be non-negative")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.T_c <= 0:
            raise ValueError("T_c must be positive")
        for f in fields(self):
            if f.name.startswith("d_") and getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")

    @property
    def interference(self) -> bool:
        return self.P_I > 0

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SystemParams fields: {sorted(unknown)}")
        return cls(**d)

    def link_variances(self) -> dict[str, float]:
        """Per-block variance; G_BR, g_RS, g_IR, g_RD are the IRS-related links."""
        irs, direct, L = self.alpha_irs, self.alpha_direct, self.L_c
        return {
            "h_BS": pathloss_variance(self.d_BS, direct, L),
            "G_BR": pathloss_variance(self.d_BR, irs, L),
            "g_RS": pathloss_variance(self.d_RS, irs, L),
            "g_IR": pathloss_variance(self.d_IR, irs, L),
            "g_RD": pathloss_variance(self.d_RD, irs, L),
            "h_IS": pathloss_variance(self.d_IS, direct, L),
            "h_ID": pathloss_variance(self.d_ID, direct, L),
            "h_SD": pathloss_variance(self.d_SD, direct, L),
        }


def pathloss_variance(distance: float, exponent: float, L_c: float) -> float:
    """Large-scale power gain ``L_c * distance**-exponent``."""
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return L_c * distance ** (-exponent)


@dataclass
class ChannelRealization:
    """One (or a batch of) coherence-block channel draws.

    Shapes carry an optional leading batch axis: ``h_BS`` is ``(..., M)``,
    ``G_BR`` is ``(..., N, M)``, the IRS vectors are ``(..., N)`` and the
    scalar links are ``(...)``.
    """

    h_BS: np.ndarray
    G_BR: np.ndarray
    g_RS: np.ndarray
    g_IR: np.ndarray
    g_RD: np.ndarray
    h_IS: np.ndarray
    h_ID: np.ndarray
    h_SD: np.ndarray

    @property
    def M(self) -> int:
        return self.h_BS.shape[-1]

    @property
    def N(self) -> int:
        return self.g_RS.shape[-1]

    def __getitem__(self, idx) -> "ChannelRealization":
        return ChannelRealization(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


def _draw_size(M: int, N: int) -> int:
    return M + N * M + 3 * N + 3


def sample_channels(params: SystemParams, rng: Stream, count: int | None = None) -> ChannelRealization:
    """Draw ``count`` realizations (a single unbatched one if ``count`` is None).

    Per realization the stream is consumed in a fixed order (h_BS, G_BR
    row-major, g_RS, g_IR, g_RD, h_IS, h_ID, h_SD), so a batch of k draws is
    identical to k successive single draws.
    """
    M, N = params.M, params.N
    k = 1 if count is None else int(count)
    if k < 1:
        raise ValueError("count must be >= 1")
    z = rng.complex_normal((k, _draw_size(M, N)), 1.0)
    var = params.link_variances()
    s = {name: np.sqrt(v) for name, v in var.items()}
    o = 0

    def take(n):
        nonlocal o
        out = z[:, o:o + n]
        o += n
        return out

    ch = ChannelRealization(
        h_BS=s["h_BS"] * take(M),
        G_BR=s["G_BR"] * take(N * M).reshape(k, N, M),
        g_RS=s["g_RS"] * take(N),
        g_IR=s["g_IR"] * take(N),
        g_RD=s["g_RD"] * take(N),
        h_IS=s["h_IS"] * take(1)[:, 0],
        h_ID=s["h_ID"] * take(1)[:, 0],
        h_SD=s["h_SD"] * take(1)[:, 0],
    )
    return ch[0] if count is None else ch


def feature_length(M: int, N: int, interference: bool) -> int:
    if interference:
        return 2 * (N * M + M + 3 * N + 3)
    return 2 * (M * N + M + N + 1)


def feature_blocks(M: int, N: int, interference: bool) -> list[tuple[str, int]]:
    """Ordered (name, complex length) blocks of the flat layout."""
    if interference:
        return [("V", N * M), ("a", M), ("u_IS", N), ("u_SD", N), ("u_ID", N),
                ("h_ID", 1), ("h_IS", 1), ("h_SD", 1)]
    return [("V", N * M), ("a", M), ("u_SD", N), ("h_SD", 1)]


def feature_offsets(M: int, N: int, interference: bool) -> dict[str, tuple[int, int, int]]:
    """``name -> (real_start, imag_start, length)`` into the flat vector."""
    out = {}
    o = 0
    for name, n in feature_blocks(M, N, interference):
        out[name] = (o, o + n, n)
        o += 2 * n
    return out


@dataclass
class FeatureVector:
    """Cascaded-channel features, structured view.

    ``V[n, m] = G_BR[n, m] * g_RS[n]``, ``a = h_BS``, ``u_IS = g_IR * g_RS``,
    ``u_SD = g_RD * g_RS``, ``u_ID = g_IR * g_RD``.  Arrays may carry a leading
    batch axis.  In noise-limited mode the interference blocks are zero and
    are left out of :meth:`flat`.

    Flat layout, block by block (real parts, then imaginary parts):
    ``vec(V)`` (column-major), ``a``, ``u_IS``, ``u_SD``, ``u_ID``, ``h_ID``,
    ``h_IS``, ``h_SD``; the noise-limited layout keeps ``vec(V)``, ``a``,
    ``u_SD``, ``h_SD``.
    """

    V: np.ndarray
    a: np.ndarray
    u_IS: np.ndarray
    u_SD: np.ndarray
    u_ID: np.ndarray
    h_ID: np.ndarray
    h_IS: np.ndarray
    h_SD: np.ndarray
    interference: bool = True

    @property
    def M(self) -> int:
        return self.a.shape[-1]

    @property
    def N(self) -> int:
        return self.u_SD.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.a.shape[:-1]

    @property
    def size(self) -> int:
        return feature_length(self.M, self.N, self.interference)

    def _blocks(self):
        V = self.V
        vecV = np.swapaxes(V, -1, -2).reshape(V.shape[:-2] + (-1,))
        scalar = lambda x: np.asarray(x)[..., None]
        if self.interference:
            return [vecV, self.a, self.u_IS, self.u_SD, self.u_ID,
                    scalar(self.h_ID), scalar(self.h_IS), scalar(self.h_SD)]
        return [vecV, self.a, self.u_SD, scalar(self.h_SD)]

    def flat(self) -> np.ndarray:
        parts = []
        for b in self._blocks():
            parts.append(b.real)
            parts.append(b.imag)
        return np.concatenate(parts, axis=-1).astype(np.float64)

    @classmethod
    def from_flat(cls, x: np.ndarray, M: int, N: int, interference: bool) -> "FeatureVector":
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != feature_length(M, N, interference):
            raise ValueError(f"flat feature length {x.shape[-1]} does not match "
                             f"M={M}, N={N}, interference={interference}")
        lead = x.shape[:-1]
        o = 0

        def take(n):
            nonlocal o
            re = x[..., o:o + n]
            im = x[..., o + n:o + 2 * n]
            o += 2 * n
            return re + 1j * im

        vecV = take(N * M)
        V = np.swapaxes(vecV.reshape(lead + (M, N)), -1, -2)
        a = take(M)
        zeros_n = np.zeros(lead + (N,), dtype=complex)
        zero = np.zeros(lead, dtype=complex)
        if interference:
            u_IS, u_SD, u_ID = take(N), take(N), take(N)
            h_ID, h_IS, h_SD = take(1)[..., 0], take(1)[..., 0], take(1)[..., 0]
        else:
            u_SD = take(N)
            h_SD = take(1)[..., 0]
            u_IS, u_ID, h_ID, h_IS = zeros_n, zeros_n.copy(), zero, zero.copy()
        return cls(V=V, a=a, u_IS=u_IS, u_SD=u_SD, u_ID=u_ID,
                   h_ID=h_ID, h_IS=h_IS, h_SD=h_SD, interference=interference)

    def __getitem__(self, idx) -> "FeatureVector":
        kw = {f.name: getattr(self, f.name)[idx] for f in fields(self) if f.name != "interference"}
        return FeatureVector(interference=self.interference, **kw)

    def __len__(self) -> int:
        if not self.batch_shape:
            raise TypeError("unbatched FeatureVector has no len()")
        return self.batch_shape[0]


def build_features(ch: ChannelRealization, interference: bool) -> FeatureVector:
    """Reduce a channel draw to its cascaded products."""
    if ch.G_BR.shape[-2:] != (ch.N, ch.M):
        raise ValueError(f"G_BR shape {ch.G_BR.shape} inconsistent with M={ch.M}, N={ch.N}")
    for name in ("g_IR", "g_RD"):
        if getattr(ch, name).shape[-1] != ch.N:
            raise ValueError(f"{name} length does not match N={ch.N}")
    g_RS = ch.g_RS
    V = ch.G_BR * g_RS[..., :, None]
    u_SD = ch.g_RD * g_RS
    if interference:
        u_IS = ch.g_IR * g_RS
        u_ID = ch.g_IR * ch.g_RD
        h_IS, h_ID = np.asarray(ch.h_IS), np.asarray(ch.h_ID)
    else:
        u_IS = np.zeros_like(u_SD)
        u_ID = np.zeros_like(u_SD)
        h_IS = np.zeros_like(np.asarray(ch.h_SD))
        h_ID = np.zeros_like(np.asarray(ch.h_SD))
    return FeatureVector(V=V, a=np.asarray(ch.h_BS), u_IS=u_IS, u_SD=u_SD, u_ID=u_ID,
                         h_ID=h_ID, h_IS=h_IS, h_SD=np.asarray(ch.h_SD),
                         interference=interference)


@dataclass
class Dataset:
    M: int
    N: int
    interference: bool
    seed: int
    features: np.ndarray  # (count, F_s) flat view
    prng_id: int = PRNG_ID
    path: str | None = field(default=None, compare=False)

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_size(self) -> int:
        return feature_length(self.M, self.N, self.interference)

    def structured(self, idx=slice(None)) -> FeatureVector:
        return FeatureVector.from_flat(self.features[idx], self.M, self.N, self.interference)

    def to_bytes(self) -> bytes:
        head = HEADER.pack(MAGIC, FORMAT_VERSION, self.M, self.N, int(self.interference),
                           self.count, self.seed, self.prng_id)
        return head + np.ascontiguousarray(self.features, dtype="<f8").tobytes()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def generate_dataset(params: SystemParams, count: int, seed: int, path: str | os.PathLike | None = None) -> Dataset:
    """Draw ``count`` feature vectors from the stream keyed by ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = Stream(seed)
    interference = params.interference
    chunk = 50_000
    rows = []
    done = 0
    while done < count:
        k = min(chunk, count - done)
        ch = sample_channels(params, rng, k)
        rows.append(build_features(ch, interference).flat())
        done += k
    ds = Dataset(M=params.M, N=params.N, interference=interference, seed=seed,
                 features=np.concatenate(rows, axis=0))
    if path is not None:
        write_dataset(ds, path)
    return ds


def write_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(ds.to_bytes())
    except OSError as exc:
        raise OSError(f"cannot write dataset to {os.fspath(path)!r}: {exc}") from exc
    ds.path = os.fspath(path)


def read_dataset(path: str | os.PathLike) -> Dataset:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read dataset {os.fspath(path)!r}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise ValueError(f"{path}: truncated header")
    magic, version, M, N, intf, count, seed, prng = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    F = feature_length(M, N, bool(intf))
    expected = HEADER_SIZE + count * F * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER_SIZE).reshape(count, F).astype(np.float64)
    return Dataset(M=M, N=N, interference=bool(intf), seed=seed, features=data,
                   prng_id=prng, path=os.fspath(path))
