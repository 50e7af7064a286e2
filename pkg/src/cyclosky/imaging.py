"""Beamformed skymaps over a direction-cosine grid, plus peak finding.

A classical map evaluates real(a^H R a) / M^2 per pixel; cyclic maps take
the magnitude of the same quadratic form since the cyclic matrix is not
Hermitian. The M^2 normalization makes an on-grid unit point source read
as a peak of height ~= its power.
"""

from dataclasses import dataclass

import numpy as np

from .arraysim import ArrayGeometry, DirectionLM, steering_vector

KIND_CLASSICAL = "classical"
KIND_CYCLIC = "cyclic"
KIND_CONJ_CYCLIC = "conjugate_cyclic"


@dataclass
class SkymapGrid:
    l_min: float = -1.0
    l_max: float = 1.0
    m_min: float = -1.0
    m_max: float = 1.0
    n_l: int = 128
    n_m: int = 128

    def __post_init__(self):
        for v in (self.l_min, self.l_max, self.m_min, self.m_max):
            if not -1.0 <= v <= 1.0:
                raise ValueError("grid bounds must lie in [-1, 1]")
        if self.l_min >= self.l_max or self.m_min >= self.m_max:
            raise ValueError("grid bounds must be ordered")
        if self.n_l < 2 or self.n_m < 2:
            raise ValueError("need at least 2 pixels per axis")

    def l_axis(self):
        return np.linspace(self.l_min, self.l_max, self.n_l)

    def m_axis(self):
        return np.linspace(self.m_min, self.m_max, self.n_m)

    def mask(self):
        """True for pixels on the visible hemisphere."""
        ll, mm = np.meshgrid(self.l_axis(), self.m_axis(), indexing="ij")
        return ll ** 2 + mm ** 2 <= 1.0


@dataclass
class Skymap:
    grid: SkymapGrid
    power: np.ndarray
    kind: str
    alpha: float = 0.0


def _steering_matrix(geom: ArrayGeometry, grid: SkymapGrid):
    ll, mm = np.meshgrid(grid.l_axis(), grid.m_axis(), indexing="ij")
    l = ll.ravel()
    m = mm.ravel()
    x = geom.positions[:, 0][:, None]
    y = geom.positions[:, 1][:, None]
    from .arraysim import C_LIGHT
    return np.exp(-2j * np.pi * (geom.f0 / C_LIGHT) * (x * l[None, :] + y * m[None, :]))


def skymap(r_matrix, geom: ArrayGeometry, grid: SkymapGrid) -> Skymap:
    """Classical beamformed power map from a covariance matrix."""
    values = r_matrix.values
    if values.shape[0] != geom.n_antennas:
        raise ValueError("covariance and geometry dimensions disagree")
    a = _steering_matrix(geom, grid)
    m = geom.n_antennas
    q = np.real(np.einsum("mp,mp->p", a.conj(), values @ a)) / m ** 2
    q = np.clip(q, 0.0, None).reshape(grid.n_l, grid.n_m)
    q[~grid.mask()] = 0.0
    return Skymap(grid, q, KIND_CLASSICAL)


def cyclic_skymap(ra_matrix, geom: ArrayGeometry, grid: SkymapGrid) -> Skymap:
    """Skymap of |a^H R_alpha a| / M^2 (conjugated right vector for the
    conjugate estimator)."""
    values = ra_matrix.values
    if values.shape[0] != geom.n_antennas:
        raise ValueError("cyclic matrix and geometry dimensions disagree")
    a = _steering_matrix(geom, grid)
    right = a.conj() if ra_matrix.conjugate else a
    m = geom.n_antennas
    q = np.abs(np.einsum("mp,mp->p", a.conj(), values @ right)) / m ** 2
    q = q.reshape(grid.n_l, grid.n_m)
    q[~grid.mask()] = 0.0
    kind = KIND_CONJ_CYCLIC if ra_matrix.conjugate else KIND_CYCLIC
    return Skymap(grid, q, kind, ra_matrix.alpha)


def _refine_axis(fm, f0, fp):
    denom = fm - 2.0 * f0 + fp
    if denom >= 0:
        return 0.0, 0.0
    off = 0.5 * (fm - fp) / denom
    off = float(np.clip(off, -0.5, 0.5))
    return off, -0.25 * (fm - fp) * off


def locate_peaks(smap: Skymap, max_peaks: int):
    """Interpolated local maxima above median + 5 * MAD of unmasked pixels."""
    if max_peaks < 1:
        raise ValueError("max_peaks must be >= 1")
    power = smap.power
    mask = smap.grid.mask()
    vals = power[mask]
    if vals.size == 0 or vals.max() == vals.min():
        return []
    med = np.median(vals)
    # MAD scaled by 1.4826 for Gaussian sigma equivalence.
    mad = 1.4826 * np.median(np.abs(vals - med))
    threshold = med + 5.0 * mad
    n_l, n_m = power.shape
    padded = np.full((n_l + 2, n_m + 2), -np.inf)
    padded[1:-1, 1:-1] = np.where(mask, power, -np.inf)
    center = padded[1:-1, 1:-1]
    neighborhood = np.full(power.shape, -np.inf)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            shifted = padded[1 + di:n_l + 1 + di, 1 + dj:n_m + 1 + dj]
            neighborhood = np.maximum(neighborhood, shifted)
    is_peak = mask & (center > neighborhood) & (center > threshold)
    l_axis = smap.grid.l_axis()
    m_axis = smap.grid.m_axis()
    dl = l_axis[1] - l_axis[0]
    dm = m_axis[1] - m_axis[0]
    peaks = []
    for i, j in zip(*np.nonzero(is_peak)):
        value = power[i, j]
        off_i = off_j = 0.0
        if 0 < i < n_l - 1 and 0 < j < n_m - 1 and np.isfinite(
                padded[i:i + 3, j:j + 3]).all():
            off_i, dv_i = _refine_axis(power[i - 1, j], value, power[i + 1, j])
            off_j, dv_j = _refine_axis(power[i, j - 1], value, power[i, j + 1])
            value = value + dv_i + dv_j
        l = l_axis[i] + off_i * dl
        m = m_axis[j] + off_j * dm
        norm = np.hypot(l, m)
        if norm > 1.0:
            l, m = l / norm, m / norm
        peaks.append((DirectionLM(l, m), float(value)))
    peaks.sort(key=lambda p: -p[1])
    return peaks[:max_peaks]


def write_skymap_csv(smap: Skymap, path):
    with open(path, "w", newline="") as fh:
        g = smap.grid
        fh.write(f"# kind={smap.kind} alpha_hz={smap.alpha:.17g}"
                 f" l_min={g.l_min:.17g} l_max={g.l_max:.17g}"
                 f" m_min={g.m_min:.17g} m_max={g.m_max:.17g}\n")
        for row in smap.power:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_skymap_csv(path) -> Skymap:
    with open(path, newline="") as fh:
        meta = dict(kv.split("=") for kv in fh.readline().strip().lstrip("# ").split())
        rows = [[float(x) for x in line.strip().split(",")] for line in fh]
    power = np.array(rows)
    grid = SkymapGrid(float(meta["l_min"]), float(meta["l_max"]),
                      float(meta["m_min"]), float(meta["m_max"]),
                      power.shape[0], power.shape[1])
    return Skymap(grid, power, meta["kind"], float(meta["alpha_hz"]))


def write_skymap_pgm(smap: Skymap, path):
    """16-bit big-endian P5 image, linearly scaled from [0, max].

    A sidecar `<path>.meta` records the scale and grid so the map can be
    reconstructed (up to quantization).
    """
    power = smap.power
    peak = float(power.max())
    if peak > 0:
        img = np.rint(power / peak * 65535.0).astype(">u2")
    else:
        img = np.zeros(power.shape, dtype=">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{power.shape[1]} {power.shape[0]}\n65535\n".encode("ascii"))
        fh.write(img.tobytes())
    g = smap.grid
    with open(str(path) + ".meta", "w") as fh:
        fh.write(f"scale={peak / 65535.0 if peak > 0 else 0.0:.17g}\n")
        fh.write(f"l_min={g.l_min:.17g}\nl_max={g.l_max:.17g}\n")
        fh.write(f"m_min={g.m_min:.17g}\nm_max={g.m_max:.17g}\n")
        fh.write(f"kind={smap.kind}\nalpha_hz={smap.alpha:.17g}\n")


def read_skymap_pgm(path) -> Skymap:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError("not a P5 PGM file")
        width, height = (int(v) for v in fh.readline().split())
        maxval = int(fh.readline())
        if maxval != 65535:
            raise ValueError("expected a 16-bit PGM")
        img = np.frombuffer(fh.read(), dtype=">u2").reshape(height, width)
    meta = {}
    with open(str(path) + ".meta") as fh:
        for line in fh:
            k, v = line.strip().split("=")
            meta[k] = v
    power = img.astype(float) * float(meta["scale"])
    grid = SkymapGrid(float(meta["l_min"]), float(meta["l_max"]),
                      float(meta["m_min"]), float(meta["m_max"]),
                      height, width)
    return Skymap(grid, power, meta["kind"], float(meta["alpha_hz"]))
