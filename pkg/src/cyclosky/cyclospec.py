"""Classical and cyclic correlation matrix estimation and alpha scanning.

The cyclic estimator is the zero-lag time average of z(t) z^H(t) (or
z(t) z^T(t) for the conjugate variant) demodulated at the cyclic frequency
alpha. Stationary inputs average to zero at alpha != 0; a cyclostationary
source leaves a rank-1 matrix carrying its steering vector.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .arraysim import ArraySnapshot

# Direct-vs-FFT agreement contract for full-grid scans.
FFT_MATCH_RTOL = 1e-10


@dataclass
class CorrMatrix:
    """Hermitian PSD sample covariance of an array snapshot."""

    values: np.ndarray
    n_samples: int

    def validate(self):
        scale = max(np.abs(self.values).max(), 1e-300)
        if np.abs(self.values - self.values.conj().T).max() > 1e-12 * scale:
            raise ValueError("covariance is not Hermitian")
        w = np.linalg.eigvalsh(self.values)
        if w.min() < -1e-10 * np.trace(self.values).real:
            raise ValueError("covariance is not positive semidefinite")


@dataclass
class CyclicCorrMatrix:
    values: np.ndarray
    alpha: float
    conjugate: bool
    n_samples: int

    def validate(self):
        if self.conjugate:
            scale = max(np.abs(self.values).max(), 1e-300)
            if np.abs(self.values - self.values.T).max() > 1e-12 * scale:
                raise ValueError("conjugate cyclic matrix is not symmetric")

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass
class CyclicSpectrum:
    """Frobenius norm of the cyclic matrix over a grid of cyclic frequencies."""

    alphas: np.ndarray
    magnitudes: np.ndarray
    conjugate: bool

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.magnitudes = np.asarray(self.magnitudes, dtype=float)
        if self.alphas.shape != self.magnitudes.shape:
            raise ValueError("alphas and magnitudes must have the same length")


def _cyclic_kernel(z, alpha, sample_rate, conjugate):
    n = z.shape[1]
    phase = np.exp(-2j * np.pi * alpha * np.arange(n) / sample_rate)
    zp = z * phase
    right = z.T if conjugate else z.conj().T
    return (zp @ right) / n


def corr_matrix(snap: ArraySnapshot) -> CorrMatrix:
    """Sample covariance (1/N) sum z[k] z[k]^H."""
    return CorrMatrix(_cyclic_kernel(snap.data, 0.0, snap.sample_rate, False),
                      snap.n_samples)


def cyclic_corr_matrix(snap: ArraySnapshot, alpha, conjugate=False) -> CyclicCorrMatrix:
    """Cyclic (or conjugate cyclic) correlation matrix at one alpha.

    For the non-conjugate estimator the matrix at -alpha is the Hermitian
    transpose of the one at +alpha; it is computed that way so the pair is
    exactly consistent in floating point.
    """
    if abs(alpha) >= snap.sample_rate:
        raise ValueError("alpha must satisfy |alpha| < sample_rate")
    if not conjugate and alpha < 0:
        pos = _cyclic_kernel(snap.data, -alpha, snap.sample_rate, False)
        return CyclicCorrMatrix(pos.conj().T, alpha, False, snap.n_samples)
    vals = _cyclic_kernel(snap.data, alpha, snap.sample_rate, conjugate)
    return CyclicCorrMatrix(vals, alpha, conjugate, snap.n_samples)


def fft_alpha_grid(snap: ArraySnapshot, conjugate=False) -> np.ndarray:
    """Default alpha grid: one FFT bin spacing, sample_rate / N.

    Non-conjugate features of interest live below sample_rate/2; conjugate
    cyclic frequencies (twice a carrier offset) can reach up to sample_rate.
    """
    n = snap.n_samples
    step = snap.sample_rate / n
    stop = n if conjugate else n // 2
    return np.arange(stop) * step


def _as_fft_bins(alphas, sample_rate, n):
    k = np.rint(alphas * n / sample_rate)
    step = sample_rate / n
    if np.max(np.abs(alphas - k * step)) > 1e-6 * step:
        return None
    if np.any(np.abs(alphas) >= sample_rate):
        return None
    return (k.astype(np.int64)) % n


def cyclic_spectrum(snap: ArraySnapshot, alphas, conjugate=False,
                    method="auto") -> CyclicSpectrum:
    """Scan the Frobenius norm of the cyclic matrix over an alpha grid.

    method="fft" requires the grid to sit on multiples of sample_rate/N and
    matches the direct estimator to FFT_MATCH_RTOL.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if alphas.size == 0:
        raise ValueError("alpha grid must be non-empty")
    if alphas.size > 1 and np.any(np.diff(alphas) <= 0):
        raise ValueError("alpha grid must be strictly increasing")
    z = snap.data
    n = snap.n_samples
    bins = _as_fft_bins(alphas, snap.sample_rate, n)
    if method == "auto":
        method = "fft" if bins is not None else "direct"
    if method == "fft":
        if bins is None:
            raise ValueError("fft method needs alphas on the sample_rate/N grid")
        zc = z if conjugate else z.conj()
        mags2 = np.zeros(alphas.size)
        for row in range(snap.n_antennas):
            f = np.fft.fft(z[row] * zc, axis=1) / n
            mags2 += np.sum(np.abs(f[:, bins]) ** 2, axis=0)
        mags = np.sqrt(mags2)
    elif method == "direct":
        mags = np.empty(alphas.size)
        for i, a in enumerate(alphas):
            mags[i] = np.linalg.norm(_cyclic_kernel(z, a, snap.sample_rate, conjugate))
    else:
        raise ValueError(f"unknown method {method!r}")
    return CyclicSpectrum(alphas, mags, conjugate)


def detect_cyclic_freqs(spec: CyclicSpectrum):
    """Local spectrum maxima above median + 5 * MAD, strongest first.

    The alpha = 0 bin of the non-conjugate spectrum is the ordinary
    covariance and is excluded.
    """
    mags = spec.magnitudes
    alphas = spec.alphas
    if mags.size < 16:
        raise ValueError("spectrum needs at least 16 grid points")
    med = np.median(mags)
    # MAD scaled by 1.4826 for Gaussian sigma equivalence.
    mad = 1.4826 * np.median(np.abs(mags - med))
    threshold = med + 5.0 * mad
    step = alphas[1] - alphas[0] if alphas.size > 1 else 1.0
    hits = []
    for i in range(mags.size):
        left = mags[i - 1] if i > 0 else -np.inf
        right = mags[i + 1] if i < mags.size - 1 else -np.inf
        if mags[i] <= threshold or mags[i] <= left or mags[i] <= right:
            continue
        if not spec.conjugate and abs(alphas[i]) < 0.5 * step:
            continue
        hits.append((float(alphas[i]), float(mags[i])))
    hits.sort(key=lambda p: -p[1])
    return hits


def write_spectrum_csv(spec: CyclicSpectrum, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# conjugate={str(spec.conjugate).lower()}\n")
        fh.write("alpha_hz,magnitude\n")
        for a, m in zip(spec.alphas, spec.magnitudes):
            fh.write(f"{a:.17g},{m:.17g}\n")


def read_spectrum_csv(path) -> CyclicSpectrum:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        conjugate = first == "# conjugate=true"
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["alpha_hz", "magnitude"]:
            raise ValueError(f"unexpected spectrum header {header}")
        rows = [(float(a), float(m)) for a, m in reader]
    alphas, mags = zip(*rows)
    return CyclicSpectrum(np.array(alphas), np.array(mags), conjugate)


def write_matrix_csv(matrix, path):
    """Real,imag interleaved pairs, row-major; works for both matrix types."""
    values = matrix.values
    alpha = getattr(matrix, "alpha", 0.0)
    conjugate = getattr(matrix, "conjugate", False)
    with open(path, "w", newline="") as fh:
        fh.write(f"# alpha_hz={alpha:.17g} conjugate={str(conjugate).lower()}"
                 f" n_samples={matrix.n_samples}\n")
        for row in values:
            cells = []
            for v in row:
                cells.append(f"{v.real:.17g}")
                cells.append(f"{v.imag:.17g}")
            fh.write(",".join(cells) + "\n")


def read_matrix_csv(path) -> CyclicCorrMatrix:
    with open(path, newline="") as fh:
        meta = fh.readline().strip().lstrip("# ").split()
        fields = dict(kv.split("=") for kv in meta)
        rows = []
        for line in fh:
            nums = [float(x) for x in line.strip().split(",")]
            rows.append([complex(r, i) for r, i in zip(nums[::2], nums[1::2])])
    return CyclicCorrMatrix(np.array(rows, dtype=np.complex128),
                            float(fields["alpha_hz"]),
                            fields["conjugate"] == "true",
                            int(fields["n_samples"]))
