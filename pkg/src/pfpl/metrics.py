"""Objective speech quality evaluation.

Native implementations of segmental SNR, log-likelihood ratio (LPC order 16),
weighted spectral slope, and the short-time intelligibility correlation
measure; the intrusive quality score (PESQ) is obtained through an external
command-line tool behind an adapter and is never reimplemented. Composite
scores are the standard regressions over {PESQ, LLR, WSS, segSNR}.
"""

from __future__ import annotations

import subprocess
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.signal

from .dsp import Waveform, write_wav
from .exceptions import InvalidInput, NoActiveFrames

FRAME_SECONDS = 0.032
FRAME_OVERLAP = 0.75
SNR_FLOOR_DB = -10.0
SNR_CEIL_DB = 35.0
SILENCE_DROP_DB = 40.0
LPC_ORDER = 16

# critical-band centers/bandwidths (Hz) for the spectral-slope measure
_WSS_CENTER_HZ = np.array([
    50.0, 120.0, 190.0, 260.0, 330.0, 400.0, 470.0, 540.0, 617.372,
    703.378, 798.717, 904.128, 1020.38, 1148.30, 1288.72, 1442.54,
    1610.70, 1794.16, 1993.93, 2211.08, 2446.71, 2701.97, 2978.04,
    3276.17, 3597.63,
])
_WSS_BANDWIDTH_HZ = np.array([
    70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 77.3724, 86.0056,
    95.3398, 105.411, 116.256, 127.914, 140.423, 153.823, 168.154,
    183.457, 199.776, 217.153, 235.631, 255.255, 276.072, 298.126,
    321.465, 346.136,
])
_WSS_KMAX = 20.0
_WSS_KLOCMAX = 1.0
_WSS_KEEP_FRACTION = 0.95


@dataclass(frozen=True)
class MetricScores:
    """Per-pair score bundle; PESQ-dependent fields are None without a tool."""

    seg_snr: float
    llr: float
    wss: float
    stoi: float
    pesq: float | None = None
    csig: float | None = None
    cbak: float | None = None
    covl: float | None = None
    warnings: tuple[str, ...] = ()

    FIELDS = ("pesq", "csig", "cbak", "covl", "stoi", "seg_snr", "llr", "wss")

    def __post_init__(self):
        if not 0.0 <= self.stoi <= 1.0:
            raise InvalidInput(f"stoi out of range: {self.stoi}")
        if self.pesq is not None and not -0.5 <= self.pesq <= 4.5:
            raise InvalidInput(f"pesq out of range: {self.pesq}")
        composites = (self.csig, self.cbak, self.covl)
        if self.pesq is None and any(c is not None for c in composites):
            raise InvalidInput("composites require a pesq score")
        if self.pesq is not None and any(c is None for c in composites):
            raise InvalidInput("composites must accompany a pesq score")
        for name in ("csig", "cbak", "covl"):
            v = getattr(self, name)
            if v is not None and not 1.0 <= v <= 5.0:
                raise InvalidInput(f"{name} out of range: {v}")

    def as_row(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}


def _check_pair(y: Waveform, y_hat: Waveform):
    if len(y) != len(y_hat):
        raise InvalidInput(f"length mismatch: {len(y)} vs {len(y_hat)}")
    if y.sample_rate != y_hat.sample_rate:
        raise InvalidInput("sample rates differ")


def _frame(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    n = 1 + max(0, (x.shape[0] - length)) // hop
    idx = np.arange(length)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def seg_snr(y: Waveform, y_hat: Waveform) -> float:
    """Mean frame SNR in dB over active 32 ms frames, clamped to [-10, 35]."""
    _check_pair(y, y_hat)
    length = int(round(FRAME_SECONDS * y.sample_rate))
    hop = int(round(length * (1.0 - FRAME_OVERLAP)))
    if len(y) < length:
        raise InvalidInput(f"need at least one {length}-sample frame")
    ref = _frame(y.samples.astype(np.float64), length, hop)
    err = ref - _frame(y_hat.samples.astype(np.float64), length, hop)
    energy = (ref**2).sum(axis=1)
    active = energy > energy.max() * 10.0 ** (-SILENCE_DROP_DB / 10.0)
    if energy.max() == 0.0 or not active.any():
        raise NoActiveFrames("every analysis frame is silent")
    err_energy = (err**2).sum(axis=1)
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(energy[active] / err_energy[active])
    return float(np.clip(snr, SNR_FLOOR_DB, SNR_CEIL_DB).mean())


def _levinson(r: np.ndarray, order: int) -> np.ndarray:
    """Levinson-Durbin recursion; returns the monic prediction polynomial."""
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i] + a[1:i] @ r[i - 1 : 0 : -1]
        k = -acc / err
        a[1 : i + 1] = a[1 : i + 1] + k * a[i - 1 :: -1][: i]
        a[i] = k
        err *= 1.0 - k * k
        if err <= 0:
            break
    return a


def _lpc_frame(frame: np.ndarray, order: int):
    r = np.correlate(frame, frame, mode="full")[frame.shape[0] - 1 :][: order + 1]
    if r[0] <= 0:
        return None, None
    return _levinson(r, order), r


def llr(y: Waveform, y_hat: Waveform) -> float:
    """Frame-median log-likelihood ratio between LPC fits (order 16)."""
    _check_pair(y, y_hat)
    length = int(round(FRAME_SECONDS * y.sample_rate))
    hop = int(round(length * (1.0 - FRAME_OVERLAP)))
    if len(y) < length:
        raise InvalidInput(f"need at least one {length}-sample frame")
    window = np.hanning(length)
    ref_frames = _frame(y.samples.astype(np.float64), length, hop) * window
    deg_frames = _frame(y_hat.samples.astype(np.float64), length, hop) * window
    values = []
    for ref, deg in zip(ref_frames, deg_frames):
        a_ref, r_ref = _lpc_frame(ref, LPC_ORDER)
        a_deg, _ = _lpc_frame(deg, LPC_ORDER)
        if a_ref is None or a_deg is None:
            continue  # degenerate (all-zero) frame
        toeplitz = scipy.linalg.toeplitz(r_ref)
        num = a_deg @ toeplitz @ a_deg
        den = a_ref @ toeplitz @ a_ref
        if den <= 0 or num <= 0:
            continue
        values.append(np.log(num / den))
    if not values:
        raise NoActiveFrames("no usable frames for LLR")
    return float(np.median(values))


def _wss_filters(sample_rate: int, n_bins: int) -> np.ndarray:
    max_freq = sample_rate / 2.0
    filters = np.zeros((_WSS_CENTER_HZ.shape[0], n_bins))
    j = np.arange(n_bins)
    min_bw = _WSS_BANDWIDTH_HZ[0]
    for i, (cf, bw) in enumerate(zip(_WSS_CENTER_HZ, _WSS_BANDWIDTH_HZ)):
        f0 = (cf / max_freq) * (n_bins - 1)
        bwn = (bw / max_freq) * (n_bins - 1)
        norm = np.log(min_bw) - np.log(bw)
        filt = np.exp(-11.0 * ((j - np.floor(f0)) / bwn) ** 2 + norm)
        filters[i] = np.where(filt > 1e-3, filt, 0.0)
    return filters


def _nearest_peaks(energy: np.ndarray, slope: np.ndarray) -> np.ndarray:
    # walk along the slope sign toward the nearest local spectral maximum;
    # the peak is clamped to the current band so location weights stay positive
    n_bands = energy.shape[0]
    peaks = np.empty(n_bands - 1)
    for i in range(n_bands - 1):
        k = i
        if slope[i] > 0:
            while k < n_bands - 1 and slope[k] > 0:
                k += 1
            peak = energy[k]
        else:
            while k > 0 and slope[k] <= 0:
                k -= 1
            peak = energy[k + 1] if slope[k] > 0 else energy[k]
        peaks[i] = max(peak, energy[i])
    return peaks


def wss(y: Waveform, y_hat: Waveform) -> float:
    """Weighted spectral-slope distance over critical bands.

    Per-frame distortions are sorted, the best 95% kept, and their median
    returned.
    """
    _check_pair(y, y_hat)
    length = int(round(FRAME_SECONDS * y.sample_rate))
    hop = int(round(length * (1.0 - FRAME_OVERLAP)))
    if len(y) < length:
        raise InvalidInput(f"need at least one {length}-sample frame")
    window = np.hanning(length)
    filters = _wss_filters(y.sample_rate, length // 2 + 1)
    ref_frames = _frame(y.samples.astype(np.float64), length, hop) * window
    deg_frames = _frame(y_hat.samples.astype(np.float64), length, hop) * window
    distortions = []
    for ref, deg in zip(ref_frames, deg_frames):
        ref_power = np.abs(np.fft.rfft(ref)) ** 2
        deg_power = np.abs(np.fft.rfft(deg)) ** 2
        ref_db = 10.0 * np.log10(np.maximum(filters @ ref_power, 1e-10))
        deg_db = 10.0 * np.log10(np.maximum(filters @ deg_power, 1e-10))
        ref_slope = np.diff(ref_db)
        deg_slope = np.diff(deg_db)
        ref_peak = _nearest_peaks(ref_db, ref_slope)
        deg_peak = _nearest_peaks(deg_db, deg_slope)
        w_ref = (_WSS_KMAX / (_WSS_KMAX + ref_db.max() - ref_db[:-1])) * (
            _WSS_KLOCMAX / (_WSS_KLOCMAX + ref_peak - ref_db[:-1])
        )
        w_deg = (_WSS_KMAX / (_WSS_KMAX + deg_db.max() - deg_db[:-1])) * (
            _WSS_KLOCMAX / (_WSS_KLOCMAX + deg_peak - deg_db[:-1])
        )
        w = (w_ref + w_deg) / 2.0
        distortions.append(float((w * (ref_slope - deg_slope) ** 2).sum() / w.sum()))
    if not distortions:
        raise NoActiveFrames("no usable frames for WSS")
    kept = np.sort(distortions)[: max(1, int(round(len(distortions) * _WSS_KEEP_FRACTION)))]
    return float(np.median(kept))


# --- short-time intelligibility -------------------------------------------

_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_FFT = 512
_STOI_HOP = 128
_STOI_BANDS = 15
_STOI_FIRST_CENTER_HZ = 150.0
_STOI_SEGMENT_FRAMES = 30  # 384 ms at 10 kHz / 128-sample hop
_STOI_CLIP_DB = -15.0


def _third_octave_matrix() -> np.ndarray:
    freqs = np.linspace(0, _STOI_RATE / 2, _STOI_FFT // 2 + 1)
    k = np.arange(_STOI_BANDS)
    centers = _STOI_FIRST_CENTER_HZ * 2.0 ** (k / 3.0)
    lows = centers * 2.0 ** (-1.0 / 6.0)
    highs = centers * 2.0 ** (1.0 / 6.0)
    obm = np.zeros((_STOI_BANDS, freqs.shape[0]))
    for i in range(_STOI_BANDS):
        lo = int(np.argmin((freqs - lows[i]) ** 2))
        hi = int(np.argmin((freqs - highs[i]) ** 2))
        obm[i, lo:hi] = 1.0
    return obm


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    window = np.hanning(_STOI_FRAME + 2)[1:-1]
    n = 1 + max(0, (x.shape[0] - _STOI_FRAME)) // _STOI_HOP
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n)[:, None]
    xf = x[idx] * window
    yf = y[idx] * window
    energy_db = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + 1e-12)
    keep = energy_db > energy_db.max() - SILENCE_DROP_DB
    xf, yf = xf[keep], yf[keep]
    out_len = _STOI_FRAME + _STOI_HOP * max(0, xf.shape[0] - 1)
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(xf.shape[0]):
        xs[i * _STOI_HOP : i * _STOI_HOP + _STOI_FRAME] += xf[i]
        ys[i * _STOI_HOP : i * _STOI_HOP + _STOI_FRAME] += yf[i]
    return xs, ys


def _stoi_band_envelopes(x: np.ndarray) -> np.ndarray:
    window = np.hanning(_STOI_FRAME + 2)[1:-1]
    n = 1 + max(0, (x.shape[0] - _STOI_FRAME)) // _STOI_HOP
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n)[:, None]
    spec = np.fft.rfft(x[idx] * window, n=_STOI_FFT, axis=1)
    return np.sqrt(_third_octave_matrix() @ (np.abs(spec.T) ** 2))


def stoi(y: Waveform, y_hat: Waveform) -> float:
    """Short-time intelligibility: mean clipped band-envelope correlation."""
    _check_pair(y, y_hat)
    x10 = scipy.signal.resample_poly(y.samples.astype(np.float64), _STOI_RATE, y.sample_rate)
    y10 = scipy.signal.resample_poly(y_hat.samples.astype(np.float64), _STOI_RATE, y.sample_rate)
    if x10.shape[0] < _STOI_FRAME:
        raise InvalidInput("signal too short for intelligibility analysis")
    x10, y10 = _remove_silent_frames(x10, y10)
    ref = _stoi_band_envelopes(x10)
    deg = _stoi_band_envelopes(y10)
    frames = ref.shape[1]
    if frames < _STOI_SEGMENT_FRAMES:
        raise InvalidInput(
            f"need at least {_STOI_SEGMENT_FRAMES} active frames "
            f"(384 ms of speech), got {frames}"
        )
    clip_gain = 10.0 ** (-_STOI_CLIP_DB / 20.0)  # -15 dB lower bound on SDR
    scores = []
    for m in range(_STOI_SEGMENT_FRAMES, frames + 1):
        seg_ref = ref[:, m - _STOI_SEGMENT_FRAMES : m]
        seg_deg = deg[:, m - _STOI_SEGMENT_FRAMES : m]
        alpha = np.linalg.norm(seg_ref, axis=1, keepdims=True) / (
            np.linalg.norm(seg_deg, axis=1, keepdims=True) + 1e-12
        )
        seg_deg = np.minimum(alpha * seg_deg, seg_ref * (1 + clip_gain))
        rc = seg_ref - seg_ref.mean(axis=1, keepdims=True)
        dc = seg_deg - seg_deg.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(rc, axis=1) * np.linalg.norm(dc, axis=1) + 1e-12
        scores.extend((rc * dc).sum(axis=1) / denom)
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def composite(pesq: float, llr_value: float, wss_value: float, seg_snr_value: float):
    """Composite quality regressions (csig, cbak, covl), each clipped to [1, 5]."""
    csig = 3.093 - 1.029 * llr_value + 0.603 * pesq - 0.009 * wss_value
    cbak = 1.634 + 0.478 * pesq - 0.007 * wss_value + 0.063 * seg_snr_value
    covl = 1.594 + 0.805 * pesq - 0.512 * llr_value - 0.007 * wss_value
    clip = lambda v: float(np.clip(v, 1.0, 5.0))
    return clip(csig), clip(cbak), clip(covl)


@dataclass(frozen=True)
class PesqAdapter:
    """Wraps an external scoring binary: `<tool> +16000 <ref.wav> <deg.wav>`.

    The last numeric token on stdout is taken as the score. Absence or
    failure of the tool is recoverable: callers get scores without the
    PESQ-dependent fields plus a warning record.
    """

    tool: str
    mode: str = "wideband"

    def score(self, ref_path: str | Path, deg_path: str | Path) -> float:
        proc = subprocess.run(
            [self.tool, "+16000", str(ref_path), str(deg_path)],
            capture_output=True,
            text=True,
            timeout=120,
        )
        if proc.returncode != 0:
            raise RuntimeError(
                f"pesq tool exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        tokens = proc.stdout.split()
        for token in reversed(tokens):
            try:
                return float(token)
            except ValueError:
                continue
        raise RuntimeError(f"no score found in pesq output: {proc.stdout[:200]!r}")

    def score_waveforms(self, y: Waveform, y_hat: Waveform) -> float:
        with tempfile.TemporaryDirectory() as tmp:
            ref = Path(tmp) / "ref.wav"
            deg = Path(tmp) / "deg.wav"
            write_wav(ref, y, fmt="pcm16")
            write_wav(deg, y_hat, fmt="pcm16")
            return self.score(ref, deg)


def evaluate_pair(
    y: Waveform, y_hat: Waveform, adapter: PesqAdapter | None = None
) -> MetricScores:
    """Score one (clean, enhanced) pair; PESQ fields require a working adapter."""
    _check_pair(y, y_hat)
    base = {
        "seg_snr": seg_snr(y, y_hat),
        "llr": llr(y, y_hat),
        "wss": wss(y, y_hat),
        "stoi": stoi(y, y_hat),
    }
    notes: list[str] = []
    pesq_score = None
    if adapter is not None:
        try:
            pesq_score = float(np.clip(adapter.score_waveforms(y, y_hat), -0.5, 4.5))
        except Exception as exc:
            notes.append(f"pesq adapter failed: {exc}")
    if pesq_score is None:
        return MetricScores(**base, warnings=tuple(notes))
    csig, cbak, covl = composite(pesq_score, base["llr"], base["wss"], base["seg_snr"])
    return MetricScores(
        **base, pesq=pesq_score, csig=csig, cbak=cbak, covl=covl, warnings=tuple(notes)
    )


def write_metrics_csv(path: str | Path, rows: list[tuple[str, MetricScores]]) -> None:
    """One row per utterance, columns = utterance id + MetricScores fields."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("utterance_id",) + MetricScores.FIELDS)
        for utterance_id, scores in rows:
            row = scores.as_row()
            writer.writerow(
                [utterance_id]
                + ["" if row[f] is None else f"{row[f]:.6f}" for f in MetricScores.FIELDS]
            )
