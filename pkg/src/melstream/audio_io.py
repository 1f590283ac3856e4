"""WAV ingestion, channel mixdown and band-limited resampling.

The canonical representation downstream is :class:`AudioBuffer`: a mono
float signal plus its sample rate. Only RIFF/WAVE containers carrying
integer PCM (16, 24 or 32 bit) or IEEE float32 payloads are accepted,
with 1 to 8 channels. Multichannel audio is mixed down by averaging the
channels, then resampled to the requested rate.

Resampling uses a windowed-sinc kernel (Kaiser window, 80 dB design)
evaluated directly at each output position. Filter rows are normalized
to unit sum, so a constant signal stays exactly constant at any rate
pair, including at the edges.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptHeader, EmptyAudio, UnsupportedFormat

_WAVE_PCM = 0x0001
_WAVE_FLOAT = 0x0003
_WAVE_EXTENSIBLE = 0xFFFE

_MAX_CHANNELS = 8

# Resampler quality preset: stopband attenuation and the fraction of the
# smaller Nyquist treated as guaranteed passband.
_STOP_ATTEN_DB = 80.0
_PASSBAND_FRACTION = 0.45
_RESAMPLE_BLOCK = 1 << 16


@dataclass(frozen=True)
class AudioBuffer:
    """Mono signal plus its sample rate.

    samples are float64, finite and non-empty. Buffers produced by
    :func:`load_pcm` are hard-clipped to [-1, 1]; ``clipped`` counts how
    many samples exceeded that range before clipping.
    """

    samples: np.ndarray
    sample_rate: int
    clipped: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise EmptyAudio("buffer must hold a non-empty 1-D signal")
        if not np.all(np.isfinite(samples)):
            raise ValueError("buffer contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "clipped", int(self.clipped))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.samples.size / self.sample_rate


def _parse_wav(data: bytes):
    """Return (format_tag, channels, rate, bits, payload bytes)."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader("not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            # Tolerate a declared size running past EOF: keep what is there.
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise CorruptHeader("missing fmt chunk")
    if payload is None:
        raise CorruptHeader("missing data chunk")
    if len(fmt) < 16:
        raise CorruptHeader("fmt chunk truncated")
    tag, channels, rate, _byte_rate, _block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_EXTENSIBLE:
        if len(fmt) < 26:
            raise CorruptHeader("extensible fmt chunk truncated")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if rate <= 0:
        raise CorruptHeader(f"invalid sample rate {rate}")
    return tag, channels, rate, bits, payload


def _decode_payload(payload: bytes, tag: int, bits: int, channels: int) -> np.ndarray:
    """Decode interleaved sample bytes to a (frames, channels) float64 array."""
    frame_bytes = channels * (bits // 8)
    if bits % 8 or frame_bytes == 0:
        raise UnsupportedFormat(f"{bits}-bit samples not supported")
    usable = (len(payload) // frame_bytes) * frame_bytes
    if usable == 0:
        raise EmptyAudio("data chunk holds no complete frame")
    payload = payload[:usable]

    if tag == _WAVE_FLOAT:
        if bits != 32:
            raise UnsupportedFormat(f"{bits}-bit float WAV not supported")
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    elif tag == _WAVE_PCM:
        if bits == 16:
            flat = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 2.0 ** 15
        elif bits == 32:
            flat = np.frombuffer(payload, dtype="<i4").astype(np.float64) / 2.0 ** 31
        elif bits == 24:
            raw = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            vals = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
            vals = np.where(vals & 0x800000, vals - 0x1000000, vals)
            flat = vals.astype(np.float64) / 2.0 ** 23
        else:
            raise UnsupportedFormat(f"{bits}-bit integer PCM not supported")
    else:
        raise UnsupportedFormat(f"WAV codec tag 0x{tag:04X} not supported")

    if not np.all(np.isfinite(flat)):
        raise UnsupportedFormat("float WAV contains non-finite samples")
    return flat.reshape(-1, channels)


def load_pcm(path, target_rate: int | None = None) -> AudioBuffer:
    """Decode a WAV file to a mono buffer at ``target_rate``.

    ``None`` keeps the file's own rate. Channels are averaged before
    resampling. Samples outside [-1, 1] after resampling are
    hard-clipped; the count of clipped samples is reported on the
    returned buffer.
    """
    if target_rate is not None and target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    data = Path(path).read_bytes()
    tag, channels, rate, bits, payload = _parse_wav(data)
    if not 1 <= channels <= _MAX_CHANNELS:
        raise UnsupportedFormat(f"{channels} channels outside supported range 1..{_MAX_CHANNELS}")
    frames = _decode_payload(payload, tag, bits, channels)
    mono = frames.mean(axis=1)
    buf = AudioBuffer(mono, rate)
    if target_rate is not None:
        buf = resample(buf, target_rate)
    clipped = int(np.count_nonzero(np.abs(buf.samples) > 1.0))
    samples = np.clip(buf.samples, -1.0, 1.0) if clipped else buf.samples
    return AudioBuffer(samples, buf.sample_rate, clipped=clipped)


def _kernel_design(source: int, target: int):
    """Cutoff (cycles per input sample), Kaiser beta and half-width in taps."""
    low = min(source, target)
    pass_hz = _PASSBAND_FRACTION * (low / 2.0)
    stop_hz = low / 2.0
    cutoff = (pass_hz + stop_hz) / 2.0 / source
    width = (stop_hz - pass_hz) / source
    beta = 0.1102 * (_STOP_ATTEN_DB - 8.7)
    n_taps = int(np.ceil((_STOP_ATTEN_DB - 8.0) / (2.285 * 2.0 * np.pi * width)))
    half = max(n_taps // 2, 4)
    return cutoff, beta, half


def _resample_sinc(x: np.ndarray, source: int, target: int) -> np.ndarray:
    n_out = int(round(x.size * target / source))
    if n_out <= 0:
        return np.empty(0)
    cutoff, beta, half = _kernel_design(source, target)
    step = source / target
    i0_beta = np.i0(beta)
    out = np.empty(n_out)
    offsets = np.arange(-half, half + 2, dtype=np.int64)
    for start in range(0, n_out, _RESAMPLE_BLOCK):
        j = np.arange(start, min(start + _RESAMPLE_BLOCK, n_out), dtype=np.float64)
        pos = j * step
        idx = np.floor(pos).astype(np.int64)[:, None] + offsets[None, :]
        tau = pos[:, None] - idx
        inside = np.abs(tau) <= half
        win_arg = np.clip(1.0 - (tau / half) ** 2, 0.0, None)
        taps = np.sinc(2.0 * cutoff * tau) * (np.i0(beta * np.sqrt(win_arg)) / i0_beta)
        taps *= inside & (idx >= 0) & (idx < x.size)
        gathered = x[np.clip(idx, 0, x.size - 1)]
        out[start:start + j.size] = (gathered * taps).sum(axis=1) / taps.sum(axis=1)
    return out


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample to ``target_rate``; identity when the rates already match."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf
    y = _resample_sinc(buf.samples, buf.sample_rate, target_rate)
    if y.size == 0:
        raise EmptyAudio("resampling produced no output samples")
    return AudioBuffer(y, target_rate, clipped=buf.clipped)


def write_wav(path, samples, sample_rate: int, fmt: str = "pcm16") -> None:
    """Write a mono or multichannel WAV file (pcm16 or float32)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.size == 0:
        raise ValueError("samples must be a non-empty 1-D or 2-D array")
    channels = x.shape[1]
    if fmt == "pcm16":
        payload = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype("<i2").tobytes()
        bits, tag = 16, _WAVE_PCM
    elif fmt == "float32":
        payload = x.astype("<f4").tobytes()
        bits, tag = 32, _WAVE_FLOAT
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    block_align = channels * bits // 8
    header = (
        b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        + b"fmt " + struct.pack("<IHHIIHH", 16, tag, channels, sample_rate,
                                sample_rate * block_align, block_align, bits)
        + b"data" + struct.pack("<I", len(payload))
    )
    Path(path).write_bytes(header + payload)
