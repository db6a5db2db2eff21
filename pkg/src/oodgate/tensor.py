"""Dense float32 tensors, the TZR on-disk format, depth-wise convolution,
and a direct-evaluation spectral oracle.

Tensors are plain ``numpy.ndarray`` values: rank 1-4, float32, C-order,
finite everywhere. Feature maps are channel-major ``(C, H, W)``.
``as_tensor`` is the single entry point that enforces those invariants;
every public operation in the package validates through it.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SizeError, TzrFormatError, ValidationError

TZR_MAGIC = b"TZR1"
MAX_RANK = 4

_PAD_MODES = {"replicate": "edge", "periodic": "wrap"}


def as_tensor(data, dtype=np.float32) -> np.ndarray:
    """Coerce ``data`` to a valid tensor: float32, C-order, rank 1-4, finite.

    Raises
    ------
    ValidationError
        If the rank is out of bounds or any value is NaN/Inf.
    """
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise ValidationError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if any(n <= 0 for n in arr.shape):
        raise ValidationError(f"tensor extents must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValidationError(f"tensor contains non-finite value at flat index {bad}")
    return arr


def as_kernel2d(weights) -> np.ndarray:
    """Coerce to a centered 2-D kernel: float32, odd height and width."""
    k = np.ascontiguousarray(weights, dtype=np.float32)
    if k.ndim != 2:
        raise ValidationError(f"kernel must be rank 2, got rank {k.ndim}")
    kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"kernel extents must be odd, got {kh}x{kw}")
    if not np.all(np.isfinite(k)):
        raise ValidationError("kernel contains non-finite values")
    return k


def write_tensor(t, path) -> None:
    """Serialize a tensor to the TZR format.

    Byte layout: ``b"TZR1"``, rank as uint32 LE, the extents as uint32 LE,
    then the row-major float32 LE payload. No padding, no footer. Identical
    tensors produce identical files.
    """
    t = as_tensor(t)
    header = TZR_MAGIC + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    payload = t.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    """Decode a TZR file; the inverse of :func:`write_tensor`, bit-exactly.

    Raises
    ------
    TzrFormatError
        On a bad magic, rank, extent, or payload length; the error names the
        byte offset of the offending field.
    ValidationError
        If the payload holds NaN/Inf values.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != TZR_MAGIC:
        raise TzrFormatError(f"bad magic {raw[:4]!r}, expected {TZR_MAGIC!r}", offset=0)
    if len(raw) < 8:
        raise TzrFormatError("file truncated before rank field", offset=len(raw))
    rank = struct.unpack_from("<I", raw, 4)[0]
    if rank < 1 or rank > MAX_RANK:
        raise TzrFormatError(f"rank {rank} outside 1..{MAX_RANK}", offset=4)
    extents_end = 8 + 4 * rank
    if len(raw) < extents_end:
        raise TzrFormatError("file truncated inside extents", offset=len(raw))
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    for i, n in enumerate(shape):
        if n == 0:
            raise TzrFormatError(f"extent {i} is zero", offset=8 + 4 * i)
    count = int(np.prod(shape, dtype=np.int64))
    expected_end = extents_end + 4 * count
    if len(raw) != expected_end:
        raise TzrFormatError(
            f"payload holds {len(raw) - extents_end} bytes, expected {4 * count}",
            offset=min(len(raw), expected_end),
        )
    flat = np.frombuffer(raw, dtype="<f4", count=count, offset=extents_end)
    arr = flat.reshape(shape).astype(np.float32, copy=True)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValidationError(f"payload contains non-finite value at flat index {bad}")
    return arr


def depthwise_conv2d(t, kernel, padding: str = "replicate") -> np.ndarray:
    """Convolve every channel of a ``(C, H, W)`` tensor with one 2-D kernel.

    True convolution (an impulse reproduces the kernel unflipped), same
    output shape as the input. ``padding`` is ``"replicate"`` (edge clamp,
    the production default) or ``"periodic"`` (circular wrap, used by the
    spectral oracle). Accumulation runs in float64; the result is float32.
    """
    t = as_tensor(t)
    if t.ndim != 3:
        raise SizeError(f"expected a (C, H, W) tensor, got shape {t.shape}")
    k = as_kernel2d(kernel)
    kh, kw = k.shape
    _, h, w = t.shape
    if h < kh or w < kw:
        raise SizeError(f"feature map {h}x{w} smaller than kernel {kh}x{kw}")
    if padding not in _PAD_MODES:
        raise ValidationError(f"unknown padding {padding!r}, expected one of {sorted(_PAD_MODES)}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(t.astype(np.float64), ((0, 0), (ph, ph), (pw, pw)), mode=_PAD_MODES[padding])
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    flipped = k[::-1, ::-1].astype(np.float64)
    out = np.einsum("chwij,ij->chw", windows, flipped, optimize=False)
    return out.astype(np.float32)


def power_spectrum(channel) -> np.ndarray:
    """Squared-magnitude DFT of one ``(H, W)`` channel, by direct evaluation.

    Uses explicit complex-exponential matrices rather than an FFT, so it
    stays independent of any transform library and serves as the spectral
    oracle for the rest of the package. Unnormalized forward transform:
    ``mean(power_spectrum(x)) == sum(x**2)`` (Parseval).
    """
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 2:
        raise SizeError(f"expected an (H, W) channel, got shape {x.shape}")
    h, w = x.shape
    if h < 2 or w < 2:
        raise SizeError(f"channel must be at least 2x2, got {h}x{w}")
    u = np.arange(h)
    v = np.arange(w)
    basis_h = np.exp(-2j * np.pi * np.outer(u, u) / h)
    basis_w = np.exp(-2j * np.pi * np.outer(v, v) / w)
    freq = basis_h @ x.astype(np.complex128) @ basis_w
    return (freq.real**2 + freq.imag**2).astype(np.float32)
