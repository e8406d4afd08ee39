"""Self-describing tensor container and 8-bit graymap dumps.

Container layout (byte exact)::

    TDDR1\\n
    key: value\\n          (UTF-8 header lines)
    ...
    \\n                     (blank line ends the header)
    payload                (arrays back to back, row-major, little-endian)

Header keys: ``count``, ``endianness``, then per tensor ``tensor.<i>.name``,
``tensor.<i>.dtype`` and ``tensor.<i>.shape`` (comma separated, empty for a
scalar), then ``meta.<key>`` entries.  Complex arrays are stored as
interleaved (real, imag) pairs.  Metadata values escape backslash and
newline as ``\\\\`` and ``\\n``.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"TDDR1\n"
DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "complex64": np.dtype("<c8"),
    "complex128": np.dtype("<c16"),
    "int64": np.dtype("<i8"),
}


class ContainerError(ValueError):
    """Malformed or unexpected container file."""


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append("\n" if s[i + 1] == "n" else s[i + 1])
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in DTYPES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return name
    raise ContainerError(f"unsupported element type {arr.dtype}")


def _atomic_write(path: Path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, tensors: dict | list, meta: dict | None = None):
    """Write named arrays and string metadata to ``path`` atomically."""
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ContainerError("duplicate tensor names")
    lines = [f"count: {len(items)}", "endianness: little"]
    payload = []
    for i, (name, arr) in enumerate(items):
        if not name or "\n" in name:
            raise ContainerError(f"invalid tensor name {name!r}")
        arr = np.asarray(arr)
        dname = _dtype_name(arr)
        lines.append(f"tensor.{i}.name: {name}")
        lines.append(f"tensor.{i}.dtype: {dname}")
        lines.append(f"tensor.{i}.shape: {','.join(str(s) for s in arr.shape)}")
        payload.append(np.ascontiguousarray(arr, dtype=DTYPES[dname]).tobytes())
    for key, val in (meta or {}).items():
        if ":" in key or "\n" in key:
            raise ContainerError(f"invalid metadata key {key!r}")
        lines.append(f"meta.{key}: {_escape(str(val))}")
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    _atomic_write(Path(path), MAGIC + header + b"".join(payload))


def read_container(path, dtypes: dict | None = None) -> tuple[dict, dict]:
    """Inverse of :func:`write_container`; returns ``(tensors, meta)`` in file order.

    ``dtypes`` optionally maps tensor names to the element type the caller
    expects; a mismatch raises :class:`ContainerError`.
    """
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ContainerError(f"{path}: not a container (bad magic)")
    end = data.find(b"\n\n", len(MAGIC) - 1)
    if end < 0:
        raise ContainerError(f"{path}: truncated header")
    text = data[len(MAGIC):end + 1].decode("utf-8")
    fields = {}
    for line in text.split("\n"):
        if not line:
            continue
        key, sep, val = line.partition(": ")
        if not sep:
            raise ContainerError(f"{path}: malformed header line {line!r}")
        fields[key] = val
    if fields.get("endianness") != "little":
        raise ContainerError(f"{path}: unsupported endianness {fields.get('endianness')!r}")
    try:
        count = int(fields["count"])
    except (KeyError, ValueError):
        raise ContainerError(f"{path}: missing tensor count") from None
    specs = []
    for i in range(count):
        try:
            name = fields[f"tensor.{i}.name"]
            dname = fields[f"tensor.{i}.dtype"]
            shape_s = fields[f"tensor.{i}.shape"]
        except KeyError as err:
            raise ContainerError(f"{path}: header lacks {err.args[0]}") from None
        if dname not in DTYPES:
            raise ContainerError(f"{path}: element type {dname!r} of {name!r} is not supported")
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        specs.append((name, dname, shape))
    expected = sum(DTYPES[d].itemsize * int(np.prod(s, dtype=np.int64)) for _, d, s in specs)
    body = data[end + 2:]
    if len(body) != expected:
        raise ContainerError(f"{path}: payload length mismatch (header implies {expected} bytes, "
                             f"found {len(body)})")
    tensors, off = {}, 0
    for name, dname, shape in specs:
        if dtypes and name in dtypes and np.dtype(dtypes[name]) != DTYPES[dname].newbyteorder("="):
            raise ContainerError(f"{path}: tensor {name!r} is {dname}, expected {np.dtype(dtypes[name])}")
        dt = DTYPES[dname]
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="))
        off += nbytes
    meta = {k[5:]: _unescape(v) for k, v in fields.items() if k.startswith("meta.")}
    return tensors, meta


def to_graymap(image, window=None) -> tuple[np.ndarray, bool]:
    """Map magnitudes to uint8 through ``window`` (lo, hi); ``None`` = 1st/99th percentile.

    Returns the pixels and a flag telling whether the window was degenerate
    (then every pixel is mid-gray).  Rounding is half-up.
    """
    m = np.abs(np.asarray(image))
    if not np.all(np.isfinite(m)):
        raise ValueError("image contains non-finite values")
    if window is None:
        lo, hi = np.percentile(m, [1, 99])
    else:
        lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        return np.full(m.shape, 128, dtype=np.uint8), True
    v = np.clip((m - lo) / (hi - lo), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8), False


def dump_grayscale(image, path, window=None) -> bool:
    """Write a binary PGM (P5).  Returns True if the window was degenerate."""
    pix, degenerate = to_graymap(image, window)
    if pix.ndim != 2:
        raise ValueError(f"graymap needs a 2D image, got shape {pix.shape}")
    h, w = pix.shape
    _atomic_write(Path(path), f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
    return degenerate


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary graymap")
    w, h = (int(s) for s in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
