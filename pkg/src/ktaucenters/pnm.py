"""Minimal reader/writer for the portable anymap formats P2, P3, P5 and P6."""
import numpy as np

_GRAY = {b"P2", b"P5"}
_COLOR = {b"P3", b"P6"}


class PNMError(ValueError):
    pass


def _tokens(buf, start, count):
    # header tokens, skipping '#' comments; returns tokens and the offset after the last
    out = []
    i = start
    n = len(buf)
    while len(out) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise PNMError("truncated header")
        out.append(buf[i:j])
        i = j
    return out, i


def read_pnm(path):
    """Read a PGM/PPM raster scaled to [0, 1].

    Returns an ``(h, w)`` array for gray images and ``(h, w, 3)`` for color.
    Samples are divided by the file's maxval.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic not in _GRAY | _COLOR:
        raise PNMError(f"unsupported magic number {magic!r}")
    (w, h, maxval), end = _tokens(buf, 2, 3)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise PNMError("malformed header") from exc
    if w <= 0 or h <= 0 or not (0 < maxval < 65536):
        raise PNMError("invalid image dimensions or maxval")
    channels = 3 if magic in _COLOR else 1
    count = w * h * channels

    if magic in (b"P2", b"P3"):
        vals = buf[end:].split()
        vals = [v for v in vals if not v.startswith(b"#")]
        if len(vals) < count:
            raise PNMError("not enough samples")
        arr = np.array([int(v) for v in vals[:count]], dtype=np.int64)
    else:
        start = end + 1  # exactly one whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = buf[start:start + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise PNMError("truncated raster data")
        arr = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    if np.any(arr > maxval):
        raise PNMError("sample exceeds maxval")
    img = arr.astype(float) / maxval
    return img.reshape(h, w, 3) if channels == 3 else img.reshape(h, w)


def write_pnm(path, image, maxval=255):
    """Write a [0, 1] gray ``(h, w)`` or color ``(h, w, 3)`` array as binary P5/P6."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise PNMError("image must be (h, w) or (h, w, 3)")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(q.astype(dtype).tobytes())


def write_ascii_pnm(path, image, maxval=255):
    """Plain-text variant (P2/P3) of :func:`write_pnm`."""
    img = np.asarray(image, dtype=float)
    magic = "P2" if img.ndim == 2 else "P3"
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(int)
    h, w = img.shape[:2]
    rows = [" ".join(map(str, r.ravel())) for r in q.reshape(h, -1)]
    with open(path, "w") as fh:
        fh.write(f"{magic}\n# written by ktaucenters\n{w} {h}\n{maxval}\n")
        fh.write("\n".join(rows) + "\n")
