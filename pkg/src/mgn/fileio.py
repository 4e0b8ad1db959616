"""Binary P6 image files and model checkpoints.

PPM: only the binary P6 form with maxval 255 is supported.  Reading maps
bytes to float32 via v/255; writing rounds half away from zero.  Files this
package writes use the canonical header "P6\\n{W} {H}\\n255\\n", so a
write-read-write cycle is byte-identical.

Checkpoint layout (all integers little-endian):
  magic "MGNCKPT1" | u32 version | u32 config_len | config JSON (UTF-8)
  | u32 tensor_count | per tensor: u32 name_len, name, u32 rank,
    rank x u64 extents, float32 LE values (C order)
"""

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"MGNCKPT1"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


_WS = b" \t\r\n\x0b\x0c"


def _next_token(buf: bytes, pos: int):
    while pos < len(buf):
        ch = buf[pos : pos + 1]
        if ch in (b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c"):
            pos += 1
        elif ch == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\r", b"\n"):
                pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos : pos + 1] not in (
        b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c",
    ):
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", start)
    return buf[start:pos], pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file as float32 [H, W, 3] in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _next_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"bad magic {magic!r}, expected P6", 0)
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric {name} {tok!r}", pos - len(tok))
        fields.append(int(tok))
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise FormatError(f"bad dimensions {w}x{h}", pos)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, only 255", pos)
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise FormatError("expected single whitespace after maxval", pos)
    pos += 1
    need = h * w * 3
    if len(buf) - pos < need:
        raise FormatError(
            f"truncated pixel data: need {need} bytes, have {len(buf) - pos}", pos
        )
    pix = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return (pix.reshape(h, w, 3).astype(np.float32)) / 255.0


def write_ppm(path, img: np.ndarray) -> None:
    """Write float [H, W, 3] values in [0, 1] as binary P6 (canonical header)."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3], got {img.shape}")
    h, w = img.shape[:2]
    v = np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0
    pix = np.floor(v + 0.5).astype(np.uint8)  # round half away (values >= 0)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(pix.tobytes())


def _canonical_config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    """Serialize a config dict and an ordered name->ndarray mapping."""
    blob = _canonical_config_bytes(config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f4", order="C")  # keeps rank-0 arrays rank-0
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (config dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        buf = fh.read()

    def take(n, pos, what):
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)
        return buf[pos : pos + n], pos + n

    raw, pos = take(8, 0, "magic")
    if raw != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw!r}", 0)
    raw, pos = take(8, pos, "header")
    version, config_len = struct.unpack("<II", raw)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    raw, pos = take(config_len, pos, "config blob")
    try:
        config = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"invalid config blob: {e}", pos - config_len) from None
    raw, pos = take(4, pos, "tensor count")
    (count,) = struct.unpack("<I", raw)
    tensors = {}
    for _ in range(count):
        raw, pos = take(4, pos, "name length")
        (nlen,) = struct.unpack("<I", raw)
        raw, pos = take(nlen, pos, "tensor name")
        name = raw.decode("utf-8")
        raw, pos = take(4, pos, "rank")
        (rank,) = struct.unpack("<I", raw)
        raw, pos = take(8 * rank, pos, "extents")
        shape = struct.unpack(f"<{rank}Q", raw) if rank else ()
        n_vals = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw, pos = take(4 * n_vals, pos, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after tensor table", pos)
    return config, tensors
