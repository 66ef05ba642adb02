"""Text formats: CFLD fields, CMEAS measurements, key=value manifests, PGM heatmaps and CSV.

CFLD v1::

    CFLD 1 st <nx> <nt> <A> <B> <T>      (space-time field)
    CFLD 1 s <nx> <A> <B> <T>            (spatial field)

followed by one value per node in row-major (i, j[, k]) order.

CMEAS v1::

    CMEAS 1 <nx> <nt> <A> <B> <T> <t0> [<nf>]

followed by the g1 block (nx * nt values ordered by x2 index then time index)
and the f0 block (nf * nf values, nf defaults to nx).  Lines starting with
'#' are comments and may appear anywhere.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .forward import MeasurementData
from .grid import ScalarField, SpaceTimeGrid

_TOKEN = re.compile(rb"#[^\n]*|\S+")


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _tokens(raw: bytes):
    for m in _TOKEN.finditer(raw):
        if not m.group().startswith(b"#"):
            yield m.start(), m.group()


def _header(raw: bytes, magic: bytes):
    newline = raw.find(b"\n")
    end = len(raw) if newline < 0 else newline
    toks = [(m.start(), m.group()) for m in re.finditer(rb"\S+", raw[:end])]
    if not toks or toks[0][1] != magic:
        raise FormatError(f"expected {magic.decode()} header", toks[0][0] if toks else 0)
    if len(toks) < 2 or toks[1][1] != b"1":
        raise FormatError("unsupported format version", toks[1][0] if len(toks) > 1 else end)
    return toks[2:], end


def _as_int(tok, what):
    off, text = tok
    try:
        v = int(text)
    except ValueError:
        raise FormatError(f"{what} must be an integer, got {text.decode(errors='replace')!r}", off) from None
    return v


def _as_float(tok, what):
    off, text = tok
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"{what} must be a number, got {text.decode(errors='replace')!r}", off) from None
    if not np.isfinite(v):
        raise FormatError(f"{what} is not finite", off)
    return v


def _values(raw: bytes, start: int, count: int) -> np.ndarray:
    toks = list(_tokens(raw[start:]))
    if len(toks) != count:
        off = start + (toks[count][0] if len(toks) > count else len(raw) - start)
        raise FormatError(f"expected {count} values, found {len(toks)}", off)
    out = np.empty(count)
    for i, (off, text) in enumerate(toks):
        out[i] = _as_float((start + off, text), "value")
    return out


def _fmt(a) -> str:
    return "\n".join(f"{v:.17g}" for v in np.asarray(a, float).ravel())


# ---------------------------------------------------------------------------
# CFLD


def write_cfld(path, f: ScalarField) -> None:
    g = f.grid
    if f.rank == "st":
        head = f"CFLD 1 st {g.nx} {g.nt} {g.A!r} {g.B!r} {g.T!r}"
    else:
        head = f"CFLD 1 s {g.nx} {g.A!r} {g.B!r} {g.T!r}"
    Path(path).write_text(head + "\n" + _fmt(f.values) + "\n")


def read_cfld(path) -> ScalarField:
    return parse_cfld(Path(path).read_bytes())


def parse_cfld(raw: bytes) -> ScalarField:
    fields, end = _header(raw, b"CFLD")
    if not fields or fields[0][1] not in (b"st", b"s"):
        raise FormatError("rank must be 'st' or 's'", fields[0][0] if fields else end)
    rank = fields[0][1].decode()
    need = 6 if rank == "st" else 5
    if len(fields) != need:
        raise FormatError(f"header needs {need} fields after the version", fields[-1][0])
    nx = _as_int(fields[1], "nx")
    nt = _as_int(fields[2], "nt") if rank == "st" else 3
    A, B, T = (_as_float(t, n) for t, n in zip(fields[need - 3:], "ABT"))
    try:
        grid = SpaceTimeGrid(A, B, T, nx, nt)
    except ValueError as exc:
        raise FormatError(f"invalid grid: {exc}", fields[1][0]) from None
    shape = grid.shape if rank == "st" else grid.space_shape
    vals = _values(raw, end, int(np.prod(shape)))
    return ScalarField(grid, vals.reshape(shape))


# ---------------------------------------------------------------------------
# CMEAS


def write_cmeas(path, m: MeasurementData, comments: dict | None = None) -> None:
    g = m.grid
    head = f"CMEAS 1 {g.nx} {g.nt} {g.A!r} {g.B!r} {g.T!r} {m.t0!r}"
    if m.nf != g.nx:
        head += f" {m.nf}"
    lines = [head]
    for key, val in (comments or {}).items():
        lines.append(f"# {key}={val}")
    lines += [_fmt(m.g1), _fmt(m.f0)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cmeas(path) -> MeasurementData:
    return parse_cmeas(Path(path).read_bytes())


def parse_cmeas(raw: bytes) -> MeasurementData:
    fields, end = _header(raw, b"CMEAS")
    if len(fields) not in (6, 7):
        raise FormatError("header needs nx nt A B T t0 [nf]", fields[-1][0] if fields else end)
    nx, nt = _as_int(fields[0], "nx"), _as_int(fields[1], "nt")
    A, B, T, t0 = (_as_float(t, n) for t, n in zip(fields[2:6], ("A", "B", "T", "t0")))
    nf = _as_int(fields[6], "nf") if len(fields) == 7 else nx
    try:
        grid = SpaceTimeGrid(A, B, T, nx, nt)
    except ValueError as exc:
        raise FormatError(f"invalid grid: {exc}", fields[0][0]) from None
    if nf < 3:
        raise FormatError("nf must be >= 3", fields[6][0])
    vals = _values(raw, end, nx * nt + nf * nf)
    meta = {}
    for m in re.finditer(rb"^#\s*(\w+)=([^\n]*)", raw, re.M):
        meta[m.group(1).decode()] = m.group(2).decode()
    return MeasurementData(grid, t0, vals[: nx * nt].reshape(nx, nt),
                           vals[nx * nt:].reshape(nf, nf), meta)


# ---------------------------------------------------------------------------
# manifests, heatmaps, CSV


def write_manifest(path, entries: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in entries.items()))


def read_keyvalue(path) -> dict[str, str]:
    """Flat key=value text with '#' comments, as used for configs and manifests."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> tuple[float, float]:
    """Grayscale P2 image, linear ramp from min (black) to max (white).

    The array is indexed [x1, x2]; the image puts x1 to the right and x2 up.
    A sidecar ``<path>.txt`` records the value range.
    """
    a = np.asarray(values, float)
    lo, hi = float(a.min()), float(a.max())
    scale = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    img = np.rint(scale * maxval).astype(int).T[::-1]
    rows = "\n".join(" ".join(str(v) for v in r) for r in img)
    Path(path).write_text(f"P2\n{img.shape[1]} {img.shape[0]}\n{maxval}\n{rows}\n")
    Path(str(path) + ".txt").write_text(
        f"min={lo:.17g}\nmax={hi:.17g}\nblack=min\nwhite=max\nramp=linear\n"
        "orientation=x1 to the right, x2 up\n"
    )
    return lo, hi


def write_csv(path, f: ScalarField) -> None:
    """Spatial field as x1,x2,value rows."""
    g = f.grid
    x1, x2 = np.broadcast_arrays(*g.space_mesh())
    rows = ["x1,x2,value"] + [
        f"{a:.17g},{b:.17g},{v:.17g}" for a, b, v in zip(x1.ravel(), x2.ravel(), f.values.ravel())
    ]
    Path(path).write_text("\n".join(rows) + "\n")
