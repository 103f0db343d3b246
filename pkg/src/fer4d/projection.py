"""Multi-view orthographic rendering of face meshes into geometric images.

The camera looks along +z, so smaller z is nearer. Rendered depth is
normalized over the covered pixels with the nearest surface mapped to 1 and
the farthest to 0; background pixels are 0 and flagged in ``mask``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fer4d.errors import DegenerateMesh, MissingColors
from fer4d.mesh import Mesh

PROFILE_TAGS = ("RP", "FP", "LP")


@dataclass(frozen=True)
class ViewAngle:
    yaw_degrees: float
    profile_tag: str

    def __post_init__(self):
        if not -90.0 < self.yaw_degrees < 90.0:
            raise ValueError(f"yaw must lie in (-90, 90), got {self.yaw_degrees}")
        if self.profile_tag not in PROFILE_TAGS:
            raise ValueError(f"unknown profile tag {self.profile_tag!r}")
        if (self.profile_tag == "FP") != (self.yaw_degrees == 0):
            raise ValueError("FP profile requires yaw 0 and vice versa")

    @classmethod
    def from_yaw(cls, yaw: float) -> ViewAngle:
        """Negative yaw is the right profile, positive the left."""
        yaw = float(yaw)
        tag = "FP" if yaw == 0 else ("RP" if yaw < 0 else "LP")
        return cls(yaw, tag)


DEFAULT_VIEWS = (ViewAngle.from_yaw(-30.0), ViewAngle.from_yaw(0.0), ViewAngle.from_yaw(30.0))


@dataclass(eq=False)
class GeomImage:
    kind: str
    pixels: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.kind not in ("depth", "enhanced_depth", "texture"):
            raise ValueError(f"unknown image kind {self.kind!r}")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Window:
    """World-to-pixel framing: square of side ``extent`` whose top-left is (x0, y_top)."""

    x0: float
    y_top: float
    extent: float

    @classmethod
    def fit(cls, points_xy: np.ndarray, pad: float = 0.05) -> Window:
        lo = points_xy.min(axis=0)
        hi = points_xy.max(axis=0)
        center = (lo + hi) / 2.0
        extent = float((hi - lo).max()) * (1.0 + 2.0 * pad)
        if extent <= 0:
            extent = 1.0
        return cls(center[0] - extent / 2.0, center[1] + extent / 2.0, extent)

    def to_pixels(self, points_xy: np.ndarray, K: int) -> np.ndarray:
        scale = K / self.extent
        u = (points_xy[:, 0] - self.x0) * scale
        v = (self.y_top - points_xy[:, 1]) * scale
        return np.stack([u, v], axis=1)


def rotate_yaw(vertices: np.ndarray, yaw_degrees: float, center: np.ndarray | None = None):
    """Rotate about the vertical axis through ``center`` (default: centroid)."""
    if yaw_degrees == 0:
        return np.array(vertices, dtype=np.float64, copy=True)
    if center is None:
        center = vertices.mean(axis=0)
    th = np.deg2rad(yaw_degrees)
    c, s = np.cos(th), np.sin(th)
    d = vertices - center
    out = np.empty_like(d)
    out[:, 0] = c * d[:, 0] + s * d[:, 2]
    out[:, 1] = d[:, 1]
    out[:, 2] = -s * d[:, 0] + c * d[:, 2]
    return out + center


@dataclass(eq=False)
class Raster:
    """Raw z-buffer output. ``triangle`` is -1 on background pixels."""

    triangle: np.ndarray
    depth: np.ndarray
    bary: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.triangle >= 0


def rasterize(pixels_uv: np.ndarray, z: np.ndarray, faces: np.ndarray, K: int) -> Raster:
    """Z-buffered rasterization of triangles given in pixel coordinates.

    A pixel (r, c) is covered when its center (c + 0.5, r + 0.5) is inside a
    triangle; edge pixels follow the top-left rule. The covering triangle
    with the smallest interpolated z wins, ties going to the lower face index.
    """
    triangle = np.full((K, K), -1, dtype=np.int64)
    depth = np.full((K, K), np.inf)
    bary = np.zeros((K, K, 3))
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if not len(faces):
        return Raster(triangle, depth, bary)

    p = pixels_uv[faces]  # (F, 3, 2)
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    longest = np.max(np.sum((p - np.roll(p, 1, axis=1)) ** 2, axis=2), axis=1)
    # collinear corners can leave a rounding-sized area; treat those as empty
    fid = np.flatnonzero(np.abs(area) > 1e-12 * longest)
    if not len(fid):
        return Raster(triangle, depth, bary)
    order = np.where(area[fid, None] > 0, [0, 1, 2], [0, 2, 1])
    corners = np.take_along_axis(faces[fid], order, axis=1)
    p = pixels_uv[corners]
    area = np.abs(area[fid])

    cmin = np.clip(np.ceil(p[:, :, 0].min(axis=1) - 0.5), 0, K).astype(np.int64)
    cmax = np.clip(np.floor(p[:, :, 0].max(axis=1) - 0.5), -1, K - 1).astype(np.int64)
    rmin = np.clip(np.ceil(p[:, :, 1].min(axis=1) - 0.5), 0, K).astype(np.int64)
    rmax = np.clip(np.floor(p[:, :, 1].max(axis=1) - 0.5), -1, K - 1).astype(np.int64)
    w = np.maximum(cmax - cmin + 1, 0)
    h = np.maximum(rmax - rmin + 1, 0)
    n = w * h
    total = int(n.sum())
    if total == 0:
        return Raster(triangle, depth, bary)

    t = np.repeat(np.arange(len(fid)), n)
    local = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    r = rmin[t] + local // w[t]
    c = cmin[t] + local % w[t]
    pu = c + 0.5
    pv = r + 0.5

    q = p[t]
    wts = np.empty((total, 3))
    inside = np.ones(total, dtype=bool)
    # barycentric weight i comes from the edge opposite corner i
    for i, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        du = q[:, b, 0] - q[:, a, 0]
        dv = q[:, b, 1] - q[:, a, 1]
        # evaluate every edge from its lexicographically smaller endpoint so the
        # two triangles sharing it get exactly opposite values (no cracks)
        flip = (q[:, a, 0] > q[:, b, 0]) | ((q[:, a, 0] == q[:, b, 0]) & (q[:, a, 1] > q[:, b, 1]))
        s0 = np.where(flip[:, None], q[:, b], q[:, a])
        s1 = np.where(flip[:, None], q[:, a], q[:, b])
        e = (s1[:, 0] - s0[:, 0]) * (pv - s0[:, 1]) - (s1[:, 1] - s0[:, 1]) * (pu - s0[:, 0])
        e = np.where(flip, -e, e)
        owned = (dv < 0) | ((dv == 0) & (du > 0))
        inside &= (e > 0) | ((e == 0) & owned)
        wts[:, i] = e
    t, r, c, wts = t[inside], r[inside], c[inside], wts[inside]
    if not len(t):
        return Raster(triangle, depth, bary)
    wts /= area[t][:, None]
    zc = z[corners[t]]
    # difference form keeps a constant-z triangle exactly constant
    zi = zc[:, 0] + wts[:, 1] * (zc[:, 1] - zc[:, 0]) + wts[:, 2] * (zc[:, 2] - zc[:, 0])

    pix = r * K + c
    srt = np.lexsort((fid[t], zi, pix))
    pix_s = pix[srt]
    first = np.ones(len(srt), dtype=bool)
    first[1:] = pix_s[1:] != pix_s[:-1]
    win = srt[first]
    flat = pix[win]
    triangle.reshape(-1)[flat] = fid[t[win]]
    depth.reshape(-1)[flat] = zi[win]
    # store weights against the face's original corner order
    corner_order = order[t[win]]
    bw = np.empty((len(win), 3))
    np.put_along_axis(bw, corner_order, wts[win], axis=1)
    bary.reshape(-1, 3)[flat] = bw
    return Raster(triangle, depth, bary)


def _project(mesh: Mesh, view: ViewAngle, K: int, window: Window | None):
    verts = rotate_yaw(mesh.vertices, view.yaw_degrees)
    if window is None:
        window = Window.fit(verts[:, :2])
    uv = window.to_pixels(verts[:, :2], K)
    ras = rasterize(uv, verts[:, 2], mesh.faces, K)
    if not ras.covered.any():
        raise DegenerateMesh("mesh covers no pixel in this view")
    return ras


def normalize_depth(ras: Raster) -> GeomImage:
    covered = ras.covered
    pixels = np.zeros(ras.depth.shape)
    z = ras.depth[covered]
    zmin, zmax = z.min(), z.max()
    if zmax > zmin:
        pixels[covered] = (zmax - z) / (zmax - zmin)
    else:
        pixels[covered] = 1.0
    return GeomImage("depth", pixels, ~covered)


def shade_texture(ras: Raster, mesh: Mesh) -> GeomImage:
    if mesh.colors is None:
        raise MissingColors("texture rendering needs per-vertex colors")
    covered = ras.covered
    rgb = np.zeros(ras.depth.shape + (3,))
    col = mesh.colors[mesh.faces[ras.triangle[covered]]]  # (n, 3 corners, rgb)
    w = ras.bary[covered]
    rgb[covered] = col[:, 0] + w[:, 1:2] * (col[:, 1] - col[:, 0]) + w[:, 2:3] * (col[:, 2] - col[:, 0])
    return GeomImage("texture", np.clip(rgb, 0.0, 1.0), ~covered)


def render_depth(mesh: Mesh, view: ViewAngle, K: int = 224, window: Window | None = None) -> GeomImage:
    """Orthographic depth image of ``mesh`` seen from ``view``.

    ``window`` fixes the world-to-pixel framing (use one window for every
    frame of a video); by default the rotated mesh is fitted to the image.
    """
    if K < 8:
        raise ValueError("K must be >= 8")
    return normalize_depth(_project(mesh, view, K, window))


def render_texture(mesh: Mesh, view: ViewAngle, K: int = 224, window: Window | None = None) -> GeomImage:
    if mesh.colors is None:
        raise MissingColors("texture rendering needs per-vertex colors")
    if K < 8:
        raise ValueError("K must be >= 8")
    return shade_texture(_project(mesh, view, K, window), mesh)


def clahe_mappings(values: np.ndarray, fg: np.ndarray, clip_limit: float, tiles: int, bins: int):
    """Per-tile clipped-histogram CDFs, shape (tiles, tiles, bins), plus tile edges."""
    H, W = values.shape
    b = np.minimum((values * bins).astype(np.int64), bins - 1)

    def cdf(sel):
        hist = np.bincount(b[sel], minlength=bins).astype(np.float64)
        n = hist.sum()
        if n == 0:
            return None
        limit = clip_limit * n
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / bins
        return np.cumsum(hist) / n

    glob = cdf(fg)
    if glob is None:
        glob = (np.arange(bins) + 1.0) / bins
    ey = np.linspace(0, H, tiles + 1).round().astype(int)
    ex = np.linspace(0, W, tiles + 1).round().astype(int)
    maps = np.empty((tiles, tiles, bins))
    for i in range(tiles):
        for j in range(tiles):
            sel = np.zeros_like(fg)
            sel[ey[i]:ey[i + 1], ex[j]:ex[j + 1]] = True
            m = cdf(sel & fg)
            maps[i, j] = glob if m is None else m
    return maps, ey, ex, b


def _blend_coords(edges: np.ndarray, n: int, tiles: int):
    centers = (edges[:-1] + edges[1:]) / 2.0 - 0.5
    g = np.interp(np.arange(n), centers, np.arange(tiles, dtype=np.float64))
    i0 = np.floor(g).astype(np.int64)
    i1 = np.minimum(i0 + 1, tiles - 1)
    return i0, i1, g - i0


def enhance_depth(img: GeomImage, clip_limit: float = 0.01, tiles: int = 8, bins: int = 256) -> GeomImage:
    """Contrast-limited adaptive histogram equalization of a depth image.

    Histograms count foreground pixels only. Each tile's histogram is
    clipped at ``clip_limit`` times its pixel count, the excess spread evenly
    over all bins, and the tile CDF used as the intensity map. Tile maps are
    blended bilinearly between tile centers. Tiles without foreground use the
    whole-image map.
    """
    if img.kind != "depth":
        raise ValueError(f"expected a depth image, got {img.kind}")
    if tiles < 1:
        raise ValueError("tiles must be >= 1")
    if not 0 < clip_limit <= 1:
        raise ValueError("clip_limit must lie in (0, 1]")
    fg = ~img.mask
    maps, ey, ex, b = clahe_mappings(img.pixels, fg, clip_limit, tiles, bins)
    H, W = img.pixels.shape
    r0, r1, wr = _blend_coords(ey, H, tiles)
    c0, c1, wc = _blend_coords(ex, W, tiles)
    R0, C0 = np.meshgrid(r0, c0, indexing="ij")
    R1, C1 = np.meshgrid(r1, c1, indexing="ij")
    WR, WC = np.meshgrid(wr, wc, indexing="ij")
    # lerp form: equal tile maps blend to exactly that value
    top = maps[R0, C0, b] + WC * (maps[R0, C1, b] - maps[R0, C0, b])
    bottom = maps[R1, C0, b] + WC * (maps[R1, C1, b] - maps[R1, C0, b])
    out = top + WR * (bottom - top)
    out = np.clip(out, 0.0, 1.0)
    out[img.mask] = 0.0
    return GeomImage("enhanced_depth", out, img.mask.copy())


def render_views(
    mesh: Mesh,
    views,
    K: int = 224,
    clip_limit: float = 0.01,
    tiles: int = 8,
    windows=None,
):
    """Depth, enhanced depth and texture images for each view, in view order."""
    out = []
    errors = []
    for i, view in enumerate(views):
        window = None if windows is None else windows[i]
        try:
            ras = _project(mesh, view, K, window)
            depth = normalize_depth(ras)
            out.append((depth, enhance_depth(depth, clip_limit, tiles), shade_texture(ras, mesh)))
        except (DegenerateMesh, MissingColors) as exc:
            errors.append(f"view {view.profile_tag} ({view.yaw_degrees:g} deg): {exc}")
    if errors:
        kind = DegenerateMesh if all("covers no pixel" in e for e in errors) else MissingColors
        raise kind("; ".join(errors))
    return out


def sequence_window(meshes, view: ViewAngle, pad: float = 0.05) -> Window:
    """One framing shared by every frame of a video so motion is not normalized away."""
    pts = np.concatenate([rotate_yaw(m.vertices, view.yaw_degrees)[:, :2] for m in meshes])
    return Window.fit(pts, pad)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 16-bit PGM of a [0, 1] grayscale image."""
    data = np.round(np.clip(image, 0.0, 1.0) * 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    """Binary 8-bit PPM of a [0, 1] RGB image."""
    data = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pbm(path, image: np.ndarray) -> None:
    """Binary PBM; True pixels are written as black (1)."""
    bits = np.packbits(np.asarray(image, dtype=bool), axis=1)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode("ascii"))
        fh.write(bits.tobytes())


def read_netpbm(path) -> np.ndarray:
    """Read a binary P4/P5/P6 file back into a float [0, 1] (or bool) array."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    need = 3 if raw[:2] == b"P4" else 4
    while len(tokens) < need:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    body = raw[pos:]
    if magic == "P4":
        bits = np.frombuffer(body, dtype=np.uint8).reshape(h, -1)
        return np.unpackbits(bits, axis=1)[:, :w].astype(bool)
    maxval = int(tokens[3])
    dtype = ">u2" if maxval > 255 else np.uint8
    chans = 3 if magic == "P6" else 1
    data = np.frombuffer(body, dtype=dtype, count=w * h * chans).astype(np.float64) / maxval
    return data.reshape(h, w, 3) if chans == 3 else data.reshape(h, w)
