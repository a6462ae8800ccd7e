"""Synthetic paired camera/LiDAR scenes with exact analytic ray casting.

A scene is a closed room (ground, four walls, ceiling) containing boxes
and vertical cylinders.  A spinning-LiDAR ray pattern cast from the origin
produces the point cloud; pinhole cameras on the same rig produce images,
dense depth, and dense class maps from the very same surface set, so the
two modalities agree exactly up to floating-point error.  Surface
brightness falls off with distance (a fog factor), which is what makes
depth recoverable from image patches.

Everything is a pure function of (config, seed): regenerating a scene
yields byte-identical arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .geometry import CameraIntrinsics, PointCloud, RigidTransform, project_point_arrays, round_pixel

CLASS_NAMES = ("ground", "wall", "box", "cylinder")
N_CLASSES = len(CLASS_NAMES)


# -- surfaces -----------------------------------------------------------------


@dataclass
class HorizontalRect:
    """Axis-aligned rectangle in a z = const plane."""

    z: float
    x_range: tuple
    y_range: tuple
    cls: int
    color: np.ndarray

    def raycast(self, origins, dirs):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.z - origins[:, 2]) / dz
            p = origins + t[:, None] * dirs
        ok = (
            (np.abs(dz) > 1e-300)
            & (t > 1e-9)
            & (p[:, 0] >= self.x_range[0])
            & (p[:, 0] <= self.x_range[1])
            & (p[:, 1] >= self.y_range[0])
            & (p[:, 1] <= self.y_range[1])
        )
        return np.where(ok, t, np.inf)

    def residual(self, points):
        return np.abs(points[:, 2] - self.z)


@dataclass
class VerticalRect:
    """Axis-aligned rectangle in an x = const (axis 0) or y = const (axis 1)
    plane."""

    axis: int
    coord: float
    lateral_range: tuple
    z_range: tuple
    cls: int
    color: np.ndarray

    def raycast(self, origins, dirs):
        a, b = self.axis, 1 - self.axis
        da = dirs[:, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.coord - origins[:, a]) / da
            p = origins + t[:, None] * dirs
        ok = (
            (np.abs(da) > 1e-300)
            & (t > 1e-9)
            & (p[:, b] >= self.lateral_range[0])
            & (p[:, b] <= self.lateral_range[1])
            & (p[:, 2] >= self.z_range[0])
            & (p[:, 2] <= self.z_range[1])
        )
        return np.where(ok, t, np.inf)

    def residual(self, points):
        return np.abs(points[:, self.axis] - self.coord)


@dataclass
class Box:
    """Axis-aligned box; rays are assumed to start outside."""

    lo: np.ndarray
    hi: np.ndarray
    cls: int
    color: np.ndarray

    def raycast(self, origins, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0 = (self.lo[None, :] - origins) * inv
            t1 = (self.hi[None, :] - origins) * inv
        near = np.nanmax(np.minimum(t0, t1), axis=1)
        far = np.nanmin(np.maximum(t0, t1), axis=1)
        ok = (near <= far) & (far > 0.0) & (near > 1e-9)
        return np.where(ok, near, np.inf)

    def residual(self, points):
        d_lo = np.abs(points - self.lo[None, :])
        d_hi = np.abs(points - self.hi[None, :])
        return np.minimum(d_lo, d_hi).min(axis=1)


@dataclass
class Cylinder:
    """Vertical cylinder with cap disks."""

    cx: float
    cy: float
    z_range: tuple
    radius: float
    cls: int
    color: np.ndarray

    def raycast(self, origins, dirs):
        ox = origins[:, 0] - self.cx
        oy = origins[:, 1] - self.cy
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a = dx ** 2 + dy ** 2
        b = 2.0 * (ox * dx + oy * dy)
        c = ox ** 2 + oy ** 2 - self.radius ** 2
        disc = b ** 2 - 4.0 * a * c
        best = np.full(origins.shape[0], np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                t = (-b + sign * sq) / (2.0 * a)
                z = origins[:, 2] + t * dz
                ok = (disc >= 0.0) & (a > 1e-300) & (t > 1e-9)
                ok &= (z >= self.z_range[0]) & (z <= self.z_range[1])
                best = np.where(ok & (t < best), t, best)
            for zc in self.z_range:
                t = (zc - origins[:, 2]) / dz
                px = origins[:, 0] + t * dx - self.cx
                py = origins[:, 1] + t * dy - self.cy
                ok = (np.abs(dz) > 1e-300) & (t > 1e-9) & (px ** 2 + py ** 2 <= self.radius ** 2)
                best = np.where(ok & (t < best), t, best)
        return best

    def residual(self, points):
        radial = np.abs(
            np.hypot(points[:, 0] - self.cx, points[:, 1] - self.cy) - self.radius
        )
        caps = np.minimum(
            np.abs(points[:, 2] - self.z_range[0]), np.abs(points[:, 2] - self.z_range[1])
        )
        return np.minimum(radial, caps)


def cast_rays(surfaces, origins, dirs):
    """First hit over all surfaces: returns (t, surface index), inf/-1 on miss."""
    best_t = np.full(origins.shape[0], np.inf)
    best_s = np.full(origins.shape[0], -1, dtype=np.int64)
    for s, surf in enumerate(surfaces):
        t = surf.raycast(origins, dirs)
        better = t < best_t
        best_t[better] = t[better]
        best_s[better] = s
    return best_t, best_s


def _rotate_rows(vectors, r_cam_to_world_t):
    """Row-vector rotation as explicit ufunc arithmetic.

    Equivalent to ``vectors @ R`` but with a fixed per-element evaluation
    order, so results are bit-identical regardless of how many rows are
    processed at once (the consistency check re-renders subsets).
    """
    r = r_cam_to_world_t
    return (
        vectors[:, 0:1] * r[0][None, :]
        + vectors[:, 1:2] * r[1][None, :]
        + vectors[:, 2:3] * r[2][None, :]
    )


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class CameraRig:
    position: tuple
    yaw: float
    pitch: float


@dataclass(frozen=True)
class SceneConfig:
    extent: float = 20.0
    ground_z: float = -1.7
    room_height: float = 10.0
    n_boxes: tuple = (4, 8)
    box_half_range: tuple = (0.5, 2.0)
    box_height_range: tuple = (1.0, 3.5)
    n_cylinders: tuple = (3, 6)
    cyl_radius_range: tuple = (0.4, 1.8)
    cyl_height_range: tuple = (1.0, 3.5)
    min_origin_clearance: float = 2.5
    placement_margin: float = 1.0
    image_height: int = 32
    image_width: int = 48
    focal: float = 30.0
    cameras: tuple = (
        CameraRig((0.2, 0.0, 0.0), 0.0, -0.2),
        CameraRig((-0.2, 0.0, 0.0), np.pi, -0.2),
    )
    n_azimuth: int = 96
    n_elevation: int = 20
    elevation_range: tuple = (-0.45, 0.12)
    max_range: float = 60.0
    fog_k: float = 0.08
    noise_sigma: float = 0.02
    color_jitter: float = 0.08

    @property
    def intrinsics(self):
        return CameraIntrinsics(
            fx=self.focal,
            fy=self.focal,
            cx=(self.image_width - 1) / 2.0,
            cy=(self.image_height - 1) / 2.0,
            width=self.image_width,
            height=self.image_height,
        )


_CLASS_COLORS = np.array(
    [
        [0.35, 0.42, 0.32],  # ground
        [0.55, 0.48, 0.38],  # wall
        [0.78, 0.22, 0.18],  # box
        [0.18, 0.32, 0.82],  # cylinder
    ]
)


def camera_extrinsic(rig):
    """World-to-camera transform for a yaw/pitch rig pose."""
    cp, sp = np.cos(rig.pitch), np.sin(rig.pitch)
    cy, sy = np.cos(rig.yaw), np.sin(rig.yaw)
    forward = np.array([cp * cy, cp * sy, sp])
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r_cam_to_world = np.stack([right, down, forward], axis=1)
    rot = r_cam_to_world.T
    pos = np.asarray(rig.position, dtype=np.float64)
    return RigidTransform(rot, -rot @ pos)


# -- scene assembly -----------------------------------------------------------


def _room_surfaces(config, rng):
    e = config.extent
    z0 = config.ground_z
    z1 = z0 + config.room_height
    jit = lambda c: np.clip(c + rng.uniform(-config.color_jitter, config.color_jitter, 3), 0.05, 0.95)
    surfaces = [
        HorizontalRect(z0, (-e, e), (-e, e), 0, jit(_CLASS_COLORS[0])),
        HorizontalRect(z1, (-e, e), (-e, e), 1, jit(_CLASS_COLORS[1]) * 0.6),
    ]
    for axis, coord in ((0, -e), (0, e), (1, -e), (1, e)):
        surfaces.append(VerticalRect(axis, coord, (-e, e), (z0, z1), 1, jit(_CLASS_COLORS[1])))
    return surfaces


def _place_objects(config, rng):
    """Sample non-overlapping boxes and cylinders standing on the ground."""
    surfaces = []
    occupied = []  # (x, y, bounding radius)
    n_box = int(rng.integers(config.n_boxes[0], config.n_boxes[1] + 1))
    n_cyl = int(rng.integers(config.n_cylinders[0], config.n_cylinders[1] + 1))
    span = config.extent - config.placement_margin

    def try_place(radius):
        for _ in range(200):
            x = rng.uniform(-span + radius, span - radius)
            y = rng.uniform(-span + radius, span - radius)
            if np.hypot(x, y) < config.min_origin_clearance + radius:
                continue
            if all(np.hypot(x - ox, y - oy) > radius + orad + 0.3 for ox, oy, orad in occupied):
                occupied.append((x, y, radius))
                return x, y
        raise RuntimeError("object placement failed after bounded retries")

    for _ in range(n_box):
        hx = rng.uniform(*config.box_half_range)
        hy = rng.uniform(*config.box_half_range)
        h = rng.uniform(*config.box_height_range)
        x, y = try_place(np.hypot(hx, hy))
        color = np.clip(
            _CLASS_COLORS[2] + rng.uniform(-config.color_jitter, config.color_jitter, 3), 0.05, 0.95
        )
        surfaces.append(
            Box(
                np.array([x - hx, y - hy, config.ground_z]),
                np.array([x + hx, y + hy, config.ground_z + h]),
                2,
                color,
            )
        )
    for _ in range(n_cyl):
        r = rng.uniform(*config.cyl_radius_range)
        h = rng.uniform(*config.cyl_height_range)
        x, y = try_place(r)
        color = np.clip(
            _CLASS_COLORS[3] + rng.uniform(-config.color_jitter, config.color_jitter, 3), 0.05, 0.95
        )
        surfaces.append(
            Cylinder(x, y, (config.ground_z, config.ground_z + h), r, 3, color)
        )
    return surfaces


def _lidar_directions(config):
    az = np.linspace(0.0, 2.0 * np.pi, config.n_azimuth, endpoint=False)
    el = np.linspace(config.elevation_range[0], config.elevation_range[1], config.n_elevation)
    aa, ee = np.meshgrid(az, el, indexing="ij")
    aa, ee = aa.ravel(), ee.ravel()
    return np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=1)


@dataclass
class SceneSample:
    """One generated scene: geometry, renders, and pairing metadata."""

    points: np.ndarray
    labels: np.ndarray
    images: list
    depth_maps: list
    class_maps: list
    intrinsics: list
    extrinsics: list
    visibility: np.ndarray  # (N, n_views) bool
    surfaces: list
    seed: int

    @property
    def num_views(self):
        return len(self.images)

    def cloud(self):
        return PointCloud(self.points, self.labels)


def generate_scene(config, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    surfaces = _room_surfaces(config, rng) + _place_objects(config, rng)

    dirs = _lidar_directions(config)
    origins = np.zeros_like(dirs)
    t, sid = cast_rays(surfaces, origins, dirs)
    hit = np.isfinite(t) & (t <= config.max_range)
    points = dirs[hit] * t[hit, None]
    labels = np.array([surfaces[s].cls for s in sid[hit]], dtype=np.int64)

    colors = np.stack([s.color for s in surfaces])
    classes = np.array([s.cls for s in surfaces], dtype=np.int64)

    images, depth_maps, class_maps, intr, extr = [], [], [], [], []
    k = config.intrinsics
    for rig in config.cameras:
        ext = camera_extrinsic(rig)
        vv, uu = np.mgrid[0 : k.height, 0 : k.width]
        cam_dirs = np.stack(
            [
                (uu.ravel() - k.cx) / k.fx,
                (vv.ravel() - k.cy) / k.fy,
                np.ones(k.height * k.width),
            ],
            axis=1,
        )
        world_dirs = _rotate_rows(cam_dirs, ext.rotation)  # rows @ R == (R.T @ col).T
        cam_pos = ext.inverse().translation
        o = np.broadcast_to(cam_pos, world_dirs.shape)
        tc, sc = cast_rays(surfaces, o, world_dirs)
        depth = tc.reshape(k.height, k.width)  # camera-frame z (dirs have z_cam = 1)
        cls_map = classes[np.maximum(sc, 0)].reshape(k.height, k.width)
        cls_map = np.where(np.isfinite(depth), cls_map, -1)
        dist = tc * np.linalg.norm(world_dirs, axis=1)
        fog = 1.0 / (1.0 + config.fog_k * dist)
        base = colors[np.maximum(sc, 0)] * fog[:, None]
        noise = rng.normal(0.0, config.noise_sigma, base.shape)
        img = np.clip(base + noise, 0.0, 1.0).reshape(k.height, k.width, 3)
        images.append(img)
        depth_maps.append(depth)
        class_maps.append(cls_map)
        intr.append(k)
        extr.append(ext)

    visibility = np.zeros((points.shape[0], len(config.cameras)), dtype=bool)
    for view, ext in enumerate(extr):
        idx, _, _, _ = project_point_arrays(points, ext, k)
        if idx.size == 0:
            continue
        cam_pos = ext.inverse().translation
        d = points[idx] - cam_pos
        th, _ = cast_rays(surfaces, np.broadcast_to(cam_pos, d.shape), d)
        seen = np.abs(th - 1.0) * np.linalg.norm(d, axis=1) < 1e-6
        visibility[idx[seen], view] = True

    return SceneSample(
        points, labels, images, depth_maps, class_maps, intr, extr, visibility, surfaces, seed
    )


# -- consistency checking -----------------------------------------------------


@dataclass
class ConsistencyReport:
    max_discrepancy: float
    violations: int
    checked: int
    class_agreement: float


def scene_consistency_check(sample):
    """Cross-validate the stored renders against the surface geometry.

    For every LiDAR point visible in a view: recast the exact camera ray
    through the point (sub-pixel) and measure the metric discrepancy, and
    re-render the depth texel the point rounds into, counting a violation
    when the stored value disagrees beyond 1e-6 m.  Occluded points are
    exempt.  Also reports class agreement between points and the class map
    away from class boundaries.
    """
    max_disc = 0.0
    violations = 0
    checked = 0
    agree = 0
    agree_total = 0
    for view in range(sample.num_views):
        k = sample.intrinsics[view]
        ext = sample.extrinsics[view]
        cam_pos = ext.inverse().translation
        idx, u, v, _ = project_point_arrays(sample.points, ext, k)
        if idx.size == 0:
            continue
        vis = sample.visibility[idx, view]
        idx, u, v = idx[vis], u[vis], v[vis]
        if idx.size == 0:
            continue
        checked += idx.size

        d = sample.points[idx] - cam_pos
        th, _ = cast_rays(sample.surfaces, np.broadcast_to(cam_pos, d.shape), d)
        disc = np.abs(th - 1.0) * np.linalg.norm(d, axis=1)
        max_disc = max(max_disc, float(disc.max()))

        rows = round_pixel(v, k.height)
        cols = round_pixel(u, k.width)
        cam_dirs = np.stack(
            [(cols - k.cx) / k.fx, (rows - k.cy) / k.fy, np.ones(rows.size)], axis=1
        )
        world_dirs = _rotate_rows(cam_dirs, ext.rotation)
        texel_t, _ = cast_rays(
            sample.surfaces, np.broadcast_to(cam_pos, world_dirs.shape), world_dirs
        )
        stored = sample.depth_maps[view][rows, cols]
        violations += int((np.abs(stored - texel_t) > 1e-6).sum())

        cls_map = sample.class_maps[view]
        pad = np.pad(cls_map, 1, mode="edge")
        interior = np.ones_like(cls_map, dtype=bool)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                interior &= pad[1 + dr : 1 + dr + cls_map.shape[0], 1 + dc : 1 + dc + cls_map.shape[1]] == cls_map
        on_interior = interior[rows, cols]
        agree += int((sample.labels[idx][on_interior] == cls_map[rows, cols][on_interior]).sum())
        agree_total += int(on_interior.sum())

    agreement = agree / agree_total if agree_total else 1.0
    return ConsistencyReport(max_disc, violations, checked, agreement)


# -- serialization ------------------------------------------------------------


def _surface_rows(surfaces):
    """Fixed 12-wide layout: [kind, 7 params, class, r, g, b]."""
    rows = []
    for s in surfaces:
        if isinstance(s, HorizontalRect):
            params = [s.z, *s.x_range, *s.y_range, 0.0, 0.0]
            kind = 0.0
        elif isinstance(s, VerticalRect):
            params = [float(s.axis), s.coord, *s.lateral_range, *s.z_range, 0.0]
            kind = 1.0
        elif isinstance(s, Box):
            params = [*s.lo, *s.hi, 0.0]
            kind = 2.0
        elif isinstance(s, Cylinder):
            params = [s.cx, s.cy, *s.z_range, s.radius, 0.0, 0.0]
            kind = 3.0
        else:
            raise TypeError(f"unknown surface {type(s)}")
        rows.append([kind, *params, float(s.cls), *s.color])
    return np.array(rows) if rows else np.zeros((0, 12))


def _surfaces_from_rows(rows):
    surfaces = []
    for r in rows:
        kind = int(r[0])
        p = r[1:8]
        cls = int(r[8])
        color = np.array(r[9:12])
        if kind == 0:
            surfaces.append(HorizontalRect(p[0], (p[1], p[2]), (p[3], p[4]), cls, color))
        elif kind == 1:
            surfaces.append(VerticalRect(int(p[0]), p[1], (p[2], p[3]), (p[4], p[5]), cls, color))
        elif kind == 2:
            surfaces.append(Box(np.array(p[0:3]), np.array(p[3:6]), cls, color))
        elif kind == 3:
            surfaces.append(Cylinder(p[0], p[1], (p[2], p[3]), p[4], cls, color))
        else:
            raise ValueError(f"unknown surface kind {kind}")
    return surfaces


def dump_scene(sample, path):
    """Serialize a scene into the shared tensor-container format."""
    tensors = {
        "meta": np.array([float(sample.num_views), float(sample.seed)]),
        "points": sample.points,
        "labels": sample.labels.astype(np.float64),
        "visibility": sample.visibility.astype(np.float64),
        "surfaces": _surface_rows(sample.surfaces),
    }
    for i in range(sample.num_views):
        k = sample.intrinsics[i]
        tensors[f"view{i}/image"] = sample.images[i]
        tensors[f"view{i}/depth"] = sample.depth_maps[i]
        tensors[f"view{i}/classes"] = sample.class_maps[i].astype(np.float64)
        tensors[f"view{i}/intrinsics"] = np.array(
            [k.fx, k.fy, k.cx, k.cy, float(k.width), float(k.height)]
        )
        tensors[f"view{i}/rotation"] = sample.extrinsics[i].rotation
        tensors[f"view{i}/translation"] = sample.extrinsics[i].translation
    save_tensors(path, tensors)


def load_scene(path):
    tensors = load_tensors(path)
    n_views = int(tensors["meta"][0])
    images, depths, cls_maps, intr, extr = [], [], [], [], []
    for i in range(n_views):
        images.append(tensors[f"view{i}/image"])
        depths.append(tensors[f"view{i}/depth"])
        cls_maps.append(tensors[f"view{i}/classes"].astype(np.int64))
        fx, fy, cx, cy, w, h = tensors[f"view{i}/intrinsics"]
        intr.append(CameraIntrinsics(fx, fy, cx, cy, int(w), int(h)))
        extr.append(RigidTransform(tensors[f"view{i}/rotation"], tensors[f"view{i}/translation"]))
    return SceneSample(
        tensors["points"],
        tensors["labels"].astype(np.int64),
        images,
        depths,
        cls_maps,
        intr,
        extr,
        tensors["visibility"].astype(bool),
        _surfaces_from_rows(tensors["surfaces"]),
        int(tensors["meta"][1]),
    )


# -- portable image dump ------------------------------------------------------


def write_ppm(path, image):
    """Write an (H, W, 3) float image in [0, 1] as binary P6."""
    img = np.asarray(image, dtype=np.float64)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"P6":
            raise ValueError("not a binary PPM file")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = map(int, line.split())
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / maxval
