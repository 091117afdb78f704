"""A synthetic grasping world with an analytic success oracle.

Objects are spheres, boxes and capped cylinders. The toy hand has four planar
fingers hanging off a palm; the two fingers on each side curl towards the palm
midline. A grasp succeeds when every fingertip touches the surface, the palm
hovers in a distance band facing the object, and the fingertips enclose it.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Grasp, GraspDiffError, NormalizationStats, matrix_to_rot6d, random_rotations, rot6d_to_matrix
from .io import read_cloud, write_cloud

KINDS = ("sphere", "box", "cylinder")


class JointLimit(GraspDiffError):
    pass


class FullyOccluded(GraspDiffError):
    pass


class PositiveStarvation(GraspDiffError):
    pass


class EmptyList(GraspDiffError):
    pass


class TooFewGrasps(GraspDiffError):
    pass


# -------------------------------------------------------------------- objects


@dataclass
class ToyObject:
    """Primitive solid. ``size`` is (radius,) for spheres, half extents for
    boxes and (radius, half height) for cylinders whose axis is local z."""

    kind: str
    size: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        self.size = np.asarray(self.size, dtype=np.float64).reshape(-1)
        expected = {"sphere": 1, "box": 3, "cylinder": 2}[self.kind]
        if self.size.shape[0] != expected:
            raise ValueError(f"{self.kind} needs {expected} size parameters")
        if np.any(self.size < 0.03 - 1e-12) or np.any(self.size > 0.15 + 1e-12):
            raise ValueError("object sizes must lie in [0.03, 0.15] m")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def to_local(self, x):
        return (np.asarray(x, dtype=np.float64) - self.translation) @ self.rotation

    def sdf(self, x) -> np.ndarray:
        """Signed distance, negative inside. ``x`` has shape (..., 3)."""
        y = self.to_local(x)
        if self.kind == "sphere":
            return np.linalg.norm(y, axis=-1) - self.size[0]
        if self.kind == "box":
            d = np.abs(y) - self.size
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
            inside = np.minimum(np.max(d, axis=-1), 0.0)
            return outside + inside
        r, h = self.size
        d = np.stack([np.linalg.norm(y[..., :2], axis=-1) - r, np.abs(y[..., 2]) - h], axis=-1)
        return np.minimum(np.max(d, axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)

    def surface_area(self) -> float:
        if self.kind == "sphere":
            return 4 * np.pi * self.size[0] ** 2
        if self.kind == "box":
            a, b, c = self.size
            return 8 * (a * b + b * c + a * c)
        r, h = self.size
        return 2 * np.pi * r * 2 * h + 2 * np.pi * r**2

    def sample_surface(self, n: int, rng: np.random.Generator):
        """Area-uniform surface points and outward normals, both (n, 3) in world frame."""
        if self.kind == "sphere":
            nrm = rng.standard_normal((n, 3))
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
            pts = nrm * self.size[0]
        elif self.kind == "box":
            a, b, c = self.size
            areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
            face = rng.choice(6, size=n, p=areas / areas.sum())
            uv = rng.uniform(-1.0, 1.0, (n, 3)) * self.size
            axis = face // 2
            sign = np.where(face % 2 == 0, 1.0, -1.0)
            pts = uv.copy()
            pts[np.arange(n), axis] = sign * self.size[axis]
            nrm = np.zeros((n, 3))
            nrm[np.arange(n), axis] = sign
        else:
            r, h = self.size
            areas = np.array([2 * np.pi * r * 2 * h, np.pi * r**2, np.pi * r**2])
            part = rng.choice(3, size=n, p=areas / areas.sum())
            theta = rng.uniform(0, 2 * np.pi, n)
            pts = np.zeros((n, 3))
            nrm = np.zeros((n, 3))
            side = part == 0
            pts[side] = np.stack([r * np.cos(theta[side]), r * np.sin(theta[side]), rng.uniform(-h, h, side.sum())], axis=1)
            nrm[side] = np.stack([np.cos(theta[side]), np.sin(theta[side]), np.zeros(side.sum())], axis=1)
            cap = ~side
            rad = r * np.sqrt(rng.random(cap.sum()))
            zs = np.where(part[cap] == 1, h, -h)
            pts[cap] = np.stack([rad * np.cos(theta[cap]), rad * np.sin(theta[cap]), zs], axis=1)
            nrm[cap] = np.stack([np.zeros(cap.sum()), np.zeros(cap.sum()), np.sign(zs)], axis=1)
        return pts @ self.rotation.T + self.translation, nrm @ self.rotation.T

    def translated(self, shift) -> "ToyObject":
        return ToyObject(self.kind, self.size.copy(), self.rotation.copy(), self.translation + np.asarray(shift))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "size": self.size.tolist(),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyObject":
        return cls(d["kind"], d["size"], d["rotation"], d["translation"])


def random_object(rng: np.random.Generator, size_range=(0.03, 0.08), kinds=KINDS) -> ToyObject:
    kind = kinds[rng.integers(len(kinds))]
    n = {"sphere": 1, "box": 3, "cylinder": 2}[kind]
    size = rng.uniform(*size_range, n)
    return ToyObject(kind, size, random_rotations(1, rng)[0], np.zeros(3))


def partial_view(cloud, normals, view_dir, occlusion: float = 0.0):
    """Keep points whose outward normal faces the camera direction.

    ``view_dir`` points from the object towards the camera. Returns the
    retained points, normals and the boolean mask.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape[0] == 0:
        raise FullyOccluded("empty input cloud")
    v = np.asarray(view_dir, dtype=np.float64)
    v = v / np.linalg.norm(v)
    keep = normals @ v > occlusion
    if not keep.any():
        raise FullyOccluded("no point faces the view direction")
    return cloud[keep], normals[keep], keep


# -------------------------------------------------------------------- gripper


@dataclass
class ToyGripper:
    """Four planar fingers; ``k`` joints in total, split evenly across fingers."""

    k: int = 16
    n_fingers: int = 4
    finger_length: float = 0.115
    base_x: float = 0.02
    base_y: float = 0.035
    q_lo: float = 0.0
    q_hi: float = np.pi / 2

    def __post_init__(self):
        if self.k % self.n_fingers:
            raise ValueError("k must be a multiple of the finger count")
        if self.finger_length > 0.12:
            raise ValueError("total finger length is capped at 0.12 m")

    @property
    def joints_per_finger(self) -> int:
        return self.k // self.n_fingers

    def link_lengths(self) -> np.ndarray:
        j = self.joints_per_finger
        if j == 4:
            w = np.array([0.04, 0.03, 0.025, 0.02])
        else:
            w = np.ones(j)
        return self.finger_length * w / w.sum()

    def bases(self) -> np.ndarray:
        """Finger base points in the palm frame, (n_fingers, 3)."""
        out = []
        for i in range(self.n_fingers):
            side = 1.0 if i < self.n_fingers // 2 else -1.0
            m = self.n_fingers // 2
            xs = np.linspace(-self.base_x, self.base_x, m) if m > 1 else np.zeros(1)
            out.append([xs[i % m], side * self.base_y, 0.0])
        return np.array(out)

    def curl_signs(self) -> np.ndarray:
        return -np.sign(self.bases()[:, 1])

    def limits(self):
        return np.full(self.k, self.q_lo), np.full(self.k, self.q_hi)

    def stats(self, p_scale: float = 1.0) -> NormalizationStats:
        lo, hi = self.limits()
        return NormalizationStats(np.zeros(3), p_scale, lo, hi)


def fingertips_local(q, gripper: ToyGripper) -> np.ndarray:
    """Fingertip positions in the palm frame for joint arrays (..., k)."""
    q = np.asarray(q, dtype=np.float64)
    J = gripper.joints_per_finger
    qf = q.reshape(*q.shape[:-1], gripper.n_fingers, J)
    phi = np.cumsum(qf, axis=-1)
    L = gripper.link_lengths()
    along = np.sum(L * np.cos(phi), axis=-1)
    across = np.sum(L * np.sin(phi), axis=-1) * gripper.curl_signs()
    base = gripper.bases()
    return np.stack([np.broadcast_to(base[:, 0], along.shape), base[:, 1] + across, base[:, 2] + along], axis=-1)


def fingertip_fk(g, gripper: ToyGripper, check_limits: bool = True) -> np.ndarray:
    """World fingertip positions: (n_fingers, 3) for one grasp or (n, n_fingers, 3) for a batch."""
    G = g.flatten() if isinstance(g, Grasp) else np.asarray(g, dtype=np.float64)
    p, r, q = G[..., :3], G[..., 3:9], G[..., 9:]
    if q.shape[-1] != gripper.k:
        raise ValueError(f"expected {gripper.k} joints, got {q.shape[-1]}")
    if check_limits and (np.any(q < gripper.q_lo - 1e-9) or np.any(q > gripper.q_hi + 1e-9)):
        raise JointLimit("joint angles outside the gripper limits")
    R = rot6d_to_matrix(r)
    local = fingertips_local(q, gripper)
    return np.einsum("...ij,...fj->...fi", R, local) + p[..., None, :]


# --------------------------------------------------------------------- oracle


@dataclass
class OracleConfig:
    tip_tol: float = 0.008
    palm_min: float = 0.02
    palm_max: float = 0.08
    cone_deg: float = 60.0


def oracle_checks(G, obj: ToyObject, gripper: ToyGripper, cfg: OracleConfig | None = None) -> dict:
    """Each success condition evaluated for a batch of grasps (n, 9+k)."""
    cfg = cfg or OracleConfig()
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    p, r, q = G[:, :3], G[:, 3:9], G[:, 9:]
    q = np.clip(q, gripper.q_lo, gripper.q_hi)
    R = rot6d_to_matrix(r)
    tips = np.einsum("nij,nfj->nfi", R, fingertips_local(q, gripper)) + p[:, None, :]
    tip_sdf = obj.sdf(tips)
    palm_sdf = obj.sdf(p)
    to_center = obj.translation - p
    dist = np.linalg.norm(to_center, axis=1)
    cosang = np.einsum("ni,ni->n", R[:, :, 2], to_center) / np.maximum(dist, 1e-12)
    centroid_sdf = obj.sdf(tips.mean(axis=1))
    return {
        "tips": np.all(np.abs(tip_sdf) <= cfg.tip_tol, axis=1),
        "palm": (palm_sdf >= cfg.palm_min) & (palm_sdf <= cfg.palm_max),
        "approach": cosang >= np.cos(np.deg2rad(cfg.cone_deg)),
        "enclosed": centroid_sdf <= 0.0,
    }


def oracle_labels(G, obj: ToyObject, gripper: ToyGripper, cfg: OracleConfig | None = None) -> np.ndarray:
    c = oracle_checks(G, obj, gripper, cfg)
    return c["tips"] & c["palm"] & c["approach"] & c["enclosed"]


def oracle_label(g, obj: ToyObject, gripper: ToyGripper, cfg: OracleConfig | None = None) -> bool:
    G = g.flatten() if isinstance(g, Grasp) else np.asarray(g)
    return bool(oracle_labels(G[None, :], obj, gripper, cfg)[0])


# --------------------------------------------------------- grasp proposals


def random_grasps(n: int, gripper: ToyGripper, rng: np.random.Generator, half_width: float = 0.2) -> np.ndarray:
    """Uninformed grasps: palm uniform in a cube around the origin, Haar rotation, uniform joints."""
    p = rng.uniform(-half_width, half_width, (n, 3))
    r = matrix_to_rot6d(random_rotations(n, rng))
    q = rng.uniform(gripper.q_lo, gripper.q_hi, (n, gripper.k))
    return np.concatenate([p, r, q], axis=1)


def _ray_surface(obj: ToyObject, dirs: np.ndarray, iters: int = 40) -> np.ndarray:
    """Distance from the object center to its surface along each direction."""
    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), 1.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = obj.sdf(obj.translation + dirs * mid[:, None]) < 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_grasps_near(obj: ToyObject, n: int, gripper: ToyGripper, rng: np.random.Generator, band=(0.02, 0.08)) -> np.ndarray:
    """Random grasps that know where the object is: palm uniform over the
    oracle's distance band around the surface, Haar rotation, uniform joints."""
    # palm uniform over the shell, by rejection from a bounding cube
    reach = float(np.linalg.norm(obj.size)) + band[1]
    kept, have = [], 0
    while have < n:
        x = obj.translation + rng.uniform(-reach, reach, (max(4 * (n - have), 64), 3))
        d = obj.sdf(x)
        x = x[(d >= band[0]) & (d <= band[1])]
        kept.append(x)
        have += len(x)
    p = np.concatenate(kept)[:n]
    r = matrix_to_rot6d(random_rotations(n, rng))
    q = rng.uniform(gripper.q_lo, gripper.q_hi, (n, gripper.k))
    return np.concatenate([p, r, q], axis=1)


def curl_profile(gripper: ToyGripper) -> np.ndarray:
    """Relative joint angles along a finger when it closes; the base joint leads."""
    J = gripper.joints_per_finger
    return np.array([1.0, 0.8, 0.65, 0.5]) if J == 4 else np.linspace(1.0, 0.5, J)


def propose_grasps(obj: ToyObject, gripper: ToyGripper, m: int, rng: np.random.Generator, palm_band=(0.025, 0.07), max_tilt_deg: float = 25.0, n_grid: int = 24, random_profile: bool = False) -> np.ndarray:
    """Constructive candidates around ``obj``: palm outside the surface facing
    the center, each finger's curl solved by bisection so the tip meets the surface.

    Fingers close along :func:`curl_profile` scaled per finger; with
    ``random_profile`` every joint gets its own random weight instead.
    Candidates are not guaranteed to pass the oracle."""
    u = _unit(rng.standard_normal((m, 3)))
    surf = _ray_surface(obj, u)
    p = obj.translation + u * (surf + rng.uniform(*palm_band, m))[:, None]
    # approach axis: towards the center, tilted by a random small angle
    tilt = np.deg2rad(max_tilt_deg) * np.sqrt(rng.random(m))
    perp = _unit(np.cross(u, rng.standard_normal((m, 3))))
    z = _unit(-u * np.cos(tilt)[:, None] + perp * np.sin(tilt)[:, None])
    x = _unit(np.cross(z, rng.standard_normal((m, 3))))
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=-1)

    J, F = gripper.joints_per_finger, gripper.n_fingers
    if random_profile:
        w = rng.uniform(0.3, 1.0, (m, F, J))
        w /= w.max(axis=-1, keepdims=True)
    else:
        w = np.broadcast_to(curl_profile(gripper), (m, F, J))
    base = gripper.bases()
    signs = gripper.curl_signs()
    L = gripper.link_lengths()

    def tip_sdf(s):
        phi = np.cumsum(w * s[..., None], axis=-1)
        along = np.sum(L * np.cos(phi), axis=-1)
        across = np.sum(L * np.sin(phi), axis=-1) * signs
        local = np.stack([np.broadcast_to(base[:, 0], along.shape), base[:, 1] + across, along], axis=-1)
        world = np.einsum("mij,mfj->mfi", R, local) + p[:, None, :]
        return obj.sdf(world)

    # first sign change of the tip SDF along the curl scale, then bisection
    grid = np.linspace(0.0, gripper.q_hi, n_grid)
    vals = np.stack([tip_sdf(np.full((m, F), s_)) for s_ in grid], axis=-1)
    change = np.signbit(vals[..., 1:]) != np.signbit(vals[..., :-1])
    valid = np.all(change.any(axis=-1), axis=1)
    first = np.argmax(change, axis=-1)
    lo, hi = grid[first], grid[first + 1]
    lo_neg = np.signbit(np.take_along_axis(vals, first[..., None], axis=-1)[..., 0])
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        same = np.signbit(tip_sdf(mid)) == lo_neg
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    s = 0.5 * (lo + hi)
    q = np.clip((w * s[..., None]).reshape(m, gripper.k), gripper.q_lo, gripper.q_hi)
    G = np.concatenate([p, matrix_to_rot6d(R), q], axis=1)
    return G[valid]


# ------------------------------------------------------------------ datasets


@dataclass
class GenConfig:
    size_range: tuple = (0.03, 0.08)
    n_surface: int = 2048
    occlusion: float = 0.0
    pos_fraction: float = 0.4
    random_neg_fraction: float = 0.3
    jitter_sigma: tuple = (0.02, 0.2, 0.25)
    random_half_width: float = 0.2
    test_fraction: float = 0.2
    max_rounds: int = 200

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size_range"] = list(self.size_range)
        d["jitter_sigma"] = list(self.jitter_sigma)
        return d


@dataclass
class LabeledGrasp:
    grasp: Grasp
    success: bool
    provenance: str


@dataclass
class View:
    object_id: int
    view_id: int
    view_dir: np.ndarray
    obj: ToyObject
    cloud: np.ndarray


@dataclass
class ToyDataset:
    objects: list
    views: list
    grasps: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray
    view_index: np.ndarray
    split: dict
    seed: int
    config: dict = field(default_factory=dict)
    k: int = 16

    @property
    def object_ids(self) -> np.ndarray:
        return np.array([self.views[v].object_id for v in self.view_index], dtype=int)

    def records(self):
        for g, y, prov in zip(self.grasps, self.labels, self.provenance):
            yield LabeledGrasp(Grasp.from_vector(g), bool(y), str(prov))

    def mask(self, split: str) -> np.ndarray:
        return np.isin(self.object_ids, self.split[split])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([o.to_dict() for o in self.objects], sort_keys=True).encode())
        for v in self.views:
            h.update(np.ascontiguousarray(v.cloud, dtype="<f8").tobytes())
            h.update(json.dumps(v.obj.to_dict(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.grasps, dtype="<f8").tobytes())
        h.update(self.labels.astype(np.uint8).tobytes())
        h.update("|".join(self.provenance.tolist()).encode())
        h.update(np.ascontiguousarray(self.view_index, dtype="<i8").tobytes())
        h.update(json.dumps(self.split, sort_keys=True).encode())
        return h.hexdigest()

    def arrays(self, split: str | None, features: np.ndarray, positives_only: bool = False) -> dict:
        """Training arrays for one split; ``features`` holds one BPS row per view."""
        m = np.ones(len(self.labels), dtype=bool) if split is None else self.mask(split)
        if positives_only:
            m &= self.labels
        return {
            "features": features,
            "grasps": self.grasps[m],
            "feature_index": self.view_index[m],
            "labels": self.labels[m],
            "object_ids": self.object_ids[m],
        }

    def views_in(self, split: str) -> list[int]:
        ids = set(self.split[split])
        return [i for i, v in enumerate(self.views) if v.object_id in ids]


def _gen_object(args):
    obj_id, seed_seq, views_per_object, grasps_per_view, gripper, oracle_cfg, cfg = args
    rng = np.random.default_rng(seed_seq)
    base = random_object(rng, cfg.size_range)
    full, normals = base.sample_surface(cfg.n_surface, rng)
    out_views, rows = [], []
    n_pos = int(round(cfg.pos_fraction * grasps_per_view))
    n_rand = int(round(cfg.random_neg_fraction * grasps_per_view))
    n_jit = grasps_per_view - n_pos - n_rand
    for v in range(views_per_object):
        for _ in range(100):
            view_dir = _unit(rng.standard_normal(3))
            try:
                cloud, _, _ = partial_view(full, normals, view_dir, cfg.occlusion)
                break
            except FullyOccluded:
                continue
        center = cloud.mean(axis=0)
        obj = base.translated(-center)
        cloud = cloud - center
        pos = _collect(lambda m: propose_grasps(obj, gripper, m, rng), obj, gripper, oracle_cfg, n_pos, True, cfg.max_rounds, "positives")
        rand = _collect(lambda m: random_grasps(m, gripper, rng, cfg.random_half_width), obj, gripper, oracle_cfg, n_rand, False, cfg.max_rounds, "random negatives")
        sig = np.concatenate([np.full(3, cfg.jitter_sigma[0]), np.full(6, cfg.jitter_sigma[1]), np.full(gripper.k, cfg.jitter_sigma[2])])

        def jitter(m):
            src = pos[rng.integers(len(pos), size=m)]
            J = src + rng.standard_normal(src.shape) * sig
            J[:, 9:] = np.clip(J[:, 9:], gripper.q_lo, gripper.q_hi)
            return J

        jit = _collect(jitter, obj, gripper, oracle_cfg, n_jit, False, cfg.max_rounds, "jitter negatives") if n_pos else np.zeros((0, 9 + gripper.k))
        out_views.append(View(obj_id, v, view_dir, obj, cloud))
        rows.append((v, pos, rand, jit))
    return base, out_views, rows


def _collect(propose, obj, gripper, oracle_cfg, target, want, max_rounds, what):
    kept, have, tried = [], 0, 0
    if target == 0:
        return np.zeros((0, 9 + gripper.k))
    for _ in range(max_rounds):
        rate = (have + 1) / (tried + 1)
        m = int(min(4096, max(64, 1.5 * (target - have) / rate)))
        cand = propose(m)
        tried += m
        if len(cand) == 0:
            continue
        ok = oracle_labels(cand, obj, gripper, oracle_cfg) == want
        kept.append(cand[ok])
        have += int(ok.sum())
        if have >= target:
            return np.concatenate(kept)[:target]
    raise PositiveStarvation(f"could only find {have}/{target} {what}")


def gen_dataset(n_objects: int, views_per_object: int, grasps_per_view: int, seed: int, gripper: ToyGripper | None = None, oracle_cfg: OracleConfig | None = None, cfg: GenConfig | None = None, workers: int = 1) -> ToyDataset:
    """Generate labeled grasps on partial views of random primitives.

    Per view: constructive positives verified by the oracle, uniform random
    failures and jittered positives that fail. Objects are split into
    train/test by identity.
    """
    if min(n_objects, views_per_object, grasps_per_view) < 1:
        raise ValueError("counts must be >= 1")
    gripper = gripper or ToyGripper()
    oracle_cfg = oracle_cfg or OracleConfig()
    cfg = cfg or GenConfig()
    seqs = np.random.SeedSequence(seed).spawn(n_objects + 1)
    jobs = [(i, seqs[i], views_per_object, grasps_per_view, gripper, oracle_cfg, cfg) for i in range(n_objects)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_gen_object, jobs))
    else:
        results = [_gen_object(j) for j in jobs]

    objects, views, G, Y, prov, vidx = [], [], [], [], [], []
    for base, obj_views, rows in results:
        objects.append(base)
        for view, (_, pos, rand, jit) in zip(obj_views, rows):
            vi = len(views)
            views.append(view)
            for arr, y, tag in ((pos, True, "sampled-positive"), (rand, False, "sampled-negative"), (jit, False, "jitter-negative")):
                G.append(arr)
                Y.append(np.full(len(arr), y))
                prov.extend([tag] * len(arr))
                vidx.append(np.full(len(arr), vi))
    split_rng = np.random.default_rng(seqs[-1])
    order = split_rng.permutation(n_objects)
    n_test = int(round(cfg.test_fraction * n_objects)) if n_objects > 1 else 0
    split = {"train": sorted(int(i) for i in order[n_test:]), "test": sorted(int(i) for i in order[:n_test])}
    return ToyDataset(
        objects,
        views,
        np.concatenate(G),
        np.concatenate(Y).astype(bool),
        np.array(prov),
        np.concatenate(vidx).astype(int),
        split,
        int(seed),
        {"gen": cfg.to_dict(), "oracle": asdict(oracle_cfg), "gripper": asdict(gripper)},
        gripper.k,
    )


def save_dataset(ds: ToyDataset, root) -> str:
    """Write the directory layout and return the content hash."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, obj in enumerate(ds.objects):
        views = [
            {"view_id": v.view_id, "view_dir": v.view_dir.tolist(), "pose_in_view_frame": v.obj.to_dict(), "cloud": f"cloud_{i:04d}_{v.view_id:02d}.txt"}
            for v in ds.views
            if v.object_id == i
        ]
        (root / f"object_{i:04d}.json").write_text(json.dumps({"object_id": i, **obj.to_dict(), "views": views}, indent=1) + "\n")
    for v in ds.views:
        write_cloud(root / f"cloud_{v.object_id:04d}_{v.view_id:02d}.txt", v.cloud)
    records = [
        {"view": int(vi), "p": g[:3].tolist(), "r": g[3:9].tolist(), "q": g[9:].tolist(), "success": bool(y), "provenance": str(pv)}
        for g, y, pv, vi in zip(ds.grasps, ds.labels, ds.provenance, ds.view_index)
    ]
    (root / "grasps.json").write_text(json.dumps(records) + "\n")
    content = ds.content_hash()
    manifest = {
        "seed": ds.seed,
        "counts": {
            "objects": len(ds.objects),
            "views": len(ds.views),
            "grasps": int(len(ds.labels)),
            "positives": int(ds.labels.sum()),
        },
        "split": ds.split,
        "config": ds.config,
        "k": ds.k,
        "content_hash": content,
    }
    (root / "dataset.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return content


def load_dataset(root) -> ToyDataset:
    root = Path(root)
    manifest = json.loads((root / "dataset.json").read_text())
    objects, views = [], []
    for i in range(manifest["counts"]["objects"]):
        meta = json.loads((root / f"object_{i:04d}.json").read_text())
        objects.append(ToyObject.from_dict(meta))
        for vm in meta["views"]:
            views.append(View(i, vm["view_id"], np.array(vm["view_dir"]), ToyObject.from_dict(vm["pose_in_view_frame"]), read_cloud(root / vm["cloud"])))
    records = json.loads((root / "grasps.json").read_text())
    G = np.array([r["p"] + r["r"] + r["q"] for r in records], dtype=np.float64)
    ds = ToyDataset(
        objects,
        views,
        G,
        np.array([r["success"] for r in records], dtype=bool),
        np.array([r["provenance"] for r in records]),
        np.array([r["view"] for r in records], dtype=int),
        {k: list(v) for k, v in manifest["split"].items()},
        manifest["seed"],
        manifest.get("config", {}),
        manifest.get("k", 16),
    )
    return ds


# -------------------------------------------------------------------- metrics


def success_rate(grasps, obj: ToyObject, gripper: ToyGripper, cfg: OracleConfig | None = None) -> float:
    """Percentage of grasps the oracle labels successful."""
    G = np.asarray([g.flatten() for g in grasps] if len(grasps) and isinstance(grasps[0], Grasp) else grasps, dtype=np.float64)
    if G.size == 0:
        raise EmptyList("success rate of an empty grasp list")
    return 100.0 * float(np.mean(oracle_labels(G, obj, gripper, cfg)))


def diversity_entropy(grasps, gripper: ToyGripper | None = None, bins: int = 10):
    """Mean and std over joints of the per-joint histogram entropy (nats)."""
    gripper = gripper or ToyGripper()
    G = np.asarray([g.flatten() for g in grasps] if len(grasps) and isinstance(grasps[0], Grasp) else grasps, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] < 2:
        raise TooFewGrasps("diversity needs at least two grasps")
    Q = G[:, 9:]
    lo, hi = gripper.limits()
    ent = np.empty(Q.shape[1])
    for j in range(Q.shape[1]):
        idx = np.clip(((Q[:, j] - lo[j]) / (hi[j] - lo[j]) * bins).astype(int), 0, bins - 1)
        counts = np.bincount(idx, minlength=bins)
        pmf = counts[counts > 0] / Q.shape[0]
        ent[j] = float(-np.sum(pmf * np.log(pmf)))
    return float(ent.mean()), float(ent.std())
