"""Rate-region geometry: cuboids and downward-closed time-sharing polytopes.

Regions keep both a vertex list and a half-space list ``A x <= b``; the
half-spaces always include nonnegativity of every rate.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .bounds import inner_bound, outer_bound, psk_interferer_rate, tin_bound
from .coeffs import CoefficientTable

MEMBERSHIP_SLACK = 1e-9
KINDS = ("outer-cuboid", "tin-cuboid", "timeshare-polytope")


@dataclasses.dataclass(frozen=True)
class RateTuple:
    r: np.ndarray
    stderr: np.ndarray | None = None  # Monte-Carlo standard error per coordinate

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if np.any(r < 0):
            raise ValueError("rates must be >= 0")
        object.__setattr__(self, "r", r)
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))


@dataclasses.dataclass
class RateRegion:
    kind: str
    vertices: np.ndarray  # (V, K)
    A: np.ndarray  # (H, K)
    b: np.ndarray  # (H,)
    tolerances: np.ndarray | None = None  # per-vertex MC tolerance, (V, K)
    provenance: dict = dataclasses.field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def halfspaces(self) -> list[tuple[np.ndarray, float]]:
        return [(a, float(b)) for a, b in zip(self.A, self.b)]

    def to_json(self, path=None) -> dict:
        payload = {
            "kind": self.kind,
            "vertices": self.vertices.tolist(),
            "halfspaces": [{"normal": a.tolist(), "offset": float(b)} for a, b in zip(self.A, self.b)],
            "tolerances": None if self.tolerances is None else self.tolerances.tolist(),
            "provenance": self.provenance,
        }
        if path is not None:
            Path(path).write_text(json.dumps(payload, indent=2))
        return payload

    @classmethod
    def from_json(cls, data) -> "RateRegion":
        if not isinstance(data, dict):
            data = json.loads(Path(data).read_text())
        A = np.array([h["normal"] for h in data["halfspaces"]], dtype=float)
        b = np.array([h["offset"] for h in data["halfspaces"]], dtype=float)
        tol = data.get("tolerances")
        return cls(data["kind"], np.array(data["vertices"], dtype=float), A, b,
                   None if tol is None else np.array(tol), data.get("provenance", {}))

    def facets(self, tol: float = 1e-9) -> list[np.ndarray]:
        """Polygon (ordered vertex array) for every 2-D face of a 3-D region."""
        if self.dim != 3:
            raise ValueError("facets are only produced for 3-D regions")
        out = []
        seen = set()
        for a, b in zip(self.A, self.b):
            on = np.abs(self.vertices @ a - b) <= tol * max(1.0, abs(b))
            idx = tuple(np.flatnonzero(on))
            if len(idx) < 3 or idx in seen:
                continue
            seen.add(idx)
            pts = self.vertices[list(idx)]
            center = pts.mean(axis=0)
            normal = a / np.linalg.norm(a)
            u = pts[0] - center
            if np.linalg.norm(u) == 0:
                u = pts[1] - center
            u = u / np.linalg.norm(u)
            v = np.cross(normal, u)
            ang = np.arctan2((pts - center) @ v, (pts - center) @ u)
            out.append(pts[np.argsort(ang)])
        return out

    def facets_to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["facet", "corner", "r1", "r2", "r3"])
            for f, poly in enumerate(self.facets()):
                for c, p in enumerate(poly):
                    writer.writerow([f, c] + [repr(float(v)) for v in p])


def contains(region: RateRegion, point, slack: float = MEMBERSHIP_SLACK) -> bool:
    x = np.asarray(point, dtype=float)
    return bool(np.all(region.A @ x <= region.b + slack))


def cuboid(edges, kind: str, provenance: dict | None = None) -> RateRegion:
    edges = np.asarray(edges, dtype=float)
    K = edges.size
    if np.any(edges < 0):
        raise ValueError("cuboid edges must be >= 0")
    corners = np.array(list(itertools.product([0.0, 1.0], repeat=K))) * edges
    eye = np.eye(K)
    A = np.vstack([eye, -eye])
    b = np.concatenate([edges, np.zeros(K)])
    return RateRegion(kind, corners, A, b, None, provenance or {})


def outer_region(powers, table: CoefficientTable, sigma_sq: float) -> RateRegion:
    """[0, U_1] x ... x [0, U_K]."""
    K = len(powers)
    if K < 2:
        raise ValueError("need at least two users")
    edges = [outer_bound(k, powers, table, sigma_sq) for k in range(1, K + 1)]
    return cuboid(edges, "outer-cuboid", {"sigma_sq_w": sigma_sq, "powers_w": list(map(float, powers))})


def tin_region(powers, table: CoefficientTable, sigma_sq: float, nli_variances) -> RateRegion:
    """Cuboid of rates all users reach at once when NLI is treated as noise."""
    K = len(powers)
    edges = [tin_bound(k, powers[k - 1], sigma_sq, nli_variances[k - 1]) for k in range(1, K + 1)]
    return cuboid(edges, "tin-cuboid", {
        "sigma_sq_w": sigma_sq,
        "powers_w": list(map(float, powers)),
        "nli_variances_w": list(map(float, nli_variances)),
    })


def timeshare_vertices(powers, table: CoefficientTable, sigma_sq: float, psk_order: int = 16,
                       mc_samples: int = 10**5, seed: int = 0) -> list[RateTuple]:
    """One rate tuple per focus user k.

    The focus coordinate is the inner bound for user k; the others are the
    PSK rates the remaining users get while sending at constant amplitude.
    """
    K = len(powers)
    out = []
    for k in range(1, K + 1):
        r = np.zeros(K)
        se = np.zeros(K)
        r[k - 1] = inner_bound(k, powers, table, sigma_sq)
        for w in range(1, K + 1):
            if w == k:
                continue
            est = psk_interferer_rate(w, k, powers, table, sigma_sq, psk_order, mc_samples,
                                      seed=seed + 1000 * k + w)
            r[w - 1] = max(est.bits, 0.0)
            se[w - 1] = est.stderr
        out.append(RateTuple(r, se))
    return out


def _downward_points(vertices: np.ndarray) -> np.ndarray:
    K = vertices.shape[1]
    masks = np.array(list(itertools.product([0.0, 1.0], repeat=K)))
    pts = (vertices[:, None, :] * masks[None, :, :]).reshape(-1, K)
    return np.unique(np.round(pts, 15), axis=0)


def timeshare_region(vertices, provenance: dict | None = None) -> RateRegion:
    """Downward closure of the convex hull of the vertices and the origin."""
    tuples = [v if isinstance(v, RateTuple) else RateTuple(v) for v in vertices]
    V = np.array([t.r for t in tuples])
    K = V.shape[1]
    tol = None
    if all(t.stderr is not None for t in tuples):
        tol = np.array([t.stderr for t in tuples])
    pts = _downward_points(V)
    active = np.flatnonzero(pts.max(axis=0) > 0)
    A_rows, b_rows = [], []
    eye = np.eye(K)
    for j in range(K):
        A_rows.append(-eye[j])
        b_rows.append(0.0)
        if j not in active:
            A_rows.append(eye[j])
            b_rows.append(0.0)
    if active.size == 1:
        j = active[0]
        A_rows.append(eye[j])
        b_rows.append(pts[:, j].max())
        hull_pts = pts[[np.argmin(pts[:, j]), np.argmax(pts[:, j])]]
    elif active.size > 1:
        sub = pts[:, active]
        hull = ConvexHull(sub)
        for eq in hull.equations:
            normal = np.zeros(K)
            normal[active] = eq[:-1]
            # drop the nonnegativity facets we already have
            if np.count_nonzero(np.abs(eq[:-1]) > 1e-12) == 1 and eq[:-1].min() < 0 \
                    and abs(eq[-1]) < 1e-12:
                continue
            A_rows.append(normal)
            b_rows.append(-eq[-1])
        hull_pts = pts[hull.vertices]
    else:
        hull_pts = np.zeros((1, K))
    A = np.array(A_rows)
    b = np.array(b_rows)
    A, b = _dedupe_halfspaces(A, b)
    return RateRegion("timeshare-polytope", hull_pts, A, b, tol, provenance or {})


def _dedupe_halfspaces(A, b, tol=1e-10):
    """Merge coplanar hull facets (Qhull triangulates planar faces)."""
    norms = np.linalg.norm(A, axis=1)
    A = A / norms[:, None]
    b = b / norms
    keep_A, keep_b = [], []
    for a, c in zip(A, b):
        if any(np.allclose(a, a2, atol=tol) and abs(c - c2) <= tol * max(1, abs(c))
               for a2, c2 in zip(keep_A, keep_b)):
            continue
        keep_A.append(a)
        keep_b.append(c)
    return np.array(keep_A), np.array(keep_b)


def timeshare_point(vertices, weights) -> np.ndarray:
    """sum_j lambda_j v_j for weights on the simplex."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must lie on the probability simplex")
    V = np.array([v.r if isinstance(v, RateTuple) else np.asarray(v, float) for v in vertices])
    return w @ V


def region_subset(inner: RateRegion, outer: RateRegion, slack: float = MEMBERSHIP_SLACK,
                  mc_sigmas: float = 3.0) -> bool:
    """inner is a subset of outer (both convex): every vertex of inner is in outer.

    Vertices estimated by Monte Carlo may overshoot by ``mc_sigmas`` times
    their largest recorded standard error.
    """
    if inner.tolerances is not None and inner.tolerances.size:
        slack = slack + mc_sigmas * float(np.max(inner.tolerances))
    return all(contains(outer, v, slack) for v in inner.vertices)


def max_excess_outside(region: RateRegion, box: RateRegion) -> float:
    """Largest amount by which a vertex of ``region`` violates the half-spaces of ``box``."""
    viol = region.vertices @ box.A.T - box.b[None, :]
    return float(viol.max())
