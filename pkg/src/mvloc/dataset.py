"""File formats for the localization pipeline.

All files are whitespace-separated text; blank lines and ``#`` comments are
ignored. Identifiers are arbitrary whitespace-free tokens.

* anchors / ground truth: ``id qw qx qy qz tx ty tz`` (world-to-camera pose,
  scalar-first unit quaternion)
* intrinsics: ``id fx fy cx cy``
* neighbors: ``query_id anchor_id score``
* matches (one file per query-anchor pair, ``<query>__<anchor>.txt`` in the
  match directory): ``kp_id u_q v_q u_a v_a`` in pixel coordinates

The manifest is a JSON object with keys ``anchors``, ``intrinsics``,
``neighbors``, ``matches_dir`` and optional ``ground_truth``; relative paths
resolve against the manifest's directory. Writers emit floats with 17
significant digits, so a save/load round trip is bit-exact.
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError
from .geometry import Pose, quat_to_rotation, rotation_to_quat
from .relpose import MatchSet

# Sanity bound on normalized coordinates; larger values mean broken
# intrinsics rather than a plausible field of view.
FEATURE_BOUND = 10.0

FLOAT_FMT = ".17g"


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def normalize(self, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        return (pixels - [self.cx, self.cy]) / [self.fx, self.fy]

    def denormalize(self, feats):
        feats = np.asarray(feats, dtype=np.float64)
        return feats * [self.fx, self.fy] + [self.cx, self.cy]


@dataclass(frozen=True)
class DatasetManifest:
    anchors: Path
    intrinsics: Path
    neighbors: Path
    matches_dir: Path
    ground_truth: Path = None


@dataclass(frozen=True)
class Dataset:
    anchors: dict
    intrinsics: dict
    neighbors: dict
    matches_dir: Path
    ground_truth: dict = None

    def match_path(self, query_id, anchor_id):
        return self.matches_dir / f"{query_id}__{anchor_id}.txt"

    def load_matches(self, query_id, anchor_id):
        """Normalized MatchSet (with keypoint ids) for a query-anchor pair."""
        if anchor_id not in self.anchors:
            raise ConfigurationError(f"unknown anchor id {anchor_id!r}")
        if query_id not in self.intrinsics:
            raise ConfigurationError(f"no intrinsics for query {query_id!r}")
        if anchor_id not in self.intrinsics:
            raise ConfigurationError(f"no intrinsics for anchor {anchor_id!r}")
        path = self.match_path(query_id, anchor_id)
        kp_ids, uv_q, uv_a = parse_matches(path)
        feats_q = self.intrinsics[query_id].normalize(uv_q)
        feats_a = self.intrinsics[anchor_id].normalize(uv_a)
        for label, feats in (("query", feats_q), ("anchor", feats_a)):
            if len(feats) and np.abs(feats).max() >= FEATURE_BOUND:
                raise ParseError(
                    path, 0, f"normalized {label} feature exceeds |{FEATURE_BOUND}|"
                )
        return MatchSet(feats_q, feats_a, keypoint_ids=kp_ids)


def _data_lines(path):
    try:
        with open(path) as handle:
            raw = handle.readlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(raw, start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield line_no, stripped


def _parse_floats(path, line_no, tokens):
    values = []
    for token in tokens:
        try:
            value = float(token)
        except ValueError:
            raise ParseError(path, line_no, f"not a number: {token!r}") from None
        if not np.isfinite(value):
            raise ParseError(path, line_no, f"non-finite value: {token!r}")
        values.append(value)
    return values


def parse_poses(path):
    """Parse an anchors / ground-truth file into {id: Pose}."""
    poses = {}
    for line_no, line in _data_lines(path):
        tokens = line.split()
        if len(tokens) != 8:
            raise ParseError(path, line_no, f"expected 8 fields, got {len(tokens)}")
        cam_id = tokens[0]
        if cam_id in poses:
            raise ParseError(path, line_no, f"duplicate id {cam_id!r}")
        values = _parse_floats(path, line_no, tokens[1:])
        q = np.array(values[:4])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-3:
            raise ParseError(path, line_no, f"quaternion norm {norm:.6f} is not 1")
        # dividing by a norm of 1.0 +/- 1ulp still churns the low bits,
        # so only renormalize when the file is meaningfully off unit
        if abs(norm - 1.0) > 1e-9:
            q = q / norm
        poses[cam_id] = Pose(quat_to_rotation(q), values[4:])
    if not poses:
        raise ParseError(path, 0, "no poses found")
    return poses


def parse_intrinsics(path):
    """Parse an intrinsics file into {id: Intrinsics}."""
    table = {}
    for line_no, line in _data_lines(path):
        tokens = line.split()
        if len(tokens) != 5:
            raise ParseError(path, line_no, f"expected 5 fields, got {len(tokens)}")
        cam_id = tokens[0]
        if cam_id in table:
            raise ParseError(path, line_no, f"duplicate id {cam_id!r}")
        fx, fy, cx, cy = _parse_floats(path, line_no, tokens[1:])
        try:
            table[cam_id] = Intrinsics(fx, fy, cx, cy)
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    if not table:
        raise ParseError(path, 0, "no intrinsics found")
    return table


def parse_neighbors(path, known_anchors=None):
    """Parse a neighbors file into {query_id: [(anchor_id, score), ...]},
    each list sorted by score descending (ties by anchor id)."""
    table = {}
    for line_no, line in _data_lines(path):
        tokens = line.split()
        if len(tokens) != 3:
            raise ParseError(path, line_no, f"expected 3 fields, got {len(tokens)}")
        query_id, anchor_id = tokens[0], tokens[1]
        (score,) = _parse_floats(path, line_no, tokens[2:])
        if known_anchors is not None and anchor_id not in known_anchors:
            raise ParseError(path, line_no, f"unknown anchor id {anchor_id!r}")
        table.setdefault(query_id, []).append((anchor_id, score))
    if not table:
        raise ParseError(path, 0, "no neighbor entries found")
    for query_id, entries in table.items():
        entries.sort(key=lambda item: (-item[1], item[0]))
        seen = set()
        for anchor_id, _ in entries:
            if anchor_id in seen:
                raise ParseError(path, 0, f"duplicate pair {query_id!r}/{anchor_id!r}")
            seen.add(anchor_id)
    return table


def parse_matches(path):
    """Parse a match file into (kp_ids (N,), uv_query (N, 2), uv_anchor (N, 2))."""
    ids = []
    uv_q = []
    uv_a = []
    seen = set()
    for line_no, line in _data_lines(path):
        tokens = line.split()
        if len(tokens) != 5:
            raise ParseError(path, line_no, f"expected 5 fields, got {len(tokens)}")
        try:
            kp_id = int(tokens[0])
        except ValueError:
            raise ParseError(path, line_no, f"keypoint id must be an integer: {tokens[0]!r}") from None
        if kp_id < 0:
            raise ParseError(path, line_no, "keypoint id must be >= 0")
        if kp_id in seen:
            raise ParseError(path, line_no, f"duplicate keypoint id {kp_id}")
        seen.add(kp_id)
        values = _parse_floats(path, line_no, tokens[1:])
        ids.append(kp_id)
        uv_q.append(values[:2])
        uv_a.append(values[2:])
    if not ids:
        raise ParseError(path, 0, "no matches found")
    return np.array(ids, dtype=np.int64), np.array(uv_q), np.array(uv_a)


def load_manifest(path):
    """Parse a manifest JSON file, resolving paths against its directory."""
    path = Path(path)
    try:
        with open(path) as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ParseError(path, 0, "manifest must be a JSON object")
    required = ("anchors", "intrinsics", "neighbors", "matches_dir")
    for key in required:
        if key not in raw:
            raise ParseError(path, 0, f"manifest missing key {key!r}")
    unknown = set(raw) - set(required) - {"ground_truth"}
    if unknown:
        raise ParseError(path, 0, f"unknown manifest keys: {sorted(unknown)}")
    base = path.parent

    def resolve(key):
        value = raw.get(key)
        if value is None:
            return None
        if not isinstance(value, str):
            raise ParseError(path, 0, f"manifest key {key!r} must be a string path")
        return base / value

    return DatasetManifest(
        anchors=resolve("anchors"),
        intrinsics=resolve("intrinsics"),
        neighbors=resolve("neighbors"),
        matches_dir=resolve("matches_dir"),
        ground_truth=resolve("ground_truth"),
    )


def load_dataset(manifest_path):
    """Load and cross-validate a dataset from its manifest."""
    manifest = load_manifest(manifest_path)
    anchors = parse_poses(manifest.anchors)
    intrinsics = parse_intrinsics(manifest.intrinsics)
    neighbors = parse_neighbors(manifest.neighbors, known_anchors=set(anchors))
    if not manifest.matches_dir.is_dir():
        raise ConfigurationError(f"matches_dir {manifest.matches_dir} is not a directory")
    ground_truth = None
    if manifest.ground_truth is not None:
        ground_truth = parse_poses(manifest.ground_truth)

    for anchor_id in anchors:
        if anchor_id not in intrinsics:
            raise ConfigurationError(f"no intrinsics for anchor {anchor_id!r}")
    for query_id in neighbors:
        if query_id not in intrinsics:
            raise ConfigurationError(f"no intrinsics for query {query_id!r}")
    return Dataset(
        anchors=anchors,
        intrinsics=intrinsics,
        neighbors=neighbors,
        matches_dir=manifest.matches_dir,
        ground_truth=ground_truth,
    )


def _fmt(value):
    return format(float(value), FLOAT_FMT)


def write_poses(path, poses):
    """Write {id: Pose} in the anchors format (sorted by id)."""
    with open(path, "w") as handle:
        handle.write("# id qw qx qy qz tx ty tz\n")
        for cam_id in sorted(poses):
            pose = poses[cam_id]
            q = rotation_to_quat(pose.rotation)
            t = pose.translation
            fields = [str(cam_id)] + [_fmt(v) for v in (*q, *t)]
            handle.write(" ".join(fields) + "\n")


def write_intrinsics(path, table):
    with open(path, "w") as handle:
        handle.write("# id fx fy cx cy\n")
        for cam_id in sorted(table):
            k = table[cam_id]
            fields = [str(cam_id)] + [_fmt(v) for v in (k.fx, k.fy, k.cx, k.cy)]
            handle.write(" ".join(fields) + "\n")


def write_neighbors(path, table):
    with open(path, "w") as handle:
        handle.write("# query_id anchor_id score\n")
        for query_id in sorted(table):
            for anchor_id, score in table[query_id]:
                handle.write(f"{query_id} {anchor_id} {_fmt(score)}\n")


def write_matches(path, kp_ids, uv_query, uv_anchor):
    with open(path, "w") as handle:
        handle.write("# kp_id u_q v_q u_a v_a\n")
        for kp_id, (uq, vq), (ua, va) in zip(kp_ids, uv_query, uv_anchor):
            handle.write(
                f"{int(kp_id)} {_fmt(uq)} {_fmt(vq)} {_fmt(ua)} {_fmt(va)}\n"
            )


def write_dataset(root, anchors, intrinsics, neighbors, matches, ground_truth=None):
    """Write a complete dataset under ``root`` and return the manifest path.

    ``matches`` maps (query_id, anchor_id) to (kp_ids, uv_query, uv_anchor)
    in pixel coordinates.
    """
    root = Path(root)
    os.makedirs(root / "matches", exist_ok=True)
    write_poses(root / "anchors.txt", anchors)
    write_intrinsics(root / "intrinsics.txt", intrinsics)
    write_neighbors(root / "neighbors.txt", neighbors)
    for (query_id, anchor_id), (kp_ids, uv_q, uv_a) in matches.items():
        write_matches(root / "matches" / f"{query_id}__{anchor_id}.txt", kp_ids, uv_q, uv_a)
    manifest = {
        "anchors": "anchors.txt",
        "intrinsics": "intrinsics.txt",
        "neighbors": "neighbors.txt",
        "matches_dir": "matches",
    }
    if ground_truth is not None:
        write_poses(root / "ground_truth.txt", ground_truth)
        manifest["ground_truth"] = "ground_truth.txt"
    manifest_path = root / "manifest.json"
    with open(manifest_path, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return manifest_path
