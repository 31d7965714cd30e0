"""On-disk formats: binary tensor files, camera text files, annotation CSVs,
dataset manifests and checkpoints.

The tensor format is deliberately minimal and byte-auditable:
magic "TPT1" | dtype u8 (1=f32, 2=f64) | ndim u8 | dims u32 LE | payload LE.
All formats round-trip bitwise.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraModel

TPT_MAGIC = b"TPT1"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FormatError(ValueError):
    pass


# -- tensor files -------------------------------------------------------------

def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _DTYPE_CODES.get(array.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {array.dtype}; use float32 or float64")
    if array.ndim > 255:
        raise FormatError("too many dimensions")
    with open(path, "wb") as f:
        f.write(TPT_MAGIC)
        f.write(struct.pack("<BB", code, array.ndim))
        f.write(struct.pack(f"<{array.ndim}I", *array.shape))
        f.write(np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TPT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        code, ndim = struct.unpack("<BB", f.read(2))
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        dtype = _DTYPES[code]
        n = int(np.prod(dims)) if dims else 1
        payload = f.read()
        if len(payload) != n * dtype.itemsize:
            raise FormatError(f"{path}: payload length {len(payload)} does not match dims {dims}")
        return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


# -- key/value text files -----------------------------------------------------

def write_kv(path, entries: dict) -> None:
    lines = []
    for key, value in entries.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            items = np.asarray(value).ravel().tolist()
            sval = " ".join(repr(v) if isinstance(v, float) else str(v) for v in items)
        elif isinstance(value, (float, np.floating)):
            sval = repr(float(value))
        else:
            sval = str(value)
        lines.append(f"{key} = {sval}\n")
    Path(path).write_text("".join(lines))


def read_kv(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


# -- camera files -------------------------------------------------------------

def write_camera(path, cam: CameraModel) -> None:
    write_kv(path, {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "R": cam.R, "t": cam.t,
        "width": cam.image_width, "height": cam.image_height,
    })


def read_camera(path) -> CameraModel:
    kv = read_kv(path)
    try:
        return CameraModel(
            fx=float(kv["fx"]), fy=float(kv["fy"]),
            cx=float(kv["cx"]), cy=float(kv["cy"]),
            R=np.array([float(x) for x in kv["R"].split()]).reshape(3, 3),
            t=np.array([float(x) for x in kv["t"].split()]),
            image_width=int(kv["width"]), image_height=int(kv["height"]),
        )
    except KeyError as e:
        raise FormatError(f"{path}: missing camera key {e}") from None


# -- annotation CSVs ----------------------------------------------------------

def write_points_csv(path, rows) -> None:
    """rows: iterable of (frame_id, view_id or None, x, y)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_id", "view_id", "x", "y"])
        for frame_id, view_id, x, y in rows:
            writer.writerow([frame_id, "" if view_id is None else view_id,
                             repr(float(x)), repr(float(y))])


def read_points_csv(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["frame_id", "view_id", "x", "y"]:
            raise FormatError(f"{path}: bad header {header}")
        for rec in reader:
            frame_id = int(rec[0])
            view_id = None if rec[1] == "" else int(rec[1])
            rows.append((frame_id, view_id, float(rec[2]), float(rec[3])))
    return rows


# -- dataset layout -----------------------------------------------------------

@dataclass
class SceneFrame:
    frame_id: int
    images: dict[int, np.ndarray]              # view_id -> (1, H, W)
    view_points: dict[int, list]               # view_id -> [(x, y) pixels]
    scene_points: list                         # [(x, y) meters]
    view_density: dict[int, np.ndarray]        # view_id -> (Hf, Wf)
    scene_density: np.ndarray                  # (Hg, Wg)


@dataclass
class Dataset:
    root: Path
    meta: dict[str, str]
    cameras: dict[int, CameraModel]
    train_ids: list[int]
    val_ids: list[int]

    def view_ids(self) -> list[int]:
        return sorted(self.cameras)

    def load_frame(self, split: str, frame_id: int) -> SceneFrame:
        d = self.root / split / "frames" / str(frame_id)
        images, vpts, vden = {}, {}, {}
        for vid in self.view_ids():
            images[vid] = read_tensor(d / f"view{vid}.img.tpt")
            vpts[vid] = [(x, y) for _, _, x, y in read_points_csv(d / f"view{vid}.pts.csv")]
            vden[vid] = read_tensor(d / f"view{vid}.den.tpt")
        spts = [(x, y) for _, _, x, y in read_points_csv(d / "scene.pts.csv")]
        return SceneFrame(frame_id=frame_id, images=images, view_points=vpts,
                          scene_points=spts, view_density=vden,
                          scene_density=read_tensor(d / "scene.den.tpt"))

    def frames(self, split: str):
        ids = self.train_ids if split == "train" else self.val_ids
        for frame_id in ids:
            yield self.load_frame(split, frame_id)


def open_dataset(root) -> Dataset:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FormatError(f"no manifest.txt under {root}")
    meta = read_kv(manifest)
    n_views = int(meta["n_views"])
    cameras = {vid: read_camera(root / "cameras" / f"view{vid}.cam")
               for vid in range(n_views)}
    train_ids = [int(x) for x in meta["train_ids"].split()] if meta.get("train_ids") else []
    val_ids = [int(x) for x in meta["val_ids"].split()] if meta.get("val_ids") else []
    return Dataset(root=root, meta=meta, cameras=cameras,
                   train_ids=train_ids, val_ids=val_ids)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(ckpt_dir, state: dict[str, np.ndarray], config_echo: dict) -> None:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    names = sorted(state)
    (ckpt_dir / "params.txt").write_text("".join(n + "\n" for n in names))
    write_kv(ckpt_dir / "config.txt", config_echo)
    for name in names:
        write_tensor(ckpt_dir / f"{name}.tpt", state[name])


def load_checkpoint(ckpt_dir) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    ckpt_dir = Path(ckpt_dir)
    listing = ckpt_dir / "params.txt"
    if not listing.exists():
        raise FormatError(f"checkpoint manifest not found: {listing}")
    names = [n for n in listing.read_text().splitlines() if n]
    state = {n: read_tensor(ckpt_dir / f"{n}.tpt") for n in names}
    config = read_kv(ckpt_dir / "config.txt") if (ckpt_dir / "config.txt").exists() else {}
    return state, config


# -- results ------------------------------------------------------------------

RESULT_FIELDS = ["method", "views", "mae", "mse", "rmse", "rate"]


def write_results_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for k in ("mae", "mse", "rmse", "rate"):
                out[k] = repr(float(out[k]))
            writer.writerow(out)


def read_results_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append({"method": rec["method"], "views": rec["views"],
                         "mae": float(rec["mae"]), "mse": float(rec["mse"]),
                         "rmse": float(rec["rmse"]), "rate": float(rec["rate"])})
    return rows


# -- PGM rendering ------------------------------------------------------------

def write_pgm(path, array2d: np.ndarray, scale="auto") -> None:
    """8-bit binary PGM of a 2-D map; auto scale maps the max value to 255."""
    arr = np.asarray(array2d, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"PGM rendering needs a 2-D map, got ndim {arr.ndim}")
    if scale == "auto":
        peak = arr.max()
        factor = 255.0 / peak if peak > 0 else 0.0
    else:
        factor = float(scale)
    pix = np.clip(arr * factor, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(pix.tobytes())
