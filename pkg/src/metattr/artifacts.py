"""On-disk artifacts: checkpoint directories, heatmap JSON + PGM, JSON lines."""

import json
from pathlib import Path

import numpy as np

from . import tvet
from .explainer import ExplainerModel
from .grid import GridSpec
from .models import ClassifierHead, PatchEncoder

CHECKPOINT_FORMAT = "metattr-checkpoint/1"
KINDS = {"encoder": PatchEncoder, "head": ClassifierHead, "explainer": ExplainerModel}


def dump_json(path, obj):
    """Deterministic JSON (sorted keys, fixed indent, trailing newline)."""
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


def _kind(module):
    for kind, cls in KINDS.items():
        if isinstance(module, cls):
            return kind
    raise TypeError(f"cannot checkpoint {type(module).__name__}")


def save_checkpoint(path, modules, grid, seed, **meta):
    """Write ``modules`` ({name: Module}) as one TVET file per parameter plus a manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, params = {}, []
    for name in sorted(modules):
        module = modules[name]
        entries[name] = {"kind": _kind(module), "config": module.config()}
        for pname, arr in sorted(module.state_dict().items()):
            file = f"{name}.{pname}.tvet"
            digest = tvet.save(path / file, arr)
            params.append({"module": name, "name": pname, "file": file,
                           "shape": list(arr.shape), "sha256": digest})
    manifest = {"format": CHECKPOINT_FORMAT, "grid": grid.to_dict(), "seed": int(seed),
                "modules": entries, "params": params, **meta}
    dump_json(path / "manifest.json", manifest)
    return manifest


def read_manifest(path):
    file = Path(path) / "manifest.json"
    if not file.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {file}")
    manifest = json.loads(file.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{file} is not a {CHECKPOINT_FORMAT} manifest")
    return manifest


def load_checkpoint(path):
    """Rebuild every module in a checkpoint; returns ({name: Module}, manifest).

    Tensor hashes are verified; loaded modules are frozen.
    """
    path = Path(path)
    manifest = read_manifest(path)
    grid = GridSpec(**manifest["grid"])
    state = {name: {} for name in manifest["modules"]}
    for p in manifest["params"]:
        arr = tvet.load(path / p["file"], p["sha256"])
        if list(arr.shape) != p["shape"]:
            raise ValueError(f"{p['file']}: shape {arr.shape} != manifest {p['shape']}")
        state[p["module"]][p["name"]] = arr
    modules = {}
    for name, entry in manifest["modules"].items():
        cls = KINDS[entry["kind"]]
        module = cls(**entry["config"]) if cls is ClassifierHead else cls(grid, **entry["config"])
        module.load_state_dict(state[name])
        modules[name] = module.set_trainable(False)
    return modules, manifest


def heatmap_json(heatmap):
    return {"grid": heatmap.grid.to_dict(), "class": heatmap.y, "provenance": heatmap.provenance,
            "values": heatmap.values.ravel().tolist()}


def pgm_bytes(values):
    """Binary P5 greyscale image, min-max scaled to 0..255 (a constant map is all zeros)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    return f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode() + pix.tobytes()


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path} is not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def save_heatmap(stem, heatmap):
    """Write ``<stem>.json`` and the ``<stem>.pgm`` sidecar."""
    stem = Path(stem)
    dump_json(stem.with_suffix(".json"), heatmap_json(heatmap))
    stem.with_suffix(".pgm").write_bytes(pgm_bytes(heatmap.values))
