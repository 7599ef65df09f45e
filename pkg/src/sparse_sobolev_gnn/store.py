"""Run output directories and the on-disk formats for graphs, data and checkpoints."""

import csv
import fcntl
import io
import json
import logging
import math
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

import numpy as np

from . import __version__
from .config import coerce, format_value, manifest_digest, parse_key_values, render_manifest
from .exceptions import FormatError, InvalidGraphError, S2GNNError
from .graphgen import Graph, SplitMask, graph_from_edges
from .models import ModelConfig

logger = logging.getLogger(__name__)

TOOL_NAME = "sparse-sobolev-gnn"
MANIFEST_NAME = "manifest.txt"
LOG_NAME = "run.log"


class RunStore:
    """Output directory of one run. Writes are atomic and serialized by a lock file."""

    def __init__(self, out_dir: Path | str):
        """Initialize the store.

        Args:
            out_dir: Directory for manifest, tables, reports and logs; created if missing.
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.lock_file = self.out_dir / ".run.lock"
        self.digest: str | None = None

    @contextmanager
    def _file_lock(self, exclusive: bool = True) -> Iterator[None]:
        """Acquire a file lock for safe concurrent access.

        Args:
            exclusive: If True, acquire exclusive (write) lock.
                If False, shared (read) lock.
        """
        self.lock_file.touch(exist_ok=True)
        lock_type = fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH
        fd = os.open(str(self.lock_file), os.O_RDWR | os.O_CREAT)
        try:
            fcntl.flock(fd, lock_type)
            yield
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _write_text(self, name: str, text: str) -> Path:
        target = self.path(name)
        temp_file = target.with_name(f".{target.name}.tmp")
        with self._file_lock(exclusive=True):
            temp_file.write_text(text)
            temp_file.replace(target)
        logger.debug(f"Wrote {target}")
        return target

    def write_manifest(self, values: dict) -> Path:
        """Echo the resolved configuration; its digest stamps every later CSV."""
        text = render_manifest({**values, "version": __version__})
        self.digest = manifest_digest(text)
        return self._write_text(MANIFEST_NAME, text)

    def csv_comment(self) -> str:
        return f"# {TOOL_NAME} {__version__} manifest={self.digest or 'none'}"

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buffer = io.StringIO()
        buffer.write(self.csv_comment() + "\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) if isinstance(v, (bool, float)) else v for v in row])
        return self._write_text(name, buffer.getvalue())

    def write_json(self, name: str, data) -> Path:
        return self._write_text(name, json.dumps(data, indent=2, default=_json_default) + "\n")

    def read_json(self, name: str):
        with self._file_lock(exclusive=False):
            return json.loads(self.path(name).read_text())


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_name(f".{path.name}.tmp")
    temp_file.write_text(text)
    temp_file.replace(path)


def _data_lines(path: Path) -> Iterator[tuple[int, str]]:
    """(1-based line number, stripped line) for every non-blank, non-comment line."""
    try:
        text = path.read_text()
    except OSError as e:
        raise FormatError(path, 0, f"cannot read file: {e}") from e
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield line_no, line


def _parse_int(path: Path, line_no: int, text: str, what: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise FormatError(path, line_no, f"{what} must be an integer, got {text!r}") from None
    if value < 0:
        raise FormatError(path, line_no, f"{what} must be nonnegative, got {value}")
    return value


def _parse_float(path: Path, line_no: int, text: str, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(path, line_no, f"{what} must be a number, got {text!r}") from None
    if not math.isfinite(value):
        raise FormatError(path, line_no, f"{what} must be finite, got {text!r}")
    return value


def write_edge_list(path: Path | str, graph: Graph) -> Path:
    """`src,dst,weight` rows, each undirected edge once (src < dst), after a node-count comment."""
    path = Path(path)
    adjacency = graph.adjacency
    rows = np.repeat(np.arange(adjacency.n_rows), np.diff(adjacency.row_ptr))
    upper = rows < adjacency.col_idx
    lines = [f"# nodes={graph.n_nodes}", "src,dst,weight"]
    lines.extend(
        f"{i},{j},{float(w)!r}"
        for i, j, w in zip(rows[upper], adjacency.col_idx[upper], adjacency.values[upper])
    )
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def read_edge_list(path: Path | str, n_nodes: int | None = None) -> Graph:
    """Load an edge list. The node count comes from n_nodes, the `# nodes=N` comment,
    or the largest index, in that order.
    """
    path = Path(path)
    declared = None
    try:
        for raw in path.read_text().splitlines():
            line = raw.strip()
            if line.startswith("#") and line[1:].strip().startswith("nodes="):
                declared = int(line[1:].strip()[len("nodes="):])
                break
    except (OSError, ValueError) as e:
        raise FormatError(path, 0, f"cannot read node count: {e}") from e

    edges = []
    weights = []
    seen: set[tuple[int, int]] = set()
    for line_no, line in _data_lines(path):
        fields = [f.strip() for f in line.split(",")]
        if fields == ["src", "dst", "weight"]:
            continue
        if len(fields) != 3:
            raise FormatError(path, line_no, f"expected src,dst,weight, got {line!r}")
        src = _parse_int(path, line_no, fields[0], "src")
        dst = _parse_int(path, line_no, fields[1], "dst")
        weight = _parse_float(path, line_no, fields[2], "weight")
        if src == dst:
            raise FormatError(path, line_no, f"self-loop on node {src}")
        if weight <= 0:
            raise FormatError(path, line_no, f"weight must be positive, got {weight}")
        key = (min(src, dst), max(src, dst))
        if key in seen:
            raise FormatError(path, line_no, f"duplicate edge {key}")
        if n_nodes is not None and max(key) >= n_nodes:
            raise FormatError(path, line_no, f"node {max(key)} outside 0..{n_nodes - 1}")
        if declared is not None and max(key) >= declared:
            raise FormatError(path, line_no, f"node {max(key)} outside declared nodes={declared}")
        seen.add(key)
        edges.append(key)
        weights.append(weight)

    n = n_nodes or declared or (max(max(e) for e in edges) + 1 if edges else 0)
    return graph_from_edges(n, edges, weights)


def write_features(path: Path | str, features) -> Path:
    path = Path(path)
    features = np.asarray(features, dtype=np.float64)
    lines = [",".join(f"f{i}" for i in range(features.shape[1]))]
    lines.extend(",".join(repr(float(v)) for v in row) for row in features)
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def read_features(path: Path | str) -> np.ndarray:
    """Header row followed by one row of floats per node."""
    path = Path(path)
    rows = []
    width = None
    for index, (line_no, line) in enumerate(_data_lines(path)):
        fields = [f.strip() for f in line.split(",")]
        if index == 0:
            width = len(fields)
            continue
        if len(fields) != width:
            raise FormatError(path, line_no, f"expected {width} columns, got {len(fields)}")
        rows.append([_parse_float(path, line_no, f, "feature") for f in fields])
    if not rows:
        raise FormatError(path, 0, "no feature rows")
    return np.array(rows, dtype=np.float64)


def write_labels(path: Path | str, labels) -> Path:
    path = Path(path)
    labels = np.asarray(labels, dtype=np.int64)
    lines = ["node,label"] + [f"{i},{label}" for i, label in enumerate(labels) if label >= 0]
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def read_labels(path: Path | str, n_nodes: int) -> np.ndarray:
    """`node,label` rows; nodes not listed get label -1."""
    path = Path(path)
    labels = np.full(n_nodes, -1, dtype=np.int64)
    seen = set()
    for line_no, line in _data_lines(path):
        fields = [f.strip() for f in line.split(",")]
        if fields == ["node", "label"]:
            continue
        if len(fields) != 2:
            raise FormatError(path, line_no, f"expected node,label, got {line!r}")
        node = _parse_int(path, line_no, fields[0], "node")
        label = _parse_int(path, line_no, fields[1], "label")
        if node >= n_nodes:
            raise FormatError(path, line_no, f"node {node} outside 0..{n_nodes - 1}")
        if node in seen:
            raise FormatError(path, line_no, f"node {node} labeled twice")
        seen.add(node)
        labels[node] = label
    return labels


def write_masks(path: Path | str, splits: SplitMask) -> Path:
    path = Path(path)
    lines = ["node,train,val,test"]
    lines.extend(
        f"{i},{int(t)},{int(v)},{int(s)}"
        for i, (t, v, s) in enumerate(zip(splits.train, splits.val, splits.test))
    )
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def read_masks(path: Path | str, n_nodes: int) -> SplitMask:
    """`node,train,val,test` rows with 0/1 flags; unlisted nodes belong to no split."""
    path = Path(path)
    masks = np.zeros((3, n_nodes), dtype=bool)
    for line_no, line in _data_lines(path):
        fields = [f.strip() for f in line.split(",")]
        if fields == ["node", "train", "val", "test"]:
            continue
        if len(fields) != 4:
            raise FormatError(path, line_no, f"expected node,train,val,test, got {line!r}")
        node = _parse_int(path, line_no, fields[0], "node")
        if node >= n_nodes:
            raise FormatError(path, line_no, f"node {node} outside 0..{n_nodes - 1}")
        flags = [_parse_int(path, line_no, f, "flag") for f in fields[1:]]
        if any(flag > 1 for flag in flags):
            raise FormatError(path, line_no, "split flags must be 0 or 1")
        masks[:, node] = flags
    try:
        return SplitMask(train=masks[0], val=masks[1], test=masks[2])
    except InvalidGraphError as e:
        raise FormatError(path, 0, str(e)) from e


def save_checkpoint(
    directory: Path | str, config: ModelConfig, in_dim: int, tensors: dict[str, np.ndarray]
) -> Path:
    """manifest.txt (config echo and parameter index) plus one .npy per tensor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, tensor in tensors.items():
        np.save(directory / f"{name}.npy", np.asarray(tensor, dtype=np.float64))
    values = {**config.to_dict(), "in_dim": in_dim, "parameters": list(tensors)}
    _atomic_write(directory / MANIFEST_NAME, render_manifest(values))
    logger.info(f"Saved checkpoint with {len(tensors)} tensors to {directory}")
    return directory


def load_checkpoint(directory: Path | str) -> tuple[ModelConfig, int, dict[str, np.ndarray]]:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    try:
        raw = parse_key_values(manifest.read_text(), str(manifest))
    except OSError as e:
        raise FormatError(manifest, 0, f"cannot read checkpoint manifest: {e}") from e
    try:
        in_dim = int(raw.pop("in_dim"))
        names = [n.strip() for n in raw.pop("parameters").split(",") if n.strip()]
    except (KeyError, ValueError) as e:
        raise FormatError(manifest, 0, f"incomplete checkpoint manifest: {e}") from e

    defaults = ModelConfig().to_dict()
    try:
        config = ModelConfig.from_dict({k: coerce(k, v, defaults.get(k)) for k, v in raw.items()})
    except S2GNNError as e:
        raise FormatError(manifest, 0, str(e)) from e
    tensors = {name: np.load(directory / f"{name}.npy") for name in names}
    return config, in_dim, tensors
