"""
Read and write the artifacts of a run.

Text files (CSV) start with comment lines "# key: value" that carry at least the seed and
the config hash; the first line that doesn't start with "#" is the CSV header. Binary feature
files start with a fixed header (magic, p, rows, d, config hash) followed by the pair indices
and the row-major feature values, all little-endian.
"""

import csv
import io
import json
import os
import struct
from typing import Any, Dict, Iterable, List, Optional, TextIO, Tuple

import numpy as np

from ancestral_learning import json_logging
from ancestral_learning.errors import DomainError, FormatError
from ancestral_learning.evaluate import RocCurve
from ancestral_learning.featurize import FeatureMatrix, PcaModel
from ancestral_learning.graph import PROVENANCE_NAMES, AncestralGraph
from ancestral_learning.pairspace import PairSpace
from ancestral_learning.simgen import (
    NO_INTERVENTION,
    DataMatrix,
    InterventionPanel,
    PanelEntry,
    ScmSpec,
)

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

FEATURE_MAGIC = b"ALFEAT01"
FEATURE_HEADER = struct.Struct("<8sqqq16s")
SCM_FORMAT_VERSION = 1
GRAPH_FORMAT_VERSION = 1
PCA_FORMAT_VERSION = 1


def _ensure_directory(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_header(f: TextIO, **fields: Any) -> None:
    for key, value in fields.items():
        f.write(f"# {key}: {value}\n")


def split_header(lines: Iterable[str]) -> Tuple[Dict[str, str], List[str]]:
    """Separate the "# key: value" lines from the remaining (CSV) lines."""
    header: Dict[str, str] = {}
    body: List[str] = []
    for line in lines:
        if not body and line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if not sep:
                raise FormatError(f"malformed header line: {line.strip()!r}")
            header[key.strip()] = value.strip()
        else:
            body.append(line)
    return header, body


def _read_csv(
    path: str, expected: Optional[List[str]] = None
) -> Tuple[Dict[str, str], List[List[str]]]:
    try:
        with open(path, newline="") as f:
            header, body = split_header(f)
    except OSError as exc:
        raise FormatError(f"cannot read '{path}': {exc}") from exc
    rows = list(csv.reader(io.StringIO("".join(body))))
    if not rows:
        raise FormatError(f"'{path}' has no CSV header")
    if expected is not None and rows[0] != expected:
        raise FormatError(f"'{path}' has columns {rows[0]}, expected {expected}")
    return header, rows


def _header_int(header: Dict[str, str], key: str, path: str) -> int:
    try:
        return int(header[key])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"'{path}' lacks a valid '{key}' header") from exc


def write_pair_labels(
    path: str,
    p: int,
    pairs: np.ndarray,
    labels: np.ndarray,
    seed: int,
    config_hash: str,
) -> None:
    pspace = PairSpace(p)
    ks = pspace.check(pairs)
    _ensure_directory(path)
    with open(path, "w", newline="") as f:
        write_header(f, seed=seed, config_hash=config_hash, p=p)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "i", "j", "label"])
        for k, i, j, label in zip(ks, pspace.sources(ks), pspace.targets(ks), labels):
            writer.writerow([int(k), int(i), int(j), int(label)])


def read_pair_labels(path: str) -> Tuple[int, np.ndarray, np.ndarray, Dict[str, str]]:
    """Return (p, pair indices, labels, header)."""
    header, rows = _read_csv(path, ["k", "i", "j", "label"])
    p = _header_int(header, "p", path)
    try:
        table = np.array([[int(v) for v in row] for row in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"'{path}' contains a malformed row: {exc}") from exc
    table = table.reshape(-1, 4)
    pspace = PairSpace(p)
    try:
        expected = pspace.indices(table[:, 1], table[:, 2])
    except DomainError as exc:
        raise FormatError(f"'{path}': {exc}") from exc
    if np.any(expected != table[:, 0]):
        raise FormatError(f"'{path}': pair index doesn't match (i, j)")
    return p, table[:, 0], table[:, 3].astype(np.int8), header


def write_features(path: str, features: FeatureMatrix) -> None:
    _ensure_directory(path)
    config_hash = features.config_hash.encode("ascii")[:16].ljust(16, b"\0")
    with open(path, "wb") as f:
        f.write(
            FEATURE_HEADER.pack(FEATURE_MAGIC, features.p, features.rows, features.dim, config_hash)
        )
        f.write(features.pairs.astype("<i8").tobytes())
        f.write(features.values.astype("<f8").tobytes())


def read_features(path: str) -> FeatureMatrix:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise FormatError(f"cannot read '{path}': {exc}") from exc
    if len(blob) < FEATURE_HEADER.size:
        raise FormatError(f"'{path}' is too short to be a feature file")
    magic, p, rows, dim, raw_hash = FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"'{path}' is not a feature file (magic {magic!r})")
    expected = FEATURE_HEADER.size + 8 * rows + 8 * rows * dim
    if rows < 0 or dim < 0 or len(blob) != expected:
        raise FormatError(f"'{path}' has {len(blob)} bytes, expected {expected}")
    offset = FEATURE_HEADER.size
    pairs = np.frombuffer(blob, dtype="<i8", count=rows, offset=offset)
    values = np.frombuffer(blob, dtype="<f8", count=rows * dim, offset=offset + 8 * rows)
    try:
        return FeatureMatrix(
            p,
            pairs.astype(np.int64),
            values.reshape(rows, dim).astype(np.float64),
            raw_hash.rstrip(b"\0").decode("ascii"),
        )
    except DomainError as exc:
        raise FormatError(f"'{path}': {exc}") from exc


def write_features_csv(path: str, features: FeatureMatrix, seed: int) -> None:
    pspace = PairSpace(features.p)
    _ensure_directory(path)
    with open(path, "w", newline="") as f:
        write_header(f, seed=seed, config_hash=features.config_hash, p=features.p)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["k", "i", "j"] + [f"f{c}" for c in range(features.dim)])
        sources, targets = pspace.sources(features.pairs), pspace.targets(features.pairs)
        for k, i, j, row in zip(features.pairs, sources, targets, features.values):
            writer.writerow([int(k), int(i), int(j)] + [repr(float(v)) for v in row])


def write_dataset(path: str, data: DataMatrix, seed: int, config_hash: str) -> None:
    """One column per observed variable and an "intervention" column ("none" or a name)."""
    names = data.variable_names
    _ensure_directory(path)
    with open(path, "w", newline="") as f:
        write_header(f, seed=seed, config_hash=config_hash)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(names + ["intervention"])
        for row, target in zip(data.values, data.targets):
            label = "none" if target == NO_INTERVENTION else names[target]
            writer.writerow([repr(float(v)) for v in row] + [label])


def read_dataset(path: str) -> Tuple[DataMatrix, Dict[str, str]]:
    header, rows = _read_csv(path)
    columns = rows[0]
    if not columns or columns[-1] != "intervention":
        raise FormatError(f"'{path}' lacks the trailing 'intervention' column")
    names = columns[:-1]
    index = {name: position for position, name in enumerate(names)}
    values = []
    targets = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(columns):
            raise FormatError(f"'{path}': row {line} has {len(row)} fields")
        try:
            values.append([float(v) for v in row[:-1]])
        except ValueError as exc:
            raise FormatError(f"'{path}': row {line}: {exc}") from exc
        label = row[-1]
        if label != "none" and label not in index:
            raise FormatError(f"'{path}': row {line} names unknown variable '{label}'")
        targets.append(NO_INTERVENTION if label == "none" else index[label])
    matrix = np.array(values, dtype=np.float64).reshape(-1, len(names))
    try:
        return DataMatrix(matrix, np.array(targets, dtype=np.int64)), header
    except DomainError as exc:
        raise FormatError(f"'{path}': {exc}") from exc


def write_panel(path: str, panel: InterventionPanel, seed: int, config_hash: str) -> None:
    _ensure_directory(path)
    with open(path, "w", newline="") as f:
        write_header(f, seed=seed, config_hash=config_hash, p=panel.p)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["role", "target", "replicate"] + [f"X{j}" for j in range(panel.p)])
        for entry in panel.entries():
            for replicate, row in enumerate(entry.values):
                writer.writerow(
                    [entry.role, entry.target, replicate] + [repr(float(v)) for v in row]
                )


def read_panel(path: str) -> Tuple[InterventionPanel, Dict[str, str]]:
    header, rows = _read_csv(path)
    p = _header_int(header, "p", path)
    if rows[0] != ["role", "target", "replicate"] + [f"X{j}" for j in range(p)]:
        raise FormatError(f"'{path}' has unexpected columns")
    blocks: Dict[Tuple[str, int], List[List[float]]] = {}
    try:
        for row in rows[1:]:
            blocks.setdefault((row[0], int(row[1])), []).append([float(v) for v in row[3:]])
        entries = tuple(
            PanelEntry(target, role, np.array(values)) for (role, target), values in blocks.items()
        )
        return InterventionPanel(p, entries), header
    except (ValueError, IndexError) as exc:
        raise FormatError(f"'{path}': {exc}") from exc


def write_scm(path: str, spec: ScmSpec, seed: int, config_hash: str) -> None:
    _ensure_directory(path)
    document = {
        "format_version": SCM_FORMAT_VERSION,
        "seed": seed,
        "config_hash": config_hash,
        "scm": spec.to_dict(),
    }
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def read_scm(path: str) -> Tuple[ScmSpec, Dict[str, Any]]:
    try:
        with open(path) as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read SCM file '{path}': {exc}") from exc
    if document.get("format_version") != SCM_FORMAT_VERSION:
        raise FormatError(f"'{path}' has unsupported format version")
    try:
        spec = ScmSpec.from_dict(document["scm"])
    except (KeyError, DomainError) as exc:
        raise FormatError(f"'{path}': {exc}") from exc
    return spec, {key: value for key, value in document.items() if key != "scm"}


def write_graph_csv(path: str, graph: AncestralGraph, seed: int, config_hash: str) -> None:
    _ensure_directory(path)
    with open(path, "w", newline="") as f:
        write_header(f, seed=seed, config_hash=config_hash, p=graph.p)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["i", "j", "score", "provenance"])
        for i, j, score, provenance in graph.edges():
            writer.writerow([i, j, repr(score), provenance])


def read_graph_csv(path: str) -> Tuple[AncestralGraph, Dict[str, str]]:
    header, rows = _read_csv(path, ["i", "j", "score", "provenance"])
    p = _header_int(header, "p", path)
    codes = {name: code for code, name in PROVENANCE_NAMES.items()}
    scores = np.full((p, p), np.nan)
    provenance = np.zeros((p, p), dtype=np.int8)
    try:
        for row in rows[1:]:
            i, j = int(row[0]), int(row[1])
            scores[i, j] = float(row[2])
            provenance[i, j] = codes[row[3]]
        return AncestralGraph(p, scores, provenance), header
    except (ValueError, IndexError, KeyError, DomainError) as exc:
        raise FormatError(f"'{path}': {exc}") from exc


def save_graph(path: str, graph: AncestralGraph, seed: int, config_hash: str) -> None:
    """Dense export of a graph for large p."""
    _ensure_directory(path)
    metadata = {"format_version": GRAPH_FORMAT_VERSION, "seed": seed, "config_hash": config_hash}
    with open(path, "wb") as f:
        np.savez(
            f,
            scores=graph.scores,
            provenance=graph.provenance,
            metadata=np.array(json.dumps(metadata, sort_keys=True)),
        )


def load_graph(path: str) -> Tuple[AncestralGraph, Dict[str, Any]]:
    try:
        with np.load(path, allow_pickle=False) as archive:
            metadata = json.loads(str(archive["metadata"]))
            scores, provenance = archive["scores"], archive["provenance"]
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"cannot read graph file '{path}': {exc}") from exc
    if metadata.get("format_version") != GRAPH_FORMAT_VERSION:
        raise FormatError(f"'{path}' has unsupported format version")
    try:
        return AncestralGraph(int(scores.shape[0]), scores, provenance), metadata
    except DomainError as exc:
        raise FormatError(f"'{path}': {exc}") from exc


def write_roc_csv(path: str, curve: RocCurve, seed: int, config_hash: str) -> None:
    _ensure_directory(path)
    with open(path, "w", newline="") as f:
        write_header(f, seed=seed, config_hash=config_hash)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, threshold in zip(curve.fpr, curve.tpr, curve.thresholds):
            writer.writerow([repr(float(fpr)), repr(float(tpr)), repr(float(threshold))])


def read_roc_csv(path: str) -> Tuple[RocCurve, Dict[str, str]]:
    header, rows = _read_csv(path, ["fpr", "tpr", "threshold"])
    try:
        table = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
        return RocCurve(table[:, 0], table[:, 1], table[:, 2]), header
    except (ValueError, IndexError, DomainError) as exc:
        raise FormatError(f"'{path}': {exc}") from exc


def write_metrics(path: str, records: Iterable[Dict[str, Any]]) -> None:
    """Write one compact JSON object per line, keys sorted."""
    _ensure_directory(path)
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def read_metrics(path: str) -> List[Dict[str, Any]]:
    try:
        with open(path) as f:
            return [json.loads(line) for line in f if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read metrics from '{path}': {exc}") from exc


def write_json(path: str, document: Dict[str, Any]) -> None:
    _ensure_directory(path)
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def save_pca(path: str, pca: PcaModel, metadata: Dict[str, Any]) -> None:
    _ensure_directory(path)
    document = dict(metadata, format_version=PCA_FORMAT_VERSION)
    with open(path, "wb") as f:
        np.savez(
            f,
            mean=pca.mean,
            components=pca.components,
            eigenvalues=pca.eigenvalues,
            total_variance=np.array(pca.total_variance),
            metadata=np.array(json.dumps(document, sort_keys=True)),
        )


def load_pca(path: str) -> Tuple[PcaModel, Dict[str, Any]]:
    try:
        with np.load(path, allow_pickle=False) as archive:
            metadata = json.loads(str(archive["metadata"]))
            pca = PcaModel(
                archive["mean"],
                archive["components"],
                archive["eigenvalues"],
                float(archive["total_variance"]),
            )
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"cannot read PCA file '{path}': {exc}") from exc
    if metadata.get("format_version") != PCA_FORMAT_VERSION:
        raise FormatError(f"'{path}' has unsupported format version")
    return pca, metadata


def write_table(
    path: str, columns: List[str], rows: Iterable[Iterable[Any]], **header: Any
) -> None:
    """Write a CSV table after "# key: value" header lines; floats keep full precision."""
    _ensure_directory(path)
    with open(path, "w", newline="") as f:
        write_header(f, **header)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_table(path: str) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
    header, rows = _read_csv(path)
    return header, [dict(zip(rows[0], row)) for row in rows[1:]]
