"""Reading expression matrices and gene-set files, writing result tables."""

from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .gsa import GeneSetCollection

logger = logging.getLogger(__name__)


@dataclass
class ExpressionMatrix:
    """Samples-by-genes matrix with the gene identifiers of its columns."""

    values: np.ndarray
    genes: list

    @property
    def index_map(self) -> dict:
        return {g: j for j, g in enumerate(self.genes)}


def ingest_expression(path) -> ExpressionMatrix:
    """Read a tab-separated matrix: a header of gene ids, then one sample per line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise DataError(f"{path}: empty file or missing header")
    genes = lines[0].split("\t")
    seen = set()
    for g in genes:
        if not g:
            raise DataError(f"{path}:1: empty gene id in header")
        if g in seen:
            raise DataError(f"{path}:1: duplicate gene id {g!r}")
        seen.add(g)
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        if line == "":
            continue
        fields = line.split("\t")
        if len(fields) != len(genes):
            raise DataError(f"{path}:{lineno}: expected {len(genes)} fields, found {len(fields)}")
        row = []
        for col, cell in enumerate(fields):
            if not cell.strip():
                raise DataError(f"{path}:{lineno}: blank cell for gene {genes[col]!r}")
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell {cell!r} for gene {genes[col]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}:{lineno}: non-finite cell {cell!r} for gene {genes[col]!r}")
            row.append(v)
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: no samples")
    return ExpressionMatrix(np.array(rows, dtype=float), genes)


def ingest_genesets(path, index_map: dict, min_set_size: int = 5) -> GeneSetCollection:
    """Read a GMT file (name, description, gene ids; tab-separated).

    Unknown gene ids are dropped with a warning per set; sets left with fewer
    than ``min_set_size`` genes are excluded.
    """
    sets = []
    names = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            name = fields[0].strip()
            if not name:
                raise DataError(f"{path}:{lineno}: missing gene-set name")
            if name in names:
                raise DataError(f"{path}:{lineno}: duplicate gene-set name {name!r}")
            names.add(name)
            genes = list(dict.fromkeys(g for g in fields[2:] if g))
            known = [g for g in genes if g in index_map]
            if len(known) < len(genes):
                logger.warning("gene-set %s: dropped %d unknown gene ids", name, len(genes) - len(known))
            if len(known) < min_set_size:
                logger.warning("gene-set %s: excluded, %d genes < minimum %d", name, len(known), min_set_size)
                continue
            sets.append((name, known))
    if not names:
        raise DataError(f"{path}: no gene-sets")
    return GeneSetCollection(sets, dict(index_map))


def format_p(p) -> str:
    if p is None or (isinstance(p, float) and math.isnan(p)):
        return "NA"
    return repr(float(p))


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file so no partial output remains."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".netgsa-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tsv(header, rows) -> str:
    out = ["\t".join(header)]
    out.extend("\t".join(str(c) for c in row) for row in rows)
    return "\n".join(out) + "\n"
