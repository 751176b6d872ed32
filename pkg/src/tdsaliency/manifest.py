"""CSV dataset manifests.

    # categories = stripes;blobs
    image,mask,labels
    images/a.pgm,masks/a.pgm,stripes
    images/b.pgm,-,

Paths are relative to the manifest's directory; ``-`` or an empty field
means no mask; labels are ``;``-separated category names.  Without the
``# categories`` line the category table is the labels in order of first
appearance.
"""

import csv
import re
from pathlib import Path
from typing import NamedTuple

from .errors import ManifestError

_CATEGORIES = re.compile(r"#\s*categories\s*=\s*(.*)")


class ManifestRow(NamedTuple):
    image: Path
    mask: Path
    labels: tuple


def _split_labels(field):
    return tuple(s.strip() for s in field.split(";") if s.strip())


def load_manifest(path, categories=None, require_files=True):
    """Return (categories, rows); ``categories`` overrides the file's table."""
    path = Path(path)
    base = path.parent
    declared = None
    body = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from None
    for line in text.splitlines():
        m = _CATEGORIES.match(line.strip())
        if m:
            declared = _split_labels(m.group(1))
        elif line.strip() and not line.lstrip().startswith("#"):
            body.append(line)
    reader = csv.DictReader(body)
    if reader.fieldnames is None or not {"image", "labels"} <= set(reader.fieldnames):
        raise ManifestError(f"{path}: header must name 'image' and 'labels' columns")
    rows = []
    seen = []
    for lineno, rec in enumerate(reader, 2):
        img = (rec.get("image") or "").strip()
        if not img:
            raise ManifestError(f"{path}:{lineno}: empty image path")
        mask = (rec.get("mask") or "").strip()
        labels = _split_labels(rec.get("labels") or "")
        row = ManifestRow(base / img, None if mask in ("", "-") else base / mask, labels)
        if require_files:
            for p in (row.image, row.mask):
                if p is not None and not p.is_file():
                    raise ManifestError(f"{path}:{lineno}: missing file {p}")
        seen.extend(lb for lb in labels if lb not in seen)
        rows.append(row)
    if not rows:
        raise ManifestError(f"{path}: no images listed")
    table = tuple(categories or declared or seen)
    unknown = set(seen) - set(table)
    if unknown:
        raise ManifestError(f"{path}: labels {sorted(unknown)} not in categories {list(table)}")
    return table, rows
