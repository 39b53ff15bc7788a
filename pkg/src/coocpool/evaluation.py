"""Average precision and mAP over Oxford-convention query ground truth.

Junk-listed images are deleted from the ranking before anything is
counted.  AP then accumulates one trapezoid per positive hit:

    ap += (previous_hit_precision + precision_at_hit) / 2 / #positives

with ``precision_at_hit = hits / seen`` over the junk-filtered list and the
previous-hit precision starting at 1.  Two positives at filtered ranks 1
and 3 therefore score (1+1)/2 * 1/2 + (1+2/3)/2 * 1/2 = 0.91667.

Ground truth directories follow the per-query four-file layout: for query
name ``q``, ``q_query.txt`` holds "imageId x1 y1 x2 y2" (bbox kept but not
used in scoring), and ``q_good.txt`` / ``q_ok.txt`` / ``q_junk.txt`` list
one image id per line.  Positives are good plus ok.  Difficulty splits are
just alternative directories.
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, GroundTruthError, ValidationError


@dataclass
class QueryGroundTruth:
    query_id: str
    query_image: str
    positives: set[str]
    junk: set[str]
    bbox: tuple[float, float, float, float] | None = None
    difficulty: str | None = None

    def __post_init__(self):
        overlap = self.positives & self.junk
        if overlap:
            raise ValidationError(
                f"query {self.query_id}: ids both positive and junk: {sorted(overlap)[:5]}"
            )

    @property
    def scoreable(self) -> bool:
        return bool(self.positives)


def average_precision(ranked, gt: QueryGroundTruth) -> float:
    """AP of one ranking (list of (id, distance) or ids) against ground truth."""
    if not gt.positives:
        raise DomainError(f"query {gt.query_id} has no positives")
    ap = 0.0
    hits = 0
    seen = 0
    previous_precision = 1.0
    for item in ranked:
        key = item[0] if isinstance(item, tuple) else item
        if key in gt.junk:
            continue
        seen += 1
        if key in gt.positives:
            hits += 1
            precision = hits / seen
            ap += (previous_precision + precision) / 2.0 / len(gt.positives)
            previous_precision = precision
            if hits == len(gt.positives):
                break
    return ap


def mean_ap(queries) -> float:
    """Arithmetic mean of AP over scoreable queries; unscoreable ones are
    skipped with a warning."""
    aps = []
    for ranked, gt in queries:
        if not gt.scoreable:
            warnings.warn(
                f"query {gt.query_id} has no positives; skipped", UserWarning, stacklevel=2
            )
            continue
        aps.append(average_precision(ranked, gt))
    if not aps:
        raise DomainError("no scoreable queries")
    return float(np.mean(aps))


def _read_id_list(path: Path) -> list[str]:
    if not path.is_file():
        raise GroundTruthError(f"missing ground-truth file: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def load_groundtruth(directory, difficulty: str | None = None) -> list[QueryGroundTruth]:
    """Load every ``*_query.txt`` query in a directory with its good/ok/junk sets."""
    directory = Path(directory)
    query_files = sorted(directory.glob("*_query.txt"))
    if not query_files:
        raise GroundTruthError(f"no *_query.txt files in {directory}")
    out = []
    for query_file in query_files:
        name = query_file.name[: -len("_query.txt")]
        fields = query_file.read_text().split()
        if not fields:
            raise GroundTruthError(f"empty query file: {query_file}")
        image = fields[0]
        bbox = tuple(float(x) for x in fields[1:5]) if len(fields) >= 5 else None
        good = _read_id_list(directory / f"{name}_good.txt")
        ok = _read_id_list(directory / f"{name}_ok.txt")
        junk = _read_id_list(directory / f"{name}_junk.txt")
        out.append(
            QueryGroundTruth(
                query_id=name,
                query_image=image,
                positives=set(good) | set(ok),
                junk=set(junk),
                bbox=bbox,
                difficulty=difficulty,
            )
        )
    return out


def write_ap_report(rows, mean: float, path) -> None:
    """CSV of (query, ap) rows followed by a summary mAP line."""
    with open(path, "w") as fh:
        fh.write("query,ap\n")
        for name, ap in rows:
            fh.write(f"{name},{ap:.6f}\n")
        fh.write(f"mAP,{mean:.6f}\n")
