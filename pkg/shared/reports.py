import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional, Sequence, TextIO, Type, TypeVar

import numpy as np

from shared.utils.config_loader import cli_cfg, measure_cfg

T = TypeVar('T', bound='Report')


def make_json_safe(obj):
    """Convert numpy scalars/arrays, dataclasses and paths to plain JSON types; non-finite floats become None."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.to_dict() if hasattr(obj, 'to_dict') else dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): make_json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [make_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [make_json_safe(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_text(text: str, path: Path) -> None:
    """Write through a temporary file so a partial output never appears."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_json(data: Any, path: Path) -> None:
    write_text(json.dumps(make_json_safe(data), indent=2, sort_keys=True) + "\n", path)


@dataclass
class Report:
    type: ClassVar[str]

    def to_dict(self) -> Dict[str, Any]:
        data = make_json_safe(dataclasses.asdict(self))
        data['type'] = self.type
        data['spec_version'] = cli_cfg['spec_version']
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls: Type[T], json_str: str) -> T:
        data = json.loads(json_str)
        report_type = data.pop('type', None)
        data.pop('spec_version', None)
        if not report_type:
            raise ValueError("Report JSON missing 'type' field")
        if report_type not in REPORT_TYPES:
            raise ValueError(f"Unknown report type: {report_type}")
        return REPORT_TYPES[report_type](**data)

    def write(self, path: Path) -> None:
        write_text(self.to_json() + "\n", path)


@dataclass
class ConstantsReport(Report):
    instance: str
    grid: Dict[str, Any]
    constants: Dict[str, Any]
    type: ClassVar[str] = "constants"

    def row(self) -> Dict[str, Any]:
        c = self.constants
        return {'instance': self.instance, 'a2': c['a2'], 'testing': max(c['testing_sw'], c['testing_ws']),
                'norm': c['norm'], 'h_const': c['h_const'], 'ratio': c['ratio']}


@dataclass
class FormsReport(Report):
    instance: str
    seed: int
    pairs: int
    values: Dict[str, Any]
    measured: Dict[str, Any] = field(default_factory=dict)
    type: ClassVar[str] = "forms"


@dataclass
class DecompositionReport(Report):
    instance: str
    tau0: float
    threshold: float
    depth: int
    depth_bound: int
    c_max: float
    norm: float
    accumulated_bound: float
    energy: Dict[str, Any]
    tree: Dict[str, Any]
    failures: Dict[str, List[str]] = field(default_factory=dict)
    notes: Dict[str, int] = field(default_factory=dict)
    type: ClassVar[str] = "decomposition"


@dataclass
class VerifyReport(Report):
    instances: int
    checks: List[Dict[str, Any]]
    passed: bool
    c0: Optional[float] = None
    type: ClassVar[str] = "verify"

    def failures(self) -> List[Dict[str, Any]]:
        return [c for c in self.checks if not c['passed']]


@dataclass
class BatchReport(Report):
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any] = field(default_factory=dict)
    type: ClassVar[str] = "batch"


REPORT_TYPES: Dict[str, Type[Report]] = {
    ConstantsReport.type: ConstantsReport,
    FormsReport.type: FormsReport,
    DecompositionReport.type: DecompositionReport,
    VerifyReport.type: VerifyReport,
    BatchReport.type: BatchReport,
}


def format_cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return format(float(value), measure_cfg['csv']['float_format'])
    return str(value)


def dump_csv(rows: Sequence[Dict[str, Any]], stream: TextIO, columns: Optional[List[str]] = None) -> None:
    """One row per dict; columns default to the keys of the first row."""
    columns = columns or (list(rows[0]) if rows else [])
    writer = csv.writer(stream)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(c)) for c in columns])


def write_csv(rows: Sequence[Dict[str, Any]], path: Path, columns: Optional[List[str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        dump_csv(rows, f, columns)


def read_csv(path: Path) -> List[Dict[str, str]]:
    with Path(path).open(newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))
