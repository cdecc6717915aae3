"""
Artifact Writers
JSON summaries and CSV tables for experiment runs. Every file ends with a metadata
block (config hash, seed, version) and carries no timestamps, so identical runs
produce identical bytes.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .plant import ClosedLoopTrace, CostSpec
from .selection import SelectionResult, StudySummary

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PACKAGE_VERSION = "0.1.0"


def metadata_block(config_hash: str, seed: int, command: str) -> Dict[str, Any]:
    return {"command": command, "config_hash": config_hash, "seed": seed, "version": PACKAGE_VERSION}


def _plain(value: Any) -> Any:
    """numpy scalars / arrays / tuples to JSON-native values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path: Path, payload: Dict[str, Any], metadata: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = dict(_plain(payload))
    document["metadata"] = metadata
    path.write_text(json.dumps(document, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    logger.info(f"✅ Wrote {path}")
    return path


def write_csv(path: Path, frame: pd.DataFrame, metadata: Dict[str, Any]) -> Path:
    """Comma-separated with header and LF endings; metadata follows as '#' comment lines"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    footer = "".join(f"# {key}={value}\n" for key, value in metadata.items())
    path.write_text(body + footer, encoding="utf-8")
    logger.info(f"✅ Wrote {path} ({len(frame)} rows)")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def closed_loop_row(study: StudySummary) -> Dict[str, Any]:
    """Mean over repetitions; kernel and phi from the best run of the majority kernel"""
    kernel = study.majority_kernel
    runs = [r for r in study.results if r.kernel_name == kernel]
    best = min(runs, key=lambda r: (r.cost, r.seed))
    costs = study.final_costs
    return {
        "method": "Closed-loop",
        "kernel": kernel,
        "phi": list(best.kernel_phi),
        "svr_epsilon": best.svr_epsilon,
        "noise_sigma": best.noise_sigma,
        "loss": float(np.mean([r.loss for r in study.results])),
        "cost": float(costs.mean()),
        "cost_std": float(costs.std()),
        "runs": len(study.results),
        "kernel_counts": study.kernel_counts,
    }


def table2_payload(data_based: SelectionResult, study: StudySummary,
                   data_based_at: Optional[SelectionResult] = None) -> Dict[str, Any]:
    rows: List[Dict[str, Any]] = [data_based.to_dict()]
    if data_based_at is not None:
        rows.append(data_based_at.to_dict())
    rows.append(closed_loop_row(study))
    corollary = bool(np.all(study.final_costs <= data_based.cost))
    return {"rows": rows, "closed_loop_never_worse": corollary}


def errors_frame(traces: Dict[str, Optional[ClosedLoopTrace]], cost_spec: CostSpec) -> pd.DataFrame:
    """Long-format control-error traces, one block per method"""
    frames = []
    for method, trace in traces.items():
        if trace is None:
            logger.warning(f"⚠️ No closed-loop trace for {method}; omitted from error table")
            continue
        frame = trace.to_frame(cost_spec)
        frame.insert(0, "method", method)
        frame["error"] = trace.errors()
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["method", "k", "x", "u", "y", "cost_increment", "error"])
    return pd.concat(frames, ignore_index=True)


def first_trace(traces: Sequence[ClosedLoopTrace]) -> Optional[ClosedLoopTrace]:
    return traces[0] if traces else None
