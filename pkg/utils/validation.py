from datetime import datetime, timezone
from typing import Dict, Optional

import numpy as np

from utils.errors import DimensionMismatch


class MatrixValidator:
    @staticmethod
    def real_matrix(value, name: str, *, allow_empty: bool = False) -> np.ndarray:
        """Coerce to a finite, read-only 2-D float64 array.

        Scalars become 1x1 and 1-D input becomes a single row. Zero rows or
        columns are accepted only with ``allow_empty`` (block assembly).
        """
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError) as e:
            raise DimensionMismatch(f"{name}: not a real numeric matrix ({e})") from None
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionMismatch(f"{name}: expected a 2-D matrix, got {arr.ndim}-D")
        if not allow_empty and 0 in arr.shape:
            raise DimensionMismatch(f"{name}: empty matrix of shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionMismatch(f"{name}: contains NaN or Inf entries")
        arr.setflags(write=False)
        return arr

    @staticmethod
    def complex_matrix(value, name: str) -> np.ndarray:
        arr = np.atleast_2d(np.array(value, dtype=complex))
        if arr.ndim != 2:
            raise DimensionMismatch(f"{name}: expected a 2-D matrix, got {arr.ndim}-D")
        if not np.all(np.isfinite(arr)):
            raise DimensionMismatch(f"{name}: contains NaN or Inf entries")
        arr.setflags(write=False)
        return arr

    @staticmethod
    def square(arr: np.ndarray, name: str) -> int:
        if arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
        return arr.shape[0]

    @staticmethod
    def shape(arr: np.ndarray, name: str, rows: Optional[int] = None, cols: Optional[int] = None) -> None:
        if (rows is not None and arr.shape[0] != rows) or (cols is not None and arr.shape[1] != cols):
            expected = f"({'?' if rows is None else rows}, {'?' if cols is None else cols})"
            raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {expected}")

    @staticmethod
    def create_manifest(job_id: str, command: str, model_name: str,
                        report: Dict, outputs: Dict, status: str) -> Dict:
        """Create the run manifest written next to CLI outputs"""
        return {
            "job_id": job_id,
            "command": command,
            "model": model_name,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "report": report,
            "outputs": outputs,
            "status": status,
        }
