import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class GeneralUtils:
    """Handles JSON output, seed expansion and number formatting"""

    @staticmethod
    def to_jsonable(obj: Any) -> Any:
        """Convert numpy scalars/arrays and non-finite floats into plain JSON values"""
        if isinstance(obj, dict):
            return {str(k): GeneralUtils.to_jsonable(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [GeneralUtils.to_jsonable(v) for v in obj]
        if isinstance(obj, np.ndarray):
            return GeneralUtils.to_jsonable(obj.tolist())
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating, float)):
            value = float(obj)
            return value if math.isfinite(value) else None
        if isinstance(obj, np.bool_):
            return bool(obj)
        return obj

    @staticmethod
    def pretty_print_json(json_obj, mode="info") -> None:
        """Format and log JSON data"""
        json_parser = json.dumps(GeneralUtils.to_jsonable(json_obj), indent=4, sort_keys=True)
        if mode.lower() == "info":
            logger.info("\n" + json_parser)
        elif mode.lower() == "debug":
            logger.debug("\n" + json_parser)
        else:
            print("\n" + json_parser)

    @staticmethod
    def dump_json(json_obj, path: Path) -> Path:
        """Write JSON with sorted keys so reruns produce identical bytes"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(GeneralUtils.to_jsonable(json_obj), indent=2, sort_keys=True, allow_nan=False)
        path.write_text(text + "\n", encoding="utf-8")
        return path

    @staticmethod
    def derive_seed(root_seed: int, *keys) -> int:
        """Expand the root seed into an independent 64-bit seed for a named stage"""
        h = hashlib.blake2b(digest_size=8)
        h.update(str(int(root_seed)).encode("utf-8"))
        for key in keys:
            h.update(b"/")
            h.update(str(key).encode("utf-8"))
        return int.from_bytes(h.digest(), "big")

    @staticmethod
    def fmt(value: float) -> str:
        """Exact, round-trippable text for one float; missing values become empty cells"""
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return ""
        return FLOAT_FORMAT % value
