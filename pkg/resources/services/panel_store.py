"""CSV / JSON persistence for panels, matrices, component maps and dMNC tensors."""

import json
import logging
from contextlib import contextmanager
from pathlib import Path
from time import perf_counter
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from resources.utils.dmnc_engine import DmncTensor, WindowFn
from resources.utils.errors import DimensionMismatch, InputError, MalformedRow
from resources.utils.factor_engine import EtfStockWeights
from resources.utils.general_utils import FLOAT_FORMAT, GeneralUtils
from resources.utils.group_ica import ActivationMatrix, ComponentMap
from resources.utils.market_data import AssetPanel, DailyBar, FeatureKind, load_bars

logger = logging.getLogger(__name__)

DATE_FORMAT = "%Y-%m-%d"
ROLE_ON = "risk_on"
ROLE_OFF = "risk_off"
META_SUFFIX = ".meta"


def _with_path(e: InputError, path: Path) -> InputError:
    e.args = (f"{path}: {e}",)
    return e


class PanelStore:
    """Reads and writes every pipeline artefact with a fixed text format.

    Floats use ``%.17g`` and dates ``YYYY-MM-DD`` so a rerun reproduces identical bytes.
    """

    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    @contextmanager
    def _timed(self, verb: str, path: Path) -> Iterator[None]:
        start = perf_counter()
        try:
            yield
        except OSError as e:
            elapsed_ms = int((perf_counter() - start) * 1000)
            logger.error("[IO] %s %s failed in %dms: %s", verb, path, elapsed_ms, e)
            raise
        logger.debug("[IO] %s %s in %dms", verb, path, int((perf_counter() - start) * 1000))

    def _require(self, path: Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise InputError(f"file not found: {path}")
        return path

    # ------------- generic ------------------

    def write_frame(self, frame: pd.DataFrame, path: Path, index: bool = True) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._timed("wrote", path):
            frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, date_format=DATE_FORMAT, lineterminator="\n")
        return path

    def read_frame(self, path: Path, **kwargs) -> pd.DataFrame:
        path = self._require(path)
        with self._timed("read", path):
            return pd.read_csv(path, **kwargs)

    def write_json(self, obj, path: Path) -> Path:
        path = Path(path)
        with self._timed("wrote", path):
            GeneralUtils.dump_json(obj, path)
        return path

    def read_json(self, path: Path):
        path = self._require(path)
        with self._timed("read", path):
            return json.loads(path.read_text(encoding="utf-8"))

    def write_matrix(self, matrix: np.ndarray, path: Path) -> Path:
        """Row-major CSV preceded by ``# rows=<r> cols=<c>``."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# rows={matrix.shape[0]} cols={matrix.shape[1]}"]
        lines += [",".join(GeneralUtils.fmt(v) for v in row) for row in matrix]
        with self._timed("wrote", path):
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def read_matrix(self, path: Path) -> np.ndarray:
        path = self._require(path)
        with self._timed("read", path):
            lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# rows="):
            raise MalformedRow(1, f"{path}: missing '# rows=<r> cols=<c>' header")
        header = dict(part.split("=") for part in lines[0][1:].split())
        rows, cols = int(header["rows"]), int(header["cols"])
        values = np.array([[float(v) if v else np.nan for v in line.split(",")] for line in lines[1:]], dtype=float).reshape(rows, cols)
        return values

    # ------------- bars / panels ------------------

    def read_bars(self, path: Path) -> list[DailyBar]:
        path = self._require(path)
        try:
            with self._timed("read", path):
                return load_bars(path)
        except InputError as e:
            raise _with_path(e, path)

    def write_panel(self, panel: AssetPanel, path: Path) -> Path:
        path = Path(path)
        self.write_frame(panel.to_frame(), path)
        meta = f"feature_kind = {panel.feature_kind.value}\nwindow_len = {panel.window_len}\n"
        path.with_suffix(path.suffix + META_SUFFIX).write_text(meta, encoding="utf-8")
        return path

    def read_panel(self, path: Path) -> AssetPanel:
        path = self._require(path)
        meta_path = path.with_suffix(path.suffix + META_SUFFIX)
        meta = {}
        if meta_path.exists():
            for line in meta_path.read_text(encoding="utf-8").splitlines():
                if "=" in line:
                    key, value = line.split("=", 1)
                    meta[key.strip()] = value.strip()
        frame = self.read_frame(path, index_col="date", parse_dates=["date"])
        return AssetPanel.from_frame(frame, FeatureKind(meta.get("feature_kind", FeatureKind.PRICE.value)), int(meta.get("window_len", 1)))

    def read_weights(self, path: Path, etf_order=None, stock_order=None) -> EtfStockWeights:
        """ETF rows by stock columns; reordered to the given universes when supplied."""
        frame = self.read_frame(path, index_col=0)
        frame.index = frame.index.astype(str)
        frame.columns = frame.columns.astype(str)
        try:
            if etf_order is not None:
                frame = frame.loc[list(etf_order)]
            if stock_order is not None:
                frame = frame.reindex(columns=list(stock_order), fill_value=0.0)
        except KeyError as e:
            raise _with_path(DimensionMismatch(f"weight matrix lacks ETFs {e}"), Path(path)) from None
        return EtfStockWeights(frame.to_numpy(dtype=float), tuple(frame.index), tuple(frame.columns))

    # ------------- maps / activations ------------------

    def write_component_map(self, cmap: ComponentMap, path: Path) -> Path:
        roles = [ROLE_ON if k == cmap.risk_on else ROLE_OFF if k == cmap.risk_off else "" for k in range(cmap.K)]
        frame = cmap.to_frame()
        frame.insert(0, "noisy", cmap.noisy.astype(int))
        frame.insert(0, "iq", cmap.iq)
        frame.insert(0, "role", roles)
        return self.write_frame(frame, path)

    def read_component_map(self, path: Path, window_len: int) -> ComponentMap:
        frame = self.read_frame(path, index_col="component", keep_default_na=False)
        roles = list(frame["role"].astype(str))
        risk_on = roles.index(ROLE_ON) if ROLE_ON in roles else None
        risk_off = roles.index(ROLE_OFF) if ROLE_OFF in roles else None
        loadings = frame.drop(columns=["role", "iq", "noisy"])
        return ComponentMap(
            loadings=loadings.to_numpy(dtype=float),
            asset_order=tuple(str(c) for c in loadings.columns),
            iq=frame["iq"].to_numpy(dtype=float),
            window_len=window_len,
            labels=tuple(str(i) for i in frame.index),
            risk_on=risk_on,
            risk_off=risk_off,
        )

    def write_activations(self, acts: ActivationMatrix, path: Path) -> Path:
        return self.write_frame(acts.to_frame(), path)

    def read_activations(self, path: Path) -> ActivationMatrix:
        frame = self.read_frame(path, index_col=0)
        dates = pd.DatetimeIndex(pd.to_datetime(frame.index)) if frame.index.name == "date" else None
        return ActivationMatrix(frame.to_numpy(dtype=float).T, tuple(frame.columns), dates)

    # ------------- tensors ------------------

    def write_tensor(self, tensor: DmncTensor, directory: Path, variance_conventions: Optional[dict] = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        start = perf_counter()
        files = []
        for i, matrix in enumerate(tensor.matrices):
            name = f"window_{i:06d}.csv"
            self.write_matrix(matrix, directory / name)
            files.append(name)
        manifest = {
            "delta": tensor.delta,
            "stride": tensor.stride,
            "window_fn": tensor.window_fn.value,
            "sigma": tensor.sigma,
            "K": tensor.K,
            "timestamps": [_stamp(t) for t in tensor.timestamps],
            "files": files,
            "flagged": list(tensor.flagged),
            "variance_conventions": variance_conventions or {},
        }
        self.write_json(manifest, directory / "manifest.json")
        logger.info("[IO] wrote tensor %s (%d windows) in %dms", directory, len(files), int((perf_counter() - start) * 1000))
        return directory

    def read_tensor(self, directory: Path) -> DmncTensor:
        directory = Path(directory)
        manifest = self.read_json(directory / "manifest.json")
        matrices = np.stack([self.read_matrix(directory / name) for name in manifest["files"]])
        stamps = manifest["timestamps"]
        timestamps = pd.DatetimeIndex(pd.to_datetime(stamps)) if stamps and isinstance(stamps[0], str) else pd.Index(stamps)
        return DmncTensor(
            matrices,
            timestamps,
            manifest["delta"],
            WindowFn(manifest["window_fn"]),
            manifest["sigma"],
            manifest["stride"],
            tuple(manifest["flagged"]),
        )


def _stamp(value):
    if isinstance(value, pd.Timestamp):
        return value.strftime(DATE_FORMAT)
    return int(value)
