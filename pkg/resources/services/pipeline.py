"""Stage orchestration. Every stage reads its inputs from disk and writes under ``<outdir>/<stage>/``."""

import logging
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view

from resources.services.panel_store import PanelStore
from resources.services.report_models import (
    ComponentSummary,
    CrossBrainEntry,
    CrossEraEntry,
    DmncSummary,
    EraSummary,
    FactorSummary,
    RegimeRun,
    ReportBundle,
    UniverseWindowReport,
    passes_three_axis,
)
from resources.services.run_config import RunConfig
from resources.utils.component_registry import (
    EraAggregate,
    aggregate_era,
    align_to_reference,
    canonical_polarity,
    cross_era_similarity,
    icasso_consensus,
    occurrence_rate,
)
from resources.utils.dmnc_engine import (
    DmncTensor,
    build_dmnc,
    distance_to_baseline,
    edge_zscores,
    order_windows,
    similarity_jump,
    smooth_activations,
    structural_volatility,
)
from resources.utils.errors import (
    AssetOrderMismatch,
    ConfigError,
    InsufficientData,
    InsufficientOverlap,
    NoPositiveEdges,
    RankDeficient,
    ZeroVector,
)
from resources.utils.factor_engine import (
    FactorSeries,
    factor_index,
    project_returns,
    risk_shift_amplitude,
    risk_shift_curve,
    structural_overlap,
    temporal_synchrony,
)
from resources.utils.general_utils import GeneralUtils
from resources.utils.group_ica import ActivationMatrix, ComponentMap, activation_matrix, build_pseudo_subjects
from resources.utils.market_data import FeatureKind, clean_bars, compute_feature, era_mask, segment_eras
from resources.utils.network_metrics import detect_communities, global_efficiency, modularity
from resources.utils.regime_clustering import cluster_regimes, pca_embed, regime_timeline
from resources.utils.synth_bench import gen_synthetic_universe

logger = logging.getLogger(__name__)

STOCK = "stock"
ETF = "etf"
STAGES = ("features", "gica", "factors", "dmnc", "regimes", "report")
BASELINE_FALLBACK_SHARE = 0.1
VARIANCE_CONVENTIONS = {
    "structural_volatility": "population (ddof=0)",
    "edge_zscores": "sample (ddof=1)",
}


def _stamp(value) -> str:
    if isinstance(value, pd.Timestamp):
        return value.strftime("%Y-%m-%d")
    return str(int(value))


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ZeroVector("factor loading vector is zero")
    return vector / norm


def _window_means(series: np.ndarray, delta: int, stride: int) -> np.ndarray:
    """Mean of each column of a T x c array over the dMNC windows [t, t+delta)."""
    return sliding_window_view(series, delta, axis=0)[::stride].mean(axis=-1)


def _network_row(C: np.ndarray, absolute: bool) -> tuple[float, float, float]:
    efficiency = global_efficiency(C, absolute)
    try:
        labels = detect_communities(C, absolute)
        return efficiency, modularity(C, labels, absolute), float(max(labels) + 1)
    except NoPositiveEdges:
        return efficiency, float("nan"), float("nan")


class ConnectomePipeline:
    """Runs the stages of one configured study against a ``PanelStore``."""

    def __init__(self, cfg: RunConfig, store: Optional[PanelStore] = None) -> None:
        self.cfg = cfg
        self.store = store or PanelStore(cfg.outdir)

    # ------------- helpers ------------------

    def universes(self) -> tuple[str, ...]:
        return (STOCK, ETF) if self.cfg.etf_bars else (STOCK,)

    def pairs(self) -> list[tuple[str, int]]:
        return [(u, w) for u in self.universes() for w in self.cfg.window_lengths]

    def seed(self, *keys) -> int:
        return GeneralUtils.derive_seed(self.cfg.seed, *keys)

    def file(self, stage: str, name: str) -> Path:
        return self.store.path(stage, name)

    def feature_path(self, universe: str, kind: FeatureKind, w: int) -> Path:
        return self.file("features", f"{universe}_{FeatureKind(kind).value.lower()}_w{w}.csv")

    def raw_path(self, universe: str) -> Path:
        return self.file("features", f"{universe}_raw_logret.csv")

    def _parallel(self, fn: Callable, items: Iterable) -> list:
        items = list(items)
        if self.cfg.threads > 1 and len(items) > 1:
            return Parallel(n_jobs=self.cfg.threads, prefer="threads")(delayed(fn)(item) for item in items)
        return [fn(item) for item in items]

    def _fit_kwargs(self, threads: int) -> dict:
        cfg = self.cfg
        return {
            "subject_rank": cfg.subject_rank_value,
            "group_rank": cfg.group_rank_value,
            "scheme": cfg.resample_scheme,
            "tol": cfg.ica_tol,
            "max_iter": cfg.ica_max_iter,
            "threads": threads,
            "solver": cfg.ica_solver,
        }

    def _weights(self, etf_order, stock_order):
        if not self.cfg.etf_weights:
            return None
        return self.store.read_weights(Path(self.cfg.etf_weights), etf_order, stock_order)

    def run(self, stage: str):
        if stage == "all":
            return {name: self.run(name) for name in STAGES}
        handler = getattr(self, f"run_{stage}", None)
        if handler is None:
            raise ConfigError(f"unknown stage {stage!r}")
        logger.info("[%s] stage start: outdir=%s seed=%d threads=%d", stage.upper(), self.cfg.output_dir, self.cfg.seed, self.cfg.threads)
        return handler()

    # ------------- features ------------------

    def run_features(self) -> dict[str, Path]:
        cfg = self.cfg
        sources = {STOCK: cfg.input_bars, ETF: cfg.etf_bars}
        kinds = tuple(dict.fromkeys((*cfg.feature_kinds, cfg.ica_feature)))
        written = {}
        for universe in self.universes():
            if not sources[universe]:
                raise ConfigError("input_bars is not configured")
            prices, volumes = clean_bars(self.store.read_bars(Path(sources[universe])))
            raw = compute_feature(prices, volumes, FeatureKind.RAW_LOGRET, 1)
            written[f"{universe}_raw_logret"] = self.store.write_panel(raw, self.raw_path(universe))
            for kind in kinds:
                for w in cfg.window_lengths:
                    panel = compute_feature(prices, volumes, kind, w)
                    written[f"{universe}_{kind.value}_w{w}"] = self.store.write_panel(panel, self.feature_path(universe, kind, w))
            logger.info("[FEAT] universe=%s assets=%d dates=%d kinds=%s", universe, prices.n_assets, prices.n_dates, [k.value for k in kinds])
        return written

    # ------------- group ICA ------------------

    def run_gica(self) -> dict:
        references: dict = {}
        return {(u, w): self._gica_one(u, w, references) for u, w in self.pairs()}

    def _orient(self, universe: str, w: int, reference: ComponentMap, references: dict) -> ComponentMap:
        cfg = self.cfg
        if universe == STOCK:
            if not cfg.risk_on_assets:
                logger.info("[GICA] risk_on_assets not set; %s w=%d map left unlabelled", universe, w)
                return reference
            return canonical_polarity(reference, cfg.risk_on_assets, cfg.risk_off_assets or None)

        stock = references.get((STOCK, w))
        if stock is None or stock.risk_on is None or stock.risk_off is None:
            return reference
        weights = self._weights(reference.asset_order, stock.asset_order)
        if weights is None:
            logger.info("[GICA] etf_weights not set; ETF map w=%d left unlabelled", w)
            return reference
        # the ETF pair is the Hungarian counterpart of the stock pair through M
        match = structural_overlap(stock, reference, weights)
        on, off = int(match.permutation[stock.risk_on]), int(match.permutation[stock.risk_off])
        signs = np.ones(reference.K)
        signs[on] = match.signs[stock.risk_on]
        signs[off] = match.signs[stock.risk_off]
        return ComponentMap(reference.loadings * signs[:, None], reference.asset_order, reference.iq, reference.window_len, reference.labels, on, off)

    def _fit_era(self, universe: str, w: int, label: str, era_panel, reference: ComponentMap) -> tuple[EraAggregate, np.ndarray, pd.DatetimeIndex]:
        cfg = self.cfg
        if cfg.gica_mode == "global":
            return EraAggregate(label, reference, reference.iq.copy(), np.zeros(reference.K), 1), reference.iq[None, :], era_panel.dates[-1:]

        stack = build_pseudo_subjects(era_panel, w, cfg.window_fit_stride)
        seeds = [self.seed("gica", universe, w, label, i) for i in range(len(stack))]
        kwargs = self._fit_kwargs(1)

        def fit(i: int) -> ComponentMap:
            cmap = icasso_consensus(stack.subset([i]), cfg.icasso_runs, cfg.k_ica, base_seed=seeds[i], **kwargs)
            return align_to_reference(reference, cmap)[0]

        aligned = self._parallel(fit, range(len(stack)))
        return aggregate_era(aligned, label), np.vstack([m.iq for m in aligned]), stack.end_dates

    def _gica_one(self, universe: str, w: int, references: dict) -> dict:
        cfg = self.cfg
        tag = f"{universe}_w{w}"
        panel = self.store.read_panel(self.feature_path(universe, cfg.ica_feature, w))
        eras = segment_eras(panel, cfg.era_specs)
        stack = build_pseudo_subjects(panel, w, cfg.gica_stride)
        reference = icasso_consensus(stack, cfg.icasso_runs, cfg.k_ica, base_seed=self.seed("gica", universe, w, "reference"), **self._fit_kwargs(cfg.threads))
        reference = self._orient(universe, w, reference, references)
        references[(universe, w)] = reference
        self.store.write_component_map(reference, self.file("gica", f"{tag}_reference_map.csv"))
        self.store.write_activations(activation_matrix(reference, stack, cfg.zscore_activations), self.file("gica", f"{tag}_activations.csv"))

        aggregates, era_rows, pooled = [], [], []
        for label, era_panel in eras.items():
            aggregate, iq_series, dates = self._fit_era(universe, w, label, era_panel, reference)
            aggregates.append(aggregate)
            pooled.append(iq_series)
            self.store.write_component_map(aggregate.mean_map, self.file("gica", f"{tag}_{label}_map.csv"))
            iq_frame = pd.DataFrame(iq_series, index=dates, columns=list(reference.labels))
            iq_frame.index.name = "date"
            self.store.write_frame(iq_frame, self.file("gica", f"{tag}_{label}_iq.csv"))
            era_rows.append(
                {
                    "era": label,
                    "n_windows": aggregate.n_maps,
                    "median_iq": aggregate.median_iq,
                    "iqr_iq": aggregate.iqr_iq,
                    "occurrence_rate": [occurrence_rate(iq_series[:, k], cfg.iq_threshold) for k in range(reference.K)],
                }
            )
            logger.info("[GICA] universe=%s w=%d era=%s windows=%d median_iq=%s", universe, w, label, aggregate.n_maps, np.round(aggregate.median_iq, 3).tolist())

        cross, reproducibility = [], None
        if len(aggregates) >= 2:
            table = cross_era_similarity(aggregates)
            frame = pd.DataFrame(table.mean_abs_corr, index=list(table.labels), columns=list(table.labels))
            frame.index.name = "era"
            self.store.write_frame(frame, self.file("gica", f"{tag}_cross_era.csv"))
            for (a, b), match in table.pairs.items():
                cross.append({"era_a": a, "era_b": b, "mean_abs_corr": match.mean_abs_corr, "matched_abs_corr": match.matched_abs_corr})
            reproducibility = np.mean([m.matched_abs_corr for m in table.pairs.values()], axis=0)

        summary = {
            "universe": universe,
            "window_len": w,
            "gica_mode": cfg.gica_mode,
            "labels": reference.labels,
            "risk_on": reference.risk_on,
            "risk_off": reference.risk_off,
            "reference_iq": reference.iq,
            "noisy": reference.noisy,
            "stability": np.median(np.vstack(pooled), axis=0),
            "reproducibility": reproducibility,
            "eras": era_rows,
            "cross_era": cross,
        }
        self.store.write_json(summary, self.file("gica", f"{tag}_summary.json"))
        return summary

    # ------------- factors ------------------

    def run_factors(self) -> dict:
        return {(u, w): self._factors_one(u, w) for u, w in self.pairs()}

    def _project(self, universe: str, w: int, raw, reference: ComponentMap) -> tuple[np.ndarray, np.ndarray]:
        """Daily (z_on, z_off); with era maps each day uses its own era's pair, else the reference pair."""
        z_on, z_off = np.empty(raw.n_dates), np.empty(raw.n_dates)
        assigned = np.zeros(raw.n_dates, dtype=bool)
        if self.cfg.factor_maps == "era":
            for era in self.cfg.era_specs:
                mask = era_mask(raw.dates, era)
                if not mask.any():
                    continue
                era_map = self.store.read_component_map(self.file("gica", f"{universe}_w{w}_{era.label}_map.csv"), w)
                z_on[mask], z_off[mask] = project_returns(raw.values[mask], _unit(era_map.loadings[era_map.risk_on]), _unit(era_map.loadings[era_map.risk_off]))
                assigned |= mask
        rest = ~assigned
        if rest.any():
            z_on[rest], z_off[rest] = project_returns(raw.values[rest], _unit(reference.loadings[reference.risk_on]), _unit(reference.loadings[reference.risk_off]))
        return z_on, z_off

    def _factors_one(self, universe: str, w: int) -> Optional[dict]:
        cfg = self.cfg
        tag = f"{universe}_w{w}"
        reference = self.store.read_component_map(self.file("gica", f"{tag}_reference_map.csv"), w)
        if reference.risk_on is None or reference.risk_off is None:
            if universe == STOCK:
                raise ConfigError("factors need risk_on_assets to label the Risk-On / Risk-Off pair")
            logger.warning("[FACT] %s has no Risk-On / Risk-Off labels; skipped", tag)
            return None
        raw = self.store.read_panel(self.raw_path(universe))
        if raw.assets != reference.asset_order:
            raise AssetOrderMismatch(f"{tag}: return panel and component map disagree on assets")

        z_on, z_off = self._project(universe, w, raw, reference)
        series = FactorSeries(raw.dates, z_on, z_off, factor_index(z_on), factor_index(z_off))
        self.store.write_frame(series.to_frame(), self.file("factors", f"{tag}_factors.csv"))
        curve = risk_shift_curve(series, cfg.rho_window)
        self.store.write_frame(curve.to_frame(), self.file("factors", f"{tag}_rho{cfg.rho_window}.csv"))

        try:
            amplitude = risk_shift_amplitude(curve)
        except InsufficientData as e:
            logger.warning("[FACT] %s: %s", tag, e)
            amplitude = None
        defined = curve.rho[~np.isnan(curve.rho)]
        summary = {
            "n_days": raw.n_dates,
            "rho_window": cfg.rho_window,
            "risk_shift_amplitude": amplitude,
            "rho_min": float(defined.min()) if defined.size else None,
            "rho_max": float(defined.max()) if defined.size else None,
        }
        self.store.write_json(summary, self.file("factors", f"{tag}_summary.json"))
        logger.info("[FACT] %s days=%d amplitude=%s", tag, raw.n_dates, amplitude)
        return summary

    def read_factor_series(self, universe: str, w: int) -> Optional[FactorSeries]:
        path = self.file("factors", f"{universe}_w{w}_factors.csv")
        if not path.exists():
            return None
        frame = self.store.read_frame(path, index_col="date", parse_dates=["date"])
        return FactorSeries(frame.index, frame["z_on"], frame["z_off"], frame["idx_on"], frame["idx_off"])

    # ------------- dMNC ------------------

    def _build_tensor(self, acts: ActivationMatrix) -> DmncTensor:
        cfg = self.cfg
        return build_dmnc(acts, cfg.delta, cfg.dmnc_stride, cfg.window_fn, cfg.gaussian_sigma or None, cfg.threads)

    def _baseline(self, tensor: DmncTensor) -> Optional[np.ndarray]:
        """Windows ending in the baseline era, or the first max(dim+2, 10%) windows when that is too few."""
        cfg = self.cfg
        n = len(tensor)
        need = tensor.K * (tensor.K - 1) // 2 + 2
        era = next(e for e in cfg.era_specs if e.label == cfg.baseline_era)
        idx = np.array([], dtype=int)
        if isinstance(tensor.timestamps, pd.DatetimeIndex):
            idx = np.flatnonzero(era_mask(tensor.timestamps, era))
        usable = np.setdiff1d(idx, tensor.flagged)
        if usable.size >= need:
            return idx
        count = max(need, int(np.ceil(BASELINE_FALLBACK_SHARE * n)))
        if count > n:
            logger.warning("[DMNC] %d windows cannot supply a %d-window baseline; distance skipped", n, need)
            return None
        logger.warning("[DMNC] baseline era %s has %d usable windows (need %d); using the first %d windows", era.label, usable.size, need, count)
        return np.arange(count)

    def _tensor_metrics(self, tensor: DmncTensor) -> tuple[pd.DataFrame, pd.DataFrame, dict]:
        """Long metric table, per-window network table and a summary."""
        cfg = self.cfg
        stamps = tensor.timestamps
        series: dict[str, pd.Series] = {}
        if len(tensor) >= 2:
            series["similarity_jump"] = pd.Series(similarity_jump(tensor), index=stamps[1:])
            series["similarity_jump_frobenius"] = pd.Series(similarity_jump(tensor, "frobenius"), index=stamps[1:])
        if len(tensor) >= cfg.volatility_tau:
            tau = cfg.volatility_tau
            series["structural_volatility"] = pd.Series(structural_volatility(tensor, tau), index=stamps[tau - 1 :])
        baseline = self._baseline(tensor)
        if baseline is not None:
            try:
                series["distance_to_baseline"] = pd.Series(distance_to_baseline(tensor, baseline), index=stamps)
            except InsufficientData as e:
                logger.warning("[DMNC] %s; distance skipped", e)
                baseline = None

        network = pd.DataFrame(index=stamps, columns=["global_efficiency", "modularity", "n_communities"], dtype=float)
        if tensor.K >= 2:
            rows = self._parallel(lambda C: _network_row(C, cfg.absolute_weights), tensor.matrices)
            network = pd.DataFrame(rows, index=stamps, columns=["global_efficiency", "modularity", "n_communities"])
        for name in network.columns:
            series[name] = network[name]

        long = pd.concat(
            [pd.DataFrame({"timestamp": s.index, "metric": name, "value": s.to_numpy(dtype=float)}) for name, s in series.items()],
            ignore_index=True,
        )
        volatility = series.get("structural_volatility")
        jump = series.get("similarity_jump")
        summary = {
            "n_windows": len(tensor),
            "n_flagged": len(tensor.flagged),
            "structural_volatility_mean": None if volatility is None else float(np.nanmean(volatility)),
            "structural_volatility_max": None if volatility is None else float(np.nanmax(volatility)),
            "similarity_jump_max": None if jump is None or jump.isna().all() else float(np.nanmax(jump)),
            "baseline_windows": 0 if baseline is None else int(len(baseline)),
        }
        network.index.name = "timestamp"
        return long, network, summary

    def _write_edges(self, tensor: DmncTensor, path: Path) -> None:
        if len(tensor) < 3:
            logger.warning("[DMNC] %d windows are too few for edge z-scores", len(tensor))
            return
        edges = edge_zscores(tensor)
        edges.index.name = "timestamp"
        self.store.write_frame(edges, path)

    def run_dmnc(self) -> dict:
        out = {(u, w): self._dmnc_one(u, w) for u, w in self.pairs()}
        if self.cfg.node_dmnc:
            out["node"] = self._node_dmnc()
        return out

    def _dmnc_one(self, universe: str, w: int) -> dict:
        cfg = self.cfg
        tag = f"{universe}_w{w}"
        acts = self.store.read_activations(self.file("gica", f"{tag}_activations.csv"))
        acts = smooth_activations(acts, cfg.smoothing, cfg.smoothing_param or None)
        tensor = self._build_tensor(acts)
        self.store.write_tensor(tensor, self.file("dmnc", f"{tag}_tensor"), VARIANCE_CONVENTIONS)
        long, _, summary = self._tensor_metrics(tensor)
        self.store.write_frame(long, self.file("dmnc", f"{tag}_metrics.csv"), index=False)
        self._write_edges(tensor, self.file("dmnc", f"{tag}_edge_z.csv"))

        reference = self.store.read_component_map(self.file("gica", f"{tag}_reference_map.csv"), w)
        if reference.risk_on is not None and reference.risk_off is not None:
            coords = _window_means(acts.values[[reference.risk_on, reference.risk_off]].T, cfg.delta, cfg.dmnc_stride)
            ordered = order_windows(coords)
            frame = pd.DataFrame(
                {
                    "window": ordered.order,
                    "timestamp": tensor.timestamps[ordered.order],
                    "z_on": ordered.keys[ordered.order, 0],
                    "z_off": ordered.keys[ordered.order, 1],
                }
            )
            frame.index.name = "position"
            self.store.write_frame(frame, self.file("dmnc", f"{tag}_order.csv"))
        self.store.write_json(summary, self.file("dmnc", f"{tag}_summary.json"))
        logger.info("[DMNC] %s windows=%d flagged=%d", tag, summary["n_windows"], summary["n_flagged"])
        return summary

    def _node_dmnc(self) -> Optional[dict]:
        """Asset-level dMNC of daily returns, reordered by the windows' Risk-On / Risk-Off coordinates."""
        cfg = self.cfg
        universe = ETF if ETF in self.universes() else STOCK
        tag = f"node_{universe}"
        raw = self.store.read_panel(self.raw_path(universe))
        nodes = ActivationMatrix(raw.values.T, raw.assets, raw.dates)
        tensor = self._build_tensor(nodes)
        self.store.write_tensor(tensor, self.file("dmnc", f"{tag}_tensor"), VARIANCE_CONVENTIONS)
        long, network, summary = self._tensor_metrics(tensor)
        self.store.write_frame(long, self.file("dmnc", f"{tag}_metrics.csv"), index=False)
        self._write_edges(tensor, self.file("dmnc", f"{tag}_edge_z.csv"))

        series = self.read_factor_series(universe, cfg.window_lengths[0])
        if series is None:
            logger.warning("[DMNC] no factor series for %s; node windows left in time order", universe)
        else:
            daily = pd.DataFrame({"z_on": series.z_on, "z_off": series.z_off}, index=series.dates).reindex(raw.dates)
            coords = _window_means(daily.to_numpy(), cfg.delta, cfg.dmnc_stride)
            ordered = order_windows(coords)
            frame = network.iloc[ordered.order].reset_index()
            frame.insert(0, "window", ordered.order)
            frame.insert(2, "z_on", ordered.keys[ordered.order, 0])
            frame.insert(3, "z_off", ordered.keys[ordered.order, 1])
            frame.index.name = "position"
            self.store.write_frame(frame, self.file("dmnc", f"{tag}_ordered_metrics.csv"))
            self._write_edges(tensor.subset(ordered.order), self.file("dmnc", f"{tag}_ordered_edge_z.csv"))
        self.store.write_json(summary, self.file("dmnc", f"{tag}_summary.json"))
        return summary

    # ------------- regimes ------------------

    def run_regimes(self) -> dict:
        return {(u, w): self._regimes_one(u, w) for u, w in self.pairs()}

    def _regimes_one(self, universe: str, w: int) -> dict:
        cfg = self.cfg
        tag = f"{universe}_w{w}"
        tensor = self.store.read_tensor(self.file("dmnc", f"{tag}_tensor"))
        keep = np.setdiff1d(np.arange(len(tensor)), tensor.flagged)
        vectors = tensor.vectors()[keep]
        stamps = tensor.timestamps[keep]
        labeling = cluster_regimes(vectors, cfg.regime_k, self.seed("regimes", universe, w), cfg.regime_restarts, threads=cfg.threads)

        labels = pd.DataFrame({"label": labeling.labels}, index=stamps)
        labels.index.name = "timestamp"
        self.store.write_frame(labels, self.file("regimes", f"{tag}_labels.csv"))
        iu = np.triu_indices(tensor.K, 1)
        centroids = pd.DataFrame(labeling.centroids, columns=[f"{i}-{j}" for i, j in zip(iu[0], iu[1])])
        centroids.index.name = "label"
        self.store.write_frame(centroids, self.file("regimes", f"{tag}_centroids.csv"))

        dims = min(2, vectors.shape[1])
        try:
            coords, explained = pca_embed(vectors, dims)
            embedding = pd.DataFrame(coords, index=stamps, columns=[f"pc{d + 1}" for d in range(dims)])
            embedding["label"] = labeling.labels
            embedding.index.name = "timestamp"
            self.store.write_frame(embedding, self.file("regimes", f"{tag}_embedding.csv"))
        except RankDeficient as e:
            logger.warning("[REGIME] %s: embedding skipped (%s)", tag, e)
            explained = None

        timeline = regime_timeline(labeling.labels, stamps)
        self.store.write_frame(timeline, self.file("regimes", f"{tag}_timeline.csv"), index=False)
        summary = {
            "k": labeling.k,
            "inertia": labeling.inertia,
            "explained_variance": explained,
            "timeline": [
                {"start": _stamp(r.start), "end": _stamp(r.end), "label": int(r.label), "length": int(r.length)} for r in timeline.itertuples(index=False)
            ],
        }
        self.store.write_json(summary, self.file("regimes", f"{tag}_summary.json"))
        return summary

    # ------------- report ------------------

    def _optional_json(self, path: Path) -> Optional[dict]:
        if not path.exists():
            logger.info("[REPORT] %s not found; section omitted", path)
            return None
        return self.store.read_json(path)

    def _cross_brain(self) -> tuple[list[CrossBrainEntry], dict]:
        if ETF not in self.universes() or not self.cfg.etf_weights:
            return [], {}
        entries, overlap_by_w = [], {}
        for w in self.cfg.window_lengths:
            stock = self.store.read_component_map(self.file("gica", f"{STOCK}_w{w}_reference_map.csv"), w)
            etf = self.store.read_component_map(self.file("gica", f"{ETF}_w{w}_reference_map.csv"), w)
            match = structural_overlap(stock, etf, self._weights(etf.asset_order, stock.asset_order))
            overlap_by_w[w] = match.matched_abs_corr
            sync_on = sync_off = None
            stock_series, etf_series = self.read_factor_series(STOCK, w), self.read_factor_series(ETF, w)
            if stock_series is not None and etf_series is not None:
                try:
                    sync_on, sync_off = temporal_synchrony(stock_series, etf_series)
                except InsufficientOverlap as e:
                    logger.warning("[XBRAIN] w=%d: %s", w, e)
            entries.append(
                CrossBrainEntry(
                    window_len=w,
                    structural_overlap=match.matched_abs_corr.tolist(),
                    structural_overlap_mean=match.mean_abs_corr,
                    synchrony_on=sync_on,
                    synchrony_off=sync_off,
                )
            )
            logger.info("[XBRAIN] w=%d overlap=%.4f synchrony=(%s, %s)", w, match.mean_abs_corr, sync_on, sync_off)
        return entries, overlap_by_w

    def _entry(self, universe: str, w: int, overlap: Optional[np.ndarray]) -> UniverseWindowReport:
        tag = f"{universe}_w{w}"
        gica = self.store.read_json(self.file("gica", f"{tag}_summary.json"))
        reproducibility = gica["reproducibility"]
        components = []
        for k, label in enumerate(gica["labels"]):
            role = "risk_on" if k == gica["risk_on"] else "risk_off" if k == gica["risk_off"] else None
            stability = gica["stability"][k]
            repro = None if reproducibility is None else reproducibility[k]
            general = None if overlap is None else float(overlap[k])
            components.append(
                ComponentSummary(
                    label=label,
                    role=role,
                    stability=stability,
                    noisy=gica["noisy"][k],
                    reproducibility=repro,
                    generalizability=general,
                    passes_three_axis=passes_three_axis(stability, repro, general),
                    occurrence_rate={era["era"]: era["occurrence_rate"][k] for era in gica["eras"]},
                )
            )

        factors = self._optional_json(self.file("factors", f"{tag}_summary.json"))
        dmnc = self._optional_json(self.file("dmnc", f"{tag}_summary.json"))
        regimes = self._optional_json(self.file("regimes", f"{tag}_summary.json"))
        dmnc_summary = None
        if dmnc is not None:
            dmnc_summary = DmncSummary(
                **dmnc,
                regime_k=None if regimes is None else regimes["k"],
                regime_timeline=[] if regimes is None else [RegimeRun(**run) for run in regimes["timeline"]],
            )
        return UniverseWindowReport(
            universe=universe,
            window_len=w,
            gica_mode=gica["gica_mode"],
            components=components,
            eras=[EraSummary(era=e["era"], n_windows=e["n_windows"], median_iq=e["median_iq"], iqr_iq=e["iqr_iq"]) for e in gica["eras"]],
            cross_era=[CrossEraEntry(**row) for row in gica["cross_era"]],
            factors=None if factors is None else FactorSummary(**factors),
            dmnc=dmnc_summary,
        )

    def run_report(self) -> ReportBundle:
        cfg = self.cfg
        cross_brain, overlap_by_w = self._cross_brain()
        entries = [self._entry(u, w, overlap_by_w.get(w) if u == STOCK else None) for u, w in self.pairs()]
        bundle = ReportBundle(
            seed=cfg.seed,
            config=cfg.model_dump(mode="json", exclude={"output_dir", "threads"}),
            iq_threshold=cfg.iq_threshold,
            entries=entries,
            cross_brain=cross_brain,
        )
        self.store.write_json(bundle.model_dump(mode="json"), self.file("report", "report.json"))
        self.store.write_json(ReportBundle.model_json_schema(), self.file("report", "report_schema.json"))
        self._report_tables(entries)
        GeneralUtils.pretty_print_json(bundle.config, mode="debug")
        logger.info("[REPORT] %d entries, %d cross-brain rows", len(entries), len(cross_brain))
        return bundle

    def _report_tables(self, entries: list[UniverseWindowReport]) -> None:
        cross, occurrence, components, shifts, timelines = [], [], [], [], []
        for e in entries:
            key = {"universe": e.universe, "window_len": e.window_len}
            cross += [{**key, "era_a": c.era_a, "era_b": c.era_b, "mean_abs_corr": c.mean_abs_corr} for c in e.cross_era]
            for c in e.components:
                occurrence += [{**key, "era": era, "component": c.label, "occurrence_rate": rate} for era, rate in c.occurrence_rate.items()]
                components.append({**key, **c.model_dump(exclude={"occurrence_rate"})})
            if e.factors is not None:
                shifts.append({**key, "rho_window": e.factors.rho_window, "risk_shift_amplitude": e.factors.risk_shift_amplitude})
            if e.dmnc is not None:
                timelines += [{**key, **run.model_dump()} for run in e.dmnc.regime_timeline]

        volatility = []
        for u, w in self.pairs():
            path = self.file("dmnc", f"{u}_w{w}_metrics.csv")
            if path.exists():
                metrics = self.store.read_frame(path)
                rows = metrics[metrics["metric"] == "structural_volatility"]
                volatility.append(rows.drop(columns="metric").assign(universe=u, window_len=w)[["universe", "window_len", "timestamp", "value"]])

        tables = {
            "cross_era.csv": pd.DataFrame(cross, columns=["universe", "window_len", "era_a", "era_b", "mean_abs_corr"]),
            "occurrence_rates.csv": pd.DataFrame(occurrence, columns=["universe", "window_len", "era", "component", "occurrence_rate"]),
            "components.csv": pd.DataFrame(components),
            "risk_shift.csv": pd.DataFrame(shifts, columns=["universe", "window_len", "rho_window", "risk_shift_amplitude"]),
            "regime_timeline.csv": pd.DataFrame(timelines, columns=["universe", "window_len", "start", "end", "label", "length"]),
            "structural_volatility.csv": pd.concat(volatility, ignore_index=True) if volatility else pd.DataFrame(columns=["universe", "window_len", "timestamp", "value"]),
        }
        for name, frame in tables.items():
            self.store.write_frame(frame, self.file("report", name), index=False)

    # ------------- synthetic ------------------

    def run_synth(self) -> dict[str, Path]:
        cfg = self.cfg
        universe = gen_synthetic_universe(
            cfg.synth_assets,
            cfg.synth_days,
            cfg.synth_modules,
            self.seed("synth"),
            cfg.synth_etfs,
            cfg.synth_basket_size,
            cfg.synth_start,
        )
        written = {"bars": self.store.write_frame(universe["bars"], self.file("synth", "bars.csv"), index=False)}
        mixing = pd.DataFrame(universe["model"].mixing, index=universe["tickers"], columns=[f"IC{k + 1}" for k in range(cfg.synth_modules)])
        mixing.index.name = "asset"
        written["mixing"] = self.store.write_frame(mixing, self.file("synth", "true_mixing.csv"))
        if "etf_bars" in universe:
            written["etf_bars"] = self.store.write_frame(universe["etf_bars"], self.file("synth", "etf_bars.csv"), index=False)
            weights = universe["etf_weights"]
            weights.index.name = "etf"
            written["etf_weights"] = self.store.write_frame(weights, self.file("synth", "etf_weights.csv"))
        logger.info("[SYNTH] wrote %s", sorted(written))
        return written
