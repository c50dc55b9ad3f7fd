"""End-to-end experiment: generate, split, train HMMs, featurise, train, evaluate, report.

Each stage reads its inputs from and writes its outputs to the run
directory, so any stage can be re-run on its own. All artifacts have
stable names::

    data/transactions.csv
    split/split.json  split/subsets.csv  split/counts.csv
    hmm/w{w}_k{k}/<perspective>.json  hmm/w{w}_k{k}/fit_report.csv
    features/base.csv(+.meta.json)  features/hmm_w{w}_k{k}.csv(+.meta.json)
    train/params.json  train/grid_<job>.csv
    evaluate/results.csv  evaluate/curves/<job>_seed{s}.csv
    report/comparison.csv|txt  report/sweep.csv|txt  report/missing_values.csv|txt
    manifest.json
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .evalkit import aligned, comparison_csv, comparison_table, comparison_text, pr_curve, summarize
from .featurize import (AGG_COLUMNS, FEATURE_SETS, HMM_COLUMNS, RAW_COLUMNS, LabelEncoder, assemble,
                        compute_aggregates, compute_hmm_features, file_sha256, history_complete, raw_block)
from .ghmm import fit_hmm, load_hmm, save_hmm
from .learners import FAMILIES, grid_search, make_params
from .learners.ensembles import HistoryBank, fit_specialists, stacked_rf, weighted_pr_ensemble
from .seqcorpus import PERSPECTIVES, Actor, HistoryIndex, build_corpora, group_by_actor
from .syngen import GeneratorConfig, generate
from .txmodel import SUBSETS, DatasetSplit, assign_subsets, load_transactions, save_transactions

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGES = ("generate", "split", "train-hmms", "featurize", "train", "evaluate", "report")
STRATEGIES = ("default0", "weighted_pr", "stacked_rf", "exclude")
SWEEP_STRATEGIES = ("exclude_common", "default0")
HISTORY_WINDOWS = (3, 5, 7)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------- configuration

@dataclass
class SplitSettings:
    train: tuple = ("2015-03-01", "2015-04-26")
    validation: tuple = ("2015-04-27", "2015-04-30")
    test: tuple = ("2015-05-08", "2015-05-31")
    gap_days: int = 7

    def to_split(self) -> DatasetSplit:
        return DatasetSplit.from_dates(tuple(self.train), tuple(self.validation), tuple(self.test), self.gap_days)


@dataclass
class HmmSettings:
    windows: list = field(default_factory=lambda: [3])
    states: list = field(default_factory=lambda: [5])
    restarts: int = 1
    max_iter: int = 100
    tol: float = 1e-4
    seed: int = 0


@dataclass
class ClassifierSettings:
    family: str = "rf"
    # parameters applied to every fit; grid cells override them
    params: dict = field(default_factory=lambda: {"n_trees": 100, "n_features_per_split": 7})
    grid_search: bool = False
    grid: dict | None = None  # None = the family's published grid


@dataclass
class PipelineConfig:
    out: str = "runs/default"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    workers: int = 1
    data: str | None = None  # transaction CSV; when None the generator is used
    generator: GeneratorConfig | None = field(default_factory=GeneratorConfig)
    split: SplitSettings = field(default_factory=SplitSettings)
    hmm: HmmSettings = field(default_factory=HmmSettings)
    feature_sets: list = field(default_factory=lambda: ["raw", "raw+aggCH", "raw+aggCH+HMM", "raw+allagg",
                                                        "raw+allagg+HMM"])
    # strategy for the feature-set comparison
    missing: str = "default0"
    # strategy for the sweep: "exclude_common" scores every cell on the transactions with
    # full history for the largest swept window, so cells differ only in their features
    sweep_missing: str = "exclude_common"
    # strategies of the missing-value report (empty = no report)
    missing_report: list = field(default_factory=list)
    missing_base: str = "raw"
    sweep_feature_set: str = "raw+HMM"
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for w in self.hmm.windows:
            if w not in HISTORY_WINDOWS:
                raise ConfigError(f"window sizes must be in {HISTORY_WINDOWS}, got {w}")
        for k in self.hmm.states:
            if k not in (3, 5, 7):
                raise ConfigError(f"hidden-state counts must be in (3, 5, 7), got {k}")
        if not self.hmm.windows or not self.hmm.states:
            raise ConfigError("at least one window and one hidden-state count are required")
        for fs in self.feature_sets + [self.sweep_feature_set]:
            if fs not in FEATURE_SETS:
                raise ConfigError(f"unknown feature set {fs!r}; choose from {sorted(FEATURE_SETS)}")
        if self.missing not in ("default0", "exclude"):
            raise ConfigError("missing must be 'default0' or 'exclude' for the comparison; the ensemble "
                              "strategies belong in missing_report")
        if self.sweep_missing not in SWEEP_STRATEGIES:
            raise ConfigError(f"sweep_missing must be one of {SWEEP_STRATEGIES}")
        for s in self.missing_report:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown missing-value strategy {s!r}; choose from {STRATEGIES}")
        if self.missing_base not in ("raw", "raw+aggCH", "raw+allagg"):
            raise ConfigError("missing_base must be a feature set without HMM features")
        if self.classifier.family not in FAMILIES:
            raise ConfigError(f"unknown classifier family {self.classifier.family!r}")
        if self.missing_report and self.classifier.family != "rf" and \
                {"weighted_pr", "stacked_rf"} & set(self.missing_report):
            raise ConfigError("the ensemble strategies are built from random forests; use family = 'rf'")
        if self.data is None and self.generator is None:
            raise ConfigError("either data or [generator] is required")
        if self.data is not None and not Path(self.data).exists():
            raise ConfigError(f"data file {self.data} does not exist")

    # ------------------------------------------------------------ derived

    @property
    def primary_cell(self) -> tuple[int, int]:
        return self.hmm.windows[0], self.hmm.states[0]

    @property
    def sweep_cells(self) -> list[tuple[int, int]]:
        return [(w, k) for k in self.hmm.states for w in self.hmm.windows]

    def hmm_cells(self) -> list[tuple[int, int]]:
        cells = list(self.sweep_cells)
        if {"weighted_pr", "stacked_rf"} & set(self.missing_report):
            k = self.primary_cell[1]
            cells += [(w, k) for w in HISTORY_WINDOWS]
        return sorted(set(cells))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = self.generator.to_dict() if self.generator is not None else None
        d["split"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["split"].items()}
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = copy.deepcopy(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "data" in d and "generator" not in d:
            d["generator"] = None
        if d.get("generator") is not None:
            d["generator"] = GeneratorConfig.from_dict(d["generator"])
        for key, sub in (("split", SplitSettings), ("hmm", HmmSettings), ("classifier", ClassifierSettings)):
            if key in d:
                allowed = {f.name for f in fields(sub)}
                bad = set(d[key]) - allowed
                if bad:
                    raise ConfigError(f"unknown [{key}] keys: {sorted(bad)}")
                d[key] = sub(**d[key])
        return cls(**d)


def load_config(path) -> PipelineConfig:
    with open(path, "rb") as fh:
        return PipelineConfig.from_dict(tomllib.load(fh))


# ---------------------------------------------------------------- helpers

def _tag(cell) -> str:
    return "nohmm" if cell is None else f"w{cell[0]}_k{cell[1]}"


def _job_name(cell, fs: str) -> str:
    return f"{_tag(cell)}__{fs}"


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_frame(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"tx_id": str, "subset": str}, float_precision="round_trip",
                       keep_default_na=False, na_values=[""])


def _fmt(x: float) -> str:
    return f"{x:.6f}"


class Run:
    """Stage runner bound to a config and its output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def stage(self, name: str):
        fn = getattr(self, "stage_" + name.replace("-", "_"))
        log.info("stage %s", name)
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:  # persist what exists, name the stage
            raise StageError(name, exc) from exc

    def run(self, stages=STAGES) -> Path:
        for s in stages:
            self.stage(s)
        return self.out

    # ------------------------------------------------------------ generate

    def stage_generate(self) -> None:
        target = self.path("data", "transactions.csv")
        if self.cfg.data is not None:
            save_transactions(load_transactions(self.cfg.data), target)
        else:
            save_transactions(generate(self.cfg.generator), target)

    # ------------------------------------------------------------ split

    def stage_split(self) -> None:
        df = load_transactions(self.path("data", "transactions.csv"))
        split = self.cfg.split.to_split()
        subset = assign_subsets(df["timestamp"].to_numpy(), split)
        dropped = int((subset == "").sum())
        if dropped:
            log.info("dropping %d transactions outside the split ranges", dropped)
        self.path("split", "split.json").write_text(json.dumps(split.to_dict(), indent=1))
        keep = subset != ""
        pd.DataFrame({"tx_id": df["tx_id"][keep], "subset": subset[keep]}).to_csv(
            self.path("split", "subsets.csv"), index=False, lineterminator="\n")
        rows = []
        for name in SUBSETS:
            m = subset == name
            if not m.any():
                log.warning("%s subset is empty", name)
            rows.append([name, int(m.sum()), int(df["label"].to_numpy()[m].sum())])
        rows.append(["dropped", dropped, int(df["label"].to_numpy()[~keep].sum())])
        _write_csv(self.path("split", "counts.csv"), ["subset", "n_transactions", "n_frauds"], rows)

    def _scoped_frame(self) -> tuple[pd.DataFrame, np.ndarray]:
        """Transactions inside the split ranges with their subset names."""
        df = load_transactions(self.path("data", "transactions.csv"))
        sub = pd.read_csv(self.path("split", "subsets.csv"), dtype=str)
        df = df[df["tx_id"].isin(set(sub["tx_id"]))].reset_index(drop=True)
        if not np.array_equal(df["tx_id"].to_numpy(), sub["tx_id"].to_numpy()):
            raise RuntimeError("split/subsets.csv does not match data/transactions.csv; re-run split")
        return df, sub["subset"].to_numpy()

    # ------------------------------------------------------------ train-hmms

    def stage_train_hmms(self) -> None:
        df, subset = self._scoped_frame()
        train = df[subset == "train"].reset_index(drop=True)
        cards = group_by_actor(train, Actor.CARD_HOLDER)
        terms = group_by_actor(train, Actor.TERMINAL)
        h = self.cfg.hmm
        jobs, meta = [], []
        for w, k in self.cfg.hmm_cells():
            corpora = build_corpora(cards, terms, w)
            for p in PERSPECTIVES:
                c = corpora[p]
                jobs.append((c.sequences, k, h.seed, h.restarts, h.max_iter, h.tol))
                meta.append((w, k, p, len(c), c.n_observations))
        if self.cfg.workers > 1:
            with ProcessPoolExecutor(self.cfg.workers) as ex:
                fitted = list(ex.map(_fit_job, jobs))
        else:
            fitted = [_fit_job(j) for j in jobs]
        reports = {}
        for (w, k, p, n_seq, n_obs), (model, rep) in zip(meta, fitted):
            model.metadata.update({"perspective": p.name, "window": w, "n_states": k, "n_sequences": n_seq})
            save_hmm(model, self.path("hmm", _tag((w, k)), f"{p.name}.json"))
            reports.setdefault((w, k), []).append(
                [p.name, n_seq, n_obs, rep.n_iterations, int(rep.converged), repr(rep.loglik_trajectory[-1])])
        for cell, rows in reports.items():
            _write_csv(self.path("hmm", _tag(cell), "fit_report.csv"),
                       ["perspective", "n_sequences", "n_observations", "n_iterations", "converged",
                        "final_loglik"], rows)

    def load_models(self, cell) -> list:
        return [load_hmm(self.path("hmm", _tag(cell), f"{p.name}.json")) for p in PERSPECTIVES]

    # ------------------------------------------------------------ featurize

    def stage_featurize(self) -> None:
        df, subset = self._scoped_frame()
        # one index over train + validation + gap + test: history never looks ahead
        index = HistoryIndex(df)
        encoder = LabelEncoder.fit(df[subset == "train"])
        base = pd.DataFrame(raw_block(df, encoder), columns=RAW_COLUMNS)
        base[AGG_COLUMNS] = compute_aggregates(df)
        base.insert(0, "subset", subset)
        base.insert(0, "tx_id", df["tx_id"].to_numpy())
        base["ch_history"] = index.history_count(Actor.CARD_HOLDER)
        base["tm_history"] = index.history_count(Actor.TERMINAL)
        base["label"] = df["label"].to_numpy().astype(int)
        path = self.path("features", "base.csv")
        base.to_csv(path, index=False, lineterminator="\n")
        meta = {"encoder": encoder.to_dict(), "card_type_column": "channel", "window_s": 86400,
                "columns": list(base.columns)}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        for cell in self.cfg.hmm_cells():
            models = self.load_models(cell)
            H = compute_hmm_features(index, models, cell[0])
            hdf = pd.DataFrame(H, columns=HMM_COLUMNS)
            hdf.insert(0, "tx_id", df["tx_id"].to_numpy())
            path = self.path("features", f"hmm_{_tag(cell)}.csv")
            hdf.to_csv(path, index=False, lineterminator="\n")
            hashes = {p.name: file_sha256(self.path("hmm", _tag(cell), f"{p.name}.json")) for p in PERSPECTIVES}
            meta = {"window": cell[0], "n_states": cell[1], "model_sha256": hashes, "missing": "empty cell",
                    "n_present": [int(v) for v in np.isfinite(H).sum(axis=0)]}
            Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    def load_features(self):
        base = _read_frame(self.path("features", "base.csv"))
        return base

    def load_hmm_features(self, cell) -> np.ndarray:
        return _read_frame(self.path("features", f"hmm_{_tag(cell)}.csv"))[HMM_COLUMNS].to_numpy(dtype=np.float64)

    # ------------------------------------------------------------ shared experiment plumbing

    def jobs(self) -> list[tuple]:
        """(experiment, cell or None, feature set) of the comparison and the sweep, in a fixed order."""
        out = []
        for fs in self.cfg.feature_sets:
            out.append(("comparison", self.cfg.primary_cell if "HMM" in fs else None, fs))
        if len(self.cfg.sweep_cells) > 1:
            for cell in self.cfg.sweep_cells:
                out.append(("sweep", cell, self.cfg.sweep_feature_set))
        return out

    def _strategy(self, experiment: str) -> str:
        return self.cfg.sweep_missing if experiment == "sweep" else self.cfg.missing

    def _matrices(self, base, cell, fs, missing):
        raw = base[RAW_COLUMNS].to_numpy(dtype=np.float64)
        agg = base[AGG_COLUMNS].to_numpy(dtype=np.float64)
        y = base["label"].to_numpy()
        hmm_cell = cell if cell is not None else self.cfg.primary_cell
        hmm = self.load_hmm_features(hmm_cell) if ("HMM" in fs or missing == "exclude") else None
        sub = base["subset"].to_numpy()
        keep = np.ones(len(base), dtype=bool)
        if missing == "exclude_common":
            # complete history for the largest window implies it for every smaller one
            keep = history_complete(self.load_hmm_features((max(self.cfg.hmm.windows), hmm_cell[1])))
            missing = "default0"
        return {s: assemble(fs, raw, y, agg, hmm, missing, np.flatnonzero((sub == s) & keep))
                for s in ("train", "validation", "test")}

    def _params(self, overrides: dict, n_features: int, seed: int):
        fam = self.cfg.classifier.family
        kw = {**self.cfg.classifier.params, **overrides}
        if fam in ("rf", "adaboost"):
            kw["seed"] = seed
        if fam == "rf":
            kw["n_features_per_split"] = min(kw.get("n_features_per_split", 7), n_features)
        return make_params(fam, {}, **kw)

    # ------------------------------------------------------------ train (hyperparameter selection)

    def stage_train(self) -> None:
        base = self.load_features()
        chosen = {}
        cls = self.cfg.classifier
        for exp, cell, fs in self.jobs():
            name = _job_name(cell, fs)
            if not cls.grid_search or name in chosen:
                chosen.setdefault(name, {})
                continue
            m = self._matrices(base, cell, fs, self._strategy(exp))
            grid = cls.grid if cls.grid is not None else FAMILIES[cls.family].grid
            fixed = dict(cls.params)
            if cls.family in ("rf", "adaboost"):
                fixed["seed"] = self.cfg.seeds[0]
            res = grid_search(cls.family, grid, (m["train"].X, m["train"].y),
                              (m["validation"].X, m["validation"].y), **fixed)
            res.to_csv(self.path("train", f"grid_{name}.csv"))
            chosen[name] = {k: v for k, v in asdict(res.best_params).items() if k in grid}
        self.path("train", "params.json").write_text(json.dumps(chosen, indent=1, sort_keys=True))

    # ------------------------------------------------------------ evaluate

    def stage_evaluate(self) -> None:
        base = self.load_features()
        chosen = json.loads(self.path("train", "params.json").read_text())
        fam = FAMILIES[self.cfg.classifier.family]
        cache = {}
        rows = []

        def score(cell, fs, strategy, overrides):
            key = (cell, fs, strategy)
            if key not in cache:
                m = self._matrices(base, cell, fs, strategy)
                tr, te = m["train"], m["test"]
                out = []
                for seed in self.cfg.seeds:
                    model = fam.train(tr.X, tr.y, self._params(overrides, tr.X.shape[1], seed))
                    curve = pr_curve(model.predict_proba(te.X), te.y)
                    suffix = "" if strategy == self.cfg.missing else f"__{strategy}"
                    curve.to_csv(self.path("evaluate", "curves", f"{_job_name(cell, fs)}{suffix}_seed{seed}.csv"))
                    out.append((seed, len(te), int(te.y.sum()), curve.auc))
                cache[key] = out
            return cache[key]

        for exp, cell, fs in self.jobs():
            strategy = self._strategy(exp)
            for seed, n, nf, auc in score(cell, fs, strategy, chosen.get(_job_name(cell, fs), {})):
                rows.append([exp, _tag(cell), fs, strategy, seed, n, nf, repr(auc)])
        rows += self._missing_value_runs(base, score)
        _write_csv(self.path("evaluate", "results.csv"),
                   ["experiment", "cell", "feature_set", "strategy", "seed", "n_test", "n_frauds", "pr_auc"], rows)

    def _missing_value_runs(self, base, score) -> list:
        """Whole-test-set runs of the missing-value strategies plus the no-HMM baseline."""
        strategies = self.cfg.missing_report
        if not strategies:
            return []
        w, k = self.cfg.primary_cell
        fs_base = self.cfg.missing_base
        fs_hmm = fs_base + "+HMM"
        rows = []
        for seed, n, nf, auc in score(None, fs_base, "default0", {}):
            rows.append(["missing", "nohmm", fs_base, "none", seed, n, nf, repr(auc)])
        for strategy in ("default0", "exclude"):
            if strategy in strategies:
                for seed, n, nf, auc in score((w, k), fs_hmm, strategy, {}):
                    rows.append(["missing", _tag((w, k)), fs_hmm, strategy, seed, n, nf, repr(auc)])
        ensembles = [s for s in ("weighted_pr", "stacked_rf") if s in strategies]
        if not ensembles:
            return rows
        raw_like = self._matrices(base, None, fs_base, "default0")
        hmm = {win: self.load_hmm_features((win, k)) for win in HISTORY_WINDOWS}
        ch = base["ch_history"].to_numpy()
        tm = base["tm_history"].to_numpy()
        y = base["label"].to_numpy()

        def bank(s):
            r = raw_like[s].rows
            return HistoryBank(raw_like[s].X, {win: h[r] for win, h in hmm.items()}, ch[r], tm[r], y[r])

        b_tr, b_va, b_te = bank("train"), bank("validation"), bank("test")
        for seed in self.cfg.seeds:
            rf = self._params({}, raw_like["train"].X.shape[1], seed)
            spec = fit_specialists(b_tr, b_va, rf)
            for s in ensembles:
                if s == "weighted_pr":
                    model = weighted_pr_ensemble(b_tr, b_va, rf, specialists=spec)
                else:
                    model = stacked_rf(b_tr, b_va, rf, specialists=spec)
                curve = pr_curve(model.predict_proba(b_te), b_te.labels)
                curve.to_csv(self.path("evaluate", "curves", f"ensemble_k{k}__{fs_base}__{s}_seed{seed}.csv"))
                rows.append(["missing", f"w3-7_k{k}", fs_hmm, s, seed, len(b_te), int(b_te.labels.sum()),
                             repr(curve.auc)])
        return rows

    # ------------------------------------------------------------ report

    def results(self) -> pd.DataFrame:
        return pd.read_csv(self.path("evaluate", "results.csv"), dtype={"cell": str, "strategy": str},
                           float_precision="round_trip", keep_default_na=False)

    def stage_report(self) -> None:
        res = self.results()
        cfg = self.cfg
        main = res[res["experiment"] == "comparison"]
        summaries = {fs: summarize(fs, g["pr_auc"].to_numpy()) for fs, g in main.groupby("feature_set", sort=False)}
        rows = comparison_table(summaries)
        self.path("report", "comparison.csv").write_text(comparison_csv(rows))
        self.path("report", "comparison.txt").write_text(comparison_text(rows) if rows else "no +HMM pairs\n")
        _write_csv(self.path("report", "feature_sets.csv"), ["feature_set", "mean_pr_auc", "std_pr_auc", "n_runs"],
                   [[fs, _fmt(s.mean_auc), _fmt(s.std_auc), s.n_runs] for fs, s in summaries.items()])
        sw = res[res["experiment"] == "sweep"]
        if not sw.empty:
            values = {}
            for w, k in cfg.sweep_cells:
                values[(k, w)] = sw[sw["cell"] == _tag((w, k))]["pr_auc"].to_numpy()
            mat = sweep_matrix(values, cfg.hmm.states, cfg.hmm.windows)
            self.path("report", "sweep.csv").write_text(sweep_csv(mat))
            n_test = sw["n_test"].iloc[0]
            scope = (f"{cfg.sweep_feature_set}, {cfg.sweep_missing}: {n_test} test transactions, "
                     f"{sw['n_frauds'].iloc[0]} frauds\n")
            self.path("report", "sweep.txt").write_text(scope + sweep_text(mat))
        mv = res[res["experiment"] == "missing"]
        if not mv.empty:
            self._missing_report(mv)
        self.write_manifest()

    def _missing_report(self, mv: pd.DataFrame) -> None:
        base = self.load_features()
        te = base[base["subset"] == "test"]
        y = te["label"].to_numpy()
        ch = te["ch_history"].to_numpy()
        tm = te["tm_history"].to_numpy()
        counts = [["All transactions", len(te), int(y.sum())]]
        for h in HISTORY_WINDOWS:
            m = (ch >= h) & (tm >= h)
            counts.append([f"History>={h}", int(m.sum()), int(y[m].sum())])
        _write_csv(self.path("report", "history_counts.csv"), ["constraint", "n_transactions", "n_frauds"], counts)
        table = []
        for s, g in mv.groupby("strategy", sort=False):
            sm = summarize(s, g["pr_auc"].to_numpy())
            n_cov = int(g["n_test"].iloc[0])
            label = f"{self.cfg.missing_base} (no HMM-based features)" if s == "none" else s
            table.append([label, _fmt(sm.mean_auc), _fmt(sm.std_auc), n_cov, _fmt(n_cov / len(te)),
                          int(g["n_frauds"].iloc[0])])
        header = ["strategy", "mean_pr_auc", "std_pr_auc", "n_test_covered", "coverage", "n_frauds_covered"]
        _write_csv(self.path("report", "missing_values.csv"), header, table)
        text = aligned([("Constraint", "# transactions", "# frauds")] + [tuple(map(str, r)) for r in counts])
        text += "\n" + aligned([("Strategy", "PR-AUC", "coverage")] +
                               [(r[0], f"{float(r[1]):.3f} ± {float(r[2]):.3f}", f"{100 * float(r[4]):.1f}%")
                                for r in table])
        self.path("report", "missing_values.txt").write_text(text)

    def write_manifest(self) -> None:
        artifacts = {}
        for p in sorted(self.out.rglob("*.csv")):
            if p.parts[-2] == "curves":
                continue
            artifacts[str(p.relative_to(self.out))] = file_sha256(p)
        manifest = {"package_version": __version__, "config": self.cfg.to_dict(), "config_sha256": self.cfg.digest(),
                    "seeds": {"classifier": list(self.cfg.seeds), "hmm": self.cfg.hmm.seed,
                              "generator": self.cfg.generator.seed if self.cfg.generator else None},
                    "stages": list(STAGES), "artifacts_sha256": artifacts}
        self.path("manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _fit_job(job):
    corpus, k, seed, restarts, max_iter, tol = job
    return fit_hmm(corpus, k, seed=seed, restarts=restarts, max_iter=max_iter, tol=tol)


# ---------------------------------------------------------------- sweep matrix

@dataclass
class SweepMatrix:
    states: list
    windows: list
    cells: dict  # (states, window) -> RunSummary

    def mean(self) -> np.ndarray:
        return np.array([[self.cells[(k, w)].mean_auc for w in self.windows] for k in self.states])

    def relative_spread(self) -> float:
        m = self.mean()
        return float((m.max() - m.min()) / m.mean())


def sweep_matrix(values: dict, states, windows) -> SweepMatrix:
    """Rows are hidden-state counts, columns window sizes; ``values[(k, w)]`` holds per-seed PR-AUCs."""
    cells = {(k, w): summarize(f"k{k}_w{w}", values[(k, w)]) for k in states for w in windows}
    return SweepMatrix(list(states), list(windows), cells)


def sweep_csv(m: SweepMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hidden_states"] + [f"window_{x}" for x in m.windows])
    for k in m.states:
        w.writerow([k] + [f"{m.cells[(k, x)].mean_auc:.6f}±{m.cells[(k, x)].std_auc:.6f}" for x in m.windows])
    return buf.getvalue()


def sweep_text(m: SweepMatrix, digits: int = 3) -> str:
    header = ("hidden states \\ window",) + tuple(str(x) for x in m.windows)
    body = [(str(k),) + tuple(m.cells[(k, x)].fmt(digits) for x in m.windows) for k in m.states]
    return aligned([header] + body) + f"relative spread (max-min)/mean: {m.relative_spread():.3f}\n"


def run_pipeline(cfg: PipelineConfig, stages=STAGES) -> Path:
    return Run(cfg).run(stages)


def with_overrides(cfg: PipelineConfig, seed: int | None = None, out: str | None = None) -> PipelineConfig:
    """Apply the command-line ``--seed`` (generator + HMM seed) and ``--out``."""
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        if cfg.generator is not None:
            cfg.generator = replace(cfg.generator, seed=seed)
        cfg.hmm = replace(cfg.hmm, seed=seed)
    if out is not None:
        cfg.out = out
    return cfg


def clean(out) -> None:
    shutil.rmtree(out, ignore_errors=True)
