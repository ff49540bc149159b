"""End-to-end orchestration: data, split, predictor, VAE pretraining, bias
fine-tuning, sampling, search baselines, evaluation and report files.

Every stage writes its artifacts under the run directory and records them
in ``manifest.json`` together with a stage key (a hash of the stage's config
slice, its derived seed and the keys of the stages it depends on). A stage
whose key is unchanged and whose artifacts still hash to the recorded values
is skipped, so interrupted runs resume where they stopped.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from unfairgen import __version__, bggn, metrics, search
from unfairgen.attrspace import (AttributeSpace, GroupBiasTable, SyntheticLandscape, load_landscape,
                                 planted_landscape, read_group_csv, sample_dataset, save_landscape,
                                 split_by_group, write_group_csv)
from unfairgen.biaspredictor import BiasPredictor, PredictorConfig, train_predictor
from unfairgen.kernels import unpack_codes

log = logging.getLogger(__name__)

GENERATIVE = ("bggn", "vanilla")
STAGES = ("data", "split", "predictor", "pretrain", "finetune", "sample", "search", "evaluate", "report")
REFERENCES = ("observation", "holdout")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    out: str = "runs/demo"
    seed: int = 0
    landscape: dict = field(default_factory=lambda: {"dimension": 10})
    landscape_path: str | None = None
    dataset_path: str | None = None
    n_groups: int = 600
    samples_per_group: int = 20
    holdout_fraction: float = 0.3
    tau: list = field(default_factory=list)
    tau_quantiles: list = field(default_factory=lambda: [0.9])
    methods: list = field(default_factory=lambda: ["bggn", "vanilla", "search_tree", "relaxed:2", "enumerate"])
    predictor: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-3
    finetune: dict = field(default_factory=dict)
    tree: dict = field(default_factory=dict)
    relaxed_estimator: str = "predictor"
    n_samples: int = 1000
    repeats: int = 3
    filter_generation: bool = False
    dcg_k: int = 20
    log_base: str = "e"
    histogram_bins: int = 10

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        for path in (self.landscape_path, self.dataset_path):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"referenced path does not exist: {path}")
        if any(t < 0 for t in self.tau):
            raise ConfigError("tau values must be >= 0")
        if any(not 0.0 <= q <= 1.0 for q in self.tau_quantiles):
            raise ConfigError("tau_quantiles must lie in [0, 1]")
        if not self.tau and not self.tau_quantiles:
            raise ConfigError("no tau given")
        for m in self.methods:
            parse_method(m)
        if not self.methods:
            raise ConfigError("no methods selected")
        if self.relaxed_estimator not in ("predictor", "tree"):
            raise ConfigError("relaxed_estimator must be 'predictor' or 'tree'")
        if self.n_samples < 1 or self.repeats < 1:
            raise ConfigError("n_samples and repeats must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        try:
            self.predictor_config()
            self.model_config()
            self.finetune_config()
            search.TreeConfig(**self.tree)
            if self.landscape_path is None and self.dataset_path is None:
                planted_landscape(**self.landscape)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def predictor_config(self) -> PredictorConfig:
        return PredictorConfig(**{"seed": derive_seed(self.seed, "predictor"), **self.predictor})

    def model_config(self) -> bggn.ModelConfig:
        return bggn.ModelConfig(**{"seed": derive_seed(self.seed, "model"), **self.model})

    def finetune_config(self) -> bggn.FineTuneConfig:
        return bggn.FineTuneConfig(**{"seed": derive_seed(self.seed, "finetune"), **self.finetune})

    def digest(self) -> str:
        return _sha(json.dumps(self.to_dict(), sort_keys=True).encode())


def parse_method(name: str) -> tuple[str, int | None]:
    if name in GENERATIVE or name in ("search_tree", "enumerate"):
        return name, None
    if name.startswith("relaxed:"):
        try:
            n_re = int(name.split(":", 1)[1])
        except ValueError:
            n_re = -1
        if n_re >= 0:
            return "relaxed", n_re
    raise ConfigError(f"unknown method {name!r}")


def derive_seed(global_seed: int, stage: str) -> int:
    """Stage-keyed child seed, stable across runs and platforms."""
    return int.from_bytes(hashlib.sha256(f"{int(global_seed)}:{stage}".encode()).digest()[:4], "little")


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path) -> str:
    return _sha(Path(path).read_bytes())


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_via(path, writer) -> None:
    """Run ``writer(tmp_path)`` then rename into place (for writers that take a path)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    writer(tmp)
    side = tmp.with_suffix(".meta.json")
    if side.exists():
        os.replace(side, path.with_suffix(".meta.json"))
    os.replace(tmp, path)


def _slug(method: str) -> str:
    return method.replace(":", "_")


def _tau_tag(i: int) -> str:
    return f"tau{i}"


# -- manifest ----------------------------------------------------------------

@dataclass
class RunManifest:
    root: Path
    config_hash: str
    version: str = __version__
    taus: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return self.root / "manifest.json"

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version, "taus": self.taus, "stages": self.stages}

    def save(self) -> None:
        atomic_write(self.path, json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, root) -> "RunManifest":
        root = Path(root)
        doc = json.loads((root / "manifest.json").read_text())
        return cls(root, doc["config_hash"], doc["version"], doc.get("taus", []), doc["stages"])

    def artifacts(self) -> dict:
        out = {}
        for entry in self.stages.values():
            out.update(entry["artifacts"])
        return out

    def artifact(self, rel: str) -> Path:
        return self.root / rel

    def verify(self) -> list[str]:
        """Relative paths whose file is missing or whose hash has changed."""
        bad = []
        for rel, digest in self.artifacts().items():
            p = self.root / rel
            if not p.exists() or file_sha256(p) != digest:
                bad.append(rel)
        return bad

    def stage_valid(self, stage: str, key: str) -> bool:
        entry = self.stages.get(stage)
        if entry is None or entry["key"] != key:
            return False
        return all((self.root / rel).exists() and file_sha256(self.root / rel) == h
                   for rel, h in entry["artifacts"].items())


# -- runner ------------------------------------------------------------------

class Runner:
    """Executes stages in dependency order, skipping those already up to date."""

    deps = {
        "data": (), "split": ("data",), "predictor": ("split",), "pretrain": ("split",),
        "finetune": ("pretrain", "predictor"), "sample": ("finetune", "predictor"),
        "search": ("split", "predictor"), "evaluate": ("sample", "search"), "report": ("evaluate",),
    }

    def __init__(self, config: RunConfig):
        self.cfg = config
        self.root = Path(config.out)
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            self.manifest = RunManifest.load(self.root)
            self.manifest.config_hash = config.digest()
        except (OSError, KeyError, json.JSONDecodeError):
            self.manifest = RunManifest(self.root, config.digest())
        self.keys: dict[str, str] = {}
        self._cache: dict = {}

    # config slice relevant to each stage
    def _slice(self, stage: str) -> dict:
        c = self.cfg
        if stage == "data":
            return {"landscape": c.landscape, "landscape_path": c.landscape_path, "dataset_path": c.dataset_path,
                    "dataset_sha": file_sha256(c.dataset_path) if c.dataset_path else None,
                    "landscape_sha": file_sha256(c.landscape_path) if c.landscape_path else None,
                    "n_groups": c.n_groups, "samples_per_group": c.samples_per_group}
        if stage == "split":
            return {"holdout_fraction": c.holdout_fraction, "tau": c.tau, "tau_quantiles": c.tau_quantiles}
        if stage == "predictor":
            return dataclasses.asdict(c.predictor_config()) | {"hidden": list(c.predictor_config().hidden)}
        if stage == "pretrain":
            return {"model": dataclasses.asdict(c.model_config()), "epochs": c.pretrain_epochs, "lr": c.pretrain_lr}
        if stage == "finetune":
            return dataclasses.asdict(c.finetune_config())
        if stage == "sample":
            return {"methods": [m for m in c.methods if m in GENERATIVE], "n": c.n_samples, "repeats": c.repeats}
        if stage == "search":
            return {"methods": [m for m in c.methods if m not in GENERATIVE], "tree": c.tree,
                    "estimator": c.relaxed_estimator}
        if stage == "evaluate":
            return {"methods": c.methods, "dcg_k": c.dcg_k, "log_base": c.log_base, "bins": c.histogram_bins,
                    "filter": c.filter_generation}
        return {}

    def key(self, stage: str) -> str:
        if stage not in self.keys:
            doc = {"stage": stage, "seed": derive_seed(self.cfg.seed, stage), "config": self._slice(stage),
                   "upstream": [self.key(d) for d in self.deps[stage]], "version": __version__}
            self.keys[stage] = _sha(json.dumps(doc, sort_keys=True, default=str).encode())[:32]
        return self.keys[stage]

    def ensure(self, stage: str) -> None:
        for dep in self.deps[stage]:
            self.ensure(dep)
        if stage in self._cache.get("_done", set()):
            return
        key = self.key(stage)
        if self.manifest.stage_valid(stage, key):
            log.info("stage %s up to date", stage)
        else:
            t0 = time.perf_counter()
            try:
                written = getattr(self, f"_stage_{stage}")()
            except (StageError, KeyboardInterrupt):
                raise
            except Exception as exc:
                raise StageError(stage, exc) from exc
            self.manifest.stages[stage] = {
                "key": key,
                "wall_time": max(0.0, time.perf_counter() - t0),
                "artifacts": {rel: file_sha256(self.root / rel) for rel in sorted(written)},
            }
            self.manifest.save()
            log.info("stage %s done in %.2fs", stage, self.manifest.stages[stage]["wall_time"])
        self._cache.setdefault("_done", set()).add(stage)

    def run(self, until: str = "report") -> RunManifest:
        self.ensure(until)
        return self.manifest

    # -- loaders ---------------------------------------------------------------

    def landscape(self) -> SyntheticLandscape | None:
        p = self.root / "data" / "landscape.json"
        return load_landscape(p) if p.exists() else None

    def table(self, name: str) -> GroupBiasTable:
        if name not in self._cache:
            self._cache[name] = read_group_csv(self.root / "data" / f"{name}.csv")
        return self._cache[name]

    def predictor(self) -> BiasPredictor:
        if "predictor" not in self._cache:
            self._cache["predictor"] = BiasPredictor.load(self.root / "models" / "predictor.json")
        return self._cache["predictor"]

    def taus(self) -> list:
        return json.loads((self.root / "data" / "taus.json").read_text())["taus"]

    def generated(self, method: str, rep: int) -> bggn.GeneratedSet:
        return bggn.GeneratedSet.from_csv(self.root / "generated" / f"{method}_r{rep}.csv")

    def search_result_set(self, method: str, tau_index: int) -> bggn.GeneratedSet:
        path = self.root / "search" / f"{_slug(method)}_{_tau_tag(tau_index)}.csv"
        rows = path.read_text().strip().splitlines()
        d = len(rows[0].split(",")) - 1
        bits = np.array([[int(v) for v in r.split(",")[:d]] for r in rows[1:]], dtype=np.uint8).reshape(-1, d)
        est = np.array([float(r.split(",")[d]) for r in rows[1:]])
        return bggn.GeneratedSet(bits, np.maximum(est, 0.0), np.full(len(est), np.nan), {"method": method})

    # -- stages ----------------------------------------------------------------

    def _stage_data(self) -> list:
        c = self.cfg
        written = []
        if c.dataset_path:
            table = read_group_csv(c.dataset_path)
        else:
            land = load_landscape(c.landscape_path) if c.landscape_path else planted_landscape(**c.landscape)
            _atomic_via(self.root / "data" / "landscape.json", lambda p: save_landscape(land, p))
            written.append("data/landscape.json")
            table = sample_dataset(land, c.n_groups, c.samples_per_group, seed=derive_seed(c.seed, "data"))
        _atomic_via(self.root / "data" / "dataset.csv", lambda p: write_group_csv(table, p))
        return written + ["data/dataset.csv"]

    def _stage_split(self) -> list:
        c = self.cfg
        table = read_group_csv(self.root / "data" / "dataset.csv")
        sp = split_by_group(table, c.holdout_fraction, derive_seed(c.seed, "split"))
        for name, t in (("observation", sp.observation), ("holdout", sp.holdout)):
            _atomic_via(self.root / "data" / f"{name}.csv", lambda p, t=t: write_group_csv(t, p))
            self._cache.pop(name, None)
        taus = sorted(set([float(t) for t in c.tau] +
                          [float(np.quantile(sp.observation.bias, q)) for q in c.tau_quantiles]))
        atomic_write(self.root / "data" / "taus.json", json.dumps({"taus": taus}, indent=2) + "\n")
        self.manifest.taus = taus
        return ["data/observation.csv", "data/holdout.csv", "data/taus.json"]

    def _stage_predictor(self) -> list:
        pred = train_predictor(self.table("observation"), self.cfg.predictor_config())
        _atomic_via(self.root / "models" / "predictor.json", lambda p: pred.save(p, [f"predictor:{self.cfg.seed}"]))
        self._cache.pop("predictor", None)
        return ["models/predictor.json"]

    def _stage_pretrain(self) -> list:
        c = self.cfg
        obs = self.table("observation")
        model = bggn.GenerativeModel.create(obs.dimension, c.model_config())
        bggn.pretrain(model, obs, epochs=c.pretrain_epochs, seed=derive_seed(c.seed, "pretrain"), lr=c.pretrain_lr)
        _atomic_via(self.root / "models" / "vanilla.json", model.save)
        atomic_write(self.root / "logs" / "pretrain.json", json.dumps({"elbo": model.history["pretrain"]}) + "\n")
        return ["models/vanilla.json", "logs/pretrain.json"]

    def _stage_finetune(self) -> list:
        model = bggn.GenerativeModel.load(self.root / "models" / "vanilla.json")
        entries: list = []
        bggn.finetune(model, self.predictor(), self.table("observation"), self.cfg.finetune_config(), log=entries)
        _atomic_via(self.root / "models" / "bggn.json", model.save)
        atomic_write(self.root / "logs" / "finetune.jsonl",
                     "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries))
        return ["models/bggn.json", "logs/finetune.jsonl"]

    def _stage_sample(self) -> list:
        c = self.cfg
        written = []
        ref = _union(self.table("observation"), self.table("holdout"))
        for method in (m for m in c.methods if m in GENERATIVE):
            model = bggn.GenerativeModel.load(self.root / "models" / f"{method}.json")
            for rep in range(c.repeats):
                seed = derive_seed(c.seed, f"sample:{method}:{rep}")
                gen = bggn.generate(model, c.n_samples, self.predictor(), reference=ref, seed=seed)
                gen.metadata["method"] = method
                rel = f"generated/{method}_r{rep}.csv"
                _atomic_via(self.root / rel, gen.to_csv)
                written += [rel, rel.replace(".csv", ".meta.json")]
        return written

    def _stage_search(self) -> list:
        c = self.cfg
        obs = self.table("observation")
        written = []
        methods = [m for m in c.methods if m not in GENERATIVE]
        tree = search.fit_tree(obs, search.TreeConfig(**c.tree)) if methods else None
        source = _union(obs, self.table("holdout"))
        est = self.predictor() if c.relaxed_estimator == "predictor" else None
        for i, tau in enumerate(self.taus()):
            for method in methods:
                kind, n_re = parse_method(method)
                if kind == "search_tree":
                    res = search.search_tree(tree, tau)
                elif kind == "relaxed":
                    res = search.relaxed_search(tree, tau, min(n_re, obs.dimension), est)
                else:
                    res = search.enumerate_discover(source, tau)
                stem = f"search/{_slug(method)}_{_tau_tag(i)}"
                _atomic_via(self.root / f"{stem}.csv", res.to_csv)
                _atomic_via(self.root / f"{stem}.json", res.to_json)
                written += [f"{stem}.csv", f"{stem}.json"]
        return written

    def method_sets(self, method: str, tau_index: int, tau: float) -> list:
        if method in GENERATIVE:
            sets = [self.generated(method, r) for r in range(self.cfg.repeats)]
            if self.cfg.filter_generation:
                sets = [_filter(g, tau) for g in sets]
            return sets
        return [self.search_result_set(method, tau_index)]

    def _stage_evaluate(self) -> list:
        c = self.cfg
        doc = {"taus": self.taus(), "methods": {}}
        for method in c.methods:
            per_ref = {}
            for ref_name in REFERENCES:
                ref = self.table(ref_name)
                per_tau = []
                for i, tau in enumerate(self.taus()):
                    runs = []
                    for gen in self.method_sets(method, i, tau):
                        if len(gen) == 0:
                            runs.append(None)
                            continue
                        rep = metrics.evaluate(gen, ref, tau, c.dcg_k, c.log_base, bins=c.histogram_bins,
                                               strict=False)
                        d = rep.to_dict()
                        d["distinct_high"] = distinct_high(gen, ref, tau)
                        runs.append(d)
                    per_tau.append({"tau": tau, "runs": runs, "summary": _summarise(runs)})
                per_ref[ref_name] = per_tau
            doc["methods"][method] = per_ref
        atomic_write(self.root / "reports" / "metrics.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
        return ["reports/metrics.json"]

    def _stage_report(self) -> list:
        c = self.cfg
        written = []
        for i, tau in enumerate(self.taus()):
            tag = _tau_tag(i)
            rows = compare_report(self.manifest, c.methods, tau)
            atomic_write(self.root / "reports" / f"comparison_{tag}.csv", _csv(
                ["method", "reference", "metric", "mean", "spread"], rows))
            radar = radar_file(self.manifest, c.methods, tau)
            atomic_write(self.root / "reports" / f"radar_{tag}.csv", _csv(["reference", "method", "metric", "value"], radar))
            dens = density_rows(self.manifest, c.methods, tau)
            atomic_write(self.root / "reports" / f"density_{tag}.csv",
                         _csv(["method", "bin_left", "bin_right", "density"], dens))
            written += [f"reports/comparison_{tag}.csv", f"reports/radar_{tag}.csv", f"reports/density_{tag}.csv"]
        unseen = discover_unseen(self.manifest, _union(self.table("observation"), self.table("holdout")))
        land = self.landscape()
        d = self.table("observation").dimension
        names = AttributeSpace(d, land.attribute_names if land else None).names()
        atomic_write(self.root / "reports" / "unseen.csv", unseen_csv(unseen, names))
        return written + ["reports/unseen.csv"]


# -- helpers -----------------------------------------------------------------

def _union(a: GroupBiasTable, b: GroupBiasTable) -> GroupBiasTable:
    return GroupBiasTable(np.vstack([a.bits, b.bits]), np.concatenate([a.bias, b.bias]),
                          np.concatenate([a.count, b.count]), a.space.attribute_names)


def _filter(gen: bggn.GeneratedSet, tau: float) -> bggn.GeneratedSet:
    keep = gen.predicted >= tau
    return bggn.GeneratedSet(gen.bits[keep], gen.predicted[keep], gen.truth[keep], gen.metadata)


def distinct_high(gen: bggn.GeneratedSet, reference: GroupBiasTable, tau: float) -> int:
    """Number of distinct generated attributes that are in ``reference`` with bias >= tau."""
    if len(gen) == 0:
        return 0
    present, b = reference.lookup_codes(gen.codes)
    hit = present & (np.nan_to_num(b, nan=-np.inf) >= tau)
    return int(np.unique(gen.codes[hit]).size)


SUMMARY_FIELDS = metrics.METRIC_NAMES + ("bias_number", "distinct_high")


def _summarise(runs: list) -> dict:
    out = {}
    for name in SUMMARY_FIELDS:
        vals = [r[name] for r in runs if r is not None and r[name] is not None]
        out[name] = {"mean": float(np.mean(vals)) if vals else None,
                     "spread": float(np.std(vals)) if vals else None}
    return out


def _csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def load_metrics(manifest: RunManifest) -> dict:
    return json.loads((manifest.root / "reports" / "metrics.json").read_text())


def _tau_entry(doc: dict, method: str, ref: str, tau: float) -> dict:
    for entry in doc["methods"][method][ref]:
        if entry["tau"] == tau:
            return entry
    raise KeyError(f"tau {tau} not evaluated")


def compare_report(manifest: RunManifest, methods, tau: float) -> list[tuple]:
    """``(method, reference, metric, mean, spread)`` rows for one tau."""
    doc = load_metrics(manifest)
    missing = [m for m in methods if m not in doc["methods"]]
    if missing:
        raise KeyError(f"methods not in manifest: {', '.join(missing)}")
    rows = []
    for m in methods:
        for ref in REFERENCES:
            summ = _tau_entry(doc, m, ref, tau)["summary"]
            for name in SUMMARY_FIELDS:
                rows.append((m, ref, name, summ[name]["mean"], summ[name]["spread"]))
    return rows


def radar_file(manifest: RunManifest, methods, tau: float) -> list[tuple]:
    """Per-reference radar values: each metric's mean scaled by its maximum across methods."""
    doc = load_metrics(manifest)
    rows = []
    for ref in REFERENCES:
        for name in metrics.METRIC_NAMES:
            vals = {m: _tau_entry(doc, m, ref, tau)["summary"][name]["mean"] for m in methods}
            top = max((v for v in vals.values() if v is not None), default=0.0)
            for m in methods:
                v = vals[m]
                rows.append((ref, m, name, None if v is None else (v / top if top > 0 else 0.0)))
    return rows


def density_rows(manifest: RunManifest, methods, tau: float) -> list[tuple]:
    """Bias density of each method's first run, judged against observation ∪ holdout scores."""
    doc = load_metrics(manifest)
    rows = []
    for m in methods:
        runs = [r for r in _tau_entry(doc, m, "observation", tau)["runs"] if r is not None]
        if not runs:
            continue
        edges, dens = runs[0]["hist_edges"], runs[0]["hist_density"]
        for lo, hi, p in zip(edges[:-1], edges[1:], dens):
            rows.append((m, lo, hi, p))
    return rows


def discover_unseen(manifest: RunManifest, reference_union: GroupBiasTable, method: str = "bggn") -> list[tuple]:
    """Generated attributes absent from ``reference_union``, best predicted bias first."""
    best: dict[int, float] = {}
    d = reference_union.dimension
    for rel in sorted(manifest.artifacts()):
        if not (rel.startswith(f"generated/{method}_r") and rel.endswith(".csv")):
            continue
        gen = bggn.GeneratedSet.from_csv(manifest.root / rel)
        if len(gen) == 0:
            continue
        present, _ = reference_union.lookup_codes(gen.codes)
        for code, p in zip(gen.codes[~present].tolist(), gen.predicted[~present].tolist()):
            best[code] = max(p, best.get(code, p))
    order = sorted(best, key=lambda c: (-best[c], c))
    bits = unpack_codes(np.array(order, dtype=np.int64), d) if order else np.zeros((0, d), dtype=np.uint8)
    return [(tuple(int(v) for v in row), best[c]) for row, c in zip(bits, order)]


def render_attributes(bits, names, negated: bool = False) -> str:
    """Comma-joined names of active attributes (``not <name>`` for inactive ones if ``negated``)."""
    parts = []
    for v, n in zip(bits, names):
        if v:
            parts.append(n)
        elif negated:
            parts.append(f"not {n}")
    return ", ".join(parts) if parts else "(none)"


def unseen_csv(items: list, names) -> str:
    d = len(names)
    rows = [list(a) + [p, render_attributes(a, names)] for a, p in items]
    return _csv([f"a{i}" for i in range(d)] + ["predicted_bias", "prompt"], rows)


def run_pipeline(config: RunConfig, until: str = "report") -> RunManifest:
    if until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}")
    return Runner(config).run(until)
