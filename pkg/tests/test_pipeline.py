import csv
import json

import numpy as np
import pytest

from unfairgen import pipeline
from unfairgen.attrspace import GroupBiasTable, enumerate_bits, read_group_csv, save_landscape, planted_landscape
from unfairgen.pipeline import ConfigError, RunConfig, RunManifest, StageError


def tiny(out, **over):
    doc = {
        "out": str(out), "seed": 1, "landscape": {"dimension": 6, "seed": 2}, "n_groups": 40,
        "samples_per_group": 4, "tau_quantiles": [0.8], "n_samples": 60, "repeats": 2,
        "predictor": {"epochs": 5, "min_steps": 50}, "pretrain_epochs": 2,
        "finetune": {"iterations": 10, "batch_size": 16},
        "methods": ["bggn", "vanilla", "search_tree", "relaxed:2", "enumerate"],
    }
    doc.update(over)
    return RunConfig.from_dict(doc)


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = tiny(root)
    return cfg, pipeline.run_pipeline(cfg)


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_dict({"bogus": 1})

    @pytest.mark.parametrize("doc", [
        {"tau": [-0.1]}, {"tau_quantiles": [1.5]}, {"tau": [], "tau_quantiles": []}, {"methods": ["magic"]},
        {"methods": ["relaxed:x"]}, {"methods": []}, {"n_samples": 0}, {"holdout_fraction": 1.0},
        {"landscape_path": "/no/such/file.json"}, {"finetune": {"eta": -1}}, {"predictor": {"nope": 1}},
    ])
    def test_invalid(self, doc):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(doc)

    def test_load_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.load(p)

    def test_digest_tracks_every_field(self):
        base = RunConfig()
        changed = [RunConfig(seed=1), RunConfig(n_samples=999), RunConfig(finetune={"eta": 0.5}),
                   RunConfig(methods=["bggn"]), RunConfig(dcg_k=10)]
        assert len({base.digest()} | {c.digest() for c in changed}) == 1 + len(changed)
        assert RunConfig().digest() == base.digest()

    def test_parse_method(self):
        assert pipeline.parse_method("relaxed:3") == ("relaxed", 3)
        assert pipeline.parse_method("bggn") == ("bggn", None)

    def test_derive_seed(self):
        assert pipeline.derive_seed(0, "a") == pipeline.derive_seed(0, "a")
        assert pipeline.derive_seed(0, "a") != pipeline.derive_seed(0, "b")
        assert pipeline.derive_seed(0, "a") != pipeline.derive_seed(1, "a")


class TestRun:
    def test_manifest_artifacts_verify(self, demo):
        cfg, manifest = demo
        assert manifest.verify() == []
        assert set(manifest.stages) == set(pipeline.STAGES)
        assert all(e["wall_time"] >= 0 for e in manifest.stages.values())
        loaded = RunManifest.load(cfg.out)
        assert loaded.config_hash == cfg.digest()

    def test_split_has_no_overlap(self, demo):
        cfg, _ = demo
        obs = read_group_csv(f"{cfg.out}/data/observation.csv")
        hold = read_group_csv(f"{cfg.out}/data/holdout.csv")
        assert not set(obs.codes.tolist()) & set(hold.codes.tolist())

    def test_metrics_structure(self, demo):
        cfg, manifest = demo
        doc = pipeline.load_metrics(manifest)
        assert set(doc["methods"]) == set(cfg.methods)
        for method, per_ref in doc["methods"].items():
            assert set(per_ref) == {"observation", "holdout"}
            for entry in per_ref["observation"]:
                n_runs = cfg.repeats if method in ("bggn", "vanilla") else 1
                assert len(entry["runs"]) == n_runs

    def test_rerun_is_skipped_and_identical(self, demo, tmp_path):
        cfg, manifest = demo
        before = {k: dict(v) for k, v in manifest.stages.items()}
        again = pipeline.run_pipeline(cfg)
        assert {k: v["artifacts"] for k, v in again.stages.items()} == {k: v["artifacts"] for k, v in before.items()}
        assert {k: v["wall_time"] for k, v in again.stages.items()} == {k: v["wall_time"] for k, v in before.items()}

    def test_fresh_run_byte_identical(self, demo, tmp_path):
        cfg, manifest = demo
        other = pipeline.run_pipeline(tiny(tmp_path / "b"))
        a = (manifest.root / "reports" / "metrics.json").read_bytes()
        b = (other.root / "reports" / "metrics.json").read_bytes()
        assert a == b
        # search summaries carry wall time by design; every other artifact must match
        def hashes(m):
            return {rel: h for rel, h in m.artifacts().items() if not (rel.startswith("search/") and rel.endswith(".json"))}

        assert hashes(other) == hashes(manifest)

    def test_tampered_artifact_rebuilt(self, tmp_path):
        cfg = tiny(tmp_path / "t", methods=["enumerate"])
        m = pipeline.run_pipeline(cfg)
        target = m.root / "reports" / "metrics.json"
        good = target.read_bytes()
        target.write_text("{}")
        assert "reports/metrics.json" in m.verify()
        m2 = pipeline.run_pipeline(cfg)
        assert target.read_bytes() == good and m2.verify() == []

    def test_changed_downstream_config_keeps_upstream(self, tmp_path):
        cfg = tiny(tmp_path / "c", methods=["enumerate"])
        m1 = pipeline.run_pipeline(cfg)
        keys1 = {k: v["key"] for k, v in m1.stages.items()}
        m2 = pipeline.run_pipeline(tiny(tmp_path / "c", methods=["enumerate"], dcg_k=5))
        keys2 = {k: v["key"] for k, v in m2.stages.items()}
        assert keys1["search"] == keys2["search"] and keys1["evaluate"] != keys2["evaluate"]

    def test_enumerate_only_one_result_per_tau(self, tmp_path):
        cfg = tiny(tmp_path / "e", methods=["enumerate"], tau=[0.2, 0.4], tau_quantiles=[])
        m = pipeline.run_pipeline(cfg)
        results = [rel for rel in m.artifacts() if rel.startswith("search/") and rel.endswith(".csv")]
        assert sorted(results) == ["search/enumerate_tau0.csv", "search/enumerate_tau1.csv"]
        assert m.taus == [0.2, 0.4]

    def test_until_stops_early(self, tmp_path):
        m = pipeline.run_pipeline(tiny(tmp_path / "u"), until="split")
        assert set(m.stages) == {"data", "split"}

    def test_unknown_stage(self, tmp_path):
        with pytest.raises(ConfigError):
            pipeline.run_pipeline(tiny(tmp_path / "x"), until="nope")

    def test_stage_error_names_stage(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a0,a1,bias,count\n0,1,notanumber,1\n")
        with pytest.raises(StageError) as info:
            pipeline.run_pipeline(tiny(tmp_path / "s", dataset_path=str(bad)))
        assert info.value.stage == "data"

    def test_dataset_and_landscape_paths(self, tmp_path):
        land = planted_landscape(5, seed=4)
        save_landscape(land, tmp_path / "land.json")
        m = pipeline.run_pipeline(tiny(tmp_path / "l", landscape_path=str(tmp_path / "land.json"),
                                       methods=["enumerate"], n_groups=20), until="split")
        assert read_group_csv(m.root / "data" / "dataset.csv").dimension == 5


class TestReports:
    def test_comparison_matches_metrics(self, demo):
        cfg, manifest = demo
        tau = manifest.taus[0]
        doc = pipeline.load_metrics(manifest)
        rows = pipeline.compare_report(manifest, cfg.methods, tau)
        for method, ref, name, mean, spread in rows:
            summ = doc["methods"][method][ref][0]["summary"][name]
            assert (mean, spread) == (summ["mean"], summ["spread"])
        names = {name for m, _, name, _, _ in rows if m == "bggn"}
        assert set(pipeline.metrics.METRIC_NAMES) <= names

    def test_comparison_missing_method(self, demo):
        _, manifest = demo
        with pytest.raises(KeyError):
            pipeline.compare_report(manifest, ["bggn", "absent"], manifest.taus[0])

    def test_report_files(self, demo):
        cfg, manifest = demo
        with open(manifest.root / "reports" / "comparison_tau0.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(cfg.methods) * 2 * len(pipeline.SUMMARY_FIELDS)
        radar = (manifest.root / "reports" / "radar_tau0.csv").read_text().splitlines()
        assert radar[0] == "reference,method,metric,value"
        dens = (manifest.root / "reports" / "density_tau0.csv").read_text().splitlines()
        assert dens[0] == "method,bin_left,bin_right,density"

    def test_search_tree_holdout_uses_observation_tree(self, demo):
        # search results only ever contain observation keys, so no holdout attribute is discovered
        cfg, manifest = demo
        doc = pipeline.load_metrics(manifest)
        entry = doc["methods"]["search_tree"]["holdout"][0]["runs"][0]
        if entry is not None:
            assert entry["bias_number"] == 0

    def test_unseen_listing(self, demo):
        cfg, manifest = demo
        obs = read_group_csv(manifest.root / "data" / "observation.csv")
        hold = read_group_csv(manifest.root / "data" / "holdout.csv")
        union = pipeline._union(obs, hold)
        items = pipeline.discover_unseen(manifest, union)
        codes = union.codes.tolist()
        for bits, p in items:
            code = int("".join(map(str, bits)), 2)
            assert code not in codes
        preds = [p for _, p in items]
        assert preds == sorted(preds, reverse=True)

    def test_unseen_against_full_space_is_empty(self, demo):
        _, manifest = demo
        full = GroupBiasTable(enumerate_bits(6), np.zeros(64))
        assert pipeline.discover_unseen(manifest, full) == []

    def test_render(self):
        names = ["Male", "Young", "Bald"]
        assert pipeline.render_attributes((1, 0, 1), names) == "Male, Bald"
        assert pipeline.render_attributes((1, 0, 1), names, negated=True) == "Male, not Young, Bald"
        assert pipeline.render_attributes((0, 0, 0), names) == "(none)"


class TestAtomic:
    def test_atomic_write_replaces(self, tmp_path):
        p = tmp_path / "x" / "f.txt"
        pipeline.atomic_write(p, "one")
        pipeline.atomic_write(p, "two")
        assert p.read_text() == "two"
        assert [q.name for q in p.parent.iterdir()] == ["f.txt"]
