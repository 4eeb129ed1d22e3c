"""End-to-end tests of the command line over a synthetic newsroom.

A module-scoped world (articles, parses, crowd annotations, profiles,
external labels, config) is built once; the full subcommand chain runs
against it twice so reruns can be compared byte for byte.
"""

from __future__ import annotations

import json

import pytest

from _world import build_world
from opinionframing import cli
from opinionframing.framing import read_framing_stats
from opinionframing.pipeline import PipelineError, RunContext
from opinionframing.stance import read_instances, read_stance_labels

CHAIN = [
    "corpus",
    "extract",
    "aggregate",
    "demographics",
    "human-perf",
    "train-stance",
    "classify",
    "eval",
    "framing",
    "faithfulness",
    "report",
]


def run_cli(*args) -> int:
    return cli.main([str(arg) for arg in args])


def run_chain(config, out_dir, commands=CHAIN) -> None:
    for command in commands:
        code = run_cli("-c", config, "-o", out_dir, command)
        assert code == 0, f"`{command}` exited {code}"


def read_artifact(out_dir, name) -> str:
    text = (out_dir / name).read_text(encoding="utf-8")
    header, _, body = text.partition("\n")
    parts = header.split()
    assert parts[:2] == ["#", "opinionframing"], f"{name} lacks the header line"
    assert parts[3] == "config"
    return body


def read_artifact_json(out_dir, name):
    return json.loads(read_artifact(out_dir, name))


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    return build_world(tmp_path_factory.mktemp("world"), seed=7)


@pytest.fixture(scope="module")
def run_dir(world):
    out = world["root"] / "run1"
    run_chain(world["config"], out)
    return out


@pytest.fixture(scope="module")
def rerun_comparison(world, run_dir):
    """Byte-compare a second identical run against the first."""
    second = world["root"] / "run2"
    run_chain(world["config"], second)
    names = sorted(p.name for p in run_dir.iterdir())
    differing = [
        name
        for name in names
        if name != "run.log"
        and (run_dir / name).read_bytes() != (second / name).read_bytes()
    ]
    return {"names": names, "differing": differing, "second": second}


class TestFullChain:
    def test_corpus_summary(self, world, run_dir):
        summary = read_artifact_json(run_dir, "corpus_summary.json")
        assert summary["loaded"] == world["articles_written"]
        assert summary["after_url_filter"] == world["articles_written"] - 1
        assert summary["after_url_dedup"] == world["articles_written"] - 2
        assert summary["after_title_dedup"] == world["survivors_after_ingest"]
        assert summary["by_leaning"]["Left"] > 0
        assert summary["by_leaning"]["Right"] > 0
        assert summary["wire_articles"] > 0

        kept = [
            line
            for line in read_artifact(run_dir, "corpus.jsonl").splitlines()
            if line.strip()
        ]
        assert len(kept) == world["survivors_after_ingest"]
        ids = {json.loads(line)["article_id"] for line in kept}
        assert "art-sports" not in ids
        assert "art-dupurl-b" not in ids
        assert "art-duptitle-b" not in ids
        assert "art-dupurl-a" in ids and "art-duptitle-a" in ids

    def test_extract_summary(self, world, run_dir):
        summary = read_artifact_json(run_dir, "extract_summary.json")
        assert summary["documents"] == world["parsed_articles"]
        assert summary["sentences"] == world["sentences"]
        assert summary["stage_counts"] == world["stage_counts"]
        assert summary["tuples"] == world["tuples"]
        assert summary["annotation_candidates"] == world["tuples"]
        assert summary["outlet_source"] == "corpus.jsonl"

    def test_tuple_records(self, world, run_dir):
        rows = [
            json.loads(line)
            for line in read_artifact(run_dir, "tuples.jsonl").splitlines()
            if line.strip()
        ]
        assert {row["tuple_id"] for row in rows} == set(world["tuple_stance"])
        assert all(row["outlet"] for row in rows)
        assert all(row["annotation_candidate"] for row in rows)
        canonicals = {row["source_canonical"] for row in rows}
        assert {"NASA", "Greta Thunberg", "ExxonMobil", "William Happer"} <= canonicals
        texts = {row["annotation_text"] for row in rows}
        assert "The climate is warming." in texts
        modifier_rows = [
            row for row in rows if "misleading" in row["source_modifier_lemmas"]
        ]
        assert modifier_rows, "amod source modifiers should be recorded"

    def test_aggregate_summary(self, world, run_dir):
        summary = read_artifact_json(run_dir, "aggregate_summary.json")
        assert summary["annotations"] == world["annotations"]
        assert summary["items"] == world["tuples"]
        assert summary["workers"] == len(world["workers"])
        assert summary["converged"] is True
        assert summary["instances_written"] == world["tuples"]
        assert summary["items_without_tuple"] == 0
        assert sum(summary["label_counts"].values()) == world["tuples"]

    def test_instances_recover_planted_stances(self, world, run_dir):
        instances = read_instances(run_dir / "instances.csv")
        assert len(instances) == world["tuples"]
        hits = sum(
            instance.hard_label == world["tuple_stance"][instance.item_id]
            for instance in instances
        )
        assert hits / len(instances) >= 0.9

    def test_demographics_artifact(self, run_dir):
        body = read_artifact(run_dir, "demographics.json")
        assert "treated" in body
        json.loads(body)

    def test_human_perf_artifact(self, run_dir):
        payload = json.loads(read_artifact(run_dir, "human_perf.json"))
        assert payload, "human_perf.json should carry the fitted result"

    def test_train_stance_artifacts(self, world, run_dir):
        split = read_artifact_json(run_dir, "split.json")
        assert len(split["test"]) == 12
        assert len(split["train"]) + len(split["test"]) == world["tuples"]
        assert not set(split["train"]) & set(split["test"])

        evaluation = read_artifact_json(run_dir, "stance_eval.json")
        assert evaluation["test"]["accuracy"] >= 0.7
        assert evaluation["cv"]["n_folds"] == 3
        assert len(evaluation["cv"]["fold_accuracies"]) == 3
        assert evaluation["majority"]["n"] == evaluation["test"]["n"] == 12

    def test_classifier_labels(self, world, run_dir):
        labels = read_stance_labels(run_dir / "labels.csv")
        assert len(labels) == world["tuples"]
        planted = world["tuple_stance"]
        hits = sum(label.label == planted[label.ref] for label in labels)
        assert hits / len(labels) >= 0.85

    def test_eval_artifact(self, run_dir):
        evaluation = read_artifact_json(run_dir, "eval.json")
        assert evaluation["subset"] == "test-split"
        assert evaluation["evaluated"] == 12
        assert evaluation["missing_predictions"] == 0
        assert evaluation["accuracy"] >= 0.7

    def test_framing_artifacts(self, world, run_dir):
        stats = read_framing_stats(run_dir / "framing_stats.csv")
        assert stats, "the planted predicates should clear min_freq=2"
        assert {stat.leaning for stat in stats} <= {"Left", "Right"}
        assert all(stat.frequency >= 2 for stat in stats)
        devices = {stat.device for stat in stats}
        assert "claim" in devices

        coverage = read_artifact_json(run_dir, "coverage.json")
        assert coverage["filters"]["exclude_wire"] is True
        assert coverage["min_freq"] == 2
        assert coverage["fdr"] == 0.2
        assert set(coverage["coverage"]) == {"Left", "Right"}
        for block in coverage["coverage"].values():
            counts = block["counts"]
            assert counts["total"] == sum(
                counts[key]
                for key in (
                    "self_affirming",
                    "opponent_doubting",
                    "other_device",
                    "no_device",
                )
            )

    def test_faithfulness_artifacts(self, world, run_dir):
        payload = read_artifact_json(run_dir, "faithfulness.json")
        assert payload["threshold"] == 90.0
        assert set(payload["per_leaning"]) <= {"Left", "Right"}
        expected = world["faithfulness_per_leaning"]
        for leaning, rates in payload["per_leaning"].items():
            # classifier labels may flip a borderline item into/out of the
            # matched set, so allow slack around the planted counts
            assert abs(rates["matched"] - expected[leaning][0]) <= 2
            assert 0.0 <= rates["unfaithful_rate"] <= 1.0
        assert payload["matched"] == sum(
            rates["matched"] for rates in payload["per_leaning"].values()
        )
        attribution = read_artifact(run_dir, "attribution.csv").splitlines()
        assert len(attribution) - 1 == payload["matched"]  # minus column header
        assert set(payload["hypocrisy_predicates"]) <= {"Left", "Right"}

    def test_report_artifacts(self, run_dir):
        summary = read_artifact_json(run_dir, "summary.json")
        for key in (
            "corpus",
            "extraction",
            "annotation",
            "classifier",
            "coverage",
            "faithfulness",
            "label_counts",
            "external_eval",
        ):
            assert key in summary, f"summary.json missing {key}"
        markdown = read_artifact(run_dir, "summary.md")
        assert "## Opinion-framing run summary" in markdown
        assert "### Classifier" in markdown
        assert "### Attribution faithfulness" in markdown
        assert "| Left " in markdown

    def test_run_log_is_the_only_timestamped_file(self, run_dir):
        assert (run_dir / "run.log").exists()
        for path in run_dir.iterdir():
            if path.name == "run.log":
                continue
            first = path.read_text(encoding="utf-8").splitlines()[0]
            assert first.startswith("# opinionframing "), path.name

    def test_reruns_are_byte_identical(self, rerun_comparison):
        assert rerun_comparison["differing"] == []
        assert len(rerun_comparison["names"]) > 15


class TestExternalLabels:
    @pytest.fixture(scope="class")
    def ingest_dir(self, world):
        out = world["root"] / "run-ingest"
        run_chain(
            world["config"], out, ["corpus", "extract", "ingest-labels"]
        )
        return out

    def test_ingested_labels_match_planted(self, world, ingest_dir):
        labels = read_stance_labels(ingest_dir / "labels.csv")
        assert len(labels) == world["tuples"]  # bogus ref dropped, dup folded
        assert all(
            label.label == world["tuple_stance"][label.ref] for label in labels
        )
        assert all(label.origin == "external" for label in labels)

    def test_faithfulness_exact_on_planted_labels(self, world, ingest_dir):
        code = run_cli("-c", world["config"], "-o", ingest_dir, "faithfulness")
        assert code == 0
        payload = read_artifact_json(ingest_dir, "faithfulness.json")
        expected = world["faithfulness_per_leaning"]
        for leaning, (matched, unfaithful) in expected.items():
            rates = payload["per_leaning"][leaning]
            assert rates["matched"] == matched
            assert rates["unfaithful"] == unfaithful
        total = sum(matched for matched, _ in expected.values())
        bad = sum(unfaithful for _, unfaithful in expected.values())
        assert payload["matched"] == total
        assert payload["pooled_unfaithful_rate"] == pytest.approx(bad / total)

    def test_framing_flag_overrides_are_recorded(self, world, ingest_dir):
        code = run_cli(
            "-c", world["config"], "-o", ingest_dir,
            "framing", "--min-freq", "5", "--fdr", "0.05",
        )
        assert code == 0
        coverage = read_artifact_json(ingest_dir, "coverage.json")
        assert coverage["min_freq"] == 5
        assert coverage["fdr"] == 0.05
        stats = read_framing_stats(ingest_dir / "framing_stats.csv")
        assert all(stat.frequency >= 5 for stat in stats)

        code = run_cli(
            "-c", world["config"], "-o", ingest_dir, "framing", "--include-wire"
        )
        assert code == 0
        coverage = read_artifact_json(ingest_dir, "coverage.json")
        assert coverage["filters"]["exclude_wire"] is False


class TestFailureModes:
    def test_missing_artifact_names_its_producer(self, world, tmp_path, capsys):
        out = tmp_path / "empty-run"
        assert run_cli("-c", world["config"], "-o", out, "classify") == 1
        assert "train-stance" in capsys.readouterr().err

        assert run_cli("-c", world["config"], "-o", out, "report") == 1
        err = capsys.readouterr().err
        assert "classify" in err and "ingest-labels" in err

    def test_missing_config_file(self, tmp_path, capsys):
        assert run_cli("-c", tmp_path / "nope.toml", "-o", tmp_path / "r", "corpus") == 1
        assert "config file not found" in capsys.readouterr().err

    def test_unknown_config_section(self, tmp_path, capsys):
        config = tmp_path / "bad.toml"
        config.write_text("[bogus]\nx = 1\n", encoding="utf-8")
        assert run_cli("-c", config, "-o", tmp_path / "r", "corpus") == 1
        assert "unknown config section" in capsys.readouterr().err

    def test_invalid_toml(self, tmp_path, capsys):
        config = tmp_path / "broken.toml"
        config.write_text("[paths\narticles = ", encoding="utf-8")
        assert run_cli("-c", config, "-o", tmp_path / "r", "corpus") == 1
        assert "invalid TOML" in capsys.readouterr().err

    def test_unset_path_names_the_consumer(self, tmp_path, capsys):
        config = tmp_path / "minimal.toml"
        config.write_text("[seeds]\nroot = 1\n", encoding="utf-8")
        assert run_cli("-c", config, "-o", tmp_path / "r", "corpus") == 1
        assert "paths.articles" in capsys.readouterr().err

    def test_seed_override_changes_hash_and_is_refused(
        self, world, tmp_path, capsys
    ):
        out = tmp_path / "mix"
        assert run_cli("-c", world["config"], "-o", out, "corpus") == 0
        assert run_cli("-c", world["config"], "-o", out, "--seed", 999, "corpus") == 1
        err = capsys.readouterr().err
        assert "--force" in err and "config hash" in err
        assert (
            run_cli(
                "-c", world["config"], "-o", out, "--seed", 999, "--force", "corpus"
            )
            == 0
        )
        # the echo now records the overridden seed, so the original
        # configuration is the mismatched one
        assert run_cli("-c", world["config"], "-o", out, "corpus") == 1

    def test_stale_artifact_is_refused(self, world, tmp_path):
        out = tmp_path / "stale"
        assert run_cli("-c", world["config"], "-o", out, "corpus") == 0
        ctx = RunContext.create(world["config"], out)
        stale = RunContext(
            config=ctx.config,
            effective=ctx.effective,
            config_hash="0" * 16,
            out_dir=out,
        )
        with pytest.raises(PipelineError, match="re-run `opinionframing corpus`"):
            stale.artifact_path("corpus.jsonl")
        forced = RunContext(
            config=ctx.config,
            effective=ctx.effective,
            config_hash="0" * 16,
            out_dir=out,
            force=True,
        )
        assert forced.artifact_path("corpus.jsonl") == out / "corpus.jsonl"

    def test_help_and_unknown_command(self):
        assert run_cli("--help") == 0
        assert run_cli("definitely-not-a-command") == 1

    def test_version(self, capsys):
        assert run_cli("--version") == 0
        assert "opinionframing" in capsys.readouterr().out


class TestFixtureCorpus:
    def test_extract_matches_gold_survivors(self, tmp_path, fixtures_dir):
        gold = json.loads(
            (fixtures_dir / "extraction_gold.json").read_text(encoding="utf-8")
        )
        expected = sum(
            1
            for sentence in gold["sentences"]
            for tup in sentence["tuples"]
            if tup["drop_stage"] is None
        )
        config = tmp_path / "extract-only.toml"
        config.write_text(
            f'[paths]\nparses = "{fixtures_dir / "extraction.conllu"}"\n',
            encoding="utf-8",
        )
        out = tmp_path / "run"
        assert run_cli("-c", config, "-o", out, "extract") == 0
        summary = read_artifact_json(out, "extract_summary.json")
        assert summary["tuples"] == expected
        rows = [
            json.loads(line)
            for line in read_artifact(out, "tuples.jsonl").splitlines()
            if line.strip()
        ]
        assert len(rows) == expected
        assert all(row["outlet"] == "" for row in rows)
