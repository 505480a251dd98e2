from pathlib import Path

import anyio
import pytest
from pydantic import ValidationError

from conftest import micro_config
from sebn_adapter.config import ExperimentConfig, SweepConfig
from sebn_adapter.experiment import (
    METHODS,
    format_summary,
    run_experiment,
    run_seed,
    summarize,
    sweep_policies,
)
from sebn_adapter.types import AdaptPolicy, ResultRow

TARGETS = ("int", "ent", "live", "sing")


def desk_config(**model) -> ExperimentConfig:
    return ExperimentConfig.model_validate(
        {
            "model": micro_config(**model).model_dump(),
            "data": {
                "domains": ("int",),
                "pretrain_speakers": 4,
                "pretrain_utts": 4,
                "heldout_speakers": 2,
                "target_speakers": 3,
                "target_utts": 7,
                "split_speakers": 3,
            },
            "train": {
                "seed": 1,
                "epochs": 1,
                "adapt_epochs": 1,
                "batch_size": 4,
                "segment_frames": 16,
                "ge2e_speakers": 2,
                "ge2e_utts": 2,
            },
            "eval": {"workers": 2},
        },
    )


def result(method: str, domain: str, seed: int, eer: float) -> ResultRow:
    return ResultRow(method=method, n_params=0, domain=domain, n_speakers=50, seed=seed, eer=eer)


def test_summary():
    rows = [
        result("se_bn", "sing", 1, 0.1),
        result("se_bn", "sing", 2, 0.3),
        result("se_bn", "sing", 3, 0.2),
        result("pretrain", "sing", 1, 0.4),
        result("se_bn", "sing", 1, 0.5).model_copy(update={"n_speakers": 100}),
    ]
    assert summarize(rows) == [
        ("se_bn", "sing", 50, 0.2, 3),
        ("pretrain", "sing", 50, 0.4, 1),
        ("se_bn", "sing", 100, 0.5, 1),
    ]
    assert format_summary(summarize(rows)).splitlines() == [
        "method,domain,n_speakers,median_eer,seeds",
        "se_bn,sing,50,20.000,3",
        "pretrain,sing,50,40.000,1",
        "se_bn,sing,100,50.000,1",
    ]


def test_run_experiment(tmp_path):
    rows = anyio.run(run_experiment, desk_config(), tmp_path, [1], ["se", "bn"])
    assert [(r.method, r.domain) for r in rows] == [
        ("pretrain", "source"),
        ("pretrain", "int"),
        ("se", "int"),
        ("bn", "int"),
    ]
    assert all(0.0 <= r.eer <= 1.0 for r in rows)
    assert rows[2].n_params > 0
    assert rows[1].n_speakers == 3

    assert len((tmp_path / "results.csv").read_text().splitlines()) == 5
    assert (tmp_path / "summary.csv").read_text().startswith("method,domain,n_speakers")
    assert (tmp_path / "seed1" / "pretrain.ckpt").exists()
    assert (tmp_path / "seed1" / "data" / "manifest.tsv").exists()


def test_plain_resnet_skips_se(tmp_path):
    rows = anyio.run(run_seed, desk_config(use_se=False), tmp_path, ["se", "bn"], False)
    assert [r.method for r in rows] == ["pretrain", "pretrain", "bn"]
    assert not (tmp_path / "seed1" / "data").exists()


class TestSweeps:
    def sweep(self, **values) -> ExperimentConfig:
        config = desk_config()
        data = config.data.model_copy(update={"target_speakers": 4})
        return config.model_copy(update={"data": data, "sweep": SweepConfig(**values)})

    def test_policies(self):
        config = self.sweep(groups=(1, 2, 3, 4))
        tags = [p.tag for p in sweep_policies(config, ["se", "se_bn"])]
        assert tags == ["se", "se_bn", "se@G1", "se@G2", "se@G3", "se@G4"]

        config = config.model_copy(update={"adapt": AdaptPolicy(groups=(1,))})
        tags = [p.tag for p in sweep_policies(config, ["se"])]
        assert tags == ["se@G1", "se@G2", "se@G3", "se@G4"]

    def test_group_rows(self, tmp_path):
        rows = anyio.run(run_seed, self.sweep(groups=(1, 4)), tmp_path, ["bn"], False)
        assert [r.method for r in rows] == ["pretrain", "pretrain", "bn", "se@G1", "se@G4"]
        g1, g4 = rows[3], rows[4]
        assert 0 < g1.n_params < g4.n_params

    def test_split_rows(self, tmp_path):
        rows = anyio.run(run_seed, self.sweep(split_sizes=(2, 3, 4)), tmp_path, ["bn"], False)
        targets = [(r.method, r.n_speakers) for r in rows if r.domain == "int"]
        assert targets == [
            ("pretrain", 3),
            ("bn", 3),
            ("pretrain", 2),
            ("bn", 2),
            ("pretrain", 4),
            ("bn", 4),
        ]

    def test_architecture_rows(self, tmp_path):
        config = self.sweep(use_se=(True, False))
        rows = anyio.run(run_seed, config, tmp_path, ["se", "bn"], True)
        assert [r.method for r in rows if r.domain == "int"] == [
            "resnet34se/pretrain",
            "resnet34se/se",
            "resnet34se/bn",
            "resnet34/pretrain",
            "resnet34/bn",
        ]
        assert (tmp_path / "seed1" / "pretrain-resnet34.ckpt").exists()
        assert (tmp_path / "seed1" / "pretrain-resnet34se.ckpt").exists()

    def test_split_sizes_need_target_speakers(self):
        with pytest.raises(ValidationError, match="target_speakers"):
            ExperimentConfig.model_validate(
                {"train": {"seed": 1}, "sweep": {"split_sizes": "50,100"}},
            )


@pytest.mark.slow
def test_adaptation_trend(tmp_path: Path):
    """Default desk configuration, medians over three seeds, every method and domain."""
    config = ExperimentConfig.model_validate(
        {"train": {"seed": 1}, "data": {"domains": TARGETS}},
    )
    rows = anyio.run(run_experiment, config, tmp_path, [1, 2, 3], list(METHODS), False)
    medians = {(m, d): e for m, d, _, e, _ in summarize(rows)}
    assert {r.n_speakers for r in rows if r.domain in TARGETS} == {50}

    for domain in ("live", "sing"):
        assert medians[("pretrain", "source")] < medians[("pretrain", domain)]

    for domain in TARGETS:
        pretrained, combined = medians[("pretrain", domain)], medians[("se_bn", domain)]
        assert combined <= 0.9 * pretrained, domain
        assert combined <= min(medians[("se", domain)], medians[("bn", domain)]) + 0.005, domain
        assert combined <= medians[("fine_tune", domain)] + 0.005, domain
