import numpy as np
import pytest

from conftest import micro_config, seeded
from sebn_adapter.adapters import (
    apply_policy,
    bn_stats_refresh,
    bn_train_layers,
    frozen_drift_check,
    name_filter,
    refresh_layers,
    trainable_names,
)
from sebn_adapter.autograd import Tensor, conv2d
from sebn_adapter.config import ExperimentConfig
from sebn_adapter.corpus import domain_preset, gen_corpus
from sebn_adapter.errors import ContractError
from sebn_adapter.model import count_params
from sebn_adapter.model.names import is_bn_adapter_param, is_se_param
from sebn_adapter.training import adapt
from sebn_adapter.types import AdaptPolicy


def policy(mode: str, groups=(1, 2, 3, 4), refresh: bool = True) -> AdaptPolicy:
    return AdaptPolicy(mode=mode, groups=groups, bn_stats_refresh=refresh)


@pytest.fixture()
def dev_corpus():
    return gen_corpus(5, 4, 7, domain_preset("int", 16), 16, split="dev")


@pytest.fixture()
def config() -> ExperimentConfig:
    return ExperimentConfig.model_validate(
        {
            "model": micro_config().model_dump(),
            "train": {
                "seed": 0,
                "adapt_epochs": 1,
                "segment_frames": 16,
                "ge2e_speakers": 2,
                "ge2e_utts": 2,
                "warmup": 0.0,
            },
        },
    )


def buffers_of(params) -> dict:
    return {k: v.copy() for k, v in params.buffers()}


class TestTrainableSets:
    def test_se_first_group(self, paper_params):
        names = trainable_names(paper_params, policy("se", (1,)))
        assert all(is_se_param(n, [1]) for n in names)
        assert paper_params.count(lambda n: n in names) == 876

    def test_counts(self, paper_params):
        def count(mode, groups=(1, 2, 3, 4)):
            names = set(trainable_names(paper_params, policy(mode, groups)))
            return paper_params.count(lambda n: n in names)

        assert count("se") == 80716
        assert count("bn") == 7552
        assert count("se_bn") == 88268
        assert count("fine_tune") == count_params(paper_params)
        assert count("bn", (4,)) == count_params(paper_params, name_filter("bn", [4]))

    def test_compose(self, micro_params):
        se = set(trainable_names(micro_params, policy("se")))
        bn = set(trainable_names(micro_params, policy("bn")))
        assert set(trainable_names(micro_params, policy("se_bn"))) == se | bn
        assert not se & bn

        by_group = [set(trainable_names(micro_params, policy("se", (g,)))) for g in (1, 2)]
        both = set(trainable_names(micro_params, policy("se", (1, 2))))
        assert both == by_group[0] | by_group[1]

    def test_bn_excludes_stem_and_downsample(self, micro_params):
        names = trainable_names(micro_params, policy("bn"))
        assert names
        assert all(is_bn_adapter_param(n) for n in names)
        assert not [n for n in names if n.startswith("stem.") or ".downsample." in n]

    def test_refresh_layers(self, micro_params):
        assert refresh_layers(micro_params, policy("se")) == []
        assert refresh_layers(micro_params, policy("fine_tune")) == micro_params.bn_layers()
        assert refresh_layers(micro_params, policy("bn")) == micro_params.bn_layers()
        assert refresh_layers(micro_params, policy("bn", (2,))) == [
            "group2.block1.bn1",
            "group2.block1.bn2",
            "group2.block1.downsample.bn",
        ]

    def test_bn_train_layers(self, micro_params):
        assert bn_train_layers(micro_params, policy("se")) == []
        assert bn_train_layers(micro_params, policy("fine_tune")) == micro_params.bn_layers()
        assert bn_train_layers(micro_params, policy("bn", (2,))) == [
            "group2.block1.bn1",
            "group2.block1.bn2",
        ]


class TestApplyPolicy:
    def test_flags(self, micro_params):
        apply_policy(micro_params, policy("se", (1,)))
        assert micro_params.trainable_names() == [
            "group1.block1.se.w1",
            "group1.block1.se.b1",
            "group1.block1.se.w2",
            "group1.block1.se.b2",
        ]
        assert not micro_params.is_trainable("head.w")
        assert not micro_params["stem.conv.w"].requires_grad

    def test_reapply_replaces_flags(self, micro_params):
        apply_policy(micro_params, policy("se"))
        apply_policy(micro_params, policy("fine_tune"))
        assert micro_params.trainable_names() == micro_params.names()

    def test_se_without_se_blocks(self):
        params = seeded(micro_config(use_se=False))
        with pytest.raises(ContractError, match="use_se"):
            apply_policy(params, policy("se"))
        apply_policy(params, policy("bn"))

    def test_unknown_name(self, micro_params):
        micro_params.add("extra.w", np.zeros(3, np.float32))
        with pytest.raises(ContractError, match="extra.w"):
            apply_policy(micro_params, policy("bn"))

    def test_drift_name_mismatch(self, micro_params):
        other = seeded(micro_config(use_se=False))
        with pytest.raises(ContractError):
            frozen_drift_check(micro_params, other)


class TestAdaptation:
    @pytest.mark.parametrize("mode", ["se", "bn", "se_bn"])
    def test_frozen_parameters_do_not_move(self, micro_params, dev_corpus, config, mode):
        before = micro_params.copy()
        result = adapt(micro_params, micro_config(), dev_corpus, config, policy(mode))
        assert len(result.log) == 2
        assert frozen_drift_check(before, micro_params) == 0.0

        moved = [
            n
            for n in micro_params.trainable_names()
            if not np.array_equal(before[n].data, micro_params[n].data)
        ]
        assert moved

    def test_fine_tune_moves_everything_it_can(self, micro_params, dev_corpus, config):
        before = micro_params.copy()
        adapt(micro_params, micro_config(), dev_corpus, config, policy("fine_tune"))
        assert frozen_drift_check(before, micro_params) == 0.0
        assert not np.array_equal(before["stem.conv.w"].data, micro_params["stem.conv.w"].data)

    @pytest.mark.parametrize("mode", ["se", "bn", "se_bn"])
    def test_stats_kept_without_refresh(self, micro_params, dev_corpus, config, mode):
        before = buffers_of(micro_params)
        adapt(micro_params, micro_config(), dev_corpus, config, policy(mode, refresh=False))
        after = buffers_of(micro_params)
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_refresh_touches_adapted_layers_only(self, micro_params, dev_corpus, config):
        before = buffers_of(micro_params)
        adapt(micro_params, micro_config(), dev_corpus, config, policy("bn", (3,)))
        after = buffers_of(micro_params)

        changed = {k.rsplit(".", 1)[0] for k in before if not np.array_equal(before[k], after[k])}
        assert changed == {
            "group3.block1.bn1",
            "group3.block1.bn2",
            "group3.block1.downsample.bn",
        }

    def test_first_group_refreshes_stem(self, micro_params, dev_corpus, config):
        before = buffers_of(micro_params)
        adapt(micro_params, micro_config(), dev_corpus, config, policy("se_bn", (1,)))
        after = buffers_of(micro_params)

        changed = {k.rsplit(".", 1)[0] for k in before if not np.array_equal(before[k], after[k])}
        assert changed == {"stem.bn", "group1.block1.bn1", "group1.block1.bn2"}

    def test_learning_rate_per_mode(self, micro_params, dev_corpus, config):
        cfg = micro_config()
        adapters = adapt(micro_params.copy(), cfg, dev_corpus, config, policy("se_bn"))
        full = adapt(micro_params.copy(), cfg, dev_corpus, config, policy("fine_tune"))
        assert (config.train.adapter_lr, config.train.adapt_lr) == (5e-3, 1e-4)
        assert {r.lr for r in adapters.log} == {5e-3}
        assert {r.lr for r in full.log} == {1e-4}

    def test_se_keeps_stats(self, micro_params, dev_corpus, config):
        before = buffers_of(micro_params)
        adapt(micro_params, micro_config(), dev_corpus, config, policy("se"))
        after = buffers_of(micro_params)
        assert all(np.array_equal(before[k], after[k]) for k in before)


class TestStatsRefresh:
    def batches(self, gen):
        return [gen.standard_normal((2, 1, 16, 24)).astype(np.float32) for _ in range(3)]

    def test_gain_scales_statistics(self, gen):
        cfg = micro_config()
        plain, gained = seeded(cfg), seeded(cfg)
        batches = self.batches(gen)

        bn_stats_refresh(plain, cfg, batches, ["stem.bn"])
        bn_stats_refresh(gained, cfg, [3 * x for x in batches], ["stem.bn"])

        mean, var = plain.buffer("stem.bn.running_mean"), plain.buffer("stem.bn.running_var")
        np.testing.assert_allclose(
            gained.buffer("stem.bn.running_mean"),
            3 * mean,
            rtol=1e-4,
            atol=1e-6,
        )
        np.testing.assert_allclose(gained.buffer("stem.bn.running_var"), 9 * var, rtol=1e-4)
        assert np.all(gained.buffer("stem.bn.running_var") > var)
        assert int(gained.buffer("stem.bn.num_batches_tracked")) == 3

    def test_cumulative_average(self, micro_params, gen):
        cfg = micro_config()
        batches = self.batches(gen)
        bn_stats_refresh(micro_params, cfg, batches, ["stem.bn"])

        conv = np.concatenate(
            [conv2d(Tensor(x), micro_params["stem.conv.w"]).data for x in batches],
        )
        np.testing.assert_allclose(
            micro_params.buffer("stem.bn.running_mean"),
            conv.mean(axis=(0, 2, 3)),
            rtol=1e-4,
            atol=1e-6,
        )

    def test_repeatable(self, micro_params, gen):
        cfg = micro_config()
        batches = self.batches(gen)
        bn_stats_refresh(micro_params, cfg, batches)
        first = buffers_of(micro_params)
        bn_stats_refresh(micro_params, cfg, batches)
        second = buffers_of(micro_params)
        assert all(np.array_equal(first[k], second[k]) for k in first)

    def test_default_layers(self, micro_params, gen):
        layers = bn_stats_refresh(micro_params, micro_config(), self.batches(gen))
        assert "stem.bn" not in layers
        assert len(layers) == 8

    def test_empty_batches_restore_stats(self, micro_params, gen):
        cfg = micro_config()
        bn_stats_refresh(micro_params, cfg, self.batches(gen))
        before = buffers_of(micro_params)
        with pytest.raises(ContractError):
            bn_stats_refresh(micro_params, cfg, [])
        after = buffers_of(micro_params)
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_failing_batch_restores_stats(self, micro_params, gen):
        cfg = micro_config()
        bn_stats_refresh(micro_params, cfg, self.batches(gen))
        before = buffers_of(micro_params)

        short = gen.standard_normal((2, 1, 16, 8)).astype(np.float32)
        with pytest.raises(ContractError):
            bn_stats_refresh(micro_params, cfg, [self.batches(gen)[0], short])
        after = buffers_of(micro_params)
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_same_distribution_barely_moves(self, micro_params):
        cfg = micro_config()
        corpus = gen_corpus(2, 60, 20, domain_preset("source", 16), 16)
        halves = ([], [])
        for u in corpus:
            halves[int(u.id[-3:]) % 2].append(u.features[None, None])

        def stats():
            return (
                micro_params.buffer("stem.bn.running_mean").copy(),
                micro_params.buffer("stem.bn.running_var").copy(),
            )

        # same speakers, disjoint utterances
        bn_stats_refresh(micro_params, cfg, halves[0], ["stem.bn"])
        mean, var = stats()
        bn_stats_refresh(micro_params, cfg, halves[1], ["stem.bn"])
        new_mean, new_var = stats()

        assert np.mean(np.abs(new_mean - mean) / np.sqrt(var)) < 1e-2
        assert np.mean(np.abs(new_var / var - 1)) < 1e-2

    def test_unknown_layer(self, micro_params, gen):
        with pytest.raises(ContractError):
            bn_stats_refresh(micro_params, micro_config(), self.batches(gen), ["group9.bn"])
