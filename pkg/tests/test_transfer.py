import numpy as np
import pytest

from seal.checkpoint import save_checkpoint
from seal.errors import ConfigError, DataFormatError, LineageError
from seal.fitting import evaluate_accuracy, train_task
from seal.network import NetworkParams, forward, init_params
from seal.optim import OptConfig
from seal.space import (ArchEncoding, ExpansionVector, SpaceConfig,
                        apply_expansion, count_encoding_parameters,
                        decode_plan, maximal_encoding)
from seal.transfer import (load_bank, pretrain_reference, save_bank,
                           slice_reference, transfer_expanded,
                           zero_new_kernel_rings)

SPACE = SpaceConfig(num_blocks=2, depth_levels=(1, 2), width_levels=(1.0, 2.0),
                    kernel_levels=(3, 5), resolution_levels=(8,),
                    base_channels=(2, 3), in_channels=1, num_classes=3)

BASE = ArchEncoding(resolution_idx=0, depth_idx=(0, 0),
                    width_idx=((0, 0), (0, 0)), kernel_idx=((0, 0), (0, 0)))

ALL_GROWTHS = [ExpansionVector(*bits) for bits in
               [(0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 0, 0),
                (1, 0, 1), (1, 1, 0), (1, 1, 1)]]


def blobs(n, classes=3, shape=(1, 8, 8), seed=0):
    rng = np.random.default_rng(seed)
    protos = rng.normal(0.0, 1.0, (classes,) + shape)
    y = rng.integers(0, classes, n)
    x = protos[y] + rng.normal(0.0, 0.25, (n,) + shape)
    return x.astype(np.float32), y.astype(np.int64)


@pytest.fixture(scope="module")
def bank():
    x, y = blobs(90)
    return pretrain_reference(SPACE, x, y, epochs=2, opt=OptConfig(lr=0.05), seed=3)


def test_pretraining_reduces_loss(bank):
    assert bank.manifest["final_loss"] < bank.manifest["initial_loss"]


def test_slice_of_maximal_encoding_is_the_bank(bank):
    sliced = slice_reference(bank, maximal_encoding(SPACE))
    for (i, name, a), (_, _, b) in zip(sliced.iter_trainable(),
                                       bank.params.iter_trainable()):
        assert np.array_equal(a, b), (i, name)
    for s1, s2 in zip(sliced.stats, bank.params.stats):
        for k in s1:
            assert np.array_equal(s1[k], s2[k])


def test_slice_indexing_oracle(bank):
    sliced = slice_reference(bank, BASE)
    plan = decode_plan(BASE, SPACE)
    # block 0 slot 0: bank conv is (4, 1, 5, 5); member wants (2, 1, 3, 3)
    src = bank.params.arrays[bank.plan.conv_index[0][0]]["w"]
    assert np.array_equal(sliced.arrays[plan.conv_index[0][0]]["w"],
                          src[:2, :1, 1:4, 1:4])
    # head keeps the leading input rows
    head_src = bank.params.arrays[bank.plan.head_index]["w"]
    assert np.array_equal(sliced.arrays[plan.head_index]["w"], head_src[:3])


def test_sliced_member_runs_forward(bank):
    for enc in (BASE, apply_expansion(BASE, ExpansionVector(1, 1, 1), SPACE)):
        plan = decode_plan(enc, SPACE)
        params = slice_reference(bank, enc)
        x, _ = blobs(4)
        logits, _ = forward(list(plan.specs), params, x, train=False)
        assert logits.shape == (4, 3)
        assert np.isfinite(logits).all()


def test_kernel_growth_with_zeroed_ring_preserves_logits(bank):
    base_params = slice_reference(bank, BASE)
    new_enc = apply_expansion(BASE, ExpansionVector(kernel=1), SPACE)
    new_params, report = transfer_expanded(base_params, BASE, new_enc, SPACE,
                                           bank, np.random.default_rng(0))
    audited = zero_new_kernel_rings(new_params, BASE, new_enc, SPACE)
    x, _ = blobs(16, seed=9)
    base_logits, _ = forward(list(decode_plan(BASE, SPACE).specs), base_params,
                             x, train=False)
    new_logits, _ = forward(list(decode_plan(new_enc, SPACE).specs), audited,
                            x, train=False)
    assert np.allclose(base_logits, new_logits, atol=1e-5)
    assert report.dropped == 0


def test_width_growth_preserves_leading_preactivations(bank):
    base_params = slice_reference(bank, BASE)
    new_enc = apply_expansion(BASE, ExpansionVector(width=1), SPACE)
    base_plan, new_plan = decode_plan(BASE, SPACE), decode_plan(new_enc, SPACE)
    # last_first scan grows block 1: 3 -> 6 channels
    assert new_plan.slot_channels[1][0] == 6
    new_params, _ = transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                                      np.random.default_rng(0))
    x, _ = blobs(8, seed=4)

    def preact(plan, params, block):
        upto = plan.conv_index[block][0]
        sub = NetworkParams(params.arrays[:upto + 1], params.stats[:upto + 1])
        return forward(list(plan.specs[:upto + 1]), sub, x, train=False)[0]

    a = preact(base_plan, base_params, 1)
    b = preact(new_plan, new_params, 1)
    assert np.allclose(a, b[:, :3], atol=1e-6)


def test_depth_growth_new_slot_fill(bank):
    base_params = slice_reference(bank, BASE)
    new_enc = apply_expansion(BASE, ExpansionVector(depth=1), SPACE)
    new_plan = decode_plan(new_enc, SPACE)
    warm, _ = transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                                np.random.default_rng(0), policy="warm_start")
    ci = new_plan.conv_index[1][1]
    bank_w = bank.params.arrays[bank.plan.conv_index[1][1]]["w"]
    assert np.array_equal(warm.arrays[ci]["w"], bank_w[:3, :3, 1:4, 1:4])
    bi = new_plan.bn_index[1][1]
    assert np.array_equal(warm.arrays[bi]["gamma"],
                          bank.params.arrays[bank.plan.bn_index[1][1]]["gamma"][:3])

    cold, _ = transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                                np.random.default_rng(0), policy="random")
    assert not np.array_equal(cold.arrays[ci]["w"], warm.arrays[ci]["w"])
    assert np.all(cold.arrays[bi]["gamma"] == 1.0)
    assert np.all(cold.arrays[bi]["beta"] == 0.0)
    assert np.all(cold.stats[bi]["var"] == 1.0)


def test_report_partition_over_all_growths(bank):
    base_params = slice_reference(bank, BASE)
    base_count = count_encoding_parameters(BASE, SPACE)
    for d in ALL_GROWTHS:
        new_enc = apply_expansion(BASE, d, SPACE)
        for policy in ("warm_start", "random"):
            params, rep = transfer_expanded(base_params, BASE, new_enc, SPACE,
                                            bank, np.random.default_rng(1),
                                            policy=policy)
            assert rep.growth == d and rep.policy == policy
            assert rep.total == count_encoding_parameters(new_enc, SPACE)
            assert rep.carried + rep.bank_sliced + rep.random_init == rep.total
            assert rep.carried + rep.dropped == base_count
            if policy == "random":
                assert rep.bank_sliced == 0
            # every tensor in the new net got filled
            plan = decode_plan(new_enc, SPACE)
            for i, spec in enumerate(plan.specs):
                if spec.kind in ("conv2d", "dense"):
                    assert "w" in params.arrays[i]
                elif spec.kind == "batchnorm":
                    assert "gamma" in params.arrays[i]
                    assert "var" in params.stats[i]


def test_bn_reinit_only_when_channels_change(bank):
    base_params = slice_reference(bank, BASE)
    kernel_only = apply_expansion(BASE, ExpansionVector(kernel=1), SPACE)
    _, rep = transfer_expanded(base_params, BASE, kernel_only, SPACE, bank,
                               np.random.default_rng(0))
    assert rep.dropped == 0
    assert all(origin != "reinit" for _, _, origin in rep.provenance)

    widened = apply_expansion(BASE, ExpansionVector(width=1), SPACE)
    new_params, rep = transfer_expanded(base_params, BASE, widened, SPACE, bank,
                                        np.random.default_rng(0))
    assert rep.dropped == 2 * 3   # block 1 bn had 3 channels
    assert any(origin == "reinit" for _, _, origin in rep.provenance)
    plan = decode_plan(widened, SPACE)
    bi = plan.bn_index[1][0]
    assert np.all(new_params.stats[bi]["var"] >= 1e-3)


def test_warm_start_then_training_still_learns(bank):
    x, y = blobs(120, seed=21)
    base_params = slice_reference(bank, BASE)
    new_enc = apply_expansion(BASE, ExpansionVector(1, 1, 1), SPACE)
    new_params, _ = transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                                      np.random.default_rng(2))
    specs = list(decode_plan(new_enc, SPACE).specs)
    trained, _ = train_task(specs, new_params, x, y, 6, OptConfig(lr=0.05),
                            np.random.default_rng(3))
    assert evaluate_accuracy(specs, trained, x, y) > 0.7


def test_carried_regions_bit_identical_across_policies(bank):
    base_params = slice_reference(bank, BASE)
    new_enc = apply_expansion(BASE, ExpansionVector(1, 1, 1), SPACE)
    base_plan, new_plan = decode_plan(BASE, SPACE), decode_plan(new_enc, SPACE)
    warm, _ = transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                                np.random.default_rng(5), policy="warm_start")
    cold, _ = transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                                np.random.default_rng(99), policy="random")
    for b in range(SPACE.num_blocks):
        for s in range(BASE.active_slots(SPACE, b)):
            old = base_plan.specs[base_plan.conv_index[b][s]].dims
            ci = new_plan.conv_index[b][s]
            k2 = new_plan.specs[ci].dims[2]
            lo = (k2 - old[2]) // 2
            region = np.s_[:old[1], :old[0], lo:lo + old[2], lo:lo + old[2]]
            assert np.array_equal(warm.arrays[ci]["w"][region],
                                  cold.arrays[ci]["w"][region])
    fin1 = base_plan.specs[base_plan.head_index].dims[0]
    hi = new_plan.head_index
    assert np.array_equal(warm.arrays[hi]["w"][:fin1], cold.arrays[hi]["w"][:fin1])


def test_width_filter_duplication_flag(bank):
    base_params = slice_reference(bank, BASE)
    new_enc = apply_expansion(BASE, ExpansionVector(width=1), SPACE)
    plan = decode_plan(new_enc, SPACE)
    dup, rep = transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                                 np.random.default_rng(0),
                                 duplicate_width_filters=True)
    assert rep.duplicated > 0
    assert rep.carried + rep.bank_sliced + rep.random_init + rep.duplicated \
        == rep.total
    # widened block 1 conv: 3 -> 6 channels; new rows repeat the base filters
    ci = plan.conv_index[1][0]
    base_w = base_params.arrays[decode_plan(BASE, SPACE).conv_index[1][0]]["w"]
    grown_w = dup.arrays[ci]["w"]
    for r in range(3, 6):
        assert np.array_equal(grown_w[r, :base_w.shape[1]], base_w[r - 3])


def test_lineage_rejections(bank):
    base_params = slice_reference(bank, BASE)
    with pytest.raises(LineageError):
        transfer_expanded(base_params, BASE, BASE, SPACE, bank,
                          np.random.default_rng(0))
    two_steps = apply_expansion(
        apply_expansion(BASE, ExpansionVector(width=1), SPACE),
        ExpansionVector(width=1), SPACE)
    with pytest.raises(LineageError):
        transfer_expanded(base_params, BASE, two_steps, SPACE, bank,
                          np.random.default_rng(0))
    # reachable only under last_first; pinning the other target must fail
    one_step = apply_expansion(BASE, ExpansionVector(width=1), SPACE, "last_first")
    assert one_step != apply_expansion(BASE, ExpansionVector(width=1), SPACE,
                                       "early_first")
    with pytest.raises(LineageError):
        transfer_expanded(base_params, BASE, one_step, SPACE, bank,
                          np.random.default_rng(0), target="early_first")


def test_transfer_config_errors(bank):
    base_params = slice_reference(bank, BASE)
    new_enc = apply_expansion(BASE, ExpansionVector(width=1), SPACE)
    with pytest.raises(ConfigError):
        transfer_expanded(base_params, BASE, new_enc, SPACE, bank,
                          np.random.default_rng(0), policy="tepid")
    other = SpaceConfig(num_blocks=2, depth_levels=(1, 2),
                        width_levels=(1.0, 2.0), kernel_levels=(3, 5),
                        resolution_levels=(8,), base_channels=(2, 4),
                        in_channels=1, num_classes=3)
    x, y = blobs(30)
    other_bank = pretrain_reference(other, x, y, epochs=0, seed=0)
    with pytest.raises(ConfigError):
        transfer_expanded(base_params, BASE, new_enc, SPACE, other_bank,
                          np.random.default_rng(0))


def test_bank_checkpoint_roundtrip(tmp_path, bank):
    path = tmp_path / "bank.ckpt"
    save_bank(path, bank)
    loaded = load_bank(path, SPACE)
    assert loaded.manifest == bank.manifest
    for (_, _, a), (_, _, b) in zip(loaded.params.iter_trainable(),
                                    bank.params.iter_trainable()):
        assert np.array_equal(a, b)

    other = SpaceConfig(num_blocks=2, depth_levels=(1, 2),
                        width_levels=(1.0, 2.0), kernel_levels=(3, 5),
                        resolution_levels=(8,), base_channels=(2, 4),
                        in_channels=1, num_classes=3)
    with pytest.raises(ConfigError):
        load_bank(path, other)

    plain = tmp_path / "plain.ckpt"
    plan = decode_plan(BASE, SPACE)
    save_checkpoint(plain, list(plan.specs),
                    init_params(list(plan.specs), np.random.default_rng(0)))
    with pytest.raises(DataFormatError):
        load_bank(plain, SPACE)
