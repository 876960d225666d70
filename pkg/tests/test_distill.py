"""Training loops, the logit exchange, evaluation, and run ledgers."""
import json
import warnings

import numpy as np
import pytest

from blendcnn.models import ModelConfig, init_model, load_checkpoint
from blendcnn.text import Example
from blendcnn.distill import (
    DIRECT_CE,
    DISTILL_MAE,
    MIXED,
    LogitRecord,
    TrainConfig,
    attach_teacher_logits,
    config_hash,
    dump_predictions,
    evaluate,
    infer_logits,
    make_surrogate_teacher,
    read_logit_records,
    recount_predictions,
    train_direct,
    train_distill,
    write_logit_records,
)


def tiny_model(seed=0, **kw):
    base = dict(kind="blendcnn", n_classes=3, seq_len=10, vocab_size=20,
                embed_dim=6, n_layers=2, n_channels=5, dense_width=4)
    base.update(kw)
    return init_model(ModelConfig(**base), seed)


def make_examples(n, seed, n_classes=3, vocab_size=20, seq_len=10, labeled=True):
    """Separable toy set: class c leans on token ids near 2 + c."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = i % n_classes
        valid = int(rng.integers(3, seq_len + 1))
        ids = np.zeros(seq_len, dtype=np.int64)
        ids[:valid] = rng.integers(2, vocab_size, size=valid)
        ids[: max(1, valid // 2)] = 2 + label  # class giveaway tokens
        out.append(Example(id=f"ex{i}", token_ids=ids, valid_len=valid,
                           label=label if labeled else None))
    return out


def with_logits(examples, state, batch_size=8):
    return attach_teacher_logits(examples, infer_logits(state, examples, batch_size))


class TestTrainConfig:
    def test_distill_mae_requires_alpha_zero(self):
        with pytest.raises(ValueError, match="alpha"):
            TrainConfig(mode=DISTILL_MAE, alpha=0.5)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            TrainConfig(mode="contrastive")

    def test_config_hash_tracks_content(self):
        model = tiny_model().config
        a = config_hash(model, TrainConfig(epochs=3))
        b = config_hash(model, TrainConfig(epochs=3))
        c = config_hash(model, TrainConfig(epochs=4))
        assert a == b != c


class TestLogitExchange:
    def test_records_round_trip_exactly(self, tmp_path):
        state = tiny_model(seed=1)
        examples = make_examples(7, seed=2)
        records = infer_logits(state, examples, batch_size=3)
        assert [r.example_id for r in records] == [ex.id for ex in examples]
        path = tmp_path / "logits.jsonl"
        write_logit_records(path, records)
        again = read_logit_records(path)
        for a, b in zip(records, again):
            assert a.example_id == b.example_id
            np.testing.assert_array_equal(a.logits, b.logits)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "logits.jsonl"
        path.write_text('{"id": "a", "logits": [1, 2]}\nnot json\n')
        with pytest.raises(ValueError, match=":2"):
            read_logit_records(path)

    def test_nonfinite_logits_rejected(self):
        with pytest.raises(ValueError, match="finite|nan|inf"):
            LogitRecord("x", [1.0, float("nan")])

    def test_attach_requires_every_id(self):
        examples = make_examples(3, seed=3)
        records = [LogitRecord("ex0", [0.0, 0.0, 0.0])]
        with pytest.raises(ValueError, match="ex1"):
            attach_teacher_logits(examples, records)

    def test_attach_leaves_originals_alone(self):
        examples = make_examples(2, seed=4)
        records = [LogitRecord(ex.id, [1.0, 2.0, 3.0]) for ex in examples]
        out = attach_teacher_logits(examples, records)
        assert examples[0].teacher_logits is None
        np.testing.assert_array_equal(out[0].teacher_logits, [1.0, 2.0, 3.0])


class TestTrainDirect:
    def test_loss_falls_and_fits_separable_data(self):
        state = tiny_model(seed=5)
        examples = make_examples(30, seed=6)
        state, ledger = train_direct(state, examples,
                                     TrainConfig(epochs=60, batch_size=8, lr=5e-3, seed=7))
        losses = ledger.train_losses
        assert losses[-1] < losses[0] * 0.2
        assert evaluate(state, examples).accuracy >= 0.99

    def test_same_seed_reproduces_weights_bitwise(self):
        examples = make_examples(12, seed=8)
        cfg = TrainConfig(epochs=3, seed=9)
        a, _ = train_direct(tiny_model(seed=10), examples, cfg)
        b, _ = train_direct(tiny_model(seed=10), examples, cfg)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_unlabeled_example_rejected(self):
        examples = make_examples(4, seed=11, labeled=False)
        with pytest.raises(ValueError, match="unlabeled"):
            train_direct(tiny_model(), examples, TrainConfig(epochs=1))

    def test_wrong_mode_rejected(self):
        with pytest.raises(ValueError, match="direct_ce"):
            train_direct(tiny_model(), make_examples(4, seed=0),
                         TrainConfig(mode=DISTILL_MAE, epochs=1))

    def test_ledger_and_checkpoints_per_epoch(self, tmp_path):
        state = tiny_model(seed=12)
        examples = make_examples(10, seed=13)
        test_set = make_examples(6, seed=14)
        state, ledger = train_direct(state, examples,
                                     TrainConfig(epochs=3, seed=15),
                                     eval_set=test_set, checkpoint_dir=tmp_path)
        assert [e.epoch for e in ledger.entries] == [1, 2, 3]
        assert all(e.eval_accuracy is not None for e in ledger.entries)
        assert all(e.wall_seconds > 0 for e in ledger.entries)
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == ["epoch_001.ckpt", "epoch_002.ckpt", "epoch_003.ckpt"]
        final = load_checkpoint(tmp_path / "epoch_003.ckpt")
        for a, b in zip(state.parameters(), final.parameters()):
            assert np.array_equal(a.value, b.value)

    def test_ledger_serializes(self, tmp_path):
        state = tiny_model(seed=16)
        _, ledger = train_direct(state, make_examples(8, seed=17),
                                 TrainConfig(epochs=2, seed=18))
        path = tmp_path / "ledger.json"
        ledger.save(path)
        data = json.loads(path.read_text())
        assert data["seed"] == 18
        assert len(data["epochs"]) == 2
        assert data["config_hash"] == ledger.config_hash


class TestTrainDistill:
    def test_student_absorbs_teacher_logits(self):
        teacher = tiny_model(seed=20)
        pool = make_examples(40, seed=21)
        teacher, _ = train_direct(teacher, pool,
                                  TrainConfig(epochs=40, batch_size=8, lr=5e-3, seed=22))
        labeled = with_logits(pool[:4], teacher)
        unlabeled = [Example(ex.id, ex.token_ids, ex.valid_len, None, ex.teacher_logits)
                     for ex in with_logits(pool[4:], teacher)]
        student = tiny_model(seed=23)
        student, ledger = train_distill(
            student, labeled, unlabeled,
            TrainConfig(mode=DISTILL_MAE, epochs=60, batch_size=8, lr=5e-3,
                        seed=24, unlabeled_ratio=9.0))
        assert ledger.train_losses[-1] < ledger.train_losses[0] * 0.5
        agree = evaluate(student, pool).accuracy
        assert agree >= 0.9  # student tracks the teacher it was fit to

    def test_labels_never_read_when_alpha_zero(self):
        # bitwise-identical weights with true, shuffled, or missing labels
        teacher = tiny_model(seed=25)
        pool = make_examples(16, seed=26)
        records = infer_logits(teacher, pool)
        cfg = TrainConfig(mode=DISTILL_MAE, epochs=2, seed=27, unlabeled_ratio=1.0)

        def run(labels):
            exs = [Example(ex.id, ex.token_ids, ex.valid_len, lab, None)
                   for ex, lab in zip(pool, labels)]
            exs = attach_teacher_logits(exs, records)
            state, _ = train_distill(tiny_model(seed=28), exs[:8], exs[8:], cfg)
            return state

        rng = np.random.default_rng(29)
        true_labels = [ex.label for ex in pool]
        shuffled = list(rng.permutation(true_labels))
        none_at_all = [None] * len(pool)
        base = run(true_labels)
        for variant in (shuffled, none_at_all):
            other = run(variant)
            for pa, pb in zip(base.parameters(), other.parameters()):
                assert np.array_equal(pa.value, pb.value)

    def test_mixed_mode_uses_labels(self):
        teacher = tiny_model(seed=30)
        pool = make_examples(16, seed=31)
        labeled = with_logits(pool, teacher)
        cfg = TrainConfig(mode=MIXED, alpha=0.5, epochs=2, seed=32, unlabeled_ratio=1.0)
        a, _ = train_distill(tiny_model(seed=33), labeled, [], cfg)
        flipped = [Example(ex.id, ex.token_ids, ex.valid_len,
                           (ex.label + 1) % 3, ex.teacher_logits) for ex in labeled]
        b, _ = train_distill(tiny_model(seed=33), flipped, [], cfg)
        diffs = [not np.array_equal(pa.value, pb.value)
                 for pa, pb in zip(a.parameters(), b.parameters())]
        assert any(diffs)

    def test_missing_teacher_logits_named(self):
        pool = make_examples(4, seed=34)
        with pytest.raises(ValueError, match="ex0"):
            train_distill(tiny_model(), pool, [],
                          TrainConfig(mode=DISTILL_MAE, epochs=1))

    def test_ratio_deviation_warns(self):
        teacher = tiny_model(seed=35)
        pool = with_logits(make_examples(12, seed=36), teacher)
        cfg = TrainConfig(mode=DISTILL_MAE, epochs=1, seed=37, unlabeled_ratio=10.0)
        with pytest.warns(UserWarning, match="ratio"):
            train_distill(tiny_model(seed=38), pool[:6], pool[6:], cfg)

    def test_matching_ratio_is_quiet(self):
        teacher = tiny_model(seed=39)
        pool = with_logits(make_examples(22, seed=40), teacher)
        cfg = TrainConfig(mode=DISTILL_MAE, epochs=1, seed=41, unlabeled_ratio=10.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            train_distill(tiny_model(seed=42), pool[:2], pool[2:], cfg)


class TestEvaluate:
    def test_argmax_tie_goes_to_lowest_class(self):
        state = tiny_model(seed=43)
        state.param("logits.w").value[:] = 0.0
        state.param("logits.b").value[:] = 0.0
        examples = make_examples(9, seed=44)
        result = evaluate(state, examples)
        np.testing.assert_array_equal(result.confusion.sum(axis=0)[1:], [0, 0])

    def test_confusion_diagonal_matches_accuracy(self):
        state = tiny_model(seed=45)
        examples = make_examples(20, seed=46)
        state, _ = train_direct(state, examples,
                                TrainConfig(epochs=10, batch_size=8, seed=47))
        result = evaluate(state, examples)
        assert result.confusion.sum() == 20
        assert np.trace(result.confusion) == round(result.accuracy * 20)

    def test_empty_test_set_rejected(self):
        with pytest.raises(ValueError):
            evaluate(tiny_model(), [])

    def test_predictions_file_recounts_to_same_accuracy(self, tmp_path):
        state = tiny_model(seed=48)
        examples = make_examples(15, seed=49)
        state, _ = train_direct(state, examples,
                                TrainConfig(epochs=5, batch_size=8, seed=50))
        want = evaluate(state, examples).accuracy
        path = tmp_path / "predictions.csv"
        dump_predictions(path, state, examples)
        assert recount_predictions(path) == pytest.approx(want)
        header = path.read_text().splitlines()[0]
        assert header == "id,predicted,gold"


class TestSurrogateTeacher:
    def test_small_pool_warns(self):
        pool = make_examples(6, seed=51)
        cfg = TrainConfig(epochs=1, seed=52)
        with pytest.warns(UserWarning, match="smaller"):
            make_surrogate_teacher(pool, tiny_model().config, cfg,
                                   student_labeled_count=100)

    def test_returns_trained_state_and_ledger(self):
        pool = make_examples(24, seed=53)
        cfg = TrainConfig(epochs=30, batch_size=8, seed=54)
        state, ledger = make_surrogate_teacher(pool, tiny_model().config, cfg)
        assert len(ledger.entries) == 30
        assert evaluate(state, pool).accuracy > 0.5
