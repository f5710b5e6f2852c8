"""Acceptance suite: one test per criterion, in order.

Run with `pytest -v tests/test_acceptance.py` for a pass/fail line per
criterion. The heavy documents-to-mAP pipelines share session-scoped
fixtures; everything is seeded and single-threaded.
"""

import time
from collections import Counter

import numpy as np
import pytest

from lyrictag.aggregate import (
    AttentionConfig,
    AttentionProbe,
    build_proxy_dataset,
    classifier_loss_and_grads,
    train_attention_aggregator,
)
from lyrictag.corpus import read_tokenized_corpus
from lyrictag.doc2vec import pvdm_loss_and_grads, train_doc2vec
from lyrictag.evaluation import average_precision
from lyrictag.experiment import ExperimentConfig, incremental_study, run_experiment
from lyrictag.splitting import SplitAssignment, SplitExample, split_corpus
from lyrictag.synth import bundled_spec, generate_synthetic, incremental_spec
from lyrictag.tagging import TagVocabulary, TaggerModel, _loss_and_grads, train_tagger
from lyrictag.word2vec import (
    EmbeddingMatrix,
    Word2vecConfig,
    cbow_loss_and_grads,
    load_pretrained_binary,
    save_pretrained_binary,
    skipgram_loss_and_grads,
    train_word2vec,
)

from conftest import central_difference, make_doc, relative_error
from test_evaluation import SCORE_ALPHABET, brute_force_ap
from test_tagging import separable_dataset

GRAD_TOL = 1e-4

W2V_PARAMS = {"dim": 64, "min_count": 5, "epochs": 5, "subsample": 1e-3,
              "architecture": "skipgram", "lr": 0.05}
TAGGER_PARAMS = {"hidden_layers": 2, "hidden_size": 128, "lr": 1e-3,
                 "batch_size": 256, "max_epochs": 40, "patience": 10}


# ---------------------------------------------------------------------------
# Shared pipelines
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def bundled_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundled")
    return generate_synthetic(bundled_spec(), out)


def _experiment(corpus, out_dir, embedder, fraction=1.0):
    return ExperimentConfig(
        corpus=corpus["corpus"],
        tag_files=corpus["tags"],
        out_dir=str(out_dir),
        embedder=embedder,
        embed_params=dict(W2V_PARAMS) if embedder != "random" else {"dim": 64},
        tagger=dict(TAGGER_PARAMS),
        fraction=fraction,
        seed=7,
    )


@pytest.fixture(scope="session")
def embedding_quality_runs(bundled_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("quality")
    started = time.time()
    w2v = run_experiment(_experiment(bundled_corpus, out / "word2vec", "word2vec"))
    rand = run_experiment(_experiment(bundled_corpus, out / "random", "random"))
    return {"word2vec": w2v, "random": rand, "elapsed": time.time() - started}


# ---------------------------------------------------------------------------
# 1. Gradient suite
# ---------------------------------------------------------------------------

class TestCriterion1GradientSuite:
    def test_criterion_1a_sgns_cbow_objective(self):
        rng = np.random.default_rng(101)
        for _ in range(5):
            n_ctx = int(rng.integers(1, 8))
            n_out = int(rng.integers(2, 8))
            dim = int(rng.integers(3, 10))
            ctx = rng.standard_normal((n_ctx, dim))
            out = rng.standard_normal((n_out, dim))
            _, g_ctx, g_out = cbow_loss_and_grads(ctx, out)
            loss = lambda: cbow_loss_and_grads(ctx, out)[0]
            assert relative_error(g_ctx, central_difference(loss, ctx)) < GRAD_TOL
            assert relative_error(g_out, central_difference(loss, out)) < GRAD_TOL
            center = rng.standard_normal(dim)
            _, g_c, g_o = skipgram_loss_and_grads(center, out)
            loss = lambda: skipgram_loss_and_grads(center, out)[0]
            assert relative_error(g_c, central_difference(loss, center)) < GRAD_TOL
            assert relative_error(g_o, central_difference(loss, out)) < GRAD_TOL
        print("ACCEPTANCE 1a PASS: SGNS/CBOW gradients match finite differences < 1e-4")

    def test_criterion_1b_pvdm_objective(self):
        rng = np.random.default_rng(102)
        for _ in range(5):
            n_ctx = int(rng.integers(0, 7))
            n_out = int(rng.integers(2, 7))
            dim = int(rng.integers(3, 9))
            doc_vec = rng.standard_normal(dim)
            ctx = rng.standard_normal((n_ctx, dim))
            out = rng.standard_normal((n_out, dim))
            _, g_doc, g_ctx, g_out = pvdm_loss_and_grads(doc_vec, ctx, out)
            loss = lambda: pvdm_loss_and_grads(doc_vec, ctx, out)[0]
            assert relative_error(g_doc, central_difference(loss, doc_vec)) < GRAD_TOL
            assert relative_error(g_out, central_difference(loss, out)) < GRAD_TOL
            if n_ctx:
                assert relative_error(g_ctx, central_difference(loss, ctx)) < GRAD_TOL
        print("ACCEPTANCE 1b PASS: PV-DM gradients match finite differences < 1e-4")

    def test_criterion_1c_attention_probe_classifier(self):
        rng = np.random.default_rng(103)
        probe = AttentionProbe.init(embed_dim=5, n_probes=3, map_dim=4,
                                    hidden_sizes=[8], n_classes=6, rng=rng)
        token_vec_list = [rng.standard_normal((int(rng.integers(1, 6)), 5)) for _ in range(4)]
        labels = rng.integers(0, 6, size=4)
        _, grads, _ = classifier_loss_and_grads(probe, token_vec_list, labels)
        loss = lambda: classifier_loss_and_grads(probe, token_vec_list, labels)[0]
        for param, grad in zip(probe.params, grads):
            assert relative_error(grad, central_difference(loss, param)) < GRAD_TOL
        print("ACCEPTANCE 1c PASS: attention classifier gradients match finite differences < 1e-4")

    def test_criterion_1d_masked_tagger_loss(self):
        rng = np.random.default_rng(104)
        vocabs = [TagVocabulary("va", ["x", "y"]), TagVocabulary("vb", ["p", "q", "r"])]
        model = TaggerModel.init(4, [6], vocabs, dropout=0.0, rng=rng)
        x = rng.standard_normal((5, 4))
        labels = [rng.integers(0, 2, (5, 2)).astype(float), rng.integers(0, 2, (5, 3)).astype(float)]
        masks = [rng.integers(0, 2, 5).astype(float), rng.integers(0, 2, 5).astype(float)]
        weights = [1.0, 2.0]
        _, grads = _loss_and_grads(model, x, labels, masks, weights)
        loss = lambda: _loss_and_grads(model, x, labels, masks, weights)[0]
        for param, grad in zip(model.params, grads):
            assert relative_error(grad, central_difference(loss, param)) < GRAD_TOL
        print("ACCEPTANCE 1d PASS: masked multi-task loss gradients match finite differences < 1e-4")


# ---------------------------------------------------------------------------
# 2. Masking zeroes gradients exactly
# ---------------------------------------------------------------------------

def test_criterion_2_masked_documents_zero_head_gradients():
    rng = np.random.default_rng(200)
    for trial in range(100):
        n_tasks = int(rng.integers(1, 4))
        vocabs = [TagVocabulary(f"v{t}", [f"t{t}_{j}" for j in range(int(rng.integers(1, 5)))])
                  for t in range(n_tasks)]
        model = TaggerModel.init(int(rng.integers(2, 6)),
                                 [int(rng.integers(3, 9))], vocabs, 0.0,
                                 np.random.default_rng(trial))
        x = rng.standard_normal((1, model.input_dim))
        labels = [rng.integers(0, 2, (1, len(v))).astype(float) for v in vocabs]
        masked_task = int(rng.integers(0, n_tasks))
        masks = [np.ones(1) if t != masked_task else np.zeros(1) for t in range(n_tasks)]
        _, grads = _loss_and_grads(model, x, labels, masks, [1.0] * n_tasks)
        n_stack = len(model.stack.params)
        head_w = grads[n_stack + 2 * masked_task]
        head_b = grads[n_stack + 2 * masked_task + 1]
        assert (head_w == 0.0).all() and (head_b == 0.0).all(), f"trial {trial}"
    print("ACCEPTANCE 2 PASS: masked documents give exactly-zero head gradients (100 instances)")


# ---------------------------------------------------------------------------
# 3. AP oracle
# ---------------------------------------------------------------------------

def test_criterion_3_average_precision_oracle():
    import itertools
    assert average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx(5 / 6)
    checked = 0
    for n in range(1, 7):
        for scores in itertools.product(SCORE_ALPHABET, repeat=n):
            for labels in itertools.product((0, 1), repeat=n):
                got = average_precision(list(scores), list(labels))
                want = brute_force_ap(scores, labels)
                assert got == want or got == pytest.approx(want, abs=1e-12)
                checked += 1
    print(f"ACCEPTANCE 3 PASS: AP equals brute force on {checked} arrangements; hand case 5/6")


# ---------------------------------------------------------------------------
# 4. Splitter
# ---------------------------------------------------------------------------

def test_criterion_4_album_integrity_and_proportions():
    rng = np.random.default_rng(400)
    for trial in range(20):
        docs = []
        for i in range(int(rng.integers(100, 300))):
            album = None if rng.random() < 0.2 else f"alb{int(rng.integers(0, 40))}"
            labels = [f"lab{int(l)}" for l in rng.choice(5, size=int(rng.integers(1, 3)), replace=False)]
            docs.append(SplitExample(f"d{i}", album, labels))
        assignment = split_corpus(docs, seed=trial).assignment
        by_album = {}
        for doc in docs:
            if doc.album_id is not None:
                by_album.setdefault(doc.album_id, set()).add(assignment[doc.doc_id])
        assert all(len(s) == 1 for s in by_album.values())

    targets = dict(zip(("train", "validation", "test"), (0.8, 0.1, 0.1)))
    for trial in range(20):
        docs = [
            SplitExample(f"d{i}", None,
                         [f"lab{int(l)}" for l in rng.choice(4, size=int(rng.integers(1, 3)), replace=False)])
            for i in range(400)
        ]
        counts = Counter(lab for d in docs for lab in d.labels)
        assert min(counts.values()) >= 50
        result = split_corpus(docs, seed=1000 + trial)
        for label, props in result.label_proportions.items():
            for split_name, target in targets.items():
                assert abs(props[split_name] - target) <= 0.1, (trial, label, props)
    print("ACCEPTANCE 4 PASS: album integrity exact on 20 corpora; "
          "singleton label proportions within +-0.1 of (0.8, 0.1, 0.1)")


# ---------------------------------------------------------------------------
# 5. Embedding quality analog
# ---------------------------------------------------------------------------

def test_criterion_5_word2vec_doubles_random_baseline(embedding_quality_runs):
    w2v_map = embedding_quality_runs["word2vec"]["overall_map"]
    rand_map = embedding_quality_runs["random"]["overall_map"]
    elapsed = embedding_quality_runs["elapsed"]
    assert elapsed < 600, f"quality analog took {elapsed:.0f}s (budget 600s)"
    assert w2v_map >= 2.0 * rand_map, (
        f"word2vec-64 mAP {w2v_map:.4f} < 2x random-64 mAP {rand_map:.4f}"
    )
    print(f"ACCEPTANCE 5 PASS: word2vec-64 mAP {w2v_map:.4f} >= 2x random-64 "
          f"mAP {rand_map:.4f} (ratio {w2v_map / rand_map:.2f}, {elapsed:.0f}s)")


# ---------------------------------------------------------------------------
# 6. Proxy-task analog
# ---------------------------------------------------------------------------

def test_criterion_6_attention_proxy_accuracy(bundled_corpus, embedding_quality_runs):
    docs = read_tokenized_corpus(bundled_corpus["corpus"])
    split_path = embedding_quality_runs["word2vec"]["paths"]["split"]
    split = SplitAssignment.load_csv(split_path).assignment
    trainval = [d for d in docs if split.get(d.doc_id) in ("train", "validation")]
    emb_path = embedding_quality_runs["word2vec"]["paths"]["embedder_dir"] + "/words.bin"
    emb = load_pretrained_binary(emb_path)
    proxy = build_proxy_dataset(trainval, n_artists=20, seed=11)
    cfg = AttentionConfig(n_probes=8, map_dim=8, dense_layers=1, dense_size=64,
                          lr=3e-3, batch_size=64, epochs=5, val_fraction=0.1, seed=11)
    _, history = train_attention_aggregator(proxy, emb, cfg)
    accuracy = history["val_accuracy"][-1]
    assert accuracy >= 0.80, f"held-out artist accuracy {accuracy:.3f} < 0.80 (chance 0.05)"
    print(f"ACCEPTANCE 6 PASS: attention proxy held-out accuracy {accuracy:.3f} "
          f">= 0.80 (chance 0.05)")


# ---------------------------------------------------------------------------
# 7. Incremental-study analog
# ---------------------------------------------------------------------------

def test_criterion_7_incremental_fractions(tmp_path_factory):
    out = tmp_path_factory.mktemp("incremental")
    corpus = generate_synthetic(incremental_spec(), out / "data")
    base = _experiment(corpus, out / "study", "word2vec")
    rows = incremental_study(base, [0.01, 0.1, 1.0])
    maps = [r["overall_map"] for r in rows]
    assert maps[0] <= maps[1] <= maps[2], f"mAP not non-decreasing: {maps}"
    ratio = maps[1] / maps[2]
    assert 0.8 <= ratio <= 1.0, f"10% point at {ratio:.3f} of full-data mAP, outside [0.8, 1.0]"
    print(f"ACCEPTANCE 7 PASS: fraction mAPs {[f'{m:.3f}' for m in maps]} non-decreasing; "
          f"10% point at {ratio:.3f} of 100%")


# ---------------------------------------------------------------------------
# 8. Format fidelity
# ---------------------------------------------------------------------------

def test_criterion_8_binary_format_fidelity(tmp_path):
    # hand-built fixture in this package's writer layout: bit-exact round trip
    rows = np.array([[0.5, -1.25, 3.75], [-0.0625, 2.5, -4.5]], dtype="<f4")
    own = tmp_path / "own.bin"
    own.write_bytes(b"2 3\n" + b"cat " + rows[0].tobytes() + b"dog " + rows[1].tobytes())
    emb = load_pretrained_binary(own)
    assert emb.tokens == ["cat", "dog"]
    np.testing.assert_array_equal(emb.vectors, rows)
    again = tmp_path / "again.bin"
    save_pretrained_binary(emb, again)
    assert again.read_bytes() == own.read_bytes()

    # fixture replicating the original C tool's writer layout byte for byte
    # (word, space, float32 rows, then a newline per entry): identical vectors
    c_rows = np.array([[1.0, -2.0, 0.25, 8.0], [0.125, -0.5, 4.0, -16.0],
                       [3.5, 2.25, -1.75, 0.0]], dtype="<f4")
    c_layout = b"3 4\n"
    for word, row in zip([b"love", b"adore", b"loathe"], c_rows):
        c_layout += word + b" " + row.tobytes() + b"\n"
    third_party = tmp_path / "c_layout.bin"
    third_party.write_bytes(c_layout)
    loaded = load_pretrained_binary(third_party)
    assert loaded.tokens == ["love", "adore", "loathe"]
    np.testing.assert_array_equal(loaded.vectors, c_rows)
    print("ACCEPTANCE 8 PASS: binary loader round-trips bit-exactly and reads the "
          "C-tool layout with identical vectors")


# ---------------------------------------------------------------------------
# 9. Determinism of every training path
# ---------------------------------------------------------------------------

def _training_corpus():
    rng = np.random.default_rng(900)
    docs = []
    for a in range(6):
        words = [f"a{a}w{w}" for w in range(6)]
        for s in range(12):
            tokens = [words[int(i)] for i in rng.integers(0, 6, 18)]
            docs.append(make_doc(f"a{a}s{s}", tokens, artist=f"artist{a}"))
    return docs


def test_criterion_9_training_paths_bit_reproducible():
    docs = _training_corpus()
    base = dict(dim=12, window=3, negatives=3, epochs=3, min_count=1,
                lr=0.05, subsample=1e-3, seed=31, table_size=10_000)

    for arch in ("cbow", "skipgram"):
        cfg = Word2vecConfig(architecture=arch, **base)
        a = train_word2vec(docs, cfg)
        b = train_word2vec(docs, cfg)
        assert np.array_equal(a.vectors, b.vectors) and np.array_equal(a.out_vectors, b.out_vectors), arch

    cfg = Word2vecConfig(architecture="cbow", **base)
    d_a = train_doc2vec(docs, cfg)
    d_b = train_doc2vec(docs, cfg)
    assert np.array_equal(d_a.doc_vectors, d_b.doc_vectors)
    assert np.array_equal(d_a.words.vectors, d_b.words.vectors)

    emb_rng = np.random.default_rng(77)
    tokens = sorted({t for d in docs for t in d.tokens})
    emb = EmbeddingMatrix(tokens, emb_rng.standard_normal((len(tokens), 8)).astype(np.float32))
    proxy = build_proxy_dataset(docs, n_artists=6, seed=0)
    attn_cfg = AttentionConfig(n_probes=2, map_dim=4, dense_layers=1, dense_size=8,
                               epochs=3, batch_size=16, seed=5)
    p_a, h_a = train_attention_aggregator(proxy, emb, attn_cfg)
    p_b, h_b = train_attention_aggregator(proxy, emb, attn_cfg)
    assert h_a == h_b
    for u, v in zip(p_a.params, p_b.params):
        assert np.array_equal(u, v)

    x, dataset, split = separable_dataset(n=120)
    from lyrictag.tagging import TaggerConfig
    t_cfg = TaggerConfig(hidden_layers=1, hidden_size=16, dropout=0.2, lr=1e-3,
                         batch_size=32, max_epochs=6, patience=10, seed=3)
    m_a, hist_a = train_tagger(x, dataset, split, t_cfg)
    m_b, hist_b = train_tagger(x, dataset, split, t_cfg)
    assert hist_a["val_map"] == hist_b["val_map"]
    for u, v in zip(m_a.params, m_b.params):
        assert np.array_equal(u, v)
    print("ACCEPTANCE 9 PASS: word2vec (both architectures), doc2vec, attention "
          "and tagger training are bit-reproducible when seeded single-threaded")
