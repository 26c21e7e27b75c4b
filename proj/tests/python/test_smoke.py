import random

import numpy as np
import pytest

import dysco


@pytest.fixture(scope="module")
def model():
    return dysco.build_induction_model(8000)


def oracle_select(r, p, K):
    order = sorted(range(len(r)), key=lambda i: (-r[i], i))
    if p >= 1:
        return sorted(order[:K])
    # shortest descending prefix reaching p, capped at K, never taking r <= 0
    for n in range(len(r) + 1):
        prefix = order[:n]
        if n == K or sum(r[i] for i in prefix) >= p - 1e-9 or n == len(r) or r[order[n]] <= 0:
            return sorted(prefix)


def test_select_top_matches_oracle():
    rng = random.Random(3)
    for _ in range(500):
        n = rng.randint(1, 40)
        # grid values keep every partial sum exact
        raw = [rng.choice([0, 0, 1, 1, 2, 3, 5, 8]) for _ in range(n)]
        total = sum(raw) or 1
        r = [v / total for v in raw]
        p = rng.choice([0.1, 0.5, 0.9, 0.975, 1.0])
        K = rng.randint(1, n + 2)
        assert dysco.select_top(r, p, K) == oracle_select(r, p, K)


def test_bias_is_log_beta_on_selected():
    b = dysco.build_bias([1, 3], 2.0, 5)
    assert b[1] == pytest.approx(np.log(2.0)) and b[3] == pytest.approx(np.log(2.0))
    assert b[0] == b[2] == b[4] == 0


def test_byte_tokenizer_round_trip():
    tok = dysco.Tokenizer.byte_level()
    assert tok.encode("AB") == [65, 66]
    rng = random.Random(0)
    for _ in range(50):
        s = bytes(rng.randrange(256) for _ in range(rng.randint(0, 64)))
        text = s.decode("latin-1")
        assert tok.decode(tok.encode(text)) == text.encode("utf-8")


def test_path_tokenizer_and_task():
    tok = dysco.build_path_tokenizer()
    task = dysco.gen_path_task(50, 4, 7, tok)
    assert task["kind"] == "path" and len(task["edges"]) == 50
    edges = task["edges"]
    node = task["start"]
    for i in task["gold_path"]:
        assert edges[i][0] == node
        node = edges[i][1]
    assert node == task["target"]
    assert tok.decode(task["prompt_tokens"][1:]).decode() == task["prompt_text"]


def test_induction_model_copies(model):
    x, y = 4000, 5000
    fillers = list(range(300, 340))
    logits = model.logits([256, x, y] + fillers + [x])
    assert int(np.argmax(logits)) == y


def test_detection_ranks_wired_head_first(model):
    ranked = dysco.detect_heads(model, 3)
    assert (ranked[0][0], ranked[0][1]) == (1, 0)
    assert ranked[0][2] > 2 * ranked[1][2]


def test_recall_gain_and_beta_one(model):
    heads = [(1, 0)]
    vanilla = dysco_acc = 0.0
    for seed in range(4):
        task = dysco.gen_recall_task(256, 900 + seed)
        v = dysco.run_recall(model, task, "vanilla")
        d = dysco.run_recall(model, task, "dysco", heads, preset="qwen3-8b")
        one = dysco.run_recall(model, task, "dysco", heads, preset="qwen3-8b", beta=1.0)
        assert one["answers"] == v["answers"]
        vanilla += v["accuracy"]
        dysco_acc += d["accuracy"]
    assert dysco_acc > vanilla


def test_flops_ratios():
    r = dysco.flops(131072, 4096, 0.6)
    assert r["decode_ratio"] == pytest.approx(0.032, abs=0.0015)
    assert r["overhead_ratio"] == pytest.approx(0.6 * r["decode_ratio"])


def test_errors_surface_as_dysco_error(model):
    with pytest.raises(dysco.DyscoError):
        dysco.select_top([0.5], 0.9, 0)
    with pytest.raises(dysco.DyscoError):
        model.logits([8000])
    with pytest.raises(dysco.DyscoError):
        dysco.run_recall(model, dysco.gen_recall_task(8, 1), "dysco")
