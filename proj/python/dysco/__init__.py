"""Python access to the dysco decoding runtime."""

import json

from ._core import (
    DyscoError,
    Model,
    Tokenizer,
    build_bias,
    build_induction_model,
    build_path_tokenizer,
    detect_heads,
    load_model,
    select_top,
    validate_manifest,
)
from . import _core

__all__ = [
    "DyscoError",
    "Model",
    "Tokenizer",
    "build_bias",
    "build_induction_model",
    "build_path_tokenizer",
    "detect_heads",
    "flops",
    "gen_path_task",
    "gen_recall_task",
    "load_model",
    "model_config",
    "run_recall",
    "select_top",
    "validate_manifest",
]


def model_config(model):
    return json.loads(model.config_json)


def gen_recall_task(n_pairs, seed, vocab_size=8000, n_queries=1):
    return json.loads(_core.gen_recall_task_json(n_pairs, seed, vocab_size, n_queries))


def gen_path_task(n_edges, path_len, seed, tokenizer):
    return json.loads(_core.gen_path_task_json(n_edges, path_len, seed, tokenizer))


def run_recall(model, task, policy="vanilla", heads=(), seed=0, **params):
    """Greedy answers for every query of a recall task dict.

    `policy` is a name or a policy config dict; keyword arguments are merged in.
    """
    config = {"policy": policy} if isinstance(policy, str) else dict(policy)
    config.update(params)
    out = _core.run_recall_json(model, json.dumps(task), json.dumps(config), [tuple(h) for h in heads], seed)
    return json.loads(out)


def flops(prefill, decode, partial=0.6):
    return json.loads(_core.flops_json(prefill, decode, partial))
