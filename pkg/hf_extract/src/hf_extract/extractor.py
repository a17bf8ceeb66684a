"""Per-token top-layer vectors from transformer encoders.

The extractor walks a corpus in file order, runs the encoder over each
batch of pre-tokenized sentences, and averages the hidden states of a
token's sub-word pieces, so the archive carries exactly one vector per
corpus token.  Special begin/end marker positions never enter an
average.  The random variant re-initializes every weight matrix
Glorot-uniform from the given seed before extraction, embedding tables
included; vector parameters get the neutral zero bias / unit scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from hf_extract.epemb import write_archive
from hf_extract.epjson import read_sentences
from hf_extract.errors import DataError, UsageError

VARIANTS = ("pretrained", "random")


@dataclass(frozen=True)
class ExtractorConfig:
    model: str
    variant: str
    seed: int | None = None
    batch_size: int = 16
    layer: str = "top"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}")
        if self.variant == "random" and self.seed is None:
            raise UsageError("variant 'random' needs a seed")
        if self.batch_size <= 0:
            raise UsageError(f"batch size must be positive, got {self.batch_size}")
        if self.layer != "top":
            raise UsageError(f"only the top layer is supported, got {self.layer!r}")


def randomize_weights(model, seed: int) -> None:
    """Seeded Glorot-uniform re-initialization of every weight matrix.

    1-D parameters have no Glorot fan; biases are zeroed and scale
    vectors (layer norms) set to one.  Iteration follows the model's
    parameter order, which is fixed for a given architecture, so equal
    seeds give equal weights.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if param.dim() >= 2:
                fan_out, fan_in = param.shape[0], math.prod(param.shape[1:])
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                param.uniform_(-bound, bound, generator=gen)
            elif name.endswith("bias"):
                param.zero_()
            else:
                param.fill_(1.0)


def load_encoder(config: ExtractorConfig):
    """Tokenizer plus encoder in eval mode, weights per the variant."""
    tokenizer = AutoTokenizer.from_pretrained(config.model)
    if not tokenizer.is_fast:
        raise DataError(
            f"{config.model}: sub-word alignment needs a fast tokenizer"
        )
    model = AutoModel.from_pretrained(config.model)
    if config.variant == "random":
        randomize_weights(model, config.seed)
    model.eval()
    return tokenizer, model


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def extract(config: ExtractorConfig, sentences):
    """Embed (id, tokens) pairs; returns (dim, [(id, (n_tokens, dim) f32)]).

    Raises DataError when a token yields no sub-word pieces (the
    alignment would be undefined) or the encoder width disagrees with
    its configuration.
    """
    tokenizer, model = load_encoder(config)
    dim = model.config.hidden_size
    records = []
    for batch in _batches(list(sentences), config.batch_size):
        texts = [list(tokens) for _, tokens in batch]
        enc = tokenizer(
            texts, is_split_into_words=True, padding=True, return_tensors="pt"
        )
        with torch.inference_mode():
            states = model(**enc).last_hidden_state
        if states.shape[-1] != dim:
            raise DataError(
                f"encoder returned width {states.shape[-1]}, expected {dim}"
            )
        for row, (sid, tokens) in enumerate(batch):
            pieces: list[list[int]] = [[] for _ in tokens]
            for pos, word in enumerate(enc.word_ids(row)):
                if word is not None:
                    pieces[word].append(pos)
            vectors = np.zeros((len(tokens), dim), dtype=np.float32)
            for t, positions in enumerate(pieces):
                if not positions:
                    raise DataError(
                        f"sentence {sid}: token {t} ({tokens[t]!r}) produced "
                        f"no sub-word pieces"
                    )
                vectors[t] = states[row, positions].mean(dim=0).numpy()
            records.append((sid, vectors))
    return dim, records


def extract_file(config: ExtractorConfig, corpus_path, out_path) -> dict:
    """Corpus jsonl in, archive out; returns summary stats."""
    sentences = read_sentences(corpus_path)
    dim, records = extract(config, sentences)
    write_archive(out_path, records, dim)
    return {
        "dim": dim,
        "sentences": len(records),
        "tokens": sum(v.shape[0] for _, v in records),
    }
