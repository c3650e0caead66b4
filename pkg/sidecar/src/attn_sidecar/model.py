"""Masked-LM backend: per-word tokenization, attention tensors, top-k fills.

Requests arrive pre-split into words, so each word is tokenized separately
and the subword-to-word alignment is built directly; special tokens get a
``None`` word id.  Attention requires the eager implementation (scaled-dot
kernels do not expose attention weights).
"""

from __future__ import annotations

import re

import torch
from transformers import AutoModelForMaskedLM, AutoTokenizer


class ModelError(Exception):
    """Request-level failure that must become an error response, not a crash."""


_WORD_RE = re.compile(r"\w")


class AttentionModel:
    def __init__(self, model_name: str, device: str = "cpu",
                 max_subwords: int = 512):
        self.model_name = model_name
        self.device = torch.device(device)
        self.max_subwords = max_subwords
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForMaskedLM.from_pretrained(
            model_name, attn_implementation="eager")
        self.model.to(self.device)
        self.model.eval()
        self._whole_word_ids = self._whole_word_vocabulary()

    @property
    def n_layers(self) -> int:
        return self.model.config.num_hidden_layers

    @property
    def n_heads(self) -> int:
        return self.model.config.num_attention_heads

    def _whole_word_vocabulary(self) -> list[int]:
        """Token ids usable as single-word fills: no continuation pieces, no
        special or reserved tokens."""
        specials = set(self.tokenizer.all_special_tokens)
        allowed = []
        for token, token_id in self.tokenizer.get_vocab().items():
            if token in specials or token.startswith("##"):
                continue
            if token.startswith("[") and token.endswith("]"):
                continue  # [unusedNN] and friends
            if not _WORD_RE.search(token):
                continue
            allowed.append(token_id)
        return sorted(allowed)

    def _encode(self, words, mask_position: int | None = None):
        """(input_ids, subword_forms, word_ids) with specials at both ends."""
        if not words:
            raise ModelError("empty word list")
        pieces: list[str] = []
        word_ids: list[int | None] = []
        for index, word in enumerate(words):
            if mask_position is not None and index == mask_position:
                subwords = [self.tokenizer.mask_token]
            else:
                subwords = self.tokenizer.tokenize(word)
                if not subwords:
                    subwords = [self.tokenizer.unk_token]
            pieces.extend(subwords)
            word_ids.extend([index] * len(subwords))
        forms = [self.tokenizer.cls_token] + pieces + [self.tokenizer.sep_token]
        word_ids = [None] + word_ids + [None]
        if len(forms) > self.max_subwords:
            raise ModelError(
                f"sequence of {len(forms)} subwords exceeds the limit of "
                f"{self.max_subwords}")
        input_ids = self.tokenizer.convert_tokens_to_ids(forms)
        return input_ids, forms, word_ids

    def attention(self, words, layers) -> dict:
        input_ids, forms, word_ids = self._encode(list(words))
        for layer in layers:
            if not 0 <= layer < self.n_layers:
                raise ModelError(f"layer {layer} outside model depth "
                                 f"{self.n_layers}")
        with torch.no_grad():
            out = self.model(torch.tensor([input_ids], device=self.device),
                             output_attentions=True)
        attention = {}
        for layer in layers:
            tensor = out.attentions[layer][0].to(torch.float64).cpu()
            attention[str(layer)] = tensor.tolist()
        return {"subword_forms": forms, "word_ids": word_ids,
                "attention": attention}

    def mlm_topk(self, words, position: int, k: int) -> dict:
        words = list(words)
        if not 0 <= position < len(words):
            raise ModelError(f"position {position} outside sentence of "
                             f"{len(words)} words")
        if k < 1:
            raise ModelError("k must be >= 1")
        input_ids, forms, _ = self._encode(words, mask_position=position)
        mask_index = input_ids.index(self.tokenizer.mask_token_id)
        with torch.no_grad():
            logits = self.model(
                torch.tensor([input_ids], device=self.device)).logits[0, mask_index]
        log_probs = torch.log_softmax(logits.to(torch.float64), dim=-1)
        allowed = torch.tensor(self._whole_word_ids, device=log_probs.device)
        scores = log_probs[allowed]
        top = torch.topk(scores, k=min(k, len(allowed)))
        candidates = []
        for score, which in zip(top.values.tolist(), top.indices.tolist()):
            token_id = self._whole_word_ids[which]
            candidates.append([self.tokenizer.convert_ids_to_tokens(token_id),
                               float(score)])
        return {"candidates": candidates}
