import pytest
import torch
from transformers import BertConfig, BertForMaskedLM, BertTokenizer

# Vocabulary for the tiny test model: specials, whole words, continuations,
# and a reserved slot to prove filtering.
VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[unused0]",
    "the", "a", "kids", "kid", "dog", "dogs", "park", "ball", "garden",
    "run", "runs", "played", "play", "sing", "sleeps", "chased",
    "in", "on", "with", "just", "thought", "you", "know", "like",
    "##ing", "##s", "##ed", ".", ",",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("tiny-bert")
    vocab_path = base / "vocab.txt"
    vocab_path.write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizer(str(vocab_path), do_lower_case=True)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(1234)
    model = BertForMaskedLM(config)
    model.eval()
    model.save_pretrained(base)
    tokenizer.save_pretrained(base)
    return str(base)
