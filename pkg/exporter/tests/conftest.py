import pytest
import torch


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A miniature randomly initialized llama-style checkpoint with a
    word-level tokenizer, saved locally; nothing is downloaded."""
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast

    root = tmp_path_factory.mktemp("ckpt")
    torch.manual_seed(1234)
    config = LlamaConfig(
        vocab_size=32,
        hidden_size=16,
        intermediate_size=24,
        num_hidden_layers=2,
        num_attention_heads=2,
        num_key_value_heads=2,
        max_position_embeddings=64,
    )
    LlamaForCausalLM(config).save_pretrained(root)

    words = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "fast", "slow", "<unk>"]
    vocab = {w: i for i, w in enumerate(words)}
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="<unk>").save_pretrained(root)
    return root


@pytest.fixture()
def samples_file(tmp_path):
    path = tmp_path / "samples.txt"
    path.write_text(
        "the cat sat on a mat\n"
        "\n"  # blank line: ignored before tokenization
        "a dog ran fast\n"
        "the slow dog sat\n"
        + " ".join(["cat"] * 50)  # longer than max_length=8 in truncation tests
        + "\n"
    )
    return path
