"""Regenerates the reference fixtures under tests/fixtures/.

Requires `torch`, `transformers` and `safetensors`. The outputs are committed so
the Rust test suite never needs Python.

    python3 scripts/make_fixtures.py
"""

import json
import pathlib

import torch
from safetensors.torch import save_file
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

ROOT = pathlib.Path(__file__).resolve().parent.parent
ASSETS = ROOT / "assets" / "gpt2"
FIXTURES = ROOT / "tests" / "fixtures"

FIG1 = (
    "Q: On the table, I see an orange textbook, a red puzzle, and a purple cup. "
    "What color is the textbook?\nA: Orange\n"
    "Q: On the table, there is a blue pencil, a black necklace, and a yellow lighter. "
    "What color is the pencil?\nA:"
)
IOI = "Then, Matthew and Robert had a lot of fun at the school. Robert gave a ring to"


def tokenizer_fixture():
    tok = GPT2Tokenizer(str(ASSETS / "vocab.json"), str(ASSETS / "merges.txt"))
    texts = [
        "Blue",
        " Blue",
        FIG1,
        IOI,
        "Hello world",
        "  leading   and trailing   ",
        "I'm can't we've they'll you'd she's it'd",
        "numbers 12345 and 3.14159 and 1,000,000",
        "tabs\tand\nnewlines\n\n\nend",
        "Unicode: café naïve 東京 😀 Ωmega",
        "punctuation!!! ??? ... ---",
        "CamelCase and snake_case and kebab-case",
        "",
        " ",
        "\n",
        "a" * 40,
        "The quick brown fox jumps over the lazy dog.",
    ]
    names = ["Matthew", "Robert", "Mary", "John", "Alice", "Bob"]
    texts += [" " + n for n in names]
    out = [{"text": t, "ids": tok.encode(t)} for t in texts]
    (FIXTURES / "tokenizer_reference.json").write_text(json.dumps(out, ensure_ascii=False, indent=1))


def model_fixture():
    torch.manual_seed(1234)
    cfg = GPT2Config(
        vocab_size=1000,
        n_positions=64,
        n_embd=32,
        n_layer=2,
        n_head=4,
        initializer_range=0.2,
        layer_norm_epsilon=1e-5,
        activation_function="gelu_new",
        resid_pdrop=0.0,
        embd_pdrop=0.0,
        attn_pdrop=0.0,
    )
    model = GPT2LMHeadModel(cfg).eval()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith(".bias") or "ln_" in name:
                p.normal_(0.0, 0.1)
                if "ln_" in name and name.endswith(".weight"):
                    p.add_(1.0)
    out_dir = FIXTURES / "tiny_gpt2"
    state = {
        k[len("transformer."):]: v.contiguous()
        for k, v in model.state_dict().items()
        if k.startswith("transformer.")
    }
    save_file(state, str(out_dir / "model.safetensors"), metadata={"format": "pt"})
    (out_dir / "config.json").write_text(
        json.dumps(
            {
                "model_type": "gpt2",
                "vocab_size": cfg.vocab_size,
                "n_positions": cfg.n_positions,
                "n_embd": cfg.n_embd,
                "n_layer": cfg.n_layer,
                "n_head": cfg.n_head,
                "layer_norm_epsilon": cfg.layer_norm_epsilon,
                "activation_function": "gelu_new",
            },
            indent=2,
        )
    )

    gen = torch.Generator().manual_seed(99)
    prompts = []
    for _ in range(60):
        n = int(torch.randint(2, 40, (1,), generator=gen))
        ids = torch.randint(0, cfg.vocab_size, (n,), generator=gen).tolist()
        with torch.no_grad():
            logits = model(torch.tensor([ids])).logits[0].double()
        last = logits[-1]
        top = torch.topk(last, 8)
        prompts.append(
            {
                "ids": ids,
                "greedy": int(top.indices[0]),
                "top_ids": top.indices.tolist(),
                "top_logits": top.values.tolist(),
                "first_row": logits[0, :16].tolist(),
            }
        )
    (out_dir / "reference.json").write_text(json.dumps(prompts, indent=1))


if __name__ == "__main__":
    tokenizer_fixture()
    model_fixture()
