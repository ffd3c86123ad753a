#!/usr/bin/env python3
"""Writes a tiny random CLIPModel checkpoint plus reference outputs.

The C++ encoder is checked against these values in tests/unit/test_clip_encoder.cpp.
Requires torch, transformers, safetensors and open_clip (for the tokenizer).

    python3 tools/make_clip_fixture.py tests/data
"""

import json
import sys
from pathlib import Path

import torch
import torch.nn.functional as F
from open_clip.tokenizer import SimpleTokenizer
from safetensors.torch import save_file
from transformers import CLIPConfig, CLIPModel

MEAN = torch.tensor([0.48145466, 0.4578275, 0.40821073]).view(1, 3, 1, 1)
STD = torch.tensor([0.26862954, 0.26130258, 0.27577711]).view(1, 3, 1, 1)


def pattern_image(h, w):
    # Smooth deterministic pattern, reproduced exactly by the C++ test.
    y = torch.arange(h, dtype=torch.float64).view(h, 1)
    x = torch.arange(w, dtype=torch.float64).view(1, w)
    planes = [0.5 + 0.4 * torch.sin(0.37 * x + 0.21 * y + c) * torch.cos(0.13 * y - 0.05 * x * c) for c in range(3)]
    return torch.stack(planes).unsqueeze(0)


def preprocess(img, res):
    if img.shape[-2:] != (res, res):
        img = F.interpolate(img, size=(res, res), mode="bilinear", align_corners=False, antialias=False)
    return (img - MEAN.double()) / STD.double()


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(20240601)
    config = CLIPConfig(
        text_config=dict(hidden_size=16, intermediate_size=32, num_hidden_layers=2, num_attention_heads=2,
                         max_position_embeddings=77, vocab_size=49408),
        vision_config=dict(hidden_size=24, intermediate_size=48, num_hidden_layers=2, num_attention_heads=3,
                           image_size=32, patch_size=8),
        projection_dim=12,
    )
    model = CLIPModel(config).eval()
    with torch.no_grad():
        # Random init leaves LayerNorm at identity; perturb so the test covers the affine terms.
        for name, p in model.named_parameters():
            if "layer_norm" in name or "layrnorm" in name or "layernorm" in name:
                p.add_(0.1 * torch.randn_like(p))
    state = {k: v.contiguous().float() for k, v in model.state_dict().items()
             if "position_ids" not in k and k != "logit_scale"}
    save_file(state, str(out / "clip_tiny.safetensors"))

    model = model.double()
    tok = SimpleTokenizer()
    expected = {"text": {}, "images": {}, "prompt": {}}
    with torch.no_grad():
        for text in ["a photo of a car", "not a photo of a car"]:
            ids = [tok.encoder["<start_of_text>"]] + tok.encode(text) + [tok.encoder["<end_of_text>"]]
            emb = model.get_text_features(input_ids=torch.tensor([ids]))
            emb = getattr(emb, "pooler_output", emb)
            emb = F.normalize(emb, dim=-1)[0]
            expected["text"][text] = {"ids": ids, "embedding": emb.tolist()}

        for h, w in [(32, 32), (40, 52)]:
            emb = model.get_image_features(pixel_values=preprocess(pattern_image(h, w), 32))
            emb = getattr(emb, "pooler_output", emb)
            expected["images"][f"{h}x{w}"] = F.normalize(emb, dim=-1)[0].tolist()

        # A continuous prompt: place the rows in otherwise unused vocabulary slots and encode those ids.
        n = 5
        prompt = 0.02 * torch.randn(n, 16, generator=torch.Generator().manual_seed(7), dtype=torch.float64)
        slots = list(range(1000, 1000 + n))
        model.text_model.embeddings.token_embedding.weight[slots] = prompt
        ids = [tok.encoder["<start_of_text>"]] + slots + [tok.encoder["<end_of_text>"]]
        emb = model.get_text_features(input_ids=torch.tensor([ids]))
        emb = getattr(emb, "pooler_output", emb)
        expected["prompt"] = {"tokens": prompt.tolist(), "embedding": F.normalize(emb, dim=-1)[0].tolist()}

    (out / "clip_tiny_expected.json").write_text(json.dumps(expected, indent=1))


if __name__ == "__main__":
    main()
