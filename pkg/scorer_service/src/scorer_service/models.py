"""Model bundles behind the scoring endpoints.

Two scoring heads share one bundle object:

* ``neg_cross_entropy(image, class_index)`` — log-softmax of the ImageNet
  classifier's logits at the target class (the loss negation lives here so
  the wire protocol's "score" is uniformly maximize-better; always <= 0).
* ``clip_cosine(image, text)`` — cosine similarity of CLIP image and text
  embeddings, in [-1, 1].

All inference runs in eval mode on a single thread, so identical requests
produce identical scores for the life of the loaded weights.
"""

from __future__ import annotations

import hashlib
import threading

import torch
from PIL import Image

from .config import ServiceConfig

IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]
CLIP_MEAN = [0.48145466, 0.4578275, 0.40821073]
CLIP_STD = [0.26862954, 0.26130258, 0.27577711]


def _to_tensor(image: Image.Image, size: int, mean, std) -> torch.Tensor:
    """Resize shortest-side + center-crop + normalize, bicubic, deterministic."""
    from torchvision.transforms import functional as TF

    img = TF.resize(image, size, interpolation=TF.InterpolationMode.BICUBIC, antialias=True)
    img = TF.center_crop(img, [size, size])
    tensor = TF.to_tensor(img)
    return TF.normalize(tensor, mean, std)


class HashTokenizer:
    """Deterministic stand-in tokenizer for the random-weights profile.

    Words map to stable ids via md5; bos/eos ids bracket the sequence the way
    the CLIP text encoder's pooling expects.
    """

    def __init__(self, vocab_size: int, bos_id: int, eos_id: int, max_len: int = 77):
        self.vocab_size = vocab_size
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.max_len = max_len

    def __call__(self, text: str) -> torch.Tensor:
        span = self.vocab_size - 2  # reserve bos/eos
        ids = [
            int.from_bytes(hashlib.md5(tok.encode()).digest()[:4], "big") % span
            for tok in text.lower().split()
        ]
        ids = [self.bos_id] + ids[: self.max_len - 2] + [self.eos_id]
        return torch.tensor([ids], dtype=torch.long)


class ModelBundle:
    def __init__(self, classifier, classifier_size: int, clip, clip_size: int, tokenize):
        self.classifier = classifier.eval()
        self.classifier_size = classifier_size
        self.clip = clip.eval()
        self.clip_size = clip_size
        self.tokenize = tokenize
        # one inference at a time per process bounds memory; handlers may
        # still overlap on parsing/IO
        self.lock = threading.Lock()

    @torch.no_grad()
    def neg_cross_entropy(self, image: Image.Image, class_index: int) -> float:
        pixels = _to_tensor(image, self.classifier_size, IMAGENET_MEAN, IMAGENET_STD)
        with self.lock:
            logits = self.classifier(pixels.unsqueeze(0))
        return float(torch.log_softmax(logits, dim=-1)[0, class_index])

    @torch.no_grad()
    def clip_cosine(self, image: Image.Image, text: str) -> float:
        pixels = _to_tensor(image, self.clip_size, CLIP_MEAN, CLIP_STD)
        tokens = self.tokenize(text)
        with self.lock:
            out = self.clip(
                input_ids=tokens,
                attention_mask=torch.ones_like(tokens),
                pixel_values=pixels.unsqueeze(0),
            )
        image_emb = out.image_embeds / out.image_embeds.norm(dim=-1, keepdim=True)
        text_emb = out.text_embeds / out.text_embeds.norm(dim=-1, keepdim=True)
        return float((image_emb * text_emb).sum())


def _load_pretrained(config: ServiceConfig) -> ModelBundle:
    import torchvision.models as tvm
    from transformers import CLIPModel, CLIPTokenizerFast

    arch, _, weight_name = config.classifier_id.partition("/")
    if arch != "mobilenet_v3_small":
        raise ValueError(f"unsupported classifier {config.classifier_id!r}")
    weights = tvm.MobileNet_V3_Small_Weights[weight_name or "IMAGENET1K_V1"]
    classifier = tvm.mobilenet_v3_small(weights=weights)

    clip = CLIPModel.from_pretrained(config.clip_id)
    hf_tokenizer = CLIPTokenizerFast.from_pretrained(config.clip_id)

    def tokenize(text: str) -> torch.Tensor:
        return hf_tokenizer(text, return_tensors="pt", truncation=True).input_ids

    return ModelBundle(
        classifier=classifier,
        classifier_size=224,
        clip=clip,
        clip_size=clip.config.vision_config.image_size,
        tokenize=tokenize,
    )


def _load_random(config: ServiceConfig) -> ModelBundle:
    import torchvision.models as tvm
    from transformers import CLIPConfig, CLIPModel

    torch.manual_seed(0)
    classifier = tvm.mobilenet_v3_small(weights=None)

    vocab_size = 4096
    clip_config = CLIPConfig(
        text_config={
            "vocab_size": vocab_size,
            "hidden_size": 64,
            "intermediate_size": 128,
            "num_hidden_layers": 2,
            "num_attention_heads": 2,
            "max_position_embeddings": 77,
            "bos_token_id": vocab_size - 2,
            "eos_token_id": vocab_size - 1,
        },
        vision_config={
            "hidden_size": 64,
            "intermediate_size": 128,
            "num_hidden_layers": 2,
            "num_attention_heads": 2,
            "image_size": 64,
            "patch_size": 16,
        },
        projection_dim=64,
    )
    torch.manual_seed(1)
    clip = CLIPModel(clip_config)
    tokenize = HashTokenizer(vocab_size, bos_id=vocab_size - 2, eos_id=vocab_size - 1)
    return ModelBundle(
        classifier=classifier,
        classifier_size=224,
        clip=clip,
        clip_size=64,
        tokenize=tokenize,
    )


def load_bundle(config: ServiceConfig) -> ModelBundle:
    """Build both models per the configured weight profile.  Blocking."""
    torch.set_num_threads(1)  # keeps CPU inference bit-reproducible
    if config.weights == "random":
        return _load_random(config)
    return _load_pretrained(config)
