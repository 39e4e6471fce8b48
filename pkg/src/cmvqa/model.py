"""Model assembly: parameter registries, forward passes, checkpoints.

Both model variants expose a flat name -> Tensor parameter dict with stable
names, which is what the optimizer, the gradient checker, checkpoints, and
encoder weight transfer all key on.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from .bundle import read_bundle, write_bundle
from .config import RunConfig
from .data import K_ANSWERS, PretrainSample, TYPE_NAMES, VqaSample, pretrain_task_kind
from .fusion import CmsaParams, CmsaState, cmsa_fuse, init_cmsa
from .heads import (
    MlpParams,
    SegmentationHead,
    compatibility_head,
    image_task_head,
    init_answer_head,
    init_classification_head,
    init_compatibility_head,
    init_segmentation_head,
    predict_answer,
)
from .numerics import Rng, ShapeError, Tensor
from .question import (
    EmbeddingParams,
    QuestionEmbedding,
    embed,
    encode_question,
    init_question_encoder,
    load_frozen_half,
)
from .vision import (
    BackboneParams,
    TypeClassifierParams,
    TypeGate,
    VisualFeatures,
    backbone_forward,
    blend,
    classify_type,
    init_backbone,
    init_type_classifier,
    spatial_map,
)


def _register_mlp(params: Dict[str, Tensor], prefix: str, mlp: MlpParams) -> None:
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        params[f"{prefix}/w{i}"] = w
        params[f"{prefix}/b{i}"] = b


def _register_backbone(params: Dict[str, Tensor], prefix: str, bb: BackboneParams) -> None:
    for i, layer in enumerate(bb.layers):
        params[f"{prefix}/layer{i}/w"] = layer.weight
        params[f"{prefix}/layer{i}/b"] = layer.bias


def _register_cmsa(params: Dict[str, Tensor], prefix: str, cmsa: CmsaParams) -> None:
    for i, gl in enumerate(cmsa.glimpses):
        base = f"{prefix}/glimpse{i}"
        params[f"{base}/q_w"] = gl.q_w
        params[f"{base}/q_b"] = gl.q_b
        params[f"{base}/k_w"] = gl.k_w
        params[f"{base}/k_b"] = gl.k_b
        params[f"{base}/v_w"] = gl.v_w
        params[f"{base}/v_b"] = gl.v_b
        params[f"{base}/out_w"] = gl.out_w
        params[f"{base}/out_b"] = gl.out_b
    params[f"{prefix}/proj_w"] = cmsa.proj_w
    params[f"{prefix}/proj_b"] = cmsa.proj_b


class _QuestionSide:
    """Shared embed+LSTM wiring used by both model variants."""

    def __init__(self, config: RunConfig, rng: Rng, vocab_size: int):
        frozen = None
        if config.frozen_embedding_path:
            frozen = load_frozen_half(config.frozen_embedding_path)
        self.embedding, self.lstm = init_question_encoder(
            rng, vocab_size, config.d_emb, config.d_q, frozen_first=frozen
        )

    def encode(self, token_ids, true_length: int) -> QuestionEmbedding:
        return encode_question(embed(token_ids, self.embedding), self.lstm, true_length)

    def register(self, params: Dict[str, Tensor]) -> None:
        if self.embedding.first.requires_grad:
            params["embed/first"] = self.embedding.first
        params["embed/second"] = self.embedding.second
        params["lstm/w"] = self.lstm.w
        params["lstm/b"] = self.lstm.b


class VqaModel:
    """Full answering model: 3 gated encoders, 2-glimpse fusion, answer head."""

    def __init__(self, config: RunConfig, vocab_size: int):
        rng = Rng(config.seed).child("model")
        self.config = config
        self.cmsa_config = config.cmsa_config()
        self.question = _QuestionSide(config, rng.child("question"), vocab_size)
        self.backbones = {
            name: init_backbone(rng.child(f"backbone-{name}").gen, config.image_size,
                                config.c_in, config.grid, config.c_v)
            for name in TYPE_NAMES
        }
        self.gate = init_type_classifier(rng.child("gate").gen, config.c_in)
        self.cmsa = init_cmsa(rng.child("cmsa").gen, self.cmsa_config)
        self.answer = init_answer_head(rng.child("answer").gen, config.d_q, K_ANSWERS)
        self.s = spatial_map(config.grid)

    def params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        self.question.register(out)
        for name in TYPE_NAMES:
            _register_backbone(out, f"backbone/{name}", self.backbones[name])
        out["gate/stem/w"] = self.gate.stem.weight
        out["gate/stem/b"] = self.gate.stem.bias
        out["gate/proj_w"] = self.gate.proj_w
        out["gate/proj_b"] = self.gate.proj_b
        _register_cmsa(out, "cmsa", self.cmsa)
        _register_mlp(out, "answer", self.answer)
        return out

    def forward(self, sample: VqaSample) -> Tuple[Tensor, TypeGate, CmsaState]:
        """Returns (answer logits, type gate, fusion state)."""
        image = Tensor(sample.image)
        gate = classify_type(image, self.gate)
        feats = VisualFeatures(
            v_a=backbone_forward(image, self.backbones["abdomen"]),
            v_h=backbone_forward(image, self.backbones["head"]),
            v_c=backbone_forward(image, self.backbones["chest"]),
            v=None,
        )
        feats.v = blend(feats.v_a, feats.v_h, feats.v_c, gate)
        q = self.question.encode(sample.token_ids, sample.true_length)
        f_hat, state = cmsa_fuse(feats.v, self.s, q, self.cmsa, self.cmsa_config)
        scores = predict_answer(f_hat, q.q, self.answer)
        return scores.logits, gate, state


class PretrainModel:
    """One encoder + glimpses=1 fusion + task head + compatibility head."""

    def __init__(self, config: RunConfig, vocab_size: int, type_id: int):
        rng = Rng(config.seed).child(f"pretrain-{TYPE_NAMES[type_id]}")
        self.config = config
        self.type_id = type_id
        self.task = config.task_kind(type_id)
        self.cmsa_config = config.cmsa_config(glimpses=1)
        self.question = _QuestionSide(config, rng.child("question"), vocab_size)
        self.backbone = init_backbone(rng.child("backbone").gen, config.image_size,
                                      config.c_in, config.grid, config.c_v)
        self.cmsa = init_cmsa(rng.child("cmsa").gen, self.cmsa_config)
        self.compat = init_compatibility_head(rng.child("compat").gen, config.d_q)
        if self.task == "segmentation":
            self.task_head = init_segmentation_head(
                rng.child("task").gen, config.c_v, config.image_size, config.grid
            )
        else:
            k_cls = 3 if type_id == 1 else 2
            self.task_head = init_classification_head(rng.child("task").gen, config.c_v, k_cls)
        self.s = spatial_map(config.grid)

    def params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        self.question.register(out)
        _register_backbone(out, f"backbone/{TYPE_NAMES[self.type_id]}", self.backbone)
        _register_cmsa(out, "cmsa", self.cmsa)
        _register_mlp(out, "compat", self.compat)
        if isinstance(self.task_head, SegmentationHead):
            out["task/w1"] = self.task_head.w1
            out["task/b1"] = self.task_head.b1
            out["task/w2"] = self.task_head.w2
            out["task/b2"] = self.task_head.b2
        else:
            _register_mlp(out, "task", self.task_head)
        return out

    def forward(self, sample: PretrainSample) -> Tuple[Tensor, Tensor]:
        """Returns (task logits, compatibility logits)."""
        image = Tensor(sample.image)
        features = backbone_forward(image, self.backbone)
        task_logits = image_task_head(features, self.task, self.task_head)
        q = self.question.encode(sample.paired_token_ids, sample.paired_true_length)
        f_hat, _ = cmsa_fuse(features, self.s, q, self.cmsa, self.cmsa_config)
        com_logits = compatibility_head(f_hat, q.q, self.compat)
        return task_logits, com_logits

    def forward_task_only(self, sample: PretrainSample) -> Tensor:
        """Single-task variant: no question pathway at all."""
        features = backbone_forward(Tensor(sample.image), self.backbone)
        return image_task_head(features, self.task, self.task_head)


# -- checkpoints -------------------------------------------------------------------


def save_checkpoint(params: Dict[str, Tensor], step: int, config_text: str, path) -> None:
    """Single bundle: parameters + step counter + config echo (utf-8 bytes)."""
    arrays = {name: t.data for name, t in params.items()}
    arrays["__step__"] = np.array(float(step))
    arrays["__config__"] = np.frombuffer(config_text.encode("utf-8"), dtype=np.uint8).astype(np.float64)
    write_bundle(arrays, path)


def load_checkpoint(path):
    """Returns (name -> array, step, config text)."""
    arrays = read_bundle(path)
    step = int(arrays.pop("__step__")[()]) if "__step__" in arrays else 0
    text = ""
    if "__config__" in arrays:
        text = arrays.pop("__config__").astype(np.uint8).tobytes().decode("utf-8")
    return arrays, step, text


def apply_checkpoint(params: Dict[str, Tensor], arrays: Dict[str, np.ndarray],
                     prefix: str = "") -> int:
    """Copy matching entries into live parameters; returns the copy count.

    With a prefix, only names starting with it transfer (encoder transfer path).
    Shape mismatches on matching names are errors.
    """
    copied = 0
    for name, arr in arrays.items():
        if prefix and not name.startswith(prefix):
            continue
        if name not in params:
            if prefix:
                raise ShapeError(f"checkpoint entry {name!r} has no matching parameter")
            continue
        if params[name].data.shape != arr.shape:
            raise ShapeError(
                f"checkpoint entry {name!r} shape {arr.shape} does not match "
                f"parameter shape {params[name].data.shape}"
            )
        params[name].data[...] = arr
        copied += 1
    return copied
