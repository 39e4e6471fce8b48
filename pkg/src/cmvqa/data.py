"""Synthetic corpora: images whose global texture gives the type and whose
local shape at a question-named cell gives the answer.

Type is easy (a linear probe on raw pixels suffices); the answer requires
reading the shape at the grid cell the question names, so the model must
actually fuse words, pixels, and positions.  Pre-training corpora are
single-type with per-type understanding tasks plus question-compatibility
pairs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .bundle import read_bundle, write_bundle
from .numerics import Rng
from .question import Vocabulary, tokenize_pad

TYPE_NAMES = ("abdomen", "head", "chest")
SHAPE_NAMES = ("square", "circle", "cross")
ANSWERS = ("yes", "no", "square", "circle", "cross")
K_ANSWERS = len(ANSWERS)


@dataclass
class DataConfig:
    image_size: int = 32
    cell_grid: int = 4        # questions address cells of this grid
    l_w: int = 6
    noise: float = 0.1
    texture_amp: float = 1.0
    shape_gain: float = 2.0
    train_frac: float = 0.7   # val_frac follows; test takes the remainder
    val_frac: float = 0.15


@dataclass
class VqaSample:
    image: np.ndarray          # (H, W, 1)
    token_ids: List[int]
    answer_id: int
    type_id: int
    question_kind: str         # "open" | "closed"
    true_length: int


@dataclass
class PretrainSample:
    image: np.ndarray
    type_id: int
    task_target: object        # class id (int) or (H, W) mask
    paired_token_ids: List[int]
    compat_label: int
    paired_true_length: int


def build_vocabulary(config: DataConfig) -> Vocabulary:
    tokens = ["what", "shape", "in", "is"]
    tokens += list(TYPE_NAMES) + list(SHAPE_NAMES)
    tokens += [f"r{i}" for i in range(config.cell_grid)]
    tokens += [f"c{i}" for i in range(config.cell_grid)]
    return Vocabulary(tokens)


# -- image drawing ---------------------------------------------------------------


def _texture(type_id: int, size: int, amp: float) -> np.ndarray:
    idx = np.arange(size)
    if type_id == 0:    # horizontal stripes (varies down the rows)
        return np.tile(amp * np.sin(2 * np.pi * 3 * idx / size)[:, None], (1, size))
    if type_id == 1:    # vertical stripes (varies along the columns)
        return np.tile(amp * np.sin(2 * np.pi * 3 * idx / size)[None, :], (size, 1))
    return np.zeros((size, size))


def _shape_mask(shape_id: int, cell_size: int) -> np.ndarray:
    """Boolean pixel mask of one shape inside a cell_size x cell_size cell."""
    s = cell_size
    mask = np.zeros((s, s), dtype=bool)
    if shape_id == 0:   # square block with a 1-pixel margin
        mask[1 : s - 1, 1 : s - 1] = True
    elif shape_id == 1:  # disk
        rr, cc = np.mgrid[0:s, 0:s]
        center = (s - 1) / 2.0
        mask[(rr - center) ** 2 + (cc - center) ** 2 <= (0.42 * s) ** 2] = True
    elif shape_id == 2:  # plus sign
        w = max(1, s // 4)
        lo = (s - w) // 2
        mask[lo : lo + w, 1 : s - 1] = True
        mask[1 : s - 1, lo : lo + w] = True
    else:
        raise ValueError(f"unknown shape id {shape_id}")
    return mask


def draw_image(gen, type_id: int, shape_id: int, cell: Tuple[int, int],
               config: DataConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Render texture + noise + one bright shape; return (image, pixel mask)."""
    size = config.image_size
    cs = size // config.cell_grid
    img = _texture(type_id, size, config.texture_amp) + gen.normal(0.0, config.noise, (size, size))
    mask = np.zeros((size, size))
    r0, c0 = cell[0] * cs, cell[1] * cs
    local = _shape_mask(shape_id, cs)
    img[r0 : r0 + cs, c0 : c0 + cs][local] += config.shape_gain
    mask[r0 : r0 + cs, c0 : c0 + cs][local] = 1.0
    return img[:, :, None], mask


# -- question construction ---------------------------------------------------------


def open_question(type_id: int, cell: Tuple[int, int]) -> List[str]:
    return ["what", "shape", "in", TYPE_NAMES[type_id], f"r{cell[0]}", f"c{cell[1]}"]


def closed_question(shape_id: int, type_id: int, cell: Tuple[int, int]) -> List[str]:
    return ["is", SHAPE_NAMES[shape_id], "in", TYPE_NAMES[type_id], f"r{cell[0]}", f"c{cell[1]}"]


def compatible_types(tokens: Sequence[str]) -> set:
    """A question is compatible exactly with the type its organ word names."""
    return {i for i, name in enumerate(TYPE_NAMES) if name in tokens}


# -- split assignment ---------------------------------------------------------------


def split_indices(n: int, fractions: Dict[str, float]) -> Dict[str, List[int]]:
    """Deterministic disjoint splits: order indices by a hash, slice exact counts."""
    ranked = sorted(
        range(n), key=lambda i: hashlib.sha256(f"split:{i}".encode()).hexdigest()
    )
    out, start = {}, 0
    names = list(fractions)
    for name in names[:-1]:
        count = int(round(n * fractions[name]))
        out[name] = ranked[start : start + count]
        start += count
    out[names[-1]] = ranked[start:]
    return out


# -- generation ----------------------------------------------------------------------


def generate_vqa(seed: int, n: int, config: DataConfig,
                 vocab: Vocabulary) -> Dict[str, List[VqaSample]]:
    """n samples split train/val/test; alternating open/closed questions."""
    rng = Rng(seed).child("vqa")
    gen = rng.gen
    samples = []
    g = config.cell_grid
    for i in range(n):
        type_id = int(gen.integers(0, 3))
        shape_id = int(gen.integers(0, 3))
        cell = (int(gen.integers(0, g)), int(gen.integers(0, g)))
        image, _ = draw_image(gen, type_id, shape_id, cell, config)
        if i % 2 == 0:
            tokens = open_question(type_id, cell)
            answer = 2 + shape_id
            kind = "open"
        else:
            if gen.random() < 0.5:
                asked = shape_id
                answer = 0  # yes
            else:
                asked = int((shape_id + 1 + gen.integers(0, 2)) % 3)
                answer = 1  # no
            tokens = closed_question(asked, type_id, cell)
            kind = "closed"
        ids, true_len = tokenize_pad(tokens, vocab, config.l_w)
        samples.append(
            VqaSample(image=image, token_ids=ids, answer_id=answer,
                      type_id=type_id, question_kind=kind, true_length=true_len)
        )

    test_frac = 1.0 - config.train_frac - config.val_frac
    splits = split_indices(
        n, {"train": config.train_frac, "val": config.val_frac, "test": test_frac}
    )
    return {name: [samples[i] for i in idx] for name, idx in splits.items()}


def question_pool(config: DataConfig, vocab: Vocabulary):
    """Every open/closed template instance, with token ids and compat sets."""
    pool = []
    g = config.cell_grid
    for type_id in range(3):
        for r in range(g):
            for c in range(g):
                variants = [open_question(type_id, (r, c))]
                variants += [
                    closed_question(s, type_id, (r, c)) for s in range(3)
                ]
                for tokens in variants:
                    ids, true_len = tokenize_pad(tokens, vocab, config.l_w)
                    pool.append((ids, true_len, compatible_types(tokens)))
    return pool


def pair_for_compatibility(type_id: int, pool, gen) -> Tuple[List[int], int, int]:
    """Draw a question for an image, rebalanced to ~50% positive labels.

    Returns (token_ids, true_length, compat_label).
    """
    if not pool:
        raise ValueError("question pool is empty")
    positives = [p for p in pool if type_id in p[2]]
    negatives = [p for p in pool if type_id not in p[2]]
    if positives and negatives:
        subset = positives if gen.random() < 0.5 else negatives
    else:
        subset = positives or negatives
    ids, true_len, compat = subset[int(gen.integers(0, len(subset)))]
    return ids, true_len, int(type_id in compat)


def pretrain_task_kind(type_id: int) -> str:
    """Abdomen images carry masks; head and chest carry class labels."""
    return "segmentation" if type_id == 0 else "classification"


def generate_pretrain(seed: int, n_per_type: int, config: DataConfig,
                      vocab: Vocabulary) -> Dict[int, Dict[str, List[PretrainSample]]]:
    """Single-type corpora: segmentation for type 0, classification for 1 and 2."""
    pool = question_pool(config, vocab)
    out = {}
    g = config.cell_grid
    for type_id in range(3):
        rng = Rng(seed).child(f"pretrain{type_id}")
        gen = rng.gen
        samples = []
        for _ in range(n_per_type):
            shape_id = int(gen.integers(0, 3))
            cell = (int(gen.integers(0, g)), int(gen.integers(0, g)))
            image, mask = draw_image(gen, type_id, shape_id, cell, config)
            if type_id == 0:
                target = mask                       # per-pixel shape mask
            elif type_id == 1:
                target = shape_id                   # which shape
            else:
                target = int(shape_id == 2)         # contains a cross?
            ids, true_len, label = pair_for_compatibility(type_id, pool, gen)
            samples.append(
                PretrainSample(image=image, type_id=type_id, task_target=target,
                               paired_token_ids=ids, compat_label=label,
                               paired_true_length=true_len)
            )
        splits = split_indices(n_per_type, {"train": 0.85, "val": 0.15})
        out[type_id] = {name: [samples[i] for i in idx] for name, idx in splits.items()}
    return out


def generate_synthetic(seed: int, counts: Dict[str, int], config: DataConfig):
    """Umbrella generator: VQA splits, pretrain corpora, and the vocabulary."""
    vocab = build_vocabulary(config)
    vqa = generate_vqa(seed, counts["vqa"], config, vocab)
    pretrain = generate_pretrain(seed, counts["pretrain"], config, vocab)
    return vqa, pretrain, vocab


# -- on-disk layout -----------------------------------------------------------------


def save_dataset(vqa, pretrain, vocab: Vocabulary, config: DataConfig, out_dir) -> None:
    """One tensor bundle (images + masks), one JSON-lines manifest, one vocab file."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    tensors, rows = {}, []
    i = 0
    for split, samples in vqa.items():
        for s in samples:
            name = f"vqa/{i}"
            tensors[name] = s.image
            rows.append({"image": name, "tokens": s.token_ids, "answer": s.answer_id,
                         "type": s.type_id, "kind": s.question_kind, "split": split})
            i += 1
    j = 0
    for type_id in sorted(pretrain):
        for split, samples in pretrain[type_id].items():
            for s in samples:
                name = f"pre/{j}"
                tensors[name] = s.image
                answer = -1
                if pretrain_task_kind(type_id) == "segmentation":
                    tensors[name + "/mask"] = s.task_target
                else:
                    answer = int(s.task_target)
                rows.append({"image": name, "tokens": s.paired_token_ids,
                             "answer": answer, "type": s.type_id,
                             "kind": "pretrain", "split": split})
                j += 1

    write_bundle(tensors, os.path.join(out_dir, "data.cmtb"))
    with open(os.path.join(out_dir, "manifest.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    with open(os.path.join(out_dir, "data_config.json"), "w", encoding="utf-8") as fh:
        json.dump(vars(config), fh)


def load_dataset(out_dir):
    """Inverse of save_dataset; compat labels re-derived from tokens + type."""
    import os

    tensors = read_bundle(os.path.join(out_dir, "data.cmtb"))
    vocab = Vocabulary.load(os.path.join(out_dir, "vocab.txt"))
    with open(os.path.join(out_dir, "data_config.json"), encoding="utf-8") as fh:
        config = DataConfig(**json.load(fh))

    vqa = {"train": [], "val": [], "test": []}
    pretrain = {0: {"train": [], "val": []}, 1: {"train": [], "val": []},
                2: {"train": [], "val": []}}
    with open(os.path.join(out_dir, "manifest.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            image = tensors[row["image"]]
            ids = [int(t) for t in row["tokens"]]
            true_len = sum(1 for t in ids if t != 0)
            if row["kind"] == "pretrain":
                type_id = row["type"]
                if pretrain_task_kind(type_id) == "segmentation":
                    target = tensors[row["image"] + "/mask"]
                else:
                    target = int(row["answer"])
                tokens = [vocab.token_of(t) for t in ids if t != 0]
                label = int(type_id in compatible_types(tokens))
                pretrain[type_id][row["split"]].append(
                    PretrainSample(image=image, type_id=type_id, task_target=target,
                                   paired_token_ids=ids, compat_label=label,
                                   paired_true_length=true_len)
                )
            else:
                vqa[row["split"]].append(
                    VqaSample(image=image, token_ids=ids, answer_id=int(row["answer"]),
                              type_id=row["type"], question_kind=row["kind"],
                              true_length=true_len)
                )
    return vqa, pretrain, vocab, config
