"""End-to-end training and inference.

Training follows the joint recipe: one no-gradient forward per example in
epoch 1 captures linking probabilities into the weight cache; every step
draws a noisy column subset, assembles the segment map, builds the joint
mask, and optimizes the summed linking + next-token loss. Inference links
columns at a low threshold, prunes the prompt, and generates greedily
under a causal mask.
"""
from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DegenerateExample, EmptyPrediction, NonFiniteLoss
from .masks import build_causal_mask, build_joint_mask
from .model import (ForwardOutput, ModelConfig, ModelParams, forward,
                    greedy_generate, joint_loss, ntp_loss, schema_linking_loss)
from .sampling import WeightCache, draw_noise_count, example_rng, sample_noisy
from .schema import SchemaDocument, SpanIndex, label_vector, serialize_schema
from .sqlscope import extract_ground_truth
from .tokenizer import EOS, SegmentMap, TokenSequence, Vocab, decode, encode

PREFIX_TEMPLATE = "translate the question to sql . question : {question}"


@dataclass
class TrainConfig:
    epochs: int = 3
    # from-scratch toy default; fine-tuning-scale runs would use 1.8e-5
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    grad_accum: int = 6
    max_grad_norm: float = 1.0
    beta: float = 0.2
    link_threshold: float = 0.05
    seed: int = 0
    sl_loss_weight: float = 1.0  # experimentation only; the method uses 1.0
    noise_mode: str = "confusion"  # confusion | random | none

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must be in (0, 1)")
        if not 0 < self.link_threshold < 1:
            raise ValueError("link_threshold must be in (0, 1)")
        if self.noise_mode not in ("confusion", "random", "none"):
            raise ValueError("noise_mode must be confusion, random, or none")


@dataclass
class TrainingExample:
    example_id: str
    db_id: str
    question: str
    prefix_text: str
    schema_text: str
    span_index: SpanIndex
    gold_sql: str
    link: set[tuple[str, str]]
    label: list[int]
    tokens: TokenSequence
    seg: SegmentMap
    schema_doc: SchemaDocument

    @property
    def marker_positions(self) -> list[int]:
        return [pos for _, _, pos in self.seg.marker_columns]

    def gt_tables(self) -> set[str]:
        return {t for t, _ in self.link}

    def gt_token_set(self) -> set[int]:
        """GT column definition tokens plus their tables' structure tokens."""
        out: set[int] = set()
        for table, column in self.link:
            a, b = self.seg.column_token_range(table, column)
            out.update(range(a, b))
        for table in self.gt_tables():
            out.update(self.seg.table_envelope(table))
        return out

    def non_gt_columns(self) -> list[tuple[str, str]]:
        """(table, column) not in the link set, serialization order."""
        return [(t, c) for t, c, _ in self.seg.marker_columns if (t, c) not in self.link]


def build_training_example(question: str, schema_doc: SchemaDocument, gold_sql: str,
                           vocab: Vocab, example_id: str, db_id: str = "") -> TrainingExample:
    links = extract_ground_truth(gold_sql, schema_doc)
    if not links:
        raise DegenerateExample(f"gold SQL references no columns: {gold_sql!r}")
    label = label_vector(links, schema_doc)
    schema_text, spans = serialize_schema(schema_doc)
    prefix_text = PREFIX_TEMPLATE.format(question=question)
    tokens, seg = encode(prefix_text, schema_text, spans, gold_sql, vocab)
    # terminate the query with EOS so generation learns to stop
    eos_pos = len(tokens.ids)
    tokens.ids.append(EOS)
    tokens.char_offsets.append((len(gold_sql), len(gold_sql)))
    seg.query.add(eos_pos)
    seg.n += 1
    return TrainingExample(
        example_id=example_id, db_id=db_id, question=question,
        prefix_text=prefix_text, schema_text=schema_text, span_index=spans,
        gold_sql=gold_sql, link=links, label=label,
        tokens=tokens, seg=seg, schema_doc=schema_doc,
    )


def assemble_segments(example: TrainingExample,
                      noisy_columns: set[tuple[str, str]]) -> SegmentMap:
    """Fresh SegmentMap with GT and noisy token sets for one step.

    A noisy column whose table has no GT column drags in that table's
    header/pk/fk/footer tokens so the attended text stays well-formed DDL.
    """
    seg = copy.copy(example.seg)
    seg.gt_schema = example.gt_token_set()
    noisy: set[int] = set()
    gt_tables = example.gt_tables()
    for table, column in noisy_columns:
        a, b = seg.column_token_range(table, column)
        noisy.update(range(a, b))
        if table not in gt_tables:
            noisy.update(seg.table_envelope(table))
    seg.noisy_schema = noisy
    return seg


def _marker_labels(example: TrainingExample) -> list[int]:
    return [1 if (t, c) in example.link else 0 for t, c, _ in example.seg.marker_columns]


def no_grad_forward(params: ModelParams, ids: list[int], mask) -> ForwardOutput:
    """Forward pass with gradient tracking switched off."""
    plist = params.all_params()
    saved = [p.requires_grad for p in plist]
    for p in plist:
        p.requires_grad = False
    try:
        return forward(params, ids, mask)
    finally:
        for p, s in zip(plist, saved):
            p.requires_grad = s


def capture_sampling_weights(params: ModelParams, example: TrainingExample) -> list[float]:
    """Predicted probabilities at non-GT markers under the joint mask with
    an empty noisy set; the confusion signal for later sampling."""
    seg = assemble_segments(example, set())
    out = no_grad_forward(params, example.tokens.ids, build_joint_mask(seg))
    probs = out.marker_probs.data[:, 0]
    gt = example.link
    return [float(probs[pos]) for t, c, pos in example.seg.marker_columns if (t, c) not in gt]


@dataclass
class TrainResult:
    params: ModelParams
    cache: WeightCache
    log: list[dict] = field(default_factory=list)


def train(examples: list[TrainingExample], model_config: ModelConfig,
          config: TrainConfig, log_fn=None, cache: WeightCache | None = None) -> TrainResult:
    params = ModelParams(model_config, seed=config.seed)
    opt = ad.AdamW(params.all_params(), lr=config.learning_rate,
                   weight_decay=config.weight_decay)
    cache = cache if cache is not None else WeightCache()
    log: list[dict] = []
    num_cols = {ex.example_id: len(ex.seg.marker_columns) for ex in examples}
    step = 0
    accum = 0
    for epoch in range(1, config.epochs + 1):
        order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7919, epoch]))
        order = order_rng.permutation(len(examples))
        for idx in order:
            ex = examples[int(idx)]
            if config.noise_mode == "confusion" and epoch == 1 and ex.example_id not in cache:
                cache.record(ex.example_id, capture_sampling_weights(params, ex))

            rng = example_rng(config.seed, ex.example_id, epoch, step)
            pool = ex.non_gt_columns()
            if config.noise_mode == "none":
                noisy_cols: set[tuple[str, str]] = set()
            else:
                k = draw_noise_count(num_cols[ex.example_id], config.beta, rng)
                if config.noise_mode == "confusion":
                    weights = cache.lookup(ex.example_id)
                else:
                    weights = [1.0] * len(pool)
                drawn = sample_noisy(list(range(len(pool))), weights, k, rng)
                noisy_cols = {pool[i] for i in drawn}

            seg = assemble_segments(ex, noisy_cols)
            mask = build_joint_mask(seg)
            out = forward(params, ex.tokens.ids, mask)
            l_sl = schema_linking_loss(out.marker_probs, _marker_labels(ex),
                                       ex.marker_positions)
            l_ntp = ntp_loss(out.lm_logits, ex.tokens.ids, sorted(ex.seg.query))
            if config.sl_loss_weight != 1.0:
                loss = ad.add_scalars(ad.scale(l_sl, config.sl_loss_weight), l_ntp)
            else:
                loss = joint_loss(l_sl, l_ntp)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(
                    f"step {step}: L_SL={l_sl.item()}, L_NTP={l_ntp.item()}")
            ad.backward(ad.scale(loss, 1.0 / config.grad_accum))
            accum += 1
            if accum >= config.grad_accum:
                ad.clip_grad_norm(params.all_params(), config.max_grad_norm)
                opt.step()
                opt.zero_grad()
                accum = 0
            entry = {"step": step, "epoch": epoch, "example_id": ex.example_id,
                     "l_sl": l_sl.item(), "l_ntp": l_ntp.item(),
                     "k_noisy": len(noisy_cols)}
            log.append(entry)
            if log_fn is not None:
                log_fn("train_step", entry)
            step += 1
    if accum > 0:
        ad.clip_grad_norm(params.all_params(), config.max_grad_norm)
        opt.step()
        opt.zero_grad()
    return TrainResult(params, cache, log)


# ---------------------------------------------------------------- inference

@dataclass
class InferenceResult:
    predicted_columns: list[tuple[str, str, float]]
    pruned_ids: list[int]
    sql: str
    timings_ms: dict[str, float]
    used_fallback: bool = False


def link_schema(params: ModelParams, example: TrainingExample,
                threshold: float = 0.05) -> list[tuple[str, str, float]]:
    """Score every column's marker under the joint mask (prefix+schema only)
    and keep those above the threshold. Returns (table, column, score) for
    all columns; filter by score > threshold for the predicted set."""
    n_ps = len(example.seg.prefix | example.seg.schema)
    seg = SegmentMap(
        n=n_ps,
        prefix=set(example.seg.prefix),
        schema=set(example.seg.schema),
        query=set(),
        markers=set(example.seg.markers),
        table_elements=example.seg.table_elements,
        marker_columns=example.seg.marker_columns,
    )
    out = no_grad_forward(params, example.tokens.ids[:n_ps], build_joint_mask(seg))
    probs = out.marker_probs.data[:, 0]
    return [(t, c, float(probs[pos])) for t, c, pos in example.seg.marker_columns]


def prune_prompt(example: TrainingExample,
                 predicted: set[tuple[str, str]]) -> tuple[list[int], list[int]]:
    """Prefix tokens, then per table with >=1 predicted column: header,
    kept column definitions with markers removed, pk, fks, footer.

    Returns (token ids, original positions); position ids are preserved so
    the pruned prompt lines up with the layout seen in training.
    """
    if not predicted:
        raise EmptyPrediction("no columns predicted")
    keep: list[int] = sorted(example.seg.prefix)
    markers = example.seg.markers
    for table, elems in example.seg.table_elements.items():
        kept = [c for t, c, _ in example.seg.marker_columns
                if t == table and (t, c) in predicted]
        if not kept:
            continue
        spans = [elems["header"]]
        spans += [elems[f"col:{c}"] for c in kept]
        spans.append(elems["pk"])
        spans += [elems[k] for k in sorted(elems) if k.startswith("fk:")]
        spans.append(elems["footer"])
        for a, b in spans:
            keep.extend(i for i in range(a, b) if i not in markers)
    keep.sort()
    ids = example.tokens.ids
    return [ids[i] for i in keep], keep


def full_schema_prompt(example: TrainingExample) -> tuple[list[int], list[int]]:
    """Marker-pruned full schema, the fallback when linking predicts nothing."""
    all_cols = {(t, c) for t, c, _ in example.seg.marker_columns}
    return prune_prompt(example, all_cols)


def infer(params: ModelParams, example: TrainingExample, vocab: Vocab,
          threshold: float = 0.05, max_new: int = 64) -> InferenceResult:
    t0 = time.perf_counter()
    scored = link_schema(params, example, threshold)
    predicted = {(t, c) for t, c, s in scored if s > threshold}
    t1 = time.perf_counter()
    used_fallback = False
    try:
        prompt, positions = prune_prompt(example, predicted)
    except EmptyPrediction:
        prompt, positions = full_schema_prompt(example)
        used_fallback = True
    query_start = min(example.seg.query) if example.seg.query else example.seg.n
    generated = greedy_generate(params, prompt, max_new=max_new, stop_id=EOS,
                                positions=positions, first_new_position=query_start)
    new_ids = generated[len(prompt):]
    if new_ids and new_ids[-1] == EOS:
        new_ids = new_ids[:-1]
    sql = decode(new_ids, vocab)
    t2 = time.perf_counter()
    return InferenceResult(
        predicted_columns=[(t, c, s) for t, c, s in scored if s > threshold],
        pruned_ids=prompt,
        sql=sql,
        timings_ms={
            "linking": (t1 - t0) * 1000.0,
            "generation": (t2 - t1) * 1000.0,
            "end_to_end": (t2 - t0) * 1000.0,
        },
        used_fallback=used_fallback,
    )


def prepare_inference_example(question: str, schema_doc: SchemaDocument,
                              vocab: Vocab, example_id: str = "query") -> TrainingExample:
    """Example shell with an empty query part, for linking+generation only."""
    schema_text, spans = serialize_schema(schema_doc)
    prefix_text = PREFIX_TEMPLATE.format(question=question)
    tokens, seg = encode(prefix_text, schema_text, spans, "", vocab)
    return TrainingExample(
        example_id=example_id, db_id="", question=question,
        prefix_text=prefix_text, schema_text=schema_text, span_index=spans,
        gold_sql="", link=set(), label=[0] * len(seg.marker_columns),
        tokens=tokens, seg=seg, schema_doc=schema_doc,
    )


# ---------------------------------------------------------------- serialization

def example_to_json(ex: TrainingExample) -> dict:
    """JSON-lines record mirroring the training-data file format."""
    token_spans = {}
    for table, elems in ex.seg.table_elements.items():
        entry = {"header": list(elems["header"]), "pk": list(elems["pk"]),
                 "fk": [list(elems[k]) for k in sorted(elems) if k.startswith("fk:")],
                 "footer": list(elems["footer"]),
                 "columns": {k[4:]: list(v) for k, v in elems.items() if k.startswith("col:")}}
        token_spans[table] = entry
    q = sorted(ex.seg.query)
    return {
        "example_id": ex.example_id,
        "db_id": ex.db_id,
        "question": ex.question,
        "text": decode_ids_passthrough(ex),
        "prefix_text": ex.prefix_text,
        "schema_text": ex.schema_text,
        "gold_sql": ex.gold_sql,
        "link": sorted(f"{t}.{c}" for t, c in ex.link),
        "label": ex.label,
        "schema_element_token_spans": token_spans,
        "query_span": [q[0], q[-1] + 1] if q else [0, 0],
        "char_spans": ex.span_index.to_json(),
    }


def decode_ids_passthrough(ex: TrainingExample) -> str:
    return ex.prefix_text + "\n" + ex.schema_text + "\n" + ex.gold_sql


def example_from_json(obj: dict, vocab: Vocab, schema_doc: SchemaDocument) -> TrainingExample:
    """Rebuild a TrainingExample from its JSONL record (re-encodes)."""
    return build_training_example(obj["question"], schema_doc, obj["gold_sql"],
                                  vocab, obj["example_id"], obj.get("db_id", ""))


def load_corpus(path: str, vocab: Vocab,
                schemas: dict[str, SchemaDocument],
                fraction: float = 1.0) -> list[TrainingExample]:
    examples = []
    with open(path) as f:
        records = [json.loads(line) for line in f if line.strip()]
    if fraction < 1.0:
        records = records[: max(1, int(len(records) * fraction))]
    for obj in records:
        examples.append(example_from_json(obj, vocab, schemas[obj["db_id"]]))
    return examples
