"""Command-line interface: one binary, eleven subcommands.

Every subcommand accepts --config pointing at a YAML mapping whose keys are
the subcommand's option names (dashes or underscores); explicit flags win
over config values. Exit codes: 0 success, 1 usage or configuration error,
2 data error (malformed files, incompatible shapes), 3 runtime failure.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import sys
import tempfile
from pathlib import Path
from typing import Optional

import click
import click.testing
import numpy as np
import yaml

from . import gemba as gemba_mod
from .assemble import AssembleConfig, assemble
from .corpus import AnnotatedSegment, MqmAnnotation, load_dataset, mqm_to_score, write_dataset
from .embedstore import load_embeddings
from .errors import ConfigError, DataFormatError, PolyqeError
from .features import base_features
from .head import (
    MlpHead,
    TrainConfig,
    forward_batch,
    load_checkpoint,
    new_head,
    save_checkpoint,
    train as train_head,
)
from .knnqe import KernelConfig, knn_polycand, knn_polyic
from .metrics import EvalReport, PairMetrics, evaluate
from .retrieval import (
    RetrievalQuery,
    build_index,
    candidates_same_source,
    group_by_source,
    parse_selector,
    query_key,
    ranked_same_source_pool,
    topk,
)


def _parse_gamma(text) -> float:
    if isinstance(text, (int, float)):
        value = float(text)
    elif str(text).strip().lower() in ("inf", "infinity"):
        return math.inf
    else:
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"--gamma must be a positive number or 'inf', got {text!r}")
    if not value > 0:
        raise ConfigError("--gamma must be positive")
    return value


def config_hash(params: dict) -> str:
    canon = json.dumps(params, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()[:12]


def _merge_config(ctx: click.Context, kwargs: dict) -> dict:
    """Overlay config-file values onto options left at their defaults."""
    config_path = kwargs.get("config")
    if not config_path:
        return kwargs
    with open(config_path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{config_path}: config must be a mapping")
    for key, value in data.items():
        param = str(key).replace("-", "_")
        if param not in kwargs or param == "config":
            raise ConfigError(f"{config_path}: unknown config key '{key}'")
        if ctx.get_parameter_source(param) == click.core.ParameterSource.DEFAULT:
            kwargs[param] = value
    return kwargs


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _load_kb(kb_manifest, kb_data, kb_embeddings, key, strict=False):
    """Resolve a knowledge base from a manifest file or an explicit pair."""
    if kb_manifest:
        manifest_path = Path(kb_manifest)
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        base = manifest_path.parent
        data_path = Path(manifest["data"])
        emb_path = Path(manifest["embeddings"])
        data_path = data_path if data_path.is_absolute() else base / data_path
        emb_path = emb_path if emb_path.is_absolute() else base / emb_path
        key = manifest.get("key", key)
        return load_dataset(data_path, strict=strict), load_embeddings(emb_path), key
    if kb_data and kb_embeddings:
        return load_dataset(kb_data, strict=strict), load_embeddings(kb_embeddings), key
    return None, None, key


_config_option = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False), default=None,
    help="YAML config file; explicit flags override its values.")
_strict_option = click.option(
    "--strict", is_flag=True, help="Reject unknown dataset fields instead of ignoring them.")


@click.group()
def cli():
    """Retrieval-augmented translation quality estimation toolkit."""


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--to", "to_format", type=click.Choice(["jsonl", "tsv"]), default=None,
              help="Target format; inferred from the output suffix when omitted.")
@click.option("--mqm", is_flag=True,
              help="JSONL input only: fill missing scores from 'major'/'minor' error counts.")
@_strict_option
@_config_option
@click.pass_context
def convert(ctx, **kwargs):
    """Convert a dataset between JSONL and TSV."""
    kwargs = _merge_config(ctx, kwargs)
    input_path = Path(kwargs["input_path"])
    if kwargs["mqm"]:
        if input_path.suffix.lower() in (".tsv", ".tab"):
            raise ConfigError("--mqm needs JSONL input carrying major/minor counts")
        segments = _load_mqm_jsonl(input_path, strict=kwargs["strict"])
    else:
        segments = load_dataset(input_path, strict=kwargs["strict"])
    write_dataset(kwargs["output_path"], segments, format=kwargs["to_format"])
    click.echo(f"wrote {len(segments)} segments to {kwargs['output_path']}")


def _load_mqm_jsonl(path: Path, strict: bool) -> list[AnnotatedSegment]:
    segments = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            known = {"id", "src", "mt", "ref", "langs", "system", "score",
                     "domain", "doc", "major", "minor"}
            unknown = set(obj) - known
            if unknown and strict:
                raise DataFormatError(f"line {line_no}: unknown field '{sorted(unknown)[0]}'")
            score = obj.get("score")
            if score is None and ("major" in obj or "minor" in obj):
                try:
                    ann = MqmAnnotation(major=int(obj.get("major", 0)), minor=int(obj.get("minor", 0)))
                except ValueError as exc:
                    raise DataFormatError(f"line {line_no}: {exc}") from exc
                score = mqm_to_score(ann)
            try:
                seg = AnnotatedSegment(
                    id=str(obj.get("id") or f"L{line_no}"),
                    src=obj.get("src") or "",
                    mt=obj.get("mt") or "",
                    ref=obj.get("ref"),
                    langs=obj.get("langs"),
                    system=obj.get("system"),
                    score=score,
                    domain=obj.get("domain"),
                    doc=obj.get("doc"),
                )
            except ValueError as exc:
                raise DataFormatError(f"line {line_no}: {exc}") from exc
            if seg.id in seen:
                raise DataFormatError(f"duplicate id '{seg.id}'")
            seen.add(seg.id)
            segments.append(seg)
    return segments


@cli.command("validate-embeddings")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@_config_option
@click.pass_context
def validate_embeddings(ctx, **kwargs):
    """Check an embedding file's structure and finiteness."""
    kwargs = _merge_config(ctx, kwargs)
    store = load_embeddings(kwargs["input_path"])
    click.echo(f"ok: dim={store.dim} records={len(store)}")


@cli.command("build-kb")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--key", type=click.Choice(["src", "tgt", "sum", "concat"]), default="src",
              show_default=True, help="Retrieval key construction recorded in the manifest.")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--require-scores/--no-require-scores", default=True, show_default=True,
              help="Insist every knowledge-base segment carries a gold score.")
@_strict_option
@_config_option
@click.pass_context
def build_kb(ctx, **kwargs):
    """Validate and register an annotated corpus as a retrieval knowledge base."""
    kwargs = _merge_config(ctx, kwargs)
    data = load_dataset(kwargs["data"], strict=kwargs["strict"])
    store = load_embeddings(kwargs["embeddings"])
    missing = [seg.id for seg in data if kwargs["require_scores"] and seg.score is None]
    if missing:
        raise DataFormatError(
            f"{len(missing)} knowledge-base segments have no gold score (first: {missing[0]})")
    index = build_index(data, store, kwargs["key"])  # fails on missing embeddings
    manifest = {
        "data": str(Path(kwargs["data"]).resolve()),
        "embeddings": str(Path(kwargs["embeddings"]).resolve()),
        "key": kwargs["key"],
        "dim": store.dim,
        "count": len(index),
        "config_hash": config_hash({"data": kwargs["data"], "embeddings": kwargs["embeddings"],
                                    "key": kwargs["key"]}),
    }
    Path(kwargs["output_path"]).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    click.echo(f"knowledge base: {len(index)} entries, dim {store.dim}, key {kwargs['key']}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Query dataset.")
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kb", "kb_manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Knowledge-base manifest from build-kb; defaults to the query data itself.")
@click.option("--kb-data", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--kb-embeddings", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--key", type=click.Choice(["src", "tgt", "sum", "concat"]), default="src",
              show_default=True)
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--selector", default="closest", show_default=True,
              help="closest, nth:<j>, or random:<seed>.")
@click.option("--min-similarity", type=float, default=None)
@click.option("--max-similarity", type=float, default=None)
@click.option("--exclude-self", is_flag=True,
              help="Discard the query's own id and exact (src, mt) text matches.")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@_strict_option
@_config_option
@click.pass_context
def retrieve(ctx, **kwargs):
    """Emit (query, neighbor, similarity) JSONL for audit."""
    kwargs = _merge_config(ctx, kwargs)
    data = load_dataset(kwargs["data"], strict=kwargs["strict"])
    store = load_embeddings(kwargs["embeddings"])
    kb_data, kb_store, key = _load_kb(kwargs["kb_manifest"], kwargs["kb_data"],
                                      kwargs["kb_embeddings"], kwargs["key"], kwargs["strict"])
    if kb_data is None:
        kb_data, kb_store = data, store
    index = build_index(kb_data, kb_store, key)
    selector = parse_selector(kwargs["selector"])
    records = []
    for seg in data:
        query = RetrievalQuery(
            key=query_key(store, seg.id, key),
            k=kwargs["k"],
            exclude_ids=frozenset({seg.id}) if kwargs["exclude_self"] else frozenset(),
            exclude_texts=(seg.src, seg.mt) if kwargs["exclude_self"] else None,
            min_similarity=kwargs["min_similarity"],
            max_similarity=kwargs["max_similarity"],
            selector=selector,
        )
        for neighbor_id, sim in topk(index, query):
            records.append({"query": seg.id, "neighbor": neighbor_id, "similarity": sim})
    _write_jsonl(kwargs["output_path"], records)
    click.echo(f"wrote {len(records)} retrieval records to {kwargs['output_path']}")


def _assemble_config(kwargs, for_training: bool) -> AssembleConfig:
    return AssembleConfig(
        mode=kwargs["mode"],
        with_ref=kwargs["with_ref"],
        with_scores=kwargs["with_scores"],
        joint=kwargs.get("joint", False),
        n=kwargs["n"],
        key_mode=kwargs["key"],
        selector=parse_selector(kwargs["selector"]),
        min_similarity=kwargs["min_similarity"],
        max_similarity=kwargs["max_similarity"],
        abs_product=kwargs["ic_abs_product"] == "on",
        exclude_self=for_training,
    )


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["base", "polycand", "polyic"]), default="base",
              show_default=True)
@click.option("--with-ref", is_flag=True, help="Append the reference feature block.")
@click.option("--with-scores", is_flag=True,
              help="polycand: append each candidate's gold score to its block.")
@click.option("--joint", is_flag=True,
              help="polycand: jointly predict the candidates' scores too.")
@click.option("--n", type=int, default=0, show_default=True,
              help="Additional candidates (polycand) or in-context examples (polyic).")
@click.option("--key", type=click.Choice(["src", "tgt", "sum", "concat"]), default="src",
              show_default=True, help="polyic retrieval key construction.")
@click.option("--selector", default="closest", show_default=True)
@click.option("--min-similarity", type=float, default=None)
@click.option("--max-similarity", type=float, default=None)
@click.option("--ic-abs-product", type=click.Choice(["on", "off"]), default="on",
              show_default=True, help="Absolute value on the in-context source product block.")
@click.option("--kb", "kb_manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="polyic: external knowledge base; defaults to the training data itself.")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--loss-trace", "loss_trace_path", type=click.Path(dir_okay=False), default=None,
              help="Write the per-epoch loss trace as CSV.")
@click.option("--hidden", default="2048,1024", show_default=True,
              help="Comma-separated hidden-layer widths.")
@click.option("--activation", type=click.Choice(["tanh", "relu"]), default="tanh",
              show_default=True)
@click.option("--lr", type=float, default=1.5e-5, show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
@click.option("--micro-batch-size", type=int, default=None,
              help="Micro-batch size for gradient accumulation; default is the full batch.")
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--weight-decay", type=float, default=0.01, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_strict_option
@_config_option
@click.pass_context
def train(ctx, **kwargs):
    """Train a regression head and write a checkpoint."""
    kwargs = _merge_config(ctx, kwargs)
    cfg = _assemble_config(kwargs, for_training=True)
    cfg.validate()
    data = load_dataset(kwargs["data"], strict=kwargs["strict"])
    store = load_embeddings(kwargs["embeddings"])
    kb_data, kb_store, _ = _load_kb(kwargs["kb_manifest"], None, None, kwargs["key"],
                                    kwargs["strict"])
    assembled = assemble(data, store, cfg, kb_data=kb_data, kb_store=kb_store,
                         require_targets=True)
    for seg_id, reason in assembled.skipped:
        click.echo(f"skipped {seg_id}: {reason}", err=True)
    hidden = tuple(int(h) for h in str(kwargs["hidden"]).split(",") if h)
    train_cfg = TrainConfig(
        learning_rate=kwargs["lr"],
        batch_size=kwargs["batch_size"],
        micro_batch_size=kwargs["micro_batch_size"],
        epochs=kwargs["epochs"],
        weight_decay=kwargs["weight_decay"],
        seed=kwargs["seed"],
    )
    head = new_head(
        n_inputs=assembled.X.shape[1],
        n_outputs=cfg.n_outputs,
        hidden=hidden,
        activation=kwargs["activation"],
        seed=kwargs["seed"],
        layout=assembled.layout,
    )
    _, trace = train_head(head, assembled.X, assembled.Y, train_cfg)
    save_checkpoint(head, train_cfg, kwargs["checkpoint_path"])
    if kwargs["loss_trace_path"]:
        with open(kwargs["loss_trace_path"], "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            for epoch, value in enumerate(trace, start=1):
                writer.writerow([epoch, repr(value)])
    click.echo(
        f"trained on {assembled.X.shape[0]} segments "
        f"(F={assembled.X.shape[1]}, M={cfg.n_outputs}); final loss {trace[-1]:.6f}"
    )


def _scores_for_head(head: MlpHead, assembled) -> np.ndarray:
    predictions = forward_batch(head, assembled.X)
    return np.clip(predictions * 100.0, 0.0, 100.0)


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--kb", "kb_manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="polyic: knowledge base to retrieve examples from.")
@click.option("--selector", default="closest", show_default=True)
@click.option("--all-slots", is_flag=True,
              help="Joint heads: emit every prediction slot, not just the first.")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@_strict_option
@_config_option
@click.pass_context
def score(ctx, **kwargs):
    """Score a dataset with a trained checkpoint; emits JSONL of (id, score)."""
    kwargs = _merge_config(ctx, kwargs)
    head, _ = load_checkpoint(kwargs["checkpoint_path"])
    if head.layout is None:
        raise DataFormatError("checkpoint carries no feature layout, cannot score")
    data = load_dataset(kwargs["data"], strict=kwargs["strict"])
    store = load_embeddings(kwargs["embeddings"])
    if store.dim != head.layout.dim:
        raise DataFormatError(
            f"embeddings have dim {store.dim}, checkpoint expects {head.layout.dim}")
    layout = head.layout
    kb_data, kb_store, key = _load_kb(kwargs["kb_manifest"], None, None, "src",
                                      kwargs["strict"])
    if layout.mode == "polyic" and kb_data is None:
        raise ConfigError(
            "scoring a polyic checkpoint needs --kb (retrieving from the scored "
            "dataset itself would leak its own gold scores)")
    cfg = AssembleConfig(
        mode=layout.mode,
        with_ref=layout.with_ref,
        with_scores=layout.with_scores,
        joint=head.n_outputs > 1,
        n=layout.n,
        key_mode=key,
        selector=parse_selector(kwargs["selector"]),
        abs_product=layout.abs_product,
        exclude_self=False,
    )
    assembled = assemble(data, store, cfg, kb_data=kb_data, kb_store=kb_store)
    if assembled.X.shape[1] != head.n_inputs:
        raise DataFormatError(
            f"assembled features have length {assembled.X.shape[1]}, "
            f"checkpoint expects {head.n_inputs}")
    scores = _scores_for_head(head, assembled)
    records = []
    by_id = {seg_id: i for i, seg_id in enumerate(assembled.ids)}
    skipped_ids = dict(assembled.skipped)
    for seg in data:
        if seg.id in by_id:
            row = scores[by_id[seg.id]]
            record = {"id": seg.id, "score": float(row[0])}
            if kwargs["all_slots"]:
                record["scores"] = [float(v) for v in row]
            records.append(record)
        elif seg.id in skipped_ids:
            records.append({"id": seg.id, "error": skipped_ids[seg.id]})
    _write_jsonl(kwargs["output_path"], records)
    click.echo(f"scored {len(by_id)} segments ({len(assembled.skipped)} skipped)")


@cli.command()
@click.option("--knn-mode", type=click.Choice(["polycand", "polyic"]), required=True)
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--gamma", default="inf", show_default=True,
              help="Kernel bandwidth; 'inf' is the exact simple average.")
@click.option("--key", type=click.Choice(["src", "tgt", "sum", "concat"]), default="src",
              show_default=True, help="polyic retrieval key construction.")
@click.option("--kb", "kb_manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="polyic: knowledge base manifest.")
@click.option("--kb-data", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--kb-embeddings", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="polycand: base-model checkpoint used to score neighbors.")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@_strict_option
@_config_option
@click.pass_context
def knn(ctx, **kwargs):
    """Non-parametric baselines: neighbor-score averaging."""
    kwargs = _merge_config(ctx, kwargs)
    gamma = _parse_gamma(kwargs["gamma"])
    kernel = KernelConfig(gamma=gamma)
    data = load_dataset(kwargs["data"], strict=kwargs["strict"])
    store = load_embeddings(kwargs["embeddings"])
    records = []
    if kwargs["knn_mode"] == "polycand":
        if not kwargs["checkpoint_path"]:
            raise ConfigError("knn polycand needs --checkpoint for the base scorer")
        head, _ = load_checkpoint(kwargs["checkpoint_path"])
        if head.layout is None or head.layout.mode != "base" or head.layout.with_ref:
            raise DataFormatError("knn polycand needs a reference-less base-mode checkpoint")

        def base_scorer(seg: AnnotatedSegment) -> float:
            fv = base_features(store.get(seg.id, "src"), store.get(seg.id, "mt"))
            value = forward_batch(head, fv.values[None, :])[0, 0]
            return float(np.clip(value * 100.0, 0.0, 100.0))

        groups = group_by_source(data)
        for seg in data:
            pool = ranked_same_source_pool(data, store, seg.id, seg.id, groups=groups)
            if not pool:
                records.append({"id": seg.id, "error": "no alternative translations"})
                continue
            records.append(
                {"id": seg.id, "score": knn_polycand(pool, base_scorer, kwargs["k"], kernel)})
    else:
        kb_data, kb_store, key = _load_kb(kwargs["kb_manifest"], kwargs["kb_data"],
                                          kwargs["kb_embeddings"], kwargs["key"],
                                          kwargs["strict"])
        if kb_data is None:
            raise ConfigError("knn polyic needs --kb (or --kb-data with --kb-embeddings)")
        index = build_index(kb_data, kb_store, key)
        for seg in data:
            try:
                query = RetrievalQuery(key=query_key(store, seg.id, key), k=kwargs["k"])
                value = knn_polyic(query, index, kwargs["k"], kernel)
                records.append({"id": seg.id, "score": value})
            except (KeyError, ValueError) as exc:
                records.append({"id": seg.id, "error": str(exc)})
    _write_jsonl(kwargs["output_path"], records)
    ok = sum(1 for r in records if "score" in r)
    click.echo(f"knn-{kwargs['knn_mode']} scored {ok}/{len(records)} segments")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--variant", type=click.Choice(["standard", "polycand", "polyic"]),
              default="standard", show_default=True)
@click.option("--n", type=int, default=1, show_default=True,
              help="Examples per prompt for the poly variants.")
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Needed to rank candidates/examples by similarity.")
@click.option("--kb", "kb_manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="polyic: knowledge base the examples come from.")
@click.option("--key", type=click.Choice(["src", "tgt", "sum", "concat"]), default="src",
              show_default=True)
@click.option("--selector", default="closest", show_default=True)
@click.option("--with-scores/--without-scores", default=True, show_default=True,
              help="polycand: include candidates' gold scores in the prompt.")
@click.option("--with-ref", is_flag=True, help="Include the reference line when present.")
@click.option("--endpoint-url", required=True)
@click.option("--model", required=True)
@click.option("--auth-env", default=None,
              help="Environment variable holding the bearer token.")
@click.option("--timeout", type=float, default=60.0, show_default=True)
@click.option("--max-retries", type=int, default=2, show_default=True)
@click.option("--temperature", type=float, default=0.0, show_default=True)
@click.option("--backoff-base", type=float, default=0.5, show_default=True)
@click.option("--concurrency", type=int, default=4, show_default=True)
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@_strict_option
@_config_option
@click.pass_context
def gemba(ctx, **kwargs):
    """Score a dataset with an LLM judge over a chat-completions endpoint."""
    kwargs = _merge_config(ctx, kwargs)
    data = load_dataset(kwargs["data"], strict=kwargs["strict"])
    store = load_embeddings(kwargs["embeddings"]) if kwargs["embeddings"] else None
    endpoint = gemba_mod.LlmEndpointConfig(
        base_url=kwargs["endpoint_url"],
        model=kwargs["model"],
        auth_env=kwargs["auth_env"],
        timeout=kwargs["timeout"],
        max_retries=kwargs["max_retries"],
        temperature=kwargs["temperature"],
        backoff_base=kwargs["backoff_base"],
    )
    items = []
    selector = parse_selector(kwargs["selector"])
    kb_data, kb_store, key = _load_kb(kwargs["kb_manifest"], None, None, kwargs["key"],
                                      kwargs["strict"])
    index = build_index(kb_data, kb_store, key) if kb_data is not None else None
    if kwargs["variant"] == "polyic" and index is None:
        raise ConfigError("the polyic variant needs --kb")
    if kwargs["variant"] != "standard" and store is None:
        raise ConfigError(f"the {kwargs['variant']} variant needs --embeddings")
    for seg in data:
        if not seg.langs or "-" not in seg.langs:
            raise DataFormatError(f"segment '{seg.id}' has no usable language-pair tag")
        src_code, tgt_code = seg.langs.split("-", 1)
        examples = ()
        if kwargs["variant"] == "polycand":
            cands = candidates_same_source(data, store, seg.id, seg.id,
                                           k=kwargs["n"], selector=selector)
            examples = tuple(
                gemba_mod.GembaExample(
                    translation=c.mt,
                    score=c.score if kwargs["with_scores"] else None)
                for c in cands
            )
        elif kwargs["variant"] == "polyic":
            query = RetrievalQuery(key=query_key(store, seg.id, key), k=kwargs["n"],
                                   selector=selector)
            examples = tuple(
                gemba_mod.GembaExample(
                    translation=index.payload(nid).mt,
                    score=index.payload(nid).score,
                    source=index.payload(nid).src)
                for nid, _ in topk(index, query)
            )
        spec = gemba_mod.GembaPrompt(
            variant=kwargs["variant"],
            src_lang=gemba_mod.lang_name(src_code),
            tgt_lang=gemba_mod.lang_name(tgt_code),
            src=seg.src,
            mt=seg.mt,
            ref=seg.ref if kwargs["with_ref"] else None,
            examples=examples,
        )
        items.append((seg.id, spec))
    results, failures = gemba_mod.score_batch(items, endpoint, kwargs["concurrency"])
    records = []
    for seg_id, _ in items:
        if seg_id in results:
            res = results[seg_id]
            records.append({"id": seg_id, "score": res.score, "attempts": res.attempts})
    for failure in failures:
        records.append({"id": failure.id, "error": failure.error, "attempts": failure.attempts})
    _write_jsonl(kwargs["output_path"], records)
    click.echo(f"judged {len(results)}/{len(items)} segments ({len(failures)} failed)")


def _read_scores_jsonl(path) -> tuple[dict[str, float], list[str]]:
    scores: dict[str, float] = {}
    problems: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path} line {line_no}: invalid JSON: {exc}") from exc
            if "error" in obj:
                problems.append(f"{obj.get('id', f'line {line_no}')}: {obj['error']}")
                continue
            if "id" not in obj or "score" not in obj:
                raise DataFormatError(f"{path} line {line_no}: need 'id' and 'score' fields")
            scores[str(obj["id"])] = float(obj["score"])
    return scores, problems


@cli.command("evaluate")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSONL of (id, score) records from score/knn/gemba.")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Gold dataset with scores and language pairs.")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None,
              help="Write the machine-readable report JSONL here.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Also export the report as CSV.")
@click.option("--model-id", default="unknown", show_default=True)
@click.option("--dataset-id", default="unknown", show_default=True)
@_strict_option
@_config_option
@click.pass_context
def evaluate_cmd(ctx, **kwargs):
    """Segment-level evaluation of predicted vs gold scores."""
    kwargs = _merge_config(ctx, kwargs)
    gold = load_dataset(kwargs["data"], strict=kwargs["strict"])
    preds, problems = _read_scores_jsonl(kwargs["pred_path"])
    triples = []
    for seg in gold:
        if seg.id not in preds:
            continue
        if seg.score is None:
            problems.append(f"{seg.id}: no gold score")
            continue
        if not seg.langs:
            raise DataFormatError(f"segment '{seg.id}' has no language-pair tag")
        triples.append((preds[seg.id], seg.score, seg.langs))
    if not triples:
        raise DataFormatError("no overlapping (prediction, gold) pairs to evaluate")
    metadata = {
        "model": kwargs["model_id"],
        "dataset": kwargs["dataset_id"],
        "config_hash": config_hash({"pred": kwargs["pred_path"], "data": kwargs["data"]}),
    }
    report = evaluate(triples, metadata=metadata)
    report.notes.extend(f"prediction missing/failed: {p}" for p in problems)
    click.echo(report.to_table())
    if kwargs["output_path"]:
        Path(kwargs["output_path"]).write_text(report.to_jsonl() + "\n", encoding="utf-8")
    if kwargs["csv_path"]:
        Path(kwargs["csv_path"]).write_text(report.to_csv() + "\n", encoding="utf-8")


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Report JSONL produced by evaluate.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@_config_option
@click.pass_context
def report(ctx, **kwargs):
    """Re-render a stored evaluation report."""
    kwargs = _merge_config(ctx, kwargs)
    per_pair = {}
    macro = {}
    notes: list[str] = []
    metadata: dict = {}
    with open(kwargs["input_path"], encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["langpair"] == "macro":
                macro = obj
                notes = obj.get("notes", [])
                metadata = obj.get("metadata", {})
            else:
                per_pair[obj["langpair"]] = PairMetrics(
                    n=obj["n"], pearson=obj["pearson"], tau_b=obj["tau_b"], mae=obj["mae"])
    if not macro:
        raise DataFormatError(f"{kwargs['input_path']}: no macro row found")
    rebuilt = EvalReport(
        per_pair=per_pair,
        macro_pearson=macro.get("pearson"),
        macro_tau_b=macro.get("tau_b"),
        macro_mae=macro.get("mae"),
        notes=notes,
        metadata=metadata,
    )
    click.echo(rebuilt.to_table())
    if kwargs["csv_path"]:
        Path(kwargs["csv_path"]).write_text(rebuilt.to_csv() + "\n", encoding="utf-8")


@cli.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Experiment manifest: command, params, axes, gold data.")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None,
              help="Write one JSONL record per grid cell.")
def experiment(config, output_path):
    """Run a cross-product of configurations and consolidate the results.

    The manifest declares a base subcommand ("knn" or "score"), its fixed
    params, an ``axes`` mapping of option name to value list, and ``gold``
    data to evaluate each cell against. With a similarity-threshold axis,
    an upper bound (max-similarity) reproduces the "similarity < x" training
    filter. Failed cells are recorded and the run continues.
    """
    with open(config, encoding="utf-8") as fh:
        manifest = yaml.safe_load(fh)
    if not isinstance(manifest, dict):
        raise ConfigError(f"{config}: manifest must be a mapping")
    for required in ("command", "params", "axes", "gold"):
        if required not in manifest:
            raise ConfigError(f"{config}: missing '{required}'")
    command = manifest["command"]
    if command not in ("knn", "score"):
        raise ConfigError(f"unsupported experiment command '{command}'")
    axes = {str(k): list(v) for k, v in manifest["axes"].items()}
    if not axes:
        raise ConfigError("axes must declare at least one dimension")
    gold = load_dataset(manifest["gold"])
    gold_by_id = {seg.id: seg for seg in gold}

    cells = []
    axis_names = list(axes)
    with tempfile.TemporaryDirectory(prefix="polyqe-experiment-") as workdir:
        for cell_no, values in enumerate(itertools.product(*(axes[name] for name in axis_names))):
            cell_params = dict(manifest["params"])
            cell_params.update(dict(zip(axis_names, values)))
            cell = {name: value for name, value in zip(axis_names, values)}
            scores_path = str(Path(workdir) / f"cell{cell_no}.jsonl")
            try:
                args = [command]
                for key, value in cell_params.items():
                    if isinstance(value, bool):
                        if value:
                            args.append(f"--{key}")
                        continue
                    args.extend([f"--{key}", str(value)])
                args.extend(["--output", scores_path])
                result = click.testing.CliRunner().invoke(cli, args, catch_exceptions=False)
                if result.exit_code != 0:
                    raise PolyqeError(result.output.strip() or f"exit code {result.exit_code}")
                preds, _ = _read_scores_jsonl(scores_path)
                triples = [
                    (score, gold_by_id[sid].score, gold_by_id[sid].langs)
                    for sid, score in preds.items()
                    if sid in gold_by_id and gold_by_id[sid].score is not None
                ]
                rep = evaluate(triples)
                cell.update(
                    {
                        "pearson": rep.macro_pearson,
                        "tau_b": rep.macro_tau_b,
                        "mae": rep.macro_mae,
                        "n": sum(pm.n for pm in rep.per_pair.values()),
                    }
                )
            except Exception as exc:  # record and continue
                cell["error"] = str(exc)
            cells.append(cell)

    if output_path:
        _write_jsonl(output_path, cells)
    click.echo(_experiment_table(axis_names, cells))


def _experiment_table(axis_names: list[str], cells: list[dict]) -> str:
    def fmt(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    if len(axis_names) == 2:
        rows_axis, cols_axis = axis_names
        row_values = sorted({str(c[rows_axis]) for c in cells})
        col_values = sorted({str(c[cols_axis]) for c in cells})
        blocks = []
        for metric in ("pearson", "tau_b", "mae"):
            lines = [f"[{metric}] rows={rows_axis} cols={cols_axis}"]
            header = [""] + col_values
            table_rows = [header]
            for rv in row_values:
                row = [rv]
                for cv in col_values:
                    match = [c for c in cells
                             if str(c[rows_axis]) == rv and str(c[cols_axis]) == cv]
                    cell = match[0] if match else {}
                    row.append(fmt(cell.get(metric)) if "error" not in cell
                               else "ERR")
                table_rows.append(row)
            widths = [max(len(r[i]) for r in table_rows) for i in range(len(header))]
            for r in table_rows:
                lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks)

    header = axis_names + ["pearson", "tau_b", "mae", "error"]
    table_rows = [header]
    for cell in cells:
        table_rows.append(
            [fmt(cell.get(name)) for name in axis_names]
            + [fmt(cell.get("pearson")), fmt(cell.get("tau_b")), fmt(cell.get("mae")),
               cell.get("error", "")]
        )
    widths = [max(len(str(r[i])) for r in table_rows) for i in range(len(header))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in table_rows)


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point mapping exceptions onto the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except DataFormatError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except click.Abort:
        return 3
    except Exception as exc:  # runtime failure
        click.echo(f"runtime failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
