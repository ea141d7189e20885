"""Command-line interface.

Subcommands mirror the pipeline: corpus ingest, index build/search, ask,
translate, eval run, causal fit, serve. Report-producing paths write figures
next to their delimited outputs. Without a --backends file the CLI runs
against a built-in offline mock so every command works end to end on a
fresh checkout.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click

from . import causal as causal_mod
from .agents import (
    RetrievalAgent,
    RetrievalConfig,
    TranslationAgent,
    TranslationRequest,
)
from .corpus import CorpusStore
from .errors import PolymathError
from .evaluation import (
    AblationConfig,
    EvalRunner,
    emit_report,
    load_benchmark,
    score,
    write_run_records,
)
from .gateway import (
    BackendConfig,
    DecodeParams,
    HashEmbedder,
    HttpEmbedder,
    MockChatBackend,
    load_backends_file,
)
from .index import HybridIndex
from .orchestrator import Orchestrator, OrchestratorConfig, load_denylist
from .sessions import SessionStore
from .trace import StepTrace


def offline_backends() -> BackendConfig:
    """Deterministic no-network backend set for demos and smoke runs."""
    mock = MockChatBackend(default_reply="(offline mock reply)", name="offline")
    mock.script_json("plan_query_v1", {"tags": []})       # falls back corpus-wide
    mock.script_json("plan_query_v2", {"keywords": []})
    mock.script_json("evidence_rag", {"relevant": True, "summary": "(retrieved passage)"})
    mock.script("evidentiary_expertise", "(offline expert background)")
    mock.script_json("perspective_synthesis", {
        "answer": "(offline mock answer)",
        "explanation": "Offline mode: configure --backends for real models."})
    mock.script("safety_classifier", "NO")
    mock.script_json("semantic_router", {"tool": "retrieval_v1"})
    mock.script("background_expertise", "(offline in-domain background)")
    mock.script("gap_assessment", "(offline gap summary)")
    mock.script("gap_bridge", "(offline bridged answer)")
    cfg = BackendConfig(backends={"offline": mock}, default="offline",
                        embedder=HashEmbedder())
    return cfg


def _load_backends(backends_file, embed_endpoint=None) -> BackendConfig:
    if backends_file:
        cfg = load_backends_file(backends_file)
    else:
        click.echo("no --backends file given; using the offline mock backend",
                   err=True)
        cfg = offline_backends()
    if embed_endpoint:
        cfg.embedder = HttpEmbedder(embed_endpoint)
    return cfg


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")


# --- corpus ---

@main.group()
def corpus():
    """Corpus ingestion and maintenance."""


@corpus.command("ingest")
@click.argument("path", type=click.Path(exists=True))
@click.option("--corpus-dir", required=True, type=click.Path())
def corpus_ingest(path, corpus_dir):
    """Ingest a JSONL document file into the corpus directory."""
    store = CorpusStore(corpus_dir)
    count = store.load_corpus_file(path)
    click.echo(f"ingested {count} documents into {corpus_dir}")


# --- index ---

@main.group()
def index():
    """Build and query the hybrid index."""


@index.command("build")
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--embed-endpoint", default=None, help="HTTP embeddings endpoint; default is the hash embedder.")
@click.option("--embed-dim", default=384, show_default=True)
@click.option("--window", default=512, show_default=True)
@click.option("--overlap", default=64, show_default=True)
@click.option("--scorer", type=click.Choice(["bm25", "tfidf"]), default="bm25",
              show_default=True)
def index_build(corpus_dir, embed_endpoint, embed_dim, window, overlap, scorer):
    """Chunk, embed, and index every document in the corpus."""
    from .gateway import embed_text

    store = CorpusStore(corpus_dir)
    embedder = (HttpEmbedder(embed_endpoint) if embed_endpoint
                else HashEmbedder(dim=embed_dim))
    idx = HybridIndex(scorer=scorer)
    total = 0
    for doc in store.documents():
        chunks = store.chunk_document(doc.doc_id, window_tokens=window,
                                      overlap_tokens=overlap)
        if chunks:
            vectors = embed_text(embedder, [c.text for c in chunks])
            for chunk, vec in zip(chunks, vectors):
                chunk.embedding = vec
        total += idx.upsert_chunks(chunks)
    idx.save_dir(corpus_dir)
    stats = idx.stats()
    click.echo(f"indexed {total} chunks from {len(store)} documents "
               f"(terms={stats.num_terms}, dim={stats.embedding_dim})")


@index.command("search")
@click.argument("query")
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--tags", default=None, help="Comma-separated tag filter.")
@click.option("-k", default=10, show_default=True)
@click.option("--mode", type=click.Choice(["term", "vector", "hybrid"]),
              default="hybrid", show_default=True)
@click.option("--embed-dim", default=384, show_default=True)
def index_search(query, corpus_dir, tags, k, mode, embed_dim):
    """Search the persisted index."""
    from .gateway import embed_text

    idx = HybridIndex.load_dir(corpus_dir)
    tag_set = {t.strip() for t in tags.split(",")} if tags else None
    if mode == "term":
        hits = idx.term_search(query, tags=tag_set, k=k)
    else:
        embedder = HashEmbedder(dim=idx.stats().embedding_dim or embed_dim)
        qvec = embed_text(embedder, [query])[0]
        if mode == "vector":
            hits = idx.vector_search(qvec, tags=tag_set, k=k)
        else:
            hits = idx.hybrid_search(query, qvec, tags=tag_set, k=k)
    for hit in hits:
        chunk = idx.get_chunk(hit.chunk_id)
        preview = chunk.text[:80].replace("\n", " ") if chunk else ""
        click.echo(f"{hit.score:.6f}  {hit.chunk_id}  {preview}")
    if not hits:
        click.echo("(no hits)")


# --- ask / translate ---

def _build_agents(corpus_dir, backends_file, backend_name):
    cfg = _load_backends(backends_file)
    store = CorpusStore(corpus_dir)
    idx = HybridIndex.load_dir(corpus_dir)
    index_dim = idx.stats().embedding_dim
    if (index_dim and isinstance(cfg.embedder, HashEmbedder)
            and cfg.embedder.dim != index_dim):
        cfg.embedder = HashEmbedder(dim=index_dim)
    backend = cfg.get(backend_name)
    agent = RetrievalAgent(idx, backend, cfg.embedder, store.vocabulary)
    return store, idx, cfg, backend, agent


@main.command("ask")
@click.argument("question")
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--variant", type=click.Choice(["v1", "v2"]), default="v1",
              show_default=True)
@click.option("--backend", "backend_name", default=None)
@click.option("--backends", "backends_file", default=None,
              type=click.Path(exists=True))
@click.option("--mcq", "mcq_file", default=None, type=click.Path(exists=True),
              help="JSON file with a list of choices.")
@click.option("--trace", "trace_out", default=None, type=click.Path(),
              help="Write the step trace to this JSON file.")
def ask(question, corpus_dir, variant, backend_name, backends_file, mcq_file,
        trace_out):
    """Answer a question with the retrieval agent."""
    _, _, _, _, agent = _build_agents(corpus_dir, backends_file, backend_name)
    mcq = json.loads(Path(mcq_file).read_text(encoding="utf-8")) if mcq_file else None
    trace = StepTrace()
    try:
        answer = agent.answer_question(
            question, variant=variant,
            config=RetrievalConfig(mcq_choices=mcq), trace=trace)
    except PolymathError as e:
        raise click.ClickException(str(e))
    click.echo(f"answer: {answer.answer}")
    click.echo(f"explanation: {answer.explanation}")
    if answer.citations:
        click.echo("citations: " + ", ".join(sorted(answer.citations)))
    if trace_out:
        Path(trace_out).write_text(json.dumps(trace.to_list(), indent=1),
                                   encoding="utf-8")
        click.echo(f"trace written to {trace_out}")


@main.command("translate")
@click.argument("question")
@click.option("--from", "from_tags", required=True,
              help="Out-of-domain tags (comma separated).")
@click.option("--to", "to_tags", required=True,
              help="In-domain tags (comma separated).")
@click.option("--variant", type=click.Choice(["persistent", "interactive"]),
              default="persistent", show_default=True)
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--backend", "backend_name", default=None)
@click.option("--backends", "backends_file", default=None,
              type=click.Path(exists=True))
def translate(question, from_tags, to_tags, variant, corpus_dir, backend_name,
              backends_file):
    """Bridge an answer from one domain into another."""
    _, _, cfg, backend, agent = _build_agents(corpus_dir, backends_file,
                                              backend_name)
    translation_agent = TranslationAgent(agent, backend)
    request = TranslationRequest(
        question=question,
        in_domain_tags=[t.strip() for t in to_tags.split(",") if t.strip()],
        out_of_domain_tags=[t.strip() for t in from_tags.split(",") if t.strip()],
        variant="persistent_memory" if variant == "persistent" else "interactive",
    )
    try:
        result = translation_agent.translate(request)
    except (PolymathError, ValueError) as e:
        raise click.ClickException(str(e))
    click.echo(f"out-of-domain answer:\n{result.out_of_domain_answer}\n")
    click.echo(f"in-domain answer:\n{result.in_domain_answer}\n")
    click.echo(f"knowledge gap:\n{result.knowledge_gap}\n")
    click.echo(f"bridged answer:\n{result.bridged_answer}")


# --- eval ---

@main.group("eval")
def eval_group():
    """Ablation evaluation over MCQ benchmarks."""


@eval_group.command("run")
@click.option("--benchmark", "benchmark_path", required=True,
              type=click.Path(exists=True))
@click.option("--format", "format_id",
              type=click.Choice(["litqa2", "gpqa", "wmdp", "hle", "xdisc"]),
              required=True)
@click.option("--conditions", default="vanilla_llm,vanilla_rag,agent_v1,agent_v2",
              show_default=True)
@click.option("--backend", "backend_name", default=None)
@click.option("--backends", "backends_file", default=None,
              type=click.Path(exists=True))
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--limit", default=None, type=int)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval_run(benchmark_path, format_id, conditions, backend_name,
             backends_file, corpus_dir, limit, seed, out_dir):
    """Run the ablation matrix and write report files + figures."""
    cfg = _load_backends(backends_file)
    store = CorpusStore(corpus_dir)
    idx = HybridIndex.load_dir(corpus_dir)
    backend_name = backend_name or cfg.default
    runner = EvalRunner(cfg.backends, idx, cfg.embedder, store.vocabulary,
                        params=DecodeParams(seed=seed))
    items = load_benchmark(benchmark_path, format_id)
    benchmark_name = Path(benchmark_path).stem
    all_records = []
    results = []
    for condition in [c.strip() for c in conditions.split(",") if c.strip()]:
        records = runner.run_condition(
            AblationConfig(condition=condition, backend_name=backend_name,
                           seed=seed),
            items, limit=limit, benchmark=benchmark_name)
        all_records.extend(records)
        scores = score(records)
        results.append({"benchmark": benchmark_name, "condition": condition,
                        "backend": backend_name, **scores})
        click.echo(f"{condition}: accuracy={scores['accuracy']:.3f} "
                   f"precision={scores['precision']} n={scores['n']}")
    out = Path(out_dir)
    write_run_records(all_records, out / "items.jsonl")
    paths = emit_report(results, out)
    click.echo("wrote " + ", ".join(str(p) for p in paths.values()))


# --- causal ---

@main.group()
def causal():
    """Causal structure learning over run metrics."""


@causal.command("fit")
@click.option("--runs", "runs_path", required=True, type=click.Path(exists=True))
@click.option("--treatments", default="backend,condition,benchmark",
              show_default=True, help="Treatment fields in the runs file.")
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--l1", default=0.1, show_default=True)
@click.option("--threshold", default=0.3, show_default=True)
@click.option("--max-iter", default=100, show_default=True)
def causal_fit(runs_path, treatments, out_csv, l1, threshold, max_iter):
    """Fit the DAG and export the intervention-effects heatmap (CSV + PNG)."""
    rows = []
    with open(runs_path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    treatment_fields = [t.strip() for t in treatments.split(",") if t.strip()]
    # "model" is accepted as an alias for the backend field
    treatment_fields = ["backend" if t == "model" else t
                        for t in treatment_fields]
    table = causal_mod.build_metric_table(rows, treatments=treatment_fields)
    params = causal_mod.NotearsParams(l1_penalty=l1, edge_threshold=threshold,
                                      max_iterations=max_iter)
    graph = causal_mod.fit_metric_table(table, params=params)
    if not graph.converged:
        click.echo("warning: dual loop did not converge; results are the "
                   "best iterate", err=True)
    outcomes = [c for c in table.columns if c not in table.treatment_columns]
    matrix = causal_mod.effects_heatmap(graph, table.treatment_columns, outcomes)
    out_csv = Path(out_csv)
    causal_mod.save_heatmap_csv(matrix, table.treatment_columns, outcomes, out_csv)
    fig_path = out_csv.with_suffix(".png")
    causal_mod.save_heatmap_figure(matrix, table.treatment_columns, outcomes,
                                   fig_path)
    click.echo(f"edges: {len(graph.edges())}; wrote {out_csv} and {fig_path}")


# --- serve ---

@main.command("serve")
@click.option("--bind", default="127.0.0.1:8080", show_default=True)
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--backends", "backends_file", default=None,
              type=click.Path(exists=True))
@click.option("--backend", "backend_name", default=None)
@click.option("--cors-origin", "cors_origins", multiple=True)
@click.option("--sessions-dir", default=None, type=click.Path())
@click.option("--denylist", "denylist_path", default=None,
              type=click.Path(exists=True))
def serve(bind, corpus_dir, backends_file, backend_name, cors_origins,
          sessions_dir, denylist_path):
    """Run the HTTP service (sessions, SSE query streaming, feedback)."""
    import uvicorn

    from .service import ApiConfig, create_app

    store, idx, cfg, backend, agent = _build_agents(corpus_dir, backends_file,
                                                    backend_name)
    translation_agent = TranslationAgent(agent, backend)
    sessions = SessionStore(sessions_dir or (Path(corpus_dir) / "sessions"))
    denylist = load_denylist(denylist_path) if denylist_path else []
    orchestrator = Orchestrator(sessions, agent, translation_agent, backend,
                                denylist=denylist,
                                config=OrchestratorConfig())
    app = create_app(orchestrator, sessions, store, idx, cfg.backends,
                     config=ApiConfig(bind=bind, corpus_dir=corpus_dir,
                                      cors_origins=list(cors_origins)))
    host, _, port = bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))


if __name__ == "__main__":
    main(prog_name="polymath")
