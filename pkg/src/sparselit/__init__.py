"""Sparse-retrieval literature question answering with LLM agents."""

from .corpus import Document, EntityDictionary, EntityMention, Section, annotate_entities, ingest_corpus
from .index import (
    BM25LParams,
    Boost,
    InvertedIndex,
    RecencyParams,
    SearchTermSet,
    ShouldGroup,
    build_index,
    execute_search,
    index_documents,
)
from .llm import Gateway, MockProvider, MockRule, Prompt, ProviderConfig
from .pipeline import AnswerBundle, AskConfig, CoveResult, ask, collect_references, cove

__version__ = "0.1.0"

__all__ = [
    "AnswerBundle", "AskConfig", "BM25LParams", "Boost", "CoveResult", "Document", "EntityDictionary",
    "EntityMention", "Gateway", "InvertedIndex", "MockProvider", "MockRule", "Prompt", "ProviderConfig",
    "RecencyParams", "SearchTermSet", "Section", "ShouldGroup", "annotate_entities", "ask", "build_index",
    "collect_references", "cove", "execute_search", "index_documents", "ingest_corpus",
]
