from .chunking import Chunk, ChunkingConfig, chunk_document, word_count
from .porter2 import stem
from .sentences import split_sentences
from .tokenize import Token, default_stopwords, load_stopwords, stems, tokenize

__all__ = [
    "Chunk",
    "ChunkingConfig",
    "Token",
    "chunk_document",
    "default_stopwords",
    "load_stopwords",
    "split_sentences",
    "stem",
    "stems",
    "tokenize",
    "word_count",
]
