"""Code embeddings from one-sentence LLM summaries, plus clone and clustering evaluation."""

from .cloneval import ThresholdConfig, classify_pairs, cosine_similarity, sweep_thresholds
from .cluster import euclidean_distance, kmeans
from .dataset import CodeFragment, Corpus, PairDataset, load_corpus_dir, load_pair_jsonl, sample_balanced_pairs
from .embed import EmbeddingSet, deterministic_embed, embed_batch
from .llm import FixtureProvider, OpenAICompatibleProvider, chat_complete, summarize_corpus, summarize_fragment
from .metrics import adjusted_rand_index, classification_report, confusion
from .prompt import PromptTemplate, extract_first_sentence, remove_stop_words, render_prompt
from .store import SummaryStore
from .viz import TsneConfig, export_projection, tsne

__version__ = "0.1.0"
