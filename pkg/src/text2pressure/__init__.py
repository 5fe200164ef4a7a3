"""Text-conditioned ground-pressure sequence generation.

Modules
-------
data        procedural pressure sequences, the PSEQ1 file format, manifests, splits
codec       vector-quantised temporal autoencoder (tokenizer for pressure sequences)
text        deterministic hashing embeddings and an optional HTTP provider with caching
generator   autoregressive transformer over codebook tokens, conditioned on text
metrics     Frechet distance, R^2, binarized R^2, macro F1
har         windowed activity classifier and training-set comparison experiments
cli         ``text2pressure`` command-line pipeline
"""

__version__ = "0.1.0"
