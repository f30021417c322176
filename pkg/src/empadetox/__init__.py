"""Decoding-time detoxification with expert/anti-expert n-gram ensembles.

Submodules:

- ``lm``: vocabulary, tokenized n-gram language models, perplexity
- ``ensemble``: logit combination, nucleus sampling, continuation generation
- ``curation``: empathy score records and fine-tuning subset selection
- ``toxicity`` / ``remote``: lexicon scorer, cached rate-limited HTTP scorer
- ``metrics``: toxicity, fluency, diversity metrics and permutation tests
- ``pipeline`` / ``cli``: experiment grid orchestration
"""

__version__ = "0.1.0"
