from coupalign.data.store import load_dataset, load_split, save_dataset
from coupalign.data.synth import Dataset, Sample, compose_sample, generate, generate_sample, resolve
from coupalign.data.vocab import VOCAB_SIZE, detokenize, tokenize, vocab_hash
