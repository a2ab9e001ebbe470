"""
Sentence translation with CTC
=============================

Sentences are word sequences signed back to back with short
transitions and no segmentation. The sentence model emits a posterior
over words plus a blank per frame; training marginalizes over all
alignments, and decoding collapses repeats and blanks.
"""

from hbrnn import (Alphabet, GeneratorConfig, TrainConfig, build_model, build_trajectories,
                   gen_sentences, preset, sentence_forward, template_sentences, train)
from hbrnn.ctc import beam_decode, greedy_decode
from hbrnn.metrics import corpus_wer

words = ("I", "you", "want", "need", "food", "drink")
slots = [words[0:2], words[2:4], words[4:6]]
cfg = GeneratorConfig(classes=len(words), n_joints=6, t_min=10, t_max=12, words=words)
sentences = template_sentences(slots)
# Word prototypes depend on the seed, so draw everything at once and hold
# out the last rendition of every sentence.
corpus = gen_sentences(cfg, sentences, samples_per_sentence=7, seed=0)
test_set = corpus[6::7]
train_set = [s for k, s in enumerate(corpus) if k % 7 != 6]
print(f"{len(sentences)} sentences, {len(train_set)} training sequences")

###############################################################################
# Train briefly, then decode held-out renditions.

model = build_model(preset("hbrnn-ctc", words, cfg.n_joints), seed=0)
res = train(model, train_set, TrainConfig(epochs=12, seed=0))
print("final train loss:", round(res.history[-1]["train_loss"], 3))

alpha = Alphabet(words)
preds, refs = [], []
for seq in test_set:
    post = sentence_forward(res.model, build_trajectories(seq))
    preds.append(alpha.decode(greedy_decode(post, alpha)))
    refs.append(seq.labels)
print("pooled WER:", round(corpus_wer(preds, refs).wer, 3))

###############################################################################
# The beam decoder ranks alternative sentences by marginal probability.

post = sentence_forward(res.model, build_trajectories(test_set[0]))
print("reference:", " ".join(test_set[0].labels))
for labels, score in beam_decode(post, alpha, beam_width=3):
    print(f"  {score:8.3f}  {' '.join(alpha.decode(labels))}")
