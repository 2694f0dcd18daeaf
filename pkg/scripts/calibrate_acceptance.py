"""Calibration driver for the acceptance-scale experiments.

Runs the trend configurations used by the acceptance suite and prints the
quantities the criteria assert on, so thresholds and runtimes can be sanity
checked before freezing.
"""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from multicourse.courses import CorruptionRates
from multicourse.encoder import EncoderConfig, Model
from multicourse.toycorpus import generate_corpus
from multicourse.trainer import TrainConfig, load_corpus_sequences, train
from multicourse.vocab import build_vocab
import tempfile, os


def build_setup(tmp):
    corpus_path = os.path.join(tmp, "toy.txt")
    with open(corpus_path, "w") as fh:
        fh.write("\n".join(generate_corpus(1000, seed=7)) + "\n")
    vocab = build_vocab(corpus_path, 4096)
    seqs = load_corpus_sequences(corpus_path, vocab, 32)
    return vocab, seqs


def encoder_cfg(vocab):
    return EncoderConfig(vocab_size=len(vocab), hidden_size=48, generator_layers=1,
                         discriminator_layers=2, attention_heads=4, ffn_inner_size=96,
                         max_seq_len=32, dropout_rate=0.1)


def run(vocab, seqs, seed, steps=2000, **switches):
    cfg = TrainConfig(total_steps=steps, warmup_steps=100, batch_size=12, seed=seed,
                      **switches)
    model = Model(encoder_cfg(vocab), seed=seed)
    t0 = time.time()
    records = train(model, seqs, cfg, CorruptionRates(0.15, 0.15, 0.15))
    dt = time.time() - t0
    return records, dt


def main():
    with tempfile.TemporaryDirectory() as tmp:
        vocab, seqs = build_setup(tmp)
        print(f"|V| = {len(vocab)}, ln|V| = {np.log(len(vocab)):.3f}, {len(seqs)} sequences")

        off = dict(std_course=False, itd_course=False, re_mlm=False, re_rtd=False,
                   re_slm=False, re_std=False)

        for seed in (11, 12, 13):
            rec_rtd, dt = run(vocab, seqs, seed, **off)
            acc_rtd = np.mean([r.replace_accuracy for r in rec_rtd[-200:]
                               if r.replace_accuracy is not None])
            rec_re, dt2 = run(vocab, seqs, seed, **{**off, "re_mlm": True, "re_rtd": True})
            acc_re = np.mean([r.replace_accuracy for r in rec_re[-200:]
                              if r.replace_accuracy is not None])
            print(f"seed {seed}: rtd-only acc {acc_rtd:.4f} ({dt:.0f}s) | "
                  f"+re-rtd acc {acc_re:.4f} ({dt2:.0f}s) | "
                  f"rate {rec_rtd[0].replace_rate:.3f}->{rec_rtd[-1].replace_rate:.3f}")

        rec_itd, dt = run(vocab, seqs, 11, **{**off, "itd_course": True})
        floors = [(r.d_nonoriginal / r.d_corrupted, r.itd_nonoriginal / r.itd_positions)
                  for r in rec_itd if r.itd_positions]
        viol = sum(1 for frac, bound in floors if frac < bound)
        print(f"itd run ({dt:.0f}s): floor violations {viol}/{len(floors)}; "
              f"final d-frac {floors[-1][0]:.3f} vs bound {floors[-1][1]:.3f}")

        rec_full, dt = run(vocab, seqs, 21)
        t0 = np.mean([r.total_loss for r in rec_full[:1]])
        t2k = rec_full[-1].total_loss
        mlm = rec_full[-1].losses["mlm"]
        print(f"full run ({dt:.0f}s): total {t0:.1f} -> {t2k:.1f} "
              f"(ratio {t2k / t0:.3f}); mlm@2k {mlm:.3f} vs ln|V| {np.log(len(vocab)):.3f}")


if __name__ == "__main__":
    main()
