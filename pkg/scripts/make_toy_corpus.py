"""Generate the bundled synthetic corpus and the token-presence probe data."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from multicourse.toycorpus import write_corpus, write_probe_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="data", help="where to write the files")
    parser.add_argument("--sentences", type=int, default=1000)
    parser.add_argument("--probe-examples", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "toy_corpus.txt", args.sentences, seed=args.seed)
    write_probe_dataset(out / "probe_token_presence.tsv", args.probe_examples,
                        seed=args.seed + 4)
    print(f"wrote {out / 'toy_corpus.txt'} and {out / 'probe_token_presence.tsv'}")


if __name__ == "__main__":
    main()
