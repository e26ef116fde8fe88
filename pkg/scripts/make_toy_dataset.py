"""Write the bundled synthetic toy dataset (8 scenes, 64x64) under data/toy."""

import argparse

from ect.toy import write_toy_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default="data/toy")
    parser.add_argument("--count", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    ids = write_toy_dataset(args.root, count=args.count, seed=args.seed)
    print(f"wrote {len(ids)} scenes to {args.root}")


if __name__ == "__main__":
    main()
