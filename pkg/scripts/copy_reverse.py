"""Fit the translation model to synthetic copy and reverse corpora.

    python scripts/copy_reverse.py --seed 0 --out runs/copy_reverse.json
"""
import argparse
import json

from coveforge.experiments import run_mt_task


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=200)
    ap.add_argument("--out", help="optional JSON summary path")
    args = ap.parse_args()
    rows = []
    for kind, epochs in (("copy_mt", 50), ("reverse_mt", 100)):
        run = run_mt_task(kind, size=args.size, epochs=epochs, seed=args.seed)
        rows.append({"kind": kind, "epochs": run.epochs_run, "token_accuracy": run.token_accuracy,
                     "exact_match": run.exact_match, "seconds": round(run.seconds, 1),
                     "accuracy_trace": run.log.values("valid", "token_accuracy")})
        print(f"{kind:<11} epochs={run.epochs_run:<3} token_acc={run.token_accuracy:.4f} "
              f"exact={run.exact_match:.4f} time={run.seconds:.1f}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
