"""Writes the two vote fixtures used by the acceptance tests.

Each file is built from an agreement histogram (split, partial, complete) and a
count of A-winners per class. Kappa is computed here with exact rationals so the
Rust implementation is checked against an independent computation.
"""
import csv
from fractions import Fraction
from itertools import product

TAGS = ["pixel_sharpness", "motion_smoothness", "object_consistency", "visual_concept",
        "amount_of_motion", "spatial_alignment", "temporal_alignment"]
MAJ = {"split": 3, "partial": 4, "complete": 5}


def counts(hist, a_wins):
    rows = []
    for cls in ("split", "partial", "complete"):
        m = MAJ[cls]
        rows += [(m, 5 - m)] * a_wins[cls] + [(5 - m, m)] * (hist[cls] - a_wins[cls])
    return rows


def kappa(rows):
    n, items = 5, len(rows)
    p_bar = sum(Fraction(a * (a - 1) + b * (b - 1), n * (n - 1)) for a, b in rows) / items
    pa = Fraction(sum(a for a, _ in rows), n * items)
    p_e = pa * pa + (1 - pa) * (1 - pa)
    return (p_bar - p_e) / (1 - p_e)


def allocate(hist, target):
    best = None
    half = {k: v // 2 for k, v in hist.items()}
    rng = range(-12, 13)
    for ds, dp, dc in product(rng, rng, rng):
        a = {"split": half["split"] + ds, "partial": half["partial"] + dp, "complete": half["complete"] + dc}
        if any(not 0 <= a[k] <= hist[k] for k in a):
            continue
        err = abs(float(kappa(counts(hist, a))) - target)
        key = (err > 2e-4, abs(ds) + abs(dp) + abs(dc), err)
        if best is None or key < best[0]:
            best = (key, a)
    return best[1]


def write(path, prefix, hist, a_wins, tags_for):
    interleaved = []
    for cls in ("split", "partial", "complete"):
        m = MAJ[cls]
        for i in range(hist[cls]):
            winner = "A" if i < a_wins[cls] else "B"
            interleaved.append((cls, m, winner))
    # Deterministic shuffle so classes are mixed in the file.
    order = sorted(range(len(interleaved)), key=lambda i: (i * 7919) % len(interleaved))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["item_id", "rater", "choice", "reasons"])
        for item, idx in enumerate(order):
            cls, m, winner = interleaved[idx]
            loser = "B" if winner == "A" else "A"
            for r in range(5):
                choice = winner if r < m else loser
                w.writerow([f"{prefix}{item:03d}", f"r{r + 1}", choice, ";".join(tags_for(item, r))])
    return [(m, 5 - m) if win == "A" else (5 - m, m) for _, m, win in interleaved]


def juice_tags(item, rater):
    first = TAGS[(item + rater) % 5]
    if (item * 3 + rater) % 4 == 0:
        return [first, TAGS[5 + (item + rater) % 2]]
    return [first]


def naive_tags(item, rater):
    return ["visual_concept"]


if __name__ == "__main__":
    for name, prefix, hist, target, tags in [
        ("votes_naive.csv", "n", {"split": 184, "partial": 106, "complete": 17}, 0.004, naive_tags),
        ("votes_juice.csv", "j", {"split": 101, "partial": 89, "complete": 90}, 0.31, juice_tags),
    ]:
        a = allocate(hist, target)
        rows = write(name, prefix, hist, a, tags)
        k = kappa(rows)
        print(f"{name}: items={len(rows)} a_wins={a} kappa={float(k):.17g} ({k})")
