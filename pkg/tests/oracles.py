"""Independent brute-force oracles used to verify the production code.

These are written deliberately differently from the library: plain
frame-by-frame scans with no indexing or early exits, and dict-based
arithmetic for the agreement statistics. They stay in the test tree and
never share code paths with what they check.
"""

from __future__ import annotations


def oracle_match(structure, catalog):
    """Slot-compatibility check, one frame at a time.

    Returns (verdict, [(frame_id, specificity), ...]) ranked by
    specificity then catalog position.
    """
    compatible = []
    for position, frame in enumerate(catalog.frames):
        ok = True
        points = 0
        for slot in ("hero", "villain", "victim"):
            allowed = getattr(frame, slot)
            value = getattr(structure, slot)
            if allowed is None:
                continue
            if value == "None" or value not in allowed:
                ok = False
            else:
                points += 1
        for slot in ("focus", "conflict", "story"):
            value = getattr(structure, slot)
            if value is None:
                continue
            if getattr(frame, slot) != value:
                ok = False
            else:
                points += 1
        if ok:
            compatible.append((frame.frame_id, points, position))
    compatible.sort(key=lambda item: (-item[1], item[2]))
    if not compatible:
        verdict = "NO_MATCH"
    else:
        best = compatible[0][1]
        verdict = "UNIQUE" if sum(1 for c in compatible if c[1] == best) == 1 else "TIED"
    return verdict, [(frame_id, points) for frame_id, points, _ in compatible]


def oracle_alpha(rows):
    """Krippendorff's alpha from an explicit coincidence matrix.

    `rows` is a list of per-item label tuples with None for missing.
    """
    weighted_pairs = []
    for row in rows:
        values = [v for v in row if v is not None]
        m = len(values)
        if m < 2:
            continue
        for i in range(m):
            for j in range(m):
                if i != j:
                    weighted_pairs.append((values[i], values[j], 1.0 / (m - 1)))
    labels = sorted({a for a, _, _ in weighted_pairs} | {b for _, b, _ in weighted_pairs})
    o = {(a, b): 0.0 for a in labels for b in labels}
    for a, b, w in weighted_pairs:
        o[(a, b)] += w
    n_c = {a: sum(o[(a, b)] for b in labels) for a in labels}
    n = sum(n_c.values())
    d_obs = sum(o[(a, b)] for a in labels for b in labels if a != b) / n
    d_exp = sum(n_c[a] * n_c[b] for a in labels for b in labels if a != b) / (n * (n - 1))
    return 1.0 - d_obs / d_exp


def oracle_gold_counts(gold):
    """Direct per-class gold counting, for confusion row-sum checks."""
    counts = {}
    for label in gold:
        counts[label] = counts.get(label, 0) + 1
    return counts
