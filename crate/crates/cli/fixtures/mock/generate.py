"""Regenerate the bundled mock fixture (stimuli, RT responses).

Run from this directory: python3 generate.py
"""
import csv
import math
import random

rng = random.Random(7)

IT_TOPICS = ["il pensiero", "la memoria", "il tempo", "la rabbia", "il corpo", "la mano", "il cuore",
             "la voce", "il sonno", "la pelle", "il ricordo", "la paura", "lo sguardo", "la mente", "il respiro"]
IT_VEHICLES = ["un fiume", "una lama", "un giardino", "una prigione", "un vulcano", "una nuvola",
               "un labirinto", "una piuma", "un motore", "un deserto"]
EN_TOPICS = ["lawyers", "memories", "ideas", "cities", "rumours", "teachers", "dreams", "contracts",
             "children", "deadlines", "friends", "markets", "winters", "promises", "songs"]
EN_VEHICLES = ["sharks", "anchors", "bridges", "storms", "gardens", "mirrors", "weapons", "fires",
               "puzzles", "machines"]

COLUMNS = ["study_id", "item_id", "text", "language", "item_class", "subset", "dimension",
           "human_mean", "n_raters", "scale_min", "scale_max"]


def clamp(v, lo, hi):
    return min(hi, max(lo, v))


def main():
    rows = []
    fam_en = {}
    for i in range(150):
        t, v = IT_TOPICS[i % 15], IT_VEHICLES[i // 15]
        cls = "metaphor" if i % 3 else "literal"
        subset = ("mental" if i % 2 else "physical") if cls == "metaphor" else ""
        latent = rng.gauss(0, 1)
        for dim, shift in [("familiarity", 0.0), ("imageability", 0.5), ("comprehensibility", 0.8)]:
            mean = clamp(4 + 1.2 * (latent * 0.7 + rng.gauss(0, 0.7)) + shift, 1, 7)
            rows.append(["it", f"m{i:03d}", f"{t.capitalize()} è {v}", "Italian", cls, subset, dim,
                         f"{mean:.2f}", 30, 1, 7])
    for i in range(150):
        t, v = EN_TOPICS[i % 15], EN_VEHICLES[i // 15]
        cls = ["metaphor", "literal", "anomalous"][i % 3]
        latent = rng.gauss(0, 1)
        for dim in ["familiarity", "comprehensibility"]:
            mean = clamp(3 + 0.9 * (latent * 0.7 + rng.gauss(0, 0.7)), 1, 5)
            rows.append(["en", f"e{i:03d}", f"{t.capitalize()} are {v}", "English", cls, "", dim,
                         f"{mean:.2f}", 25, 1, 5])
            if dim == "familiarity":
                fam_en[f"e{i:03d}"] = float(f"{mean:.2f}")
    with open("stimuli.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(rows)

    # lexical decision times: 30 subjects x 64 items, log RT falls with familiarity
    items = [f"e{i:03d}" for i in range(64)]
    subj = {s: rng.gauss(0, 0.10) for s in range(30)}
    item = {i: rng.gauss(0, 0.05) for i in items}
    with open("responses_rt.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id", "item_id", "measure"])
        for s in range(30):
            for i in items:
                log_rt = 6.6 - 0.046 * fam_en[i] + subj[s] + item[i] + rng.gauss(0, 0.15)
                w.writerow([f"s{s:02d}", i, f"{math.exp(log_rt):.1f}"])


if __name__ == "__main__":
    main()
