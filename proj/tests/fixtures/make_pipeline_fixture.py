"""Generates the 50-document pipeline fixture, mock LLM responses and the
hand-counted expectations (stability, histogram, per-stratum split sizes).

Run from the repository root: python3 tests/fixtures/make_pipeline_fixture.py
"""
import json
import random
from collections import Counter
from pathlib import Path

OUT = Path(__file__).parent / "pipeline"
rng = random.Random(20240611)

PHRASES = [
    ("Stand with our brave heroes", "flag-waving"),
    ("They are nothing but traitors", "name_calling"),
    ("Only fools trust the mainstream media", "doubt"),
    ("Wake up before it is too late", "appeal_to_fear_prejudice"),
    ("Everyone already knows the truth", "bandwagon"),
    ("This is the worst disaster in history", "exaggeration"),
    ("Either you are with us or against us", "black-and-white_fallacy"),
    ("Make our country strong again", "slogans"),
    ("Experts agree with every word", "appeal_to_authority"),
    ("What about their crimes", "whataboutism"),
    ("Enough said", "thought-terminating_cliches"),
    ("Crooked liars everywhere", "loaded_language"),
]


def fold(s):
    return " ".join(s.split()).lower()


def answer(spans, global_label=None):
    if not spans:
        return {"spans": []}
    return {
        "spans": [{"span": s, "explanation": "marked as " + l, "local_label": l} for s, l in spans],
        "global_label": global_label or spans[0][1],
    }


docs, mock, runs_by_doc = [], {}, {}
for i in range(56):
    a, b = rng.sample(range(len(PHRASES)), 2)
    (pa, la), (pb, lb) = PHRASES[a], PHRASES[b]
    body = f"Post {i:02d}: {pa}. {pb}!"
    raw = f"@reader{i} {body} https://t.co/p{i}"
    positive = i < 50
    docs.append({"id": f"p{i:02d}", "text": raw, "binary_propaganda": positive})
    if not positive:
        continue

    base = [(pa, la), (pb, lb)]
    kind = i % 10
    if kind == 9:
        runs = [answer([])] * 5
    else:
        # Alternatives perturb different facets.
        relabel = answer([(pa, la), (pb, PHRASES[(b + 1) % len(PHRASES)][1])])
        shorter = answer([(pa, la)])
        other_global = answer(base, lb)
        casefold = answer([(pa.upper(), la), (pb, lb)])
        alternatives = [relabel, shorter, other_global, casefold, answer([])]
        agree = [5, 4, 4, 3, 3, 2, 5, 4, 3][kind]
        runs = [answer(base)] * agree
        while len(runs) < 5:
            runs.append(rng.choice(alternatives))
        rng.shuffle(runs)
    contents = [json.dumps(r) for r in runs]
    if i == 7:
        contents.insert(2, "this is not json")
    if i == 13:
        contents[0] = "```json\n" + contents[0] + "\n```"
    mock[body] = contents
    runs_by_doc[f"p{i:02d}"] = runs


def key(r, facet):
    if facet == "global_label":
        return r.get("global_label", "")
    if facet == "local_label":
        return tuple(sorted(s["local_label"] for s in r["spans"]))
    return tuple(sorted(fold(s["span"]) for s in r["spans"]))


stability = {f: {">=3/5": 0, ">=4/5": 0, "5/5": 0} for f in ("local_label", "extracted_spans", "global_label")}
aggregated = {}
for doc_id, runs in runs_by_doc.items():
    for facet in stability:
        top = max(Counter(key(r, facet) for r in runs).values())
        for name, t in ((">=3/5", 3), (">=4/5", 4), ("5/5", 5)):
            stability[facet][name] += top >= t
    counts = Counter(r.get("global_label", "") for r in runs)
    best = max(counts.values())
    winner = next(r for r in runs if counts[r.get("global_label", "")] == best)
    aggregated[doc_id] = winner

histogram = Counter()
strata = Counter()
for r in aggregated.values():
    if r["spans"]:
        histogram[str(min(len(r["spans"]), 5)) if len(r["spans"]) < 5 else "5+"] += 1
        strata[r["global_label"]] += 1


def test_share(n):
    return 0 if n < 2 else max(1, round(0.2 * n))


expected = {
    "documents": 50,
    "ingested_total": len(docs),
    "stability": stability,
    "span_histogram": {k: histogram.get(k, 0) for k in ("1", "2", "3", "4", "5+")},
    "distill_records": sum(strata.values()),
    "split": {l: {"train": n - test_share(n), "test": test_share(n)} for l, n in sorted(strata.items())},
    "mock_requests": sum(len(v) for v in mock.values()),
}

OUT.mkdir(exist_ok=True)
with open(OUT / "raw.jsonl", "w") as f:
    for d in docs:
        f.write(json.dumps(d) + "\n")
with open(OUT / "mock_llm.json", "w") as f:
    json.dump({"responses": mock}, f, indent=1)
with open(OUT / "expected.json", "w") as f:
    json.dump(expected, f, indent=1)
print(json.dumps(expected, indent=1))
