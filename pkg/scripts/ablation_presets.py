"""Run the four labeling presets on one synthetic corpus and compare them.

    python3 scripts/ablation_presets.py --out runs/ablation --n-segments 2000

For each preset: yield funnel, accepted hours, exact-match precision and
character error rate of the accepted labels against the hidden references.
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from pramana.evalharness import evaluate, report_table
from pramana.pipeline import PRESETS, ablation_preset, load_config, run_pipeline
from pramana.synthcorpus import SynthConfig, generate, load_references
from pramana.textnorm import levenshtein, normalize


def label_quality(output, refs):
    exact = edits = chars = n = 0
    with open(output, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            if "accepted_text" not in row:
                continue
            label, ref = normalize(row["accepted_text"]), normalize(refs[row["id"]])
            n += 1
            exact += label == ref
            edits += levenshtein(ref, label)
            chars += len(ref)
    return n, (exact / n if n else float("nan")), (edits / chars if chars else float("nan"))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-segments", type=int, default=1000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out)
    corpus = generate(SynthConfig(seed=args.seed, n_segments=args.n_segments), out / "corpus")
    base = load_config(corpus.pipeline_config)
    refs = load_references(corpus.root)

    print(f"{'preset':<14} {'in h':>8} {'agree h':>8} {'filter h':>8} {'n':>6} {'prec':>7} {'cer':>7}")
    outputs = {}
    for name in PRESETS:
        cfg = replace(ablation_preset(name, base), workers=args.workers)
        path = out / f"{name}.jsonl"
        report = run_pipeline(cfg, corpus.input, path)
        n, prec, cer = label_quality(path, refs)
        outputs[name] = path
        print(f"{name:<14} {report.hours_input:8.3f} {report.hours_after_agreement:8.3f} "
              f"{report.hours_after_filter:8.3f} {n:6d} {prec:7.4f} {cer:7.4f}")

    # per-domain label WER, accepted segments only
    accepted_refs = out / "accepted_refs.jsonl"
    pn_ids = {json.loads(l)["id"] for l in open(outputs["PN"], encoding="utf-8") if "accepted_text" in l}
    with open(corpus.reference, encoding="utf-8") as src, open(accepted_refs, "w", encoding="utf-8") as dst:
        dst.writelines(l for l in src if json.loads(l)["id"] in pn_ids)
    if pn_ids:
        print()
        print(report_table(evaluate(accepted_refs, {"PN": outputs["PN"]}), by_duration=False), end="")


if __name__ == "__main__":
    main()
