#!/usr/bin/env python3
"""Generate the bundled synthetic fixture: a 3-graph ontology, a
200-instance corpus, scripted-oracle routing tables, a pipeline config and
a requirement.  Everything is derived from fixed seeds so regenerating the
fixture is reproducible; the golden outputs pinned by the test suite are
produced by running the CLI once over these files.

Usage: python3 tools/make_fixtures.py [--out tests/fixtures]
"""

from __future__ import annotations

import argparse
import json
import random
import re
from pathlib import Path

SEED = 12345

GRAPHS = {
    "orgchem": {
        "root": ("orgchem", "organic chemistry"),
        "branches": {
            "rxn": ("reaction mechanisms", [
                "diels alder", "ring closure", "sigmatropic shift",
                "electrocyclic opening", "cycloaddition pathway",
                "radical propagation", "nucleophilic substitution",
                "elimination kinetics", "carbocation rearrangement",
                "transition state", "concerted mechanism", "orbital symmetry",
            ]),
            "arom": ("aromatic systems", [
                "benzene ring", "aromatic stabilization", "huckel rule",
                "pi conjugation", "aromatic substitution", "fused arenes",
                "aryl coupling", "resonance energy", "aromatic nitration",
                "heteroaromatic core", "annulene strain", "aromatic stacking",
            ]),
            "poly": ("polymer chemistry", [
                "chain polymerization", "monomer feed", "crosslink density",
                "glass transition", "radical initiator", "step growth",
                "copolymer blocks", "chain transfer", "living polymerization",
                "polymer backbone", "tacticity control", "molar mass",
            ]),
            "spec": ("spectroscopy methods", [
                "nmr shift", "infrared band", "mass fragment",
                "uv absorbance", "coupling constant", "chemical shift",
                "spin multiplet", "raman band", "spectral overlap",
                "peak integration", "isotope pattern", "baseline drift",
            ]),
        },
    },
    "biomed": {
        "root": ("biomed", "biomedicine"),
        "branches": {
            "anat": ("anatomical entities", [
                "ventricular septum", "aortic arch", "hepatic lobule",
                "renal cortex", "alveolar sac", "synovial joint",
                "cranial nerve", "portal vein", "cardiac valve",
                "lymph node", "spinal ganglion", "mucosal lining",
            ]),
            "gene": ("genetic mechanisms", [
                "penetrance estimate", "recessive allele", "linkage map",
                "codon usage", "frameshift mutation", "promoter region",
                "epistatic interaction", "haplotype block",
                "meiotic recombination", "germline variant",
                "exon splicing", "silencer element",
            ]),
            "vir": ("viral processes", [
                "capsid assembly", "viral envelope", "reverse transcription",
                "host receptor", "genome packaging", "lytic cycle",
                "latency switch", "antigenic drift", "replication complex",
                "budding release", "neutralizing antibody", "tropism shift",
            ]),
        },
    },
    "matsci": {
        "root": ("matsci", "materials science"),
        "branches": {
            "cryst": ("crystal structures", [
                "unit cell", "bravais lattice", "miller indices",
                "close packing", "crystal habit", "polymorph screen",
                "lattice parameter", "space group", "crystal twin",
                "diffraction pattern", "crystallographic axis",
                "coordination polyhedron",
            ]),
            "defect": ("lattice defects", [
                "vacancy cluster", "dislocation loop", "grain boundary",
                "point defect", "stacking fault", "interstitial atom",
                "defect migration", "vacancy diffusion", "edge dislocation",
                "screw dislocation", "defect annealing", "frenkel pair",
            ]),
        },
    },
}

QUERY_TEMPLATES = [
    "How does {k1} affect {k2} during routine analysis?",
    "Explain why {k1} matters when studying {k2}.",
    "In an experiment involving {k1}, what role does {k2} play?",
    "Compare the influence of {k1} and {k2} on measurement outcomes.",
    "What happens to {k1} when {k2} changes under standard conditions?",
]

SINGLE_TEMPLATES = [
    "Describe the significance of {k1} in modern research.",
    "What is the accepted interpretation of {k1}?",
    "Summarize the practical consequences of {k1} for lab work.",
]

ANSWER_TEMPLATES = [
    "It shifts the outcome because {k1} stabilizes the intermediate state.",
    "The effect is driven mostly by {k1}. Controlled trials report consistent shifts across repeated measurements.",
    "Careful studies show that {k1} dominates the early phase, while secondary contributions accumulate later. The net result is a measurable and reproducible change that practitioners account for during calibration.",
    "Standard references attribute the observed behavior to {k1} and recommend verifying it with replicate measurements.",
]

NON_SCIENTIFIC = [
    ("what time does the game start tonight", "Usually around eight pm local time."),
    ("best toppings for a homemade pizza", "Mushrooms and basil work well together."),
    ("how do i renew a library card", "Visit the front desk with a photo id."),
    ("good playlist for a road trip", "Mix upbeat songs with a few slow ones."),
    ("tips for watering houseplants", "Water when the top inch of soil is dry."),
    ("which bus goes downtown on sundays", "The number twelve runs hourly on sundays."),
]

REQUIREMENT = {
    "requirement_id": "aromatic-reactions",
    "text": "Evaluate understanding of aromatic ring systems and reaction mechanisms in organic chemistry.",
    "description": (
        "Generate questions that test reasoning about aromatic ring systems and "
        "organic reaction mechanisms, including substitution pathways, orbital "
        "considerations and the behavior of conjugated systems. Emphasize "
        "mechanistic reasoning over memorized facts."
    ),
}


def write_ontology(out: Path) -> dict[str, list[str]]:
    onto_dir = out / "ontology"
    onto_dir.mkdir(parents=True, exist_ok=True)
    unit_keywords: dict[str, list[str]] = {}
    for graph_id, spec in GRAPHS.items():
        root_id, root_name = spec["root"]
        lines = [f"{root_id}\t{root_name}\t"]
        for branch_id, (branch_name, keywords) in spec["branches"].items():
            lines.append(f"{branch_id}\t{branch_name}\t{root_id}")
            for i, kw in enumerate(keywords):
                lines.append(f"{branch_id}_l{i:02d}\t{kw}\t{branch_id}")
            unit_keywords[branch_name] = keywords
        (onto_dir / f"{graph_id}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return unit_keywords


def build_corpus(rng: random.Random, unit_keywords: dict[str, list[str]]):
    """200 instances: heavy coverage of the requirement-relevant units,
    medium coverage elsewhere, plus non-scientific chatter and a few
    instances that already look like MCQs."""
    groups = [
        (["aromatic systems"], 20),
        (["reaction mechanisms"], 20),
        (["aromatic systems", "reaction mechanisms"], 20),
        (["spectroscopy methods"], 14),
        (["polymer chemistry"], 12),
        (["spectroscopy methods", "anatomical entities"], 7),
        (["polymer chemistry", "crystal structures"], 7),
        (["anatomical entities"], 14),
        (["genetic mechanisms"], 12),
        (["viral processes"], 12),
        (["crystal structures"], 12),
        (["lattice defects"], 10),
        (["genetic mechanisms", "viral processes"], 6),
    ]
    instances = []
    counter = 0

    def next_id():
        nonlocal counter
        iid = f"d{counter:04d}"
        counter += 1
        return iid

    for unit_names, count in groups:
        for _ in range(count):
            kws = []
            for name in unit_names:
                kws.extend(rng.sample(unit_keywords[name], 1 if len(unit_names) > 1 else 2))
            if len(kws) >= 2:
                template = rng.choice(QUERY_TEMPLATES)
                query = template.format(k1=kws[0], k2=kws[1])
            else:
                query = rng.choice(SINGLE_TEMPLATES).format(k1=kws[0])
            answer = rng.choice(ANSWER_TEMPLATES).format(k1=kws[0])
            instances.append({
                "id": next_id(), "query": query, "answer": answer,
                "source": "synthetic",
            })
    # five instances already in MCQ form (passthrough path)
    for j in range(5):
        kws = rng.sample(unit_keywords["aromatic systems"], 4)
        stem = (
            f"Which concept best explains trend {j} in conjugated systems?\n"
            f"A. {kws[0]}\nB. {kws[1]}\nC. {kws[2]}\nD. {kws[3]}"
        )
        instances.append({
            "id": next_id(), "query": stem, "answer": "B",
            "source": "mcq-pool",
        })
    for query, answer in NON_SCIENTIFIC * 5:
        instances.append({
            "id": next_id(), "query": query, "answer": answer,
            "source": "chatter",
        })
    return instances[:200] if len(instances) > 200 else instances


def write_routes(out: Path, instances, unit_keywords, rng: random.Random) -> None:
    routes_dir = out / "routes"
    routes_dir.mkdir(parents=True, exist_ok=True)

    def dump(name, routes):
        with open(routes_dir / name, "w", encoding="utf-8") as fh:
            for pattern, reply in routes:
                fh.write(json.dumps({"pattern": pattern, "reply": reply}) + "\n")

    # granularity classifier: roots coarse, branches moderate, rest fine
    classifier = []
    for spec in GRAPHS.values():
        classifier.append(
            (f"Input: term: {re.escape(spec['root'][1])}\\.", "(too coarse); too broad for one subfield.")
        )
        for branch_name, _ in spec["branches"].values():
            classifier.append(
                (f"Input: term: {re.escape(branch_name)}\\.", "(moderate); chapter-scale subfield.")
            )
    classifier.append((".*", "(too fine); narrower than a subfield."))
    dump("classifier.jsonl", classifier)

    # rankers: three orderings over unit names, keyed on the requirement
    anchor = re.escape("aromatic ring systems")
    rankings = [
        ["aromatic systems", "reaction mechanisms", "polymer chemistry",
         "spectroscopy methods", "crystal structures"],
        ["reaction mechanisms", "aromatic systems", "spectroscopy methods",
         "polymer chemistry"],
        ["aromatic systems", "reaction mechanisms", "spectroscopy methods",
         "anatomical entities", "polymer chemistry"],
    ]
    for i, ranking in enumerate(rankings):
        dump(f"ranker{i}.jsonl", [(anchor, json.dumps(ranking))])

    # judges: relevant when the instance question mentions requirement-core
    # keywords; the third judge is stricter
    arom = unit_keywords["aromatic systems"]
    rxn = unit_keywords["reaction mechanisms"]
    spec_kws = unit_keywords["spectroscopy methods"]

    def yes_pattern(keywords):
        alt = "|".join(re.escape(k) for k in keywords)
        return f"Instance question: [^\\n]*({alt})"

    judge0 = [(yes_pattern(arom + rxn), "yes"), (".*", "no")]
    judge1 = [(yes_pattern(arom + rxn + spec_kws[:6]), "yes"), (".*", "no")]
    judge2 = [(yes_pattern(arom + rxn[:6]), "yes"), (".*", "no")]
    dump("judge0.jsonl", judge0)
    dump("judge1.jsonl", judge1)
    dump("judge2.jsonl", judge2)

    # MCQ generator: one route per instance plus a query-generation fallback
    answers = [inst["answer"] for inst in instances]
    mcq_routes = []
    for idx, inst in enumerate(instances):
        if inst["source"] == "mcq-pool":
            reply = json.dumps({"query": inst["query"], "answer": inst["answer"]})
        else:
            distractors = []
            probe = idx
            while len(distractors) < 3:
                probe = (probe + 7) % len(answers)
                cand = answers[probe]
                if cand != inst["answer"] and cand not in distractors:
                    distractors.append(cand)
            options = distractors[:]
            slot = rng.randrange(4)
            options.insert(slot, inst["answer"])
            labels = "ABCD"
            stem_lines = [inst["query"]] + [
                f"{labels[i]}. {text}" for i, text in enumerate(options)
            ]
            reply = json.dumps({
                "query": "\n".join(stem_lines),
                "answer": labels[slot],
            })
        mcq_routes.append((re.escape("Raw problem: Question: " + inst["query"][:70]), reply))
    mcq_routes.append(
        ("Generate a user query containing the following keywords",
         "How do the listed concepts interact in a typical experiment?")
    )
    dump("generator.jsonl", mcq_routes)

    # two recorded models for the evaluate path: strong (answers with the
    # key via the benchmark file at test time) is built in-test; here we
    # provide one trivial always-A model for config completeness
    dump("model_always_a.jsonl", [(".*", "A")])


def write_config(out: Path) -> None:
    config = {
        "paths": {
            "ontology_dir": "ontology",
            "corpus_files": ["corpus.jsonl"],
            "unit_file": "out/units.tsv",
            "index_file": "out/index.tsv",
            "out_dir": "out",
        },
        "params": {
            "k1": 4,
            "k2": 20,
            "trials": 50,
            "seed": 0,
            "domain": "organic chemistry",
        },
        "oracles": {
            "classifier": {"kind": "scripted", "routes": "routes/classifier.jsonl"},
            "rankers": [
                {"kind": "scripted", "routes": "routes/ranker0.jsonl", "name": "ranker0"},
                {"kind": "scripted", "routes": "routes/ranker1.jsonl", "name": "ranker1"},
                {"kind": "scripted", "routes": "routes/ranker2.jsonl", "name": "ranker2"},
            ],
            "judges": [
                {"kind": "scripted", "routes": "routes/judge0.jsonl", "name": "judge0"},
                {"kind": "scripted", "routes": "routes/judge1.jsonl", "name": "judge1"},
                {"kind": "scripted", "routes": "routes/judge2.jsonl", "name": "judge2"},
            ],
            "generator": {"kind": "scripted", "routes": "routes/generator.jsonl"},
            "models": {
                "always-a": {"kind": "scripted", "routes": "routes/model_always_a.jsonl"},
            },
        },
    }
    (out / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "requirement.json").write_text(
        json.dumps(REQUIREMENT, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="tests/fixtures", type=Path)
    args = parser.parse_args()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    unit_keywords = write_ontology(out)
    instances = build_corpus(rng, unit_keywords)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst, sort_keys=True) + "\n")
    write_routes(out, instances, unit_keywords, rng)
    write_config(out)
    print(f"fixture written to {out}: {len(instances)} instances")


if __name__ == "__main__":
    main()
