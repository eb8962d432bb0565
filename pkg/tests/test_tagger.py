import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ontobench.errors import FixtureMissError, ValidationError
from ontobench.ontology import KeywordSet
from ontobench.oracles import CallableOracle
from ontobench.tagger import (
    ExternalTagger,
    SyntheticTrainingInstance,
    TagPrediction,
    baseline_tag,
    evaluate_tagger,
    export_training_data,
    generate_synthetic_instances,
    lcs_length,
    normalized_indel_similarity,
)
from ontobench.units import NON_SCIENTIFIC, KnowledgeUnit, UnitSet, non_scientific_unit


def lcs_dp(a: str, b: str) -> int:
    """Independent oracle: classic row DP, vectorized over the second string."""
    if not a or not b:
        return 0
    bs = np.frombuffer(b.encode("utf-8"), dtype=np.uint8)
    prev = np.zeros(len(bs) + 1, dtype=np.int32)
    for ch in a.encode("utf-8"):
        match = (bs == ch).astype(np.int32)
        tmp = np.maximum(prev[1:], prev[:-1] + match)
        cur = np.maximum.accumulate(np.concatenate(([0], tmp)))
        prev = cur
    return int(prev[-1])


def sim_oracle(a: str, b: str) -> float:
    total = len(a) + len(b)
    return 100.0 if total == 0 else 100.0 * 2 * lcs_dp(a, b) / total


def test_similarity_identity():
    assert normalized_indel_similarity("abc", "abc") == 100.0


def test_similarity_disjoint():
    assert normalized_indel_similarity("", "x") == 0.0


def test_similarity_single_edit():
    assert normalized_indel_similarity("abcd", "abce") == 75.0


def test_similarity_both_empty():
    assert normalized_indel_similarity("", "") == 100.0


def lcs_dp_batch(a: str, bs_matrix: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Row DP vectorized over many equal-width second strings at once."""
    n, width = bs_matrix.shape
    prev = np.zeros((n, width + 1), dtype=np.int32)
    for ch in a.encode("utf-8"):
        match = (bs_matrix == ch).astype(np.int32)
        tmp = np.maximum(prev[:, 1:], prev[:, :-1] + match)
        cur = np.concatenate([np.zeros((n, 1), dtype=np.int32), tmp], axis=1)
        prev = np.maximum.accumulate(cur, axis=1)
    return prev[np.arange(n), lengths]


def test_lcs_exhaustive_small_alphabet():
    alphabet = "abc"
    strings = [""]
    for n in range(1, 7):
        strings += ["".join(t) for t in itertools.product(alphabet, repeat=n)]
    width = 6
    padded = np.zeros((len(strings), width), dtype=np.uint8)
    lengths = np.array([len(s) for s in strings], dtype=np.int64)
    for i, s in enumerate(strings):
        padded[i, : len(s)] = np.frombuffer(s.encode("utf-8"), dtype=np.uint8)
    for a in strings:
        expected = lcs_dp_batch(a, padded, lengths)
        got = np.array([lcs_length(a, b) for b in strings])
        assert np.array_equal(got, expected), a


def test_lcs_random_long_pairs():
    rng = random.Random(123)
    alphabet = "abcdefgh "
    for _ in range(2000):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 64)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 64)))
        assert lcs_length(a, b) == lcs_dp(a, b), (a, b)


@settings(max_examples=150, deadline=None)
@given(st.text(max_size=30), st.text(max_size=30))
def test_similarity_symmetric_and_bounded(a, b):
    s = normalized_indel_similarity(a, b)
    assert s == normalized_indel_similarity(b, a)
    assert 0.0 <= s <= 100.0


# -- baseline tagger ------------------------------------------------------------


KEYWORDS = {
    "chem:anat": KeywordSet("chem:anat", frozenset({"ventricular septum", "aortic arch"})),
    "chem:rxn": KeywordSet("chem:rxn", frozenset({"diels alder", "ring closure"})),
}


def test_baseline_tag_keyword_hit():
    pred = baseline_tag(
        "Describe the Ventricular Septum development stages", KEYWORDS
    )
    assert "chem:anat" in pred.units


def test_baseline_tag_non_scientific_fallback():
    pred = baseline_tag("hello how are you", KEYWORDS)
    assert pred.units == frozenset({NON_SCIENTIFIC})


def test_baseline_tag_tolerates_one_char_typo():
    # 10-char keyword with one substitution: 2*9/(10+10)*100 = 90 >= 85
    kws = {"u": KeywordSet("u", frozenset({"chromatins"}))}
    assert sim_oracle("chromatins", "chrometins") == 90.0
    pred = baseline_tag("a question about chrometins here", kws, threshold=85.0)
    assert "u" in pred.units


def test_baseline_tag_threshold_monotone():
    kws = {"u": KeywordSet("u", frozenset({"chromatins"}))}
    query = "a question about chrometins here"
    lo = baseline_tag(query, kws, threshold=85.0).units
    hi = baseline_tag(query, kws, threshold=95.0).units
    assert hi - {NON_SCIENTIFIC} <= lo - {NON_SCIENTIFIC}


def test_baseline_tag_multi_unit():
    pred = baseline_tag(
        "ventricular septum questions on a diels alder reaction", KEYWORDS
    )
    assert pred.units == frozenset({"chem:anat", "chem:rxn"})


def test_baseline_tag_deterministic():
    q = "ventricular septum and ring closure"
    assert baseline_tag(q, KEYWORDS) == baseline_tag(q, KEYWORDS)


# -- synthetic training data -----------------------------------------------------


def unit_set_for_synth():
    units = [
        KnowledgeUnit("g:a", "Alpha", "g"),
        KnowledgeUnit("g:b", "Beta", "g"),
        KnowledgeUnit("g:empty", "Empty", "g"),
        non_scientific_unit(),
    ]
    keyword_sets = {
        "g:a": KeywordSet("g:a", frozenset({"alpha one", "alpha two", "alpha three"})),
        "g:b": KeywordSet("g:b", frozenset({"beta one", "beta two"})),
        "g:empty": KeywordSet("g:empty", frozenset()),
    }
    return UnitSet(units=units), keyword_sets


def echo_generator():
    def fn(prompt):
        keywords = prompt.split("keywords: ", 1)[1].split(".")[0]
        return f"How do {keywords} interact?"

    return CallableOracle(fn, name="echo")


def test_synth_instances_echo_contains_keywords():
    unit_set, keyword_sets = unit_set_for_synth()
    got = generate_synthetic_instances(unit_set, keyword_sets, 1, 0, echo_generator())
    assert len(got) == 1
    inst = got[0]
    for kw in inst.keywords_used:
        assert kw in inst.query
    assert 1 <= len(inst.gold_units) <= 5


def test_synth_instances_never_sample_empty_keyword_unit():
    unit_set, keyword_sets = unit_set_for_synth()
    got = generate_synthetic_instances(unit_set, keyword_sets, 30, 1, echo_generator())
    for inst in got:
        assert "g:empty" not in inst.gold_units


def test_synth_instances_keywords_come_from_gold_units():
    unit_set, keyword_sets = unit_set_for_synth()
    got = generate_synthetic_instances(unit_set, keyword_sets, 20, 2, echo_generator())
    for inst in got:
        allowed = set()
        for uid in inst.gold_units:
            allowed |= keyword_sets[uid].keywords
        assert set(inst.keywords_used) <= allowed


def test_synth_instances_seed_determinism():
    unit_set, keyword_sets = unit_set_for_synth()
    a = generate_synthetic_instances(unit_set, keyword_sets, 10, 3, echo_generator())
    b = generate_synthetic_instances(unit_set, keyword_sets, 10, 3, echo_generator())
    assert a == b
    c = generate_synthetic_instances(unit_set, keyword_sets, 10, 4, echo_generator())
    assert a != c


def test_synth_instances_partial_on_persistent_failure(caplog):
    unit_set, keyword_sets = unit_set_for_synth()

    def flaky(prompt):
        raise FixtureMissError("offline")

    with caplog.at_level("WARNING"):
        got = generate_synthetic_instances(
            unit_set, keyword_sets, 5, 0, CallableOracle(flaky)
        )
    assert got == []
    assert any("aborting" in r.message for r in caplog.records)


def test_synth_requires_some_keywords():
    unit_set = UnitSet(units=[KnowledgeUnit("g:x", "X", "g"), non_scientific_unit()])
    with pytest.raises(ValidationError):
        generate_synthetic_instances(unit_set, {}, 1, 0, echo_generator())


def test_gold_unit_count_invariant():
    with pytest.raises(ValidationError):
        SyntheticTrainingInstance(
            query="q",
            gold_units=frozenset(f"u{i}" for i in range(6)),
            keywords_used=(),
            persona="p",
            complexity="low",
        )


def test_export_training_data_counts(tmp_path):
    unit_set, keyword_sets = unit_set_for_synth()
    synth = generate_synthetic_instances(unit_set, keyword_sets, 4, 0, echo_generator())
    path = tmp_path / "train.jsonl"
    counts = export_training_data(path, synth, real=[("real question", {"g:a"})])
    assert counts == {"synthetic": 4, "real": 1}
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 5


# -- external tagger ---------------------------------------------------------------


def test_external_tagger_maps_names_to_ids():
    unit_set, _ = unit_set_for_synth()
    oracle = CallableOracle(lambda p: '["Alpha", "nonsense"]')
    ext = ExternalTagger(oracle, unit_set)
    pred = ext.tag("whatever", instance_id="d1")
    assert pred.units == frozenset({"g:a"})


def test_external_tagger_empty_reply_is_non_scientific():
    unit_set, _ = unit_set_for_synth()
    ext = ExternalTagger(CallableOracle(lambda p: "[]"), unit_set)
    assert ext.tag("q").units == frozenset({NON_SCIENTIFIC})


# -- evaluation ---------------------------------------------------------------------


def preds(mapping):
    return [TagPrediction(iid, frozenset(units)) for iid, units in mapping.items()]


def test_evaluate_perfect_predictions():
    gold = {f"i{k}": {"alpha", "beta"} for k in range(10)}
    card = evaluate_tagger(preds({k: {"alpha", "beta"} for k in gold}), gold)
    assert card.macro_f1 == 1.0
    assert card.micro_f1 == 1.0


def test_evaluate_empty_predictions_zero_micro():
    gold = {f"i{k}": {"alpha"} for k in range(5)}
    card = evaluate_tagger(preds({k: {NON_SCIENTIFIC} for k in gold}), gold)
    assert card.micro_f1 == 0.0


def test_evaluate_misaligned_ids():
    with pytest.raises(ValidationError):
        evaluate_tagger(preds({"a": {"x"}}), {"b": {"x"}})


def test_evaluate_fuzzy_match_above_threshold():
    # "anatomical entity" vs "anatomical entities": close enough to exceed 85
    gold = {"i0": {"anatomical entities"}}
    card = evaluate_tagger(preds({"i0": {"anatomical entity"}}), gold)
    assert card.micro_f1 == 1.0


def test_evaluate_strictly_exceeds_threshold():
    # identical length-20 strings differing in 3 chars: sim exactly 85 -> no match
    a = "aaaaaaaaaaaaaaaaabbb"
    b = "aaaaaaaaaaaaaaaaaccc"
    assert sim_oracle(a, b) == 85.0
    card = evaluate_tagger(preds({"i0": {a}}), {"i0": {b}}, threshold=85.0)
    assert card.micro_f1 == 0.0


def test_evaluate_unit_names_resolution():
    gold = {"i0": {"Alpha"}}
    card = evaluate_tagger(
        preds({"i0": {"g:a"}}), gold, unit_names={"g:a": "Alpha"}
    )
    assert card.micro_f1 == 1.0


def test_evaluate_macro_averages_only_gold_units():
    gold = {"i0": {"alpha"}, "i1": {"beta"}}
    # alpha predicted right; beta missed; one spurious gamma prediction
    predictions = preds({"i0": {"alpha", "gamma"}, "i1": set()})
    card = evaluate_tagger(predictions, gold)
    # per-unit: alpha (1,0,0) f1=1; beta (0,0,1) f1=0; gamma only fp, not in gold
    assert card.macro_f1 == pytest.approx(0.5)
    assert card.per_unit_counts["gamma"] == (0, 1, 0)


def exhaustive_best_assignment(pred_names, gold_names, threshold):
    """Oracle: max one-to-one match count over all assignments, sims > threshold."""
    best = 0
    gold_idx = range(len(gold_names))
    for k in range(0, min(len(pred_names), len(gold_names)) + 1):
        for pred_subset in itertools.permutations(range(len(pred_names)), k):
            for gold_subset in itertools.permutations(gold_idx, k):
                ok = all(
                    normalized_indel_similarity(
                        pred_names[p], gold_names[g]
                    ) > threshold
                    for p, g in zip(pred_subset, gold_subset)
                )
                if ok:
                    best = max(best, k)
    return best


def test_greedy_matching_agrees_with_exhaustive_on_small_instances():
    rng = random.Random(99)
    vocab = ["alpha decay", "beta decay", "gamma ray", "delta wave",
             "alpha decey", "beta decoy", "gamma rays", "delta waves"]
    for _ in range(40):
        n_pred = rng.randint(0, 4)
        n_gold = rng.randint(1, 4)
        pred_names = rng.sample(vocab, n_pred)
        gold_names = rng.sample(vocab, n_gold)
        card = evaluate_tagger(
            [TagPrediction("i0", frozenset(pred_names) or frozenset({NON_SCIENTIFIC}))],
            {"i0": set(gold_names)},
        )
        tp = sum(c[0] for c in card.per_unit_counts.values())
        expected = exhaustive_best_assignment(
            sorted(set(pred_names) or {NON_SCIENTIFIC}), sorted(set(gold_names)), 85.0
        )
        assert tp == expected, (pred_names, gold_names)
