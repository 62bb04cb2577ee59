import itertools
import json
import random

import pytest
from hypothesis import given, strategies as st

from webreason.judge import (CORRECT, INCORRECT, UNPARSEABLE, JudgeVerdict, ReportScoreSheet, aggregate_pass1,
                             average_sheets, judge_answer, judge_reports, parse_score_json, parse_verdict,
                             shuffle_order, unpermute)
from webreason.llm import CallableBackend, LLMClient, TransportError
from webreason.prompts import CRITERIA, SLOTS


def client(fn):
    return LLMClient(CallableBackend(fn), max_attempts=1)


def fixed(reply):
    return client(lambda req: reply)


# -- answer verdicts -----------------------------------------------------------

def test_judge_answer_examples():
    v = judge_answer(fixed("Correct"), "q", "34689", "34689", "gaia-1")
    assert (v.task_id, v.verdict) == ("gaia-1", CORRECT)
    assert judge_answer(fixed("The answers match."), "q", "a", "a").verdict == UNPARSEABLE
    assert judge_answer(fixed("  Incorrect\n"), "q", "a", "b").verdict == INCORRECT


def test_judge_prompt_carries_fields():
    prompts = []

    def fn(req):
        prompts.append(req.messages[0].content)
        return "Correct"

    judge_answer(client(fn), "Which year?", "1999", "in 1999")
    assert "Which year?" in prompts[0] and "1999" in prompts[0] and "in 1999" in prompts[0]


def test_transport_failure_is_unparseable():
    def down(req):
        raise TransportError("down")

    v = judge_answer(client(down), "q", "a", "a", "t")
    assert v.verdict == UNPARSEABLE and v.raw == ""


def mutate(rng, base):
    ops = [
        lambda s: s.lower(),
        lambda s: s.upper(),
        lambda s: s + ".",
        lambda s: s + "!",
        lambda s: "**" + s + "**",
        lambda s: "Answer: " + s,
        lambda s: s + " (equivalent)",
        lambda s: s[:-1],
        lambda s: s.replace("c", "C", 1),
        lambda s: '"' + s + '"',
        lambda s: s + "\nBecause both are the same.",
        lambda s: "Not " + s,
    ]
    text = base
    for _ in range(rng.randint(1, 3)):
        text = rng.choice(ops)(text)
    return text


def test_fuzzed_replies_never_pass_grammar():
    rng = random.Random(11)
    checked = 0
    for _ in range(1000):
        text = mutate(rng, rng.choice(["Correct", "Incorrect"]))
        if text.strip() in ("Correct", "Incorrect"):
            continue
        assert parse_verdict(text) == UNPARSEABLE, text
        checked += 1
    assert checked > 900


@given(st.text(max_size=30))
def test_verdict_grammar_property(text):
    got = parse_verdict(text)
    if text.strip() == "Correct":
        assert got == CORRECT
    elif text.strip() == "Incorrect":
        assert got == INCORRECT
    else:
        assert got == UNPARSEABLE


def test_verdict_roundtrip_dict():
    v = JudgeVerdict("t", CORRECT, "Correct", "t:0", "gaia")
    assert JudgeVerdict.from_dict(json.loads(json.dumps(v.to_dict()))) == v


# -- Pass@1 ----------------------------------------------------------------------

def test_pass1_seven_of_ten():
    replies = ["Correct"] * 7 + ["Incorrect", "nope", "Incorrect"]
    verdicts = [judge_answer(fixed(r), "q", "a", "a", f"t{i}") for i, r in enumerate(replies)]
    s = aggregate_pass1(verdicts)
    assert (s.overall, s.correct, s.total) == (0.7, 7, 10)


def test_pass1_splits_and_edges():
    vs = [JudgeVerdict(f"t{i}", v) for i, v in enumerate([CORRECT, CORRECT, CORRECT, INCORRECT, CORRECT, UNPARSEABLE])]
    s = aggregate_pass1(vs, ["gaia"] * 4 + ["hle"] * 2)
    assert s.splits["gaia"]["accuracy"] == 0.75 and s.splits["hle"]["accuracy"] == 0.5
    assert s.overall == pytest.approx(4 / 6)
    assert s.to_csv().splitlines() == ["split,correct,total,accuracy", "gaia,3,4,0.7500", "hle,1,2,0.5000",
                                       "overall,4,6,0.6667"]
    assert aggregate_pass1([JudgeVerdict("a", CORRECT)] * 3).overall == 1.0
    with pytest.raises(ValueError):
        aggregate_pass1([])
    with pytest.raises(ValueError):
        aggregate_pass1(vs, ["gaia"])


# -- listwise scoring ------------------------------------------------------------

def slot_scores(n, base=0.0):
    return {SLOTS[i]: {c: base + i + k / 10 for k, c in enumerate(CRITERIA)} for i in range(n)}


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_every_permutation_round_trips(n):
    systems = [{c: float(10 * s + k) / 10 for k, c in enumerate(CRITERIA)} for s in range(n)]
    for perm in itertools.permutations(range(n)):
        # the judge sees system perm[slot] in slot letter SLOTS[slot]
        shown = {SLOTS[slot]: systems[sys] for slot, sys in enumerate(perm)}
        assert list(unpermute(shown, perm)) == systems


def test_shuffle_order_is_seeded_bijection():
    for seed in range(50):
        perm = shuffle_order(5, seed)
        assert sorted(perm) == list(range(5)) and perm == shuffle_order(5, seed)
    assert len({shuffle_order(5, s) for s in range(50)}) > 10


def score_reply(prompt, n, offset):
    """Score each slot by a number read off the report text it shows."""
    body = {}
    for letter in SLOTS[:n]:
        seg = prompt.split(f"generated by system {letter}:\n", 1)[1]
        value = int(seg.split("REPORT-", 1)[1][:1])
        body[f"System {letter}"] = {c: min(10, value + offset) for c in CRITERIA}
    return "Here you go.\n```json\n" + json.dumps(body, indent=2) + "\n```"


def test_two_judges_averaged_on_true_systems():
    reports = [f"REPORT-{i} text" for i in range(1, 5)]
    judges = {
        "j1": client(lambda r: score_reply(r.messages[0].content, 4, 0)),
        "j2": client(lambda r: score_reply(r.messages[0].content, 4, 3)),
    }
    sheets = judge_reports(judges, "question", reports, seed=7)
    assert [s.judge for s in sheets] == ["j1", "j2"] and all(s.valid for s in sheets)
    assert sheets[0].permutation == shuffle_order(4, 7) and sheets[0].slot_count == 4
    avg = average_sheets(sheets)
    # system i scored i+1 by j1 and i+4 by j2 -> mean i+2.5
    for i, row in enumerate(avg):
        assert all(row[c] == i + 2.5 for c in CRITERIA) and row["overall"] == i + 2.5
    assert average_sheets(sheets[::-1]) == avg


def test_default_seed_from_task_id_and_prompt_slots():
    seen = []

    def fn(req):
        seen.append(req.messages[0].content)
        return score_reply(req.messages[0].content, 2, 0)

    a = judge_reports({"j": client(fn)}, "q", ["REPORT-1", "REPORT-2"], task_id="task-9")
    b = judge_reports({"j": client(fn)}, "q", ["REPORT-1", "REPORT-2"], task_id="task-9")
    assert a[0].seed == b[0].seed and a[0].permutation == b[0].permutation
    assert "System C" not in seen[0] and "A and B" in seen[0]


def test_reask_once_then_invalid():
    calls = []

    def fn(req):
        calls.append(len(req.messages))
        return "I think system A is best."

    (sheet,) = judge_reports({"j": client(fn)}, "q", ["r1", "r2"], seed=1)
    assert calls == [1, 3] and not sheet.valid and sheet.scores == ()
    with pytest.raises(ValueError):
        average_sheets([sheet])


def test_reask_recovers():
    replies = iter(["garbage", json.dumps({f"System {s}": {c: 5 for c in CRITERIA} for s in "AB"})])
    (sheet,) = judge_reports({"j": client(lambda r: next(replies))}, "q", ["r1", "r2"], seed=1)
    assert sheet.valid and sheet.scores[0][CRITERIA[0]] == 5.0


def test_score_json_validation():
    good = {f"System {s}": {c: 5 for c in CRITERIA} for s in "ABC"}
    assert parse_score_json(json.dumps(good), 3)["C"][CRITERIA[3]] == 5.0
    for bad in (dict(good, **{"System C": {c: 11 for c in CRITERIA}}),
                {k: v for k, v in good.items() if k != "System B"},
                dict(good, **{"System A": {CRITERIA[0]: 5}}),
                dict(good, **{"System A": {c: True for c in CRITERIA}})):
        with pytest.raises(ValueError):
            parse_score_json(json.dumps(bad), 3)
    with pytest.raises(ValueError):
        parse_score_json("no json at all", 2)


def test_report_count_bounds_and_sheet_dict():
    with pytest.raises(ValueError):
        judge_reports({}, "q", ["only one"])
    with pytest.raises(ValueError):
        judge_reports({}, "q", ["r"] * 6)
    s = ReportScoreSheet("j", (1, 0), 3, ({"x": 1},) * 2)
    assert s.to_dict()["slot_count"] == 2
