"""Regenerate the replay fixtures under tests/fixtures/.

Each case is a scripted "model" (one function answering every backbone and
assistant request by recognising the prompt) driven through the real
orchestrator in record mode.  The web side is a hand-built fixture store.
Running this twice produces identical files.

    python tests/fixtures/build_fixtures.py
"""

from __future__ import annotations

import io
import json
import re
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from webreason.judge import judge_answer
from webreason.llm import (EOS, STOP_HIT, CallableBackend, GenerationOutcome, LLMClient, RecordingBackend, Request,
                           Usage, estimate_tokens)
from webreason.orchestrator import REPORT, Orchestrator, TaskSpec, write_trajectories
from webreason.protocol import DEFAULT_MARKERS as M, Tool, parse
from webreason.web import FixtureStore, SearchHit, WebAccess
from webreason.workshop import headings

ROOT = Path(__file__).resolve().parent
WEB = ROOT / "web"
CASES = ROOT / "cases"
FETCHED_AT = "2025-01-15T00:00:00+00:00"


def q(text: str) -> str:
    return M.wrap(Tool.SEARCH_QUERY, text)


def click(url: str) -> str:
    return M.wrap(Tool.CLICK_LINK, url)


def write(name: str, goal: str) -> str:
    return M.wrap(Tool.WRITE_SECTION, f"{name}\n{goal}")


def edit(instruction: str) -> str:
    return M.wrap(Tool.EDIT_ARTICLE, instruction)


CHECK = M.begin(Tool.CHECK_ARTICLE)


# -- scripted responder ---------------------------------------------------------

@dataclass
class Script:
    main: list[str] = field(default_factory=list)
    explorer: dict[str, list[str]] = field(default_factory=dict)
    intents: dict[str, str] = field(default_factory=dict)
    click_intents: dict[str, str] = field(default_factory=dict)
    summaries: dict[str, str] = field(default_factory=dict)
    sections: dict[str, str] = field(default_factory=dict)
    edits: dict[str, Callable[[str], str]] = field(default_factory=dict)
    plan: str = ""
    verdicts: dict[str, str] = field(default_factory=dict)  # predicted answer -> judge reply


PAUSES = [M.end(Tool.SEARCH_RESULT), M.end(Tool.CLICK_RESULT), M.end(Tool.CHECK_ARTICLE),
          M.end(Tool.WRITE_SECTION), M.end(Tool.EDIT_ARTICLE)]


def _between(text: str, start: str, end: str) -> str:
    i = text.index(start) + len(start)
    return text[i:text.index(end, i)]


def responder(script: Script) -> Callable[[Request], GenerationOutcome]:
    def respond(req: Request) -> GenerationOutcome:
        prompt = req.messages[0].content
        partial = req.messages[-1].content if req.continuation else ""
        if prompt.startswith("You are a web explorer"):
            query = re.search(r'for the search query "(.*)" and the search intent\.$', prompt, re.S).group(1)
            segments = script.explorer[query]
            text = segments[sum(partial.count(p) for p in PAUSES)]
        elif prompt.startswith(("You are a reasoning assistant", "You are a research assistant")):
            text = script.main[sum(partial.count(p) for p in PAUSES)]
        elif prompt.startswith("Based on the previous thoughts below, provide the detailed intent of the latest search"):
            text = script.intents[parse(prompt).latest_payload(Tool.SEARCH_QUERY)]
        elif prompt.startswith("Based on the previous thoughts below, provide the detailed intent of the latest click"):
            text = script.click_intents[parse(prompt).latest_payload(Tool.CLICK_LINK)]
        elif prompt.startswith("Please read the web page below"):
            text = script.summaries[_between(prompt, "**Web page (", "):**")]
        elif prompt.startswith("You are a research paper writing assistant"):
            text = script.sections[_between(prompt, 'comprehensive "', '" section')]
        elif prompt.startswith("You are a professional article editor"):
            instruction = _between(prompt, "**Edit instruction:**\n", "\n\n**Current article:**")
            article = _between(prompt, "**Current article:**\n", "\n\nPlease output the complete modified article")
            text = "Here is the revised article.\n\n```markdown\n" + script.edits[instruction](article) + "\n```"
        elif prompt.startswith("Please help me create a detailed plan"):
            text = script.plan
        elif prompt.startswith("You are an evaluation assistant"):
            text = script.verdicts[_between(prompt, "Predicted Answer:\n\n", "\n\nAre these answers")]
        else:
            raise AssertionError(f"unrecognised prompt: {prompt[:80]!r}")
        usage = Usage(estimate_tokens(prompt + partial), estimate_tokens(text))
        for stop in req.params.stop_sequences:
            if text.endswith(stop):
                return GenerationOutcome(text, STOP_HIT, stop, usage)
        return GenerationOutcome(text, EOS, None, usage)

    return respond


def hits(*rows: tuple[str, str, str]) -> list[SearchHit]:
    return [SearchHit(i, title, url, snippet) for i, (title, url, snippet) in enumerate(rows, 1)]


def filler_hits(topic: str, host: str, n: int, start: int = 0) -> list[tuple[str, str, str]]:
    return [(f"{topic} resource {i}", f"https://{host}/{topic.lower().replace(' ', '-')}/{i}",
             f"General background on {topic.lower()} (entry {i}).") for i in range(start + 1, start + n + 1)]


def record_case(name: str, task: TaskSpec, script: Script, data: dict) -> dict:
    """Run ``task`` against the scripted responder, recording transcript and trajectory."""
    out = CASES / name
    out.mkdir(parents=True, exist_ok=True)
    backend = RecordingBackend(CallableBackend(responder(script), model="fixture"), out / "transcript.jsonl")
    model = LLMClient(backend)
    orch = Orchestrator(model, model, WebAccess.from_fixtures(WEB))
    if task.mode == REPORT:
        traj, state = orch.write_report(task)
        (out / "report.md").write_text(state.report + "\n", encoding="utf-8")
        data["outline"] = [[h.level, h.title] for h in headings(state.report)]
    else:
        traj = orch.solve(task)
    write_trajectories(out / "trajectory.jsonl", [traj])
    data.update({"task": task.to_dict(), "total_tool_calls": traj.total_tool_calls})
    (out / "case.json").write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return traj.to_dict()


# -- GAIA: three searches, boxed zip code -----------------------------------------

GAIA_Q = ("The clownfish made famous as the title character of Finding Nemo later turned up in the wild after "
          "aquarium releases. According to the USGS, where was this fish recorded as a nonnative species before "
          "2020? Give the five-digit zip codes of those places, comma separated if there are several.")


def gaia(store: FixtureStore) -> None:
    q1 = "USGS Amphiprion ocellaris nonnative sightings pre 2020"
    q2 = "Fred Howard Park St. Petersburg Florida zip code"
    q3 = "Amphiprion ocellaris USGS nonnative sightings before 2020"
    nas = "https://nas.er.usgs.gov/queries/FactSheet.aspx?speciesID=3243"
    store.put_search(q1, hits(
        ("Clown anemonefish (Amphiprion ocellaris) - Species Profile", nas,
         "Nonindigenous occurrences: one record, Florida, 2018."),
        ("Amphiprion ocellaris collection records", "https://nas.er.usgs.gov/queries/CollectionInfo.aspx?SpeciesID=3243",
         "State FL, county Pinellas, locality Fred Howard Park, year 2018."),
        *filler_hits("Clownfish care", "reef.example.org", 8)))
    store.put_page(nas, "# Clown anemonefish\n\nNative range: eastern Indian Ocean and western Pacific.\n\n"
                        "Nonindigenous occurrences: a single specimen was reported in 2018 at Fred Howard Park, "
                        "Pinellas County, Florida. Status: failed (no established population).",
                   "Clown anemonefish - Species Profile", fetched_at=FETCHED_AT)
    store.put_page("https://nas.er.usgs.gov/queries/CollectionInfo.aspx?SpeciesID=3243",
                   "| State | County | Locality | Year |\n| FL | Pinellas | Fred Howard Park | 2018 |",
                   "Collection info", fetched_at=FETCHED_AT)
    store.put_page("https://reef.example.org/clownfish-care/1", "", status=404)
    store.put_search("NAS database Amphiprion ocellaris specimen records by state", hits(
        ("NAS - Specimen list", "https://nas.er.usgs.gov/queries/SpecimenViewer.aspx?SpecimenID=1650683",
         "Amphiprion ocellaris, Pinellas County FL, 2018; no other U.S. records."),
        *filler_hits("Marine invasions", "sea.example.net", 9)))
    park = "https://www.pinellascounty.org/park/05_Fred_Howard.htm"
    store.put_search(q2, hits(
        ("Fred Howard Park - Pinellas County", park, "1700 Sunset Drive, Tarpon Springs, FL 34689."),
        ("Fred Howard Park (Tarpon Springs)", "https://en.wikipedia.org/wiki/Fred_Howard_Park",
         "County park on the Gulf coast in Tarpon Springs, Florida."),
        *filler_hits("Florida parks", "parks.example.com", 8)))
    store.put_page(park, "# Fred Howard Park\n\nAddress: 1700 Sunset Drive, Tarpon Springs, FL 34689\n\n"
                         "Hours: 7 a.m. to sunset.", "Fred Howard Park", fetched_at=FETCHED_AT)
    store.put_search(q3, hits(
        ("Clown anemonefish (Amphiprion ocellaris) - Species Profile", nas,
         "Nonindigenous occurrences: one record, Florida, 2018."),
        *filler_hits("Aquarium trade", "aqua.example.org", 9)))

    script = Script(
        main=[
            "Okay, the fish from Finding Nemo is the clown anemonefish, Amphiprion ocellaris. I should check the "
            "USGS nonindigenous species records for it before 2020 and then turn each location into a zip code.\n\n"
            + q(q1),
            "So there is a single record, at Fred Howard Park in Pinellas County from 2018, but no zip code. "
            "Let me look the park up.\n\n" + q(q2),
            "The park sits in Tarpon Springs, zip 34689. To be safe I will repeat the species search once more "
            "and make sure no other location was missed.\n\n" + q(q3),
            "Still only the one record. With a single location the answer is one zip code.\n\n"
            "**Final Answer**\n\\[ \\boxed{34689} \\]",
        ],
        explorer={
            q1: ["The species profile mentions one Florida record. The collection table should give the locality; "
                 "let me double check there is nothing else.\n\n"
                 + q("NAS database Amphiprion ocellaris specimen records by state"),
                 "The specimen list confirms a single U.S. record.\n\n**Final Information**\n\n"
                 "USGS NAS lists exactly one nonnative record of Amphiprion ocellaris before 2020: Fred Howard "
                 "Park, Pinellas County, Florida (2018). The pages do not give a zip code for the park."],
            q2: ["The county page gives the street address.\n\n**Final Information**\n\n"
                 "Fred Howard Park is at 1700 Sunset Drive, Tarpon Springs, FL 34689 (Pinellas County). "
                 "The zip code is 34689."],
            q3: ["Same profile as before.\n\n**Final Information**\n\n"
                 "Only one nonnative occurrence is recorded before 2020: Fred Howard Park, Pinellas County, "
                 "Florida, 2018. Its zip code is 34689."],
        },
        intents={
            q1: "Find the locations where USGS recorded Amphiprion ocellaris as a nonnative species before 2020.",
            q2: "Find the five-digit zip code of Fred Howard Park in Pinellas County, Florida.",
            q3: "Confirm that no other pre-2020 nonnative locations of Amphiprion ocellaris exist in USGS data.",
        },
    )
    record_case("gaia", TaskSpec(GAIA_Q, task_id="gaia-nemo"), script,
                {"expected_answer": "34689", "expected_calls": 3, "queries": [q1, q2, q3]})


# -- HLE: two searches, arithmetic -------------------------------------------------

HLE_Q = ("Let $\\Sigma_g$ be the closed oriented surface of genus $g$. What is the simplicial volume of "
         "$\\Sigma_{31} \\times \\Sigma_{17}$?")


def hle(store: FixtureStore) -> None:
    q1 = "simplicial volume of a closed surface of genus g"
    q2 = "simplicial volume of product of surfaces"
    store.put_search(q1, hits(
        ("Simplicial volume - Wikipedia", "https://en.wikipedia.org/wiki/Simplicial_volume",
         "For a closed oriented surface of genus g >= 2 the simplicial volume equals 4g - 4."),
        *filler_hits("Bounded cohomology", "math.example.edu", 9)))
    store.put_page("https://en.wikipedia.org/wiki/Simplicial_volume",
                   "# Simplicial volume\n\nFor surfaces of genus g >= 2, ||S_g|| = 2|chi(S_g)| = 4(g-1).",
                   "Simplicial volume", fetched_at=FETCHED_AT)
    store.put_search(q2, hits(
        ("The simplicial volume of closed manifolds covered by H2 x H2",
         "https://arxiv.org/abs/math/0703587",
         "||S_g x S_h|| = 3/2 ||S_g|| ||S_h|| for g, h >= 2."),
        *filler_hits("Product manifolds", "topology.example.edu", 9)))
    store.put_page("https://arxiv.org/abs/math/0703587",
                   "Abstract: we compute the simplicial volume of products of two surfaces: "
                   "||S_g x S_h|| = (3/2) ||S_g|| ||S_h||.", "H2 x H2 simplicial volume", fetched_at=FETCHED_AT)
    script = Script(
        main=[
            "I recall that a genus g surface has simplicial volume 4(g-1) when g >= 2. Quick check first.\n\n" + q(q1),
            "Good, 4(g-1) is right. The product is the real question; I need the formula for a product of two "
            "surfaces.\n\n" + q(q2),
            "So ||S_g x S_h|| = (3/2) * 4(g-1) * 4(h-1) = 24(g-1)(h-1).\n\n"
            "With g = 31 and h = 17: 24 * 30 * 16 = 720 * 16 = 11520.\n\n"
            "The simplicial volume of $\\Sigma_{31} \\times \\Sigma_{17}$ is \\boxed{11520}.",
        ],
        explorer={
            q1: ["**Final Information**\n\nFor genus g >= 2, ||S_g|| = 2|chi| = 4(g-1)."],
            q2: ["**Final Information**\n\nFor g, h >= 2: ||S_g x S_h|| = (3/2)||S_g|| ||S_h|| = 24(g-1)(h-1)."],
        },
        intents={q1: "Confirm the simplicial volume of a genus g surface.",
                 q2: "Find the exact simplicial volume of a product of two closed surfaces."},
    )
    record_case("hle", TaskSpec(HLE_Q, task_id="hle-simplicial"), script,
                {"expected_answer": "11520", "expected_calls": 2, "queries": [q1, q2]})


# -- ASH: explorer does one search and one PDF click --------------------------------

ASH_PDF = ("https://www.hematology.org/-/media/hematology/files/annual-meeting/"
           "2024_ash_ancillary_meeting_guidelines_final.pdf")


def make_pdf(lines: list[str], title: str) -> bytes:
    from reportlab.lib.pagesizes import letter
    from reportlab.pdfgen import canvas

    buf = io.BytesIO()
    c = canvas.Canvas(buf, pagesize=letter, invariant=1)
    c.setTitle(title)
    y = 740
    for line in lines:
        c.drawString(72, y, line)
        y -= 18
    c.showPage()
    c.save()
    return buf.getvalue()


def ash(store: FixtureStore) -> None:
    main_q = "ASH 66th annual meeting deadlines ancillary meetings late-breaking abstracts"
    exp_q = "ASH 66th annual meeting ancillary meetings proposal deadline"
    lba = "https://www.hematology.org/meetings/annual-meeting/abstracts/call-for-late-breaking-abstracts"
    store.put_search(main_q, hits(
        ("Call for Late-Breaking Abstracts - Hematology.org", lba,
         "Late-breaking abstract submission opens October 16, 2024 and closes October 28, 2024, 11:59 p.m. Pacific."),
        ("Call for Abstracts - confex.com", "https://ash.confex.com/ash/2024/cfp.cgi",
         "Regular abstracts closed in August; late-breaking window October 16-28, 2024."),
        *filler_hits("ASH annual meeting", "meetings.example.org", 8)))
    store.put_page(lba, "# Call for Late-Breaking Abstracts\n\nSubmission window: October 16, 2024 to "
                        "October 28, 2024, 11:59 p.m. Pacific Time.\n\nA non-refundable fee of $125 applies. "
                        "Up to six abstracts are selected for presentation on December 10, 2024.",
                   "Call for Late-Breaking Abstracts", fetched_at=FETCHED_AT)
    store.put_search(exp_q, hits(
        ("2024 ASH Ancillary Meeting Guidelines (PDF)", ASH_PDF,
         "Ancillary meeting requests are due November 22, 2024, 11:59 p.m. PST."),
        ("Ancillary Meetings - Hematology.org", "https://www.hematology.org/meetings/annual-meeting/ancillary-meetings",
         "The request form becomes available July 24, 2024."),
        *filler_hits("Hematology events", "events.example.org", 8)))
    store.put_page(ASH_PDF, body=make_pdf([
        "66th ASH Annual Meeting - Ancillary Meeting Guidelines",
        "Request form available: Wednesday, July 24, 2024, 11:00 a.m. EDT",
        "Submission deadline: Friday, November 22, 2024, 11:59 p.m. PST",
        "Processing fee (non-refundable): $200 member or non-profit, $250 advisory board, $500 investor meeting",
        "Space is limited and assigned first come, first served in designated hotels.",
        "Questions: asheventrequests@spargoinc.com",
    ], "Ancillary Meeting Guidelines"), content_type="application/pdf", title="")

    intent = ("Find the official deadlines for requesting ancillary meetings and submitting late-breaking "
              "abstracts for the 66th ASH Annual Meeting.")
    final = ("## Final Information\n\n"
             "### Late-Breaking Abstracts\n- Opens: October 16, 2024\n"
             "- Closes: October 28, 2024, 11:59 p.m. Pacific Time\n- Fee: $125, non-refundable\n\n"
             "### Ancillary Meetings\n- Request form available: July 24, 2024, 11:00 a.m. EDT\n"
             "- Submission deadline: November 22, 2024, 11:59 p.m. PST\n"
             "- Tiered processing fees ($200 / $250 / $500); designated hotels only, first come, first served.")
    script = Script(
        main=[
            "I need the 66th ASH Annual Meeting deadlines for two things: ancillary meeting requests and "
            "late-breaking abstracts.\n\n" + q(main_q),
            "Both deadlines are now known: late-breaking abstracts close October 28, 2024 (11:59 p.m. PT) and "
            "ancillary meeting requests are due November 22, 2024 (11:59 p.m. PST).\n\n"
            "ANSWER: late-breaking abstracts by October 28, 2024; ancillary meetings by November 22, 2024",
        ],
        explorer={main_q: [
            "The late-breaking window (October 16 to 28, 2024) is on the first pages. Nothing covers ancillary "
            "meetings, so I will search for that directly.\n\n" + q(exp_q),
            "The first hit is the official guidelines PDF. Opening it to confirm.\n\n" + click(ASH_PDF),
            "The PDF confirms the ancillary deadline.\n\n" + final,
        ]},
        intents={main_q: intent},
        click_intents={ASH_PDF: "Confirm the ancillary meeting request deadline and form opening date."},
        summaries={ASH_PDF: "The guidelines PDF for the 66th ASH Annual Meeting states:\n"
                            "- Request form availability: Wednesday, July 24, 2024, 11:00 a.m. EDT\n"
                            "- Submission Deadline: **Friday, November 22, 2024, 11:59 p.m. PST**\n"
                            "- Non-refundable processing fee: $200 / $250 / $500 by event type\n"
                            "- Designated hotels only, first come, first served"},
    )
    record_case("ash", TaskSpec("What are the deadlines for requesting an ancillary meeting and for submitting a "
                                "late-breaking abstract at the 66th ASH Annual Meeting?", task_id="ash-deadlines",
                                template="r1"), script,
                {"expected_dates": ["October 28, 2024", "November 22, 2024"], "explorer_searches": 1,
                 "explorer_clicks": 1, "queries": [main_q], "intent_phrase":
                 "ancillary meetings and submitting late-breaking abstracts"})


# -- CLTS: explorer clicks first, then a search that adds nothing --------------------

CLTS_URL = "https://repository.unair.ac.id/128927/1/Artikel-Effectiveness.pdf"


def clts(store: FixtureStore) -> None:
    main_q = "case studies of CLTS and Aedes mosquito control in rural Southeast Asia"
    exp_q = "CLTS and dengue prevention in rural Indonesia"
    store.put_search(main_q, hits(
        ("Insecticide resistance in Aedes aegypti", "https://pubmed.example.gov/aedes-resistance",
         "Resistance to pyrethroids across Southeast Asia."),
        ("Effectiveness of community-led sanitation for vector control", CLTS_URL,
         "Integrated CLTS and vector control in rural villages."),
        *filler_hits("Dengue control", "ncbi.example.gov", 8)))
    store.put_page("https://pubmed.example.gov/aedes-resistance",
                   "Pyrethroid resistance is widespread in Aedes aegypti populations.", "Aedes resistance",
                   fetched_at=FETCHED_AT)
    store.put_page(CLTS_URL, "Effectiveness of Community-Led Total Sanitation combined with Aedes control.\n\n"
                             "Villages in Indonesia, Vietnam and the Philippines combined CLTS (community "
                             "mobilisation, latrine construction) with larvicide distribution and education. "
                             "Integrated villages had 40% fewer Aedes breeding sites than control villages.",
                   "Artikel Effectiveness", fetched_at=FETCHED_AT)
    store.put_search(exp_q, hits(*filler_hits("Rural sanitation Indonesia", "wash.example.org", 10)))
    final = ("## Final Information\n\n"
             "One case study links CLTS with Aedes control in rural Southeast Asia (UNAIR repository):\n"
             "- Villages in Indonesia, Vietnam and the Philippines\n"
             "- CLTS plus larvicide distribution and breeding-site education\n"
             "- Outcome: 40% reduction in Aedes breeding sites versus control villages\n\n"
             "A follow-up search found no further integrated case studies.")
    script = Script(
        main=["I need documented programs that pair CLTS with Aedes control.\n\n" + q(main_q),
              "There is one solid case study with a 40% reduction in breeding sites.\n\n"
              "ANSWER: the UNAIR study of integrated CLTS and Aedes control (40% fewer breeding sites)"],
        explorer={main_q: [
            "None of the snippets tie CLTS to Aedes control directly. The UNAIR article looks closest.\n\n"
            + click(CLTS_URL),
            "That is a direct match. One more search for other examples.\n\n" + q(exp_q),
            "Nothing new in those results.\n\n" + final,
        ]},
        intents={main_q: "Find case studies that integrate CLTS with Aedes mosquito control in rural Southeast Asia."},
        click_intents={CLTS_URL: "Check whether the article reports an integrated CLTS and Aedes program."},
        summaries={CLTS_URL: "The study combined CLTS with Aedes control in Indonesia, Vietnam and the Philippines. "
                             "Integrated villages showed a 40% lower prevalence of Aedes breeding sites."},
    )
    record_case("clts", TaskSpec("Are there case studies combining CLTS with Aedes mosquito control in rural "
                                 "Southeast Asia?", task_id="clts-aedes", template="r1"), script,
                {"expected_phrase": "40% reduction", "explorer_searches": 1, "explorer_clicks": 1,
                 "queries": [main_q]})


# -- Lattice report: writes, a drifting section, check, dedupe edit ------------------

LATTICE_Q = ("How should the lattice of a 3D printed robotic node be optimized for strength-to-weight ratio while "
             "keeping support material low, given FDM limits and built-in connectors for a robot swarm?")
TITLE = ("Optimizing Lattice Structures in 3D Printed Robotic Nodes for Swarm Robotics: Balancing "
         "Strength-to-Weight Ratio and Minimizing Support Material")
ORDER = [
    "Introduction",
    "FDM 3D Printing Limitations Impacting Lattice Design",
    "Lattice Structure Optimization Techniques",
    "Key Factors Influencing Strength-to-Weight Ratio",
    "Reducing Support Material Through Design and Process Adjustments",
    "Integrating Connectors for Inter-Robot Communication and Power Transfer",
    "Design Considerations Specific to Swarm Robotics",
    "Material Selection for Enhanced Performance",
    "Real-World Applications and Case Studies",
]
DUP = "Real-World Applications and Case Studies"
EDIT_DEDUPE = (f'Remove duplicate "{DUP}" section and ensure each numbered section corresponds correctly to the '
               "research plan's eight points. Also, reorder sections to follow the research plan sequence precisely.")
EDIT_POLISH = ("Ensure all sections maintain consistent formatting and cross-reference related concepts "
               "throughout the article. Add transition sentences between major sections to improve flow.")


def split_sections(article: str) -> tuple[list[str], list[tuple[str, str]]]:
    """(preamble lines, [(level-2 name, block text)]) for a markdown article."""
    pre: list[str] = []
    blocks: list[tuple[str, list[str]]] = []
    for line in article.split("\n"):
        if line.startswith("## "):
            blocks.append((line[3:].strip(), [line]))
        elif blocks:
            blocks[-1][1].append(line)
        else:
            pre.append(line)
    return pre, [(n, "\n".join(b).strip("\n")) for n, b in blocks]


def dedupe_and_reorder(article: str) -> str:
    _, blocks = split_sections(article)
    first: dict[str, str] = {}
    for name, block in blocks:
        first.setdefault(name, block)
    ordered = [first[n] for n in ORDER if n in first] + [b for n, b in first.items() if n not in ORDER]
    return f"# {TITLE}\n\n" + "\n\n".join(ordered)


def polish(article: str) -> str:
    pre, blocks = split_sections(article)
    out = []
    for i, (name, block) in enumerate(blocks):
        if 0 < i < len(blocks) - 1:
            head, _, body = block.partition("\n\n")
            block = f"{head}\n\nBuilding on the previous section, this part turns to {name}.\n\n{body}"
        out.append(block)
    return "\n".join(pre).strip() + "\n\n" + "\n\n".join(out)


def lattice(store: FixtureStore) -> None:
    searches = {
        "FDM 3D printing limitations": (
            "https://www.example.edu/fdm-limits",
            "FDM limits: anisotropy from print orientation, overhangs beyond about 45 degrees sag without support, "
            "bridging length and layer adhesion constrain lattice struts.",
            "FDM prints layer by layer: orientation drives strength, overhangs past 45 degrees need support."),
        "lattice structure optimization for 3D printing": (
            "https://www.example.edu/lattice-optimization",
            "Lattice optimization combines design of experiments with genetic algorithms; common cells include "
            "hexagon, octet, BCC and gyroid; graded density puts material where stress is high.",
            "Multi-objective frameworks (DOE with GA) and common cells: hexagon, octet, BCC."),
        "material properties for 3D printing lattice structures": (
            "https://www.example.edu/lattice-materials",
            "PLA is stiff but brittle between layers; TPU is flexible with good energy absorption; TPEE absorbs "
            "far more energy than PLA in compression tests.",
            "PLA stiff but brittle, TPU flexible, TPEE high energy absorption."),
    }
    for query, (url, text, snippet) in searches.items():
        store.put_search(query, hits((query.title(), url, snippet), *filler_hits("Additive manufacturing",
                                                                                  "am.example.com", 4)))
        store.put_page(url, text, query.title(), fetched_at=FETCHED_AT)

    sections = {
        "Introduction": "Swarm robots need light, stiff nodes. Lattice cores give a high strength-to-weight ratio, "
                        "but FDM printing adds orientation and overhang constraints that shape every design choice.",
        ORDER[1]: "FDM parts are weakest across layers, so struts should run in the build plane where possible.\n\n"
                  "### Print Orientation Effects\n\nOrienting the node so that most struts stay under 45 degrees "
                  "keeps overhangs printable without support.",
        ORDER[2]: "Design of experiments narrows the parameter space and a genetic algorithm searches cell type, "
                  "strut thickness and grading for the best stiffness per gram.",
        ORDER[3]: "Cell topology, relative density and strut orientation relative to load dominate the ratio.",
        ORDER[4]: "Self-supporting cells, chamfered overhangs and a flat base face remove most support material.",
        ORDER[5]: "Snap fits and dovetails can be printed in place; embedded channels route power and signal lines.",
        DUP: "Protective shells, modular frames and quick-swap tooling show the approach in practice.",
        ORDER[6]: "Nodes must be identical, hot-swappable and light enough to keep the swarm mobile.",
        # the assistant drifts here and appends a second applications section
        ORDER[7]: "PLA suits rigid cores, TPU suits compliant connectors, and TPEE absorbs impacts.\n\n"
                  f"## {DUP}\n\nMaterial choices have been validated in several swarm prototypes.",
        "Conclusion": "A lattice node designed around FDM limits, with printable connectors and suitable materials, "
                      "yields light and strong modules for swarm robots.",
    }

    def result_text(query):
        return searches[query][1]

    explorer = {qq: [f"**Final Information**\n\n{result_text(qq)}"] for qq in searches}
    plan = ("(1) Search for \"FDM 3D printing limitations\".\n"
            "(2) Search \"lattice structure optimization for 3D printing\".\n"
            "(3) Look into \"material properties for 3D printing lattice structures\".")
    main = [
        "Let me follow the plan, starting with the printing constraints.\n\n" + q("FDM 3D printing limitations"),
        "Next, optimization strategies.\n\n" + q("lattice structure optimization for 3D printing"),
        "Now I can start writing.\n\n" + write("Introduction", "Motivate lattice nodes for swarm robots."),
        "\n\n" + write(ORDER[1], "Explain FDM constraints relevant to lattices, including print orientation."),
        "\n\n" + write(ORDER[2], "Describe DOE and GA optimization and common cell types."),
        "\n\n" + write(ORDER[3], "Summarize what drives the strength-to-weight ratio."),
        "\n\n" + write(ORDER[4], "List design and process changes that cut support material."),
        "\n\n" + write(ORDER[5], "Cover mechanical and electrical connector integration."),
        "\n\n" + write(DUP, "Give practical examples."),
        "\n\n" + write(ORDER[6], "Discuss swarm-specific design needs."),
        "I still need material data.\n\n" + q("material properties for 3D printing lattice structures"),
        "\n\n" + write(ORDER[7], "Compare PLA, TPU and TPEE for lattices."),
        "Let me look at the article so far.\n\n" + CHECK,
        "\n\nThere are two applications sections and the order is off.\n\n" + edit(EDIT_DEDUPE),
        "\n\nThe conclusion is missing.\n\n" + write("Conclusion", "Wrap up the design guidance."),
        "\n\n" + edit(EDIT_POLISH),
        "\n\nI have finished my work.",
    ]
    script = Script(main=main, explorer=explorer,
                    intents={qq: f"Gather information about {qq}." for qq in searches},
                    sections=sections, edits={EDIT_DEDUPE: dedupe_and_reorder, EDIT_POLISH: polish}, plan=plan)
    record_case("lattice", TaskSpec(LATTICE_Q, REPORT, task_id="lattice-report"), script,
                {"title": TITLE, "duplicate": DUP})


# -- WebWalkerQA search with 10 recorded hits ----------------------------------------

def acl(store: FixtureStore) -> None:
    rows = [("ACL 2023 Best Paper Awards", "https://2023.aclweb.org/program/best_papers/",
             "Best paper awards were presented on July 11, 2023.")]
    rows += [(f"ACL 2023 page {i}", f"https://2023.aclweb.org/page{i}", f"Conference information, part {i}.")
             for i in range(2, 11)]
    store.put_search("ACL 2023 best paper awards ceremony date", hits(*rows))


# -- batch of six one-shot tasks with scripted verdicts ------------------------------

BATCH = [
    # task id, split, label, model answer, judge reply
    ("b1", "gaia", "34689", "34689", "Correct"),
    ("b2", "gaia", "11520", "11520", "Correct"),
    ("b3", "gaia", "Paris", "Paris", "Correct"),
    ("b4", "gaia", "7", "8", "Incorrect"),
    ("b5", "hle", "42", "42", "Correct"),
    ("b6", "hle", "blue", "teal", "The answers match."),
]


def batch() -> None:
    out = ROOT / "batch"
    tdir = out / "transcripts"
    tdir.mkdir(parents=True, exist_ok=True)
    tasks = []
    verdicts = {}
    for tid, split, label, answer, reply in BATCH:
        question = f"Scripted question {tid}?"
        tasks.append({"task_id": tid, "question": question, "answer": label, "split": split})
        script = Script(main=[f"Direct answer without searching.\n\n\\boxed{{{answer}}}"])
        be = RecordingBackend(CallableBackend(responder(script), model="fixture"), tdir / f"{tid}.jsonl")
        client = LLMClient(be)
        Orchestrator(client, client, WebAccess.from_fixtures(WEB)).solve(TaskSpec(question, task_id=tid))
        verdicts[answer] = reply
    judge = LLMClient(RecordingBackend(CallableBackend(responder(Script(verdicts=verdicts)), model="judge"),
                                       tdir / "judge.jsonl"))
    for (tid, split, label, answer, _), t in zip(BATCH, tasks):
        judge_answer(judge, t["question"], label, answer, tid)
    with open(out / "tasks.jsonl", "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps(t) + "\n")


# -- preference inputs: (C, C, I) group plus a conciseness group ----------------------

def prefs_inputs() -> None:
    out = ROOT / "prefs"
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        # task, sample, correct, calls, length
        ("t1", 0, "correct", 2, 3000),
        ("t1", 1, "correct", 4, 3100),
        ("t1", 2, "incorrect", 1, 2000),
        ("t2", 0, "correct", 3, 5000),
        ("t2", 1, "correct", 3, 2000),
    ]
    with open(out / "trajectories.jsonl", "w", encoding="utf-8") as tf, \
            open(out / "verdicts.jsonl", "w", encoding="utf-8") as vf:
        for task, sample, verdict, calls, length in rows:
            tid = f"{task}:{sample}"
            tf.write(json.dumps({
                "trajectory_id": tid, "task": {"task_id": task, "query": f"question {task}", "sample": sample,
                                               "mode": "problem_solving"},
                "prompt": f"instruction for {task}", "chain": f"reasoning of {tid}",
                "counters": {"total_tool_calls": calls, "output_length": length, "injected_tokens": 500},
            }, sort_keys=True) + "\n")
            vf.write(json.dumps({"trajectory_id": tid, "task_id": task, "verdict": verdict}, sort_keys=True) + "\n")


def main() -> None:
    for d in (WEB, CASES, ROOT / "batch", ROOT / "prefs"):
        if d.exists():
            shutil.rmtree(d)
    store = FixtureStore(WEB)
    acl(store)
    gaia(store)
    hle(store)
    ash(store)
    clts(store)
    lattice(store)
    batch()
    prefs_inputs()
    print(f"fixtures written under {ROOT}", file=sys.stderr)


if __name__ == "__main__":
    main()
