"""Build a small horoscope skill end to end and talk to it.

    python demos/horoscope_skill.py

Writes a model directory to a temporary folder, runs the ``build_skill``
recipe into a model store, then exercises understanding, dialogue and
invocation routing against the stored bundle.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from skillnlu.build import build_skill
from skillnlu.frames import SemanticFrame
from skillnlu.pipeline import execute
from skillnlu.runtime import DialogueManager, ModelStore, NLUEngine, route_invocation

SCHEMA = {
    "intents": [
        {
            "intent": "GetHoroscope",
            "slots": [
                {"name": "Sign", "type": "ZODIAC_SIGNS", "required": True, "prompt": "Which star sign?"},
                {"name": "Date", "type": "AMAZON.DATE"},
            ],
        },
        {"intent": "GetLuckyNumber", "confirmationRequired": True,
         "confirmationPrompt": "Shall I pick a lucky number for {Sign}?",
         "slots": [{"name": "Sign", "type": "ZODIAC_SIGNS", "required": True}]},
    ]
}
SAMPLES = """\
GetHoroscope what is the horoscope for {Sign}
GetHoroscope what will the horoscope for {Sign} be on {Date}
GetHoroscope get me my horoscope
GetHoroscope {Sign}
GetLuckyNumber give me a lucky number
GetLuckyNumber what is the lucky number for {Sign}
"""
SIGNS = "aries taurus gemini cancer leo virgo libra scorpio sagittarius capricorn aquarius pisces"


def write_model(root: Path) -> Path:
    d = root / "horoscope"
    (d / "slot_types").mkdir(parents=True)
    (d / "intent_schema.json").write_text(json.dumps(SCHEMA, indent=2))
    (d / "sample_utterances.txt").write_text(SAMPLES)
    (d / "slot_types" / "ZODIAC_SIGNS.txt").write_text("\n".join(SIGNS.split()) + "\n")
    (d / "invocation_name.txt").write_text("daily horoscopes\n")
    return d


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        model_dir = write_model(tmp)
        store = ModelStore(tmp / "store")

        report = execute(build_skill, "parallel:2", params={"model": str(model_dir), "store": str(store.root)},
                         work_dir=tmp / "work")
        print(report.summary())
        bundle = store.load("daily-horoscopes")
        print(f"\nstored {bundle.skill_id} v{bundle.version}, {sum(bundle.model_sizes().values())} bytes\n")

        engine = NLUEngine(bundle)
        for text in ["what is the horoscope for taurus",
                     "horoscope for leo tomorrow please",
                     "lucky number for pisces",
                     "tell me a joke about penguins",
                     ""]:
            r = engine.understand(text)
            print(f"{text!r:45} -> {r.source:13} {r.intent} {r.frame.slot_values() if r.frame else ''} "
                  f"p={r.confidence:.2f}")

        print("\ndialogue:")
        dm = DialogueManager(bundle)
        state, d = dm.start(SemanticFrame("GetLuckyNumber"))
        print(f"  << {d}")
        for said in ["my sign is cheese", "virgo", "yes"]:
            state, d = dm.step(state, said)
            print(f"  >> {said}\n  << {d}")

        print("\nrouting:")
        for text in ["open daily horoscopes", "ask daily horoscopes what is the horoscope for libra", "open weather"]:
            print(f"  {text!r} -> {route_invocation(store, text)}")


if __name__ == "__main__":
    main()
