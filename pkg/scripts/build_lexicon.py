"""Regenerate src/mcp_fidelity/data/lexicon.json from the bundled tables.

Closed-class words and adjectives are listed here by hand; every other word
that occurs in the seed tables, query templates or synonym table is a noun.
"""

import json
import re
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "mcp_fidelity" / "data"

DET = """the a an every each this that these those its their his her our my your
some no any""".split()

VERB = """is was are were be been being has had have can will does did do began
started ruled governed won claimed covers spans featured included completed
finished released issued published printed equals matches built designed
exhibited showed wrote composed reaches attains stores holds remains possesses
produce reported describe give tell relate recorded known grew rose fell
became made said includes contains shows meet met expanded""".split()

OTHER = """of in on at by for with from to into after before during about over
under and or but approximately roughly nearly than as what which who when where
how why me more else it we they he she i you not also then there here near
around above following""".split()

ADJ = """liquid pure solid fresh dry natural crystalline molten average thermal
electrical specific refractive molar standard northern eastern western southern
central coastal royal old ancient golden inland custom compact parallel
efficient modular secure wireless digital famous large colorful abstract bronze
marble delicate monumental modern national continental regional grand open
great volcanic epic lyric tragic satirical pastoral romantic finite connected
regular symmetric minimal complete binary cyclic planar convex prime key
previous smart electric industrial square sea distributive""".split()


def words_in(obj):
    if isinstance(obj, str):
        yield from re.findall(r"[a-z]+", re.sub(r"\{\w+\}", " ", obj.lower()))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            if k != "prefix":
                yield from words_in(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from words_in(v)


def main():
    vocab = set()
    for name in ("seed_tables.json", "query_templates.json", "synonyms.json"):
        doc = json.loads((DATA / name).read_text())
        vocab.update(words_in(doc))
        if name == "synonyms.json":
            vocab.update(doc.keys())
    closed = set(DET) | set(VERB) | set(OTHER) | set(ADJ)
    lexicon = {
        "DET": sorted(set(DET)),
        "VERB": sorted(set(VERB)),
        "OTHER": sorted(set(OTHER)),
        "ADJ": sorted(set(ADJ)),
        "NOUN": sorted(vocab - closed),
    }
    (DATA / "lexicon.json").write_text(json.dumps(lexicon, indent=1) + "\n")
    print(f"{len(lexicon['NOUN'])} nouns, {len(closed)} closed-class/adjective entries")


if __name__ == "__main__":
    main()
