"""Prompt templates for the alignment and recommendation agents."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

OPTION_LETTERS = "ABCDEFGHIJKLMNOPQRST"

# placeholder used by each expert's alignment block
ALIGN_PLACEHOLDER = {
    2: "structured_triples_from_KG",
    3: "structured_subgraph_from_KG",
    4: "pagerank_mst_graph_from_KG",
}


@dataclass(frozen=True)
class PromptDomain:
    domain: str = "Movie"
    history_label: str = "watching history"
    item_type: str = "movie"
    user_preferences: str = "general user"


MOVIE = PromptDomain()
MUSIC = PromptDomain("Music", "listening history", "artist")


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files("gkgrec.assets").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def _fields(dom: PromptDomain, history: list[str]) -> dict:
    return {
        "domain": dom.domain,
        "history_label": dom.history_label,
        "history_label_title": dom.history_label[:1].upper() + dom.history_label[1:],
        "item_type": dom.item_type,
        "user_preferences": dom.user_preferences,
        "history": ", ".join(f'"{h}"' for h in history),
    }


def alignment_prompt(expert: int, history: list[str], statements: list[str],
                     dom: PromptDomain = MOVIE) -> str:
    if expert not in ALIGN_PLACEHOLDER:
        raise ValueError(f"no alignment prompt for expert {expert}")
    f = _fields(dom, history)
    f[ALIGN_PLACEHOLDER[expert]] = "\n" + "\n".join(f"- {s}" for s in statements)
    parts = [template("align_shared"), template(f"align_expert{expert}"), template("align_output")]
    return "\n".join(p.format(**f).rstrip("\n") for p in parts)


def recommendation_prompt(history: list[str], options: list[str], knowledge: str | None,
                          dom: PromptDomain = MOVIE) -> str:
    if len(options) > len(OPTION_LETTERS):
        raise ValueError("at most 20 options")
    f = _fields(dom, history)
    f["options"] = ", ".join(f'"{OPTION_LETTERS[i]}: {o}"' for i, o in enumerate(options))
    if knowledge:
        f["aligned_knowledge_summary"] = knowledge
        return template("rec_with_knowledge").format(**f)
    return template("rec_no_knowledge").format(**f)
