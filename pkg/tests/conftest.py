from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from codesum.prompt import PromptTemplate, render_prompt  # noqa: E402

# Three functionalities; summaries inside a group share most tokens, groups share almost none.
GROUP_SUMMARIES = {
    1: [
        "Reads an integer n and prints the factorial of n.",
        "Reads integer n then prints factorial of n computed recursively.",
        "Reads an integer n and prints n factorial using a loop.",
    ],
    2: [
        "Sorts an array of integers in ascending order and prints the sorted array.",
        "Sorts the integer array ascending with bubble sort and prints the sorted array.",
        "Sorts an integer array in ascending order then prints the sorted array.",
    ],
    3: [
        "Counts vowels in a string read from input and outputs the vowel count.",
        "Counts the vowels of an input string and outputs the vowel count.",
        "Counts vowels in the input string and outputs how many vowel characters appear.",
    ],
}

GROUP_CODE = {
    1: "int f(int n){{return n<2?1:n*f(n-1);}}\nint main(){{int n;scanf(\"%d\",&n);printf(\"%d\",f(n));/*v{k}*/}}\n",
    2: "int main(){{int a[{m}],i,j,t;for(i=0;i<{m};i++)scanf(\"%d\",&a[i]);/* sort v{k} */return 0;}}\n",
    3: "int main(){{char s[{m}];int c=0;gets(s);/* vowels v{k} */printf(\"%d\",c);}}\n",
}

PREAMBLES = ["", "Sure, here is the summary:\n", "Summary:\n"]
TAILS = ["", " It handles one test case.", " The process involves simple iteration."]


def group_code(group: int, k: int) -> str:
    return GROUP_CODE[group].format(k=k, m=100 + k)


def write_golden_project(root: Path, per_group: int = 10, empty_ids: tuple[str, ...] = ()) -> dict:
    """POJ-style corpus + fixture LLM responses + config for a 3-group pipeline run."""
    corpus = root / "corpus"
    template = PromptTemplate.default("english")
    responses = {}
    for g in GROUP_SUMMARIES:
        (corpus / str(g)).mkdir(parents=True, exist_ok=True)
        for k in range(per_group):
            code = group_code(g, k)
            (corpus / str(g) / f"p{k:02d}.c").write_text(code, encoding="utf-8")
            fid = f"{g}/p{k:02d}.c"
            summary = GROUP_SUMMARIES[g][k % 3]
            text = "" if fid in empty_ids else PREAMBLES[k % 3] + summary + TAILS[(k // 3) % 3]
            responses[render_prompt(template, code)] = text
    fixture = root / "responses.json"
    fixture.write_text(json.dumps(responses, ensure_ascii=False), encoding="utf-8")
    config = {
        "dataset": {"kind": "poj104", "path": "corpus", "name": "golden", "sample": {"n_pos": 60, "n_neg": 60}, "seed": 3},
        "llm": {"provider": "fixture", "fixture": "responses.json", "language": "english", "parallelism": 4},
        "embedding": {"provider": "hashing", "dim": 512, "seed": 1},
        "tasks": {
            "clone": {"grid": [0.50, 0.55, 0.60, 0.65, 0.70, 0.75]},
            "cluster": {"k": 3, "seed": 0, "restarts": 10},
            "viz": {"perplexity": 5, "learning_rate": "auto", "iterations": 500, "seed": 0},
        },
        "cache_root": "cache",
        "output_dir": "out",
    }
    cfg_path = root / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return {"config": cfg_path, "fixture": fixture, "corpus": corpus, "out": root / "out"}


@pytest.fixture
def golden_project(tmp_path):
    return write_golden_project(tmp_path)
