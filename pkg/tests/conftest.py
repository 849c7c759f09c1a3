from __future__ import annotations

import pytest

from fcagent.hierarchy import render_directive
from fcagent.workspace import Workspace


def tool(name, **args):
    return render_directive({"action": "tool", "tool": name, "args": args})


def finish(answer="done"):
    return render_directive({"action": "finish", "final_answer": answer})


@pytest.fixture
def ws(tmp_path):
    return Workspace.init(tmp_path / "root", "t1", fsync=False)
