import pytest

from ontobench.corpus import CorpusInstance
from ontobench.ontology import load_ontology
from ontobench.oracles import CallableOracle


def write_graph(tmp_path, name, lines):
    path = tmp_path / f"{name}.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def chain_graph(tmp_path):
    """a -> b -> c (edges child->parent, so a is the root)."""
    path = write_graph(tmp_path, "chain", [
        "a\tAlpha\t",
        "b\tBeta\ta",
        "c\tGamma\tb",
    ])
    return load_ontology(path)


@pytest.fixture
def diamond_graph(tmp_path):
    """a with children b, c; both b and c parent d."""
    path = write_graph(tmp_path, "diamond", [
        "a\tApex\t",
        "b\tLeft\ta",
        "c\tRight\ta",
        "d\tBottom\tb,c",
    ])
    return load_ontology(path)


def make_instance(i, query=None, answer=None):
    return CorpusInstance(
        instance_id=f"d{i:04d}",
        query=query or f"question number {i}",
        answer=answer or f"answer number {i}",
        source="test",
    )


def const_oracle(reply, name="const"):
    return CallableOracle(lambda prompt: reply, name=name)
