import csv
import io
import math

import pytest

from docgraph.ablation import AblationGrid, AblationRow, Sides, parse_relations, probe_accuracy, relations_name, rows_csv
from docgraph.decode import DocumentTranslation, TargetMode
from docgraph.graph import ALL_RELATIONS, RelationType
from docgraph.model import Architecture
from docgraph.synthetic import Probe


def test_parse_relations():
    assert parse_relations("all") == ALL_RELATIONS
    assert parse_relations("Adjacency+lexical") == {RelationType.ADJACENCY, RelationType.LEXICAL}
    with pytest.raises(ValueError, match="unknown relation"):
        parse_relations("adjacency+vibes")


def test_relations_name_is_canonical():
    assert relations_name(ALL_RELATIONS) == "all"
    assert relations_name({RelationType.LEXICAL, RelationType.ADJACENCY}) == "adjacency+lexical"


def test_grid_from_strings():
    g = AblationGrid.from_strings("all; lexical", "serial,parallel,hybrid", "src,src+tgt,src+tgt-prev")
    assert len(g) == 18 == len(list(g.cells()))
    assert g.architectures == (Architecture.SERIAL, Architecture.PARALLEL, Architecture.HYBRID)
    assert [s.mode for s in g.sides] == [TargetMode.NO_TGT, TargetMode.TGT, TargetMode.TGT_PREV]
    assert not Sides.SRC.uses_target and Sides.SRC_TGT_PREV.uses_target


def test_probe_accuracy():
    tr = [DocumentTranslation("d", words=[["x"], ["a", "p"]])]
    probes = [Probe(0, 1, 1, "p", "q"), Probe(0, 1, 5, "p", "q"), Probe(0, 0, 0, "q", "p")]
    assert probe_accuracy(tr, probes) == pytest.approx(1 / 3)
    assert math.isnan(probe_accuracy(tr, []))


def test_rows_csv_layout():
    row = AblationRow("all", "hybrid", "src+tgt", 10, 5, 1.23456, True, 12.3456, None)
    text = rows_csv([row])
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert parsed[0]["final_loss"] == "1.2346" and parsed[0]["bleu"] == "12.35"
    assert parsed[0]["probe_accuracy"] == "" and parsed[0]["finite_loss"] == "True"
