import pytest

from mvmdd.af_inventory import (
    AF_FB,
    AF_HL,
    AF_M,
    AF_P,
    AF_STREAMS,
    CONSONANT_MANNERS,
    SILENCE,
    STREAM_CLASSES,
    AfTable,
    AfTableError,
    PhoneInventory,
    load_af_table,
    map_phones,
    map_sequence,
)


@pytest.fixture(scope="module")
def table():
    return load_af_table()


@pytest.fixture(scope="module")
def inv(table):
    return table.inventory


def test_inventory_size_and_silence(inv):
    assert len(inv) == 39
    assert len(set(inv.phones)) == 39
    assert SILENCE in inv
    assert all(p.isupper() and p.isascii() for p in inv.phones)


def test_blank_outside_phone_labels(inv):
    labels = {inv.label_of(p) for p in inv.phones}
    assert inv.blank_id not in labels
    assert labels == set(range(1, 40))


def test_label_round_trip(inv):
    for p in inv.phones:
        assert inv.phone_of_label(inv.label_of(p)) == p


def test_stream_cardinalities(table):
    assert table.class_count(AF_M) == 7
    assert table.class_count(AF_P) == 6
    assert table.class_count(AF_HL) == 4
    assert table.class_count(AF_FB) == 4
    assert len(AF_STREAMS) == 4


def test_class_lists_exact(table):
    assert table.classes[AF_M] == (
        "vowel", "stop", "fricative", "retroflex", "approximant", "nasal", "silence"
    )
    assert table.classes[AF_P] == (
        "bilabial", "alveolar", "dental", "labiodental", "velar", "nil"
    )
    assert table.classes[AF_HL] == ("low", "mid", "high", "nil")
    assert table.classes[AF_FB] == ("front", "central", "back", "nil")


def test_totality(table, inv):
    for p in inv.phones:
        for s in AF_STREAMS:
            assert table.class_name(s, p) in STREAM_CLASSES[s]


def test_vowel_consonant_consistency(table, inv):
    for p in inv.phones:
        manner, _, hl, fb = table.signature(p)
        if manner == "vowel":
            assert hl != "nil" and fb != "nil", p
        else:
            assert hl == "nil" and fb == "nil", p
        if manner in CONSONANT_MANNERS:
            assert hl == "nil" and fb == "nil", p


def test_silence_row(table):
    assert table.signature(SILENCE) == ("silence", "nil", "nil", "nil")


def test_plosive_places(table):
    assert table.class_name(AF_M, "P") == "stop"
    assert table.class_name(AF_M, "T") == "stop"
    assert table.class_name(AF_M, "K") == "stop"
    assert table.class_name(AF_P, "P") == "bilabial"
    assert table.class_name(AF_P, "T") == "alveolar"
    assert table.class_name(AF_P, "K") == "velar"


def test_iy_is_high_front_vowel(table):
    assert table.signature("IY") == ("vowel", "nil", "high", "front")


def test_map_sequence_empty(table):
    assert map_sequence([], AF_M, table) == []


def test_map_sequence_manner_and_place(table):
    assert map_phones(["P", "T", "K"], AF_M, table) == ["stop", "stop", "stop"]
    assert map_phones(["P", "T"], AF_P, table) == ["bilabial", "alveolar"]


def test_map_sequence_keeps_duplicates(table, inv):
    ids = [inv.id_of("P"), inv.id_of("T")]
    out = map_sequence(ids, AF_M, table)
    assert len(out) == 2
    assert out[0] == out[1]


def test_map_sequence_is_elementwise(table, inv):
    a = [inv.id_of(p) for p in ["P", "IY", "K"]]
    b = [inv.id_of(p) for p in ["SIL", "Z"]]
    for s in AF_STREAMS:
        assert map_sequence(a + b, s, table) == map_sequence(a, s, table) + map_sequence(b, s, table)


def test_map_sequence_index_errors(table):
    with pytest.raises(IndexError):
        map_sequence([39], AF_M, table)
    with pytest.raises(IndexError):
        map_sequence([-1], AF_M, table)
    with pytest.raises(KeyError):
        map_sequence([0], "AF_X", table)


def test_default_table_validates(table):
    table.validate()


def test_every_nonsilence_phone_has_a_confusable(table, inv):
    conf = table.confusions()
    for p in inv.phones:
        if p == SILENCE:
            assert conf[p] == ()
        else:
            assert len(conf[p]) >= 1, p
            for q in conf[p]:
                assert table.class_name(AF_M, q) == table.class_name(AF_M, p)
                assert table.signature(q) != table.signature(p)


def test_load_custom_table_round_trip(tmp_path, table):
    rows = ["phone\tmanner\tplace\thighlow\tfrontback"]
    for p in table.inventory.phones:
        rows.append("\t".join([p, *table.signature(p)]))
    path = tmp_path / "af.tsv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    loaded = load_af_table(path)
    for p in table.inventory.phones:
        assert loaded.signature(p) == table.signature(p)


def _write_table(tmp_path, mutate):
    base = load_af_table()
    rows = ["phone\tmanner\tplace\thighlow\tfrontback"]
    for p in base.inventory.phones:
        rows.append("\t".join([p, *base.signature(p)]))
    rows = mutate(rows)
    path = tmp_path / "af.tsv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def test_malformed_row_reports_line(tmp_path):
    path = _write_table(tmp_path, lambda rows: rows[:5] + ["P\tstop\tbilabial"] + rows[6:])
    with pytest.raises(AfTableError, match=r":\d+:"):
        load_af_table(path)


def test_unknown_phone_rejected(tmp_path):
    path = _write_table(tmp_path, lambda rows: rows + ["ZZ\tstop\tbilabial\tnil\tnil"])
    with pytest.raises(AfTableError, match="unknown phone"):
        load_af_table(path)


def test_unknown_class_rejected(tmp_path):
    def mutate(rows):
        rows[1] = rows[1].replace("vowel", "glide")
        return rows
    path = _write_table(tmp_path, mutate)
    with pytest.raises(AfTableError, match="unknown AF_M class"):
        load_af_table(path)


def test_missing_phone_rejected(tmp_path):
    path = _write_table(tmp_path, lambda rows: [r for r in rows if not r.startswith("P\t")])
    with pytest.raises(AfTableError, match="not total"):
        load_af_table(path)


def test_inconsistent_vowel_rejected(tmp_path):
    def mutate(rows):
        out = []
        for r in rows:
            if r.startswith("IY\t"):
                out.append("IY\tvowel\tnil\tnil\tnil")
            else:
                out.append(r)
        return out
    path = _write_table(tmp_path, mutate)
    with pytest.raises(AfTableError):
        load_af_table(path)


def test_inventory_rejects_bad_sets():
    with pytest.raises(ValueError):
        PhoneInventory(phones=("AA",) * 39)
    with pytest.raises(ValueError):
        PhoneInventory(phones=tuple(f"P{i}" for i in range(39)))
