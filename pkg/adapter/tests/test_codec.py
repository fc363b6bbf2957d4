import json
import math
import os

import numpy as np
import pytest

from anvilworker.codec import WireValueError, decode, dumps, encode

CONFORMANCE = os.path.join(
    os.path.dirname(__file__), "..", "..", "docs", "wire_v1_conformance.jsonl"
)


def rt(native):
    return decode(json.loads(dumps(encode(native)).decode()), {})


def test_scalars_round_trip():
    for v in [None, True, False, 0, -42, 3.5, "s", ""]:
        assert rt(v) == v


def test_bool_is_not_int_on_wire():
    assert encode(True) is True
    assert encode(1) == 1


def test_tuple_and_dict_tags():
    assert encode((3, "a")) == {"$t": [3, "a"]}
    assert encode({"k": 1}) == {"$d": [["k", 1]]}
    assert rt((3, "a")) == (3, "a")
    assert rt({"k": (1, 2)}) == {"k": (1, 2)}


def test_nonfinite_floats():
    assert encode(math.nan) == {"$f": "nan"}
    assert encode(math.inf) == {"$f": "+inf"}
    assert math.isnan(decode({"$f": "nan"}, {}))


def test_ndarray_round_trip():
    a = np.arange(6, dtype="uint32").reshape(2, 3)
    enc = encode(a)
    assert enc == {"$nd": {"dtype": "uint32", "shape": [2, 3], "data": [0, 1, 2, 3, 4, 5]}}
    back = decode(enc, {})
    assert isinstance(back, np.ndarray)
    assert back.dtype == np.uint32 and back.shape == (2, 3)
    assert (back == a).all()


def test_ndarray_row_major_order():
    a = np.array([[1, 2], [3, 4]], dtype="int16")
    assert encode(a)["$nd"]["data"] == [1, 2, 3, 4]


def test_float32_array_items_are_exact():
    a = np.array([0.1, 0.5], dtype="float32")
    data = encode(a)["$nd"]["data"]
    assert data[1] == 0.5
    back = decode(encode(a), {})
    assert (back == a).all() and back.dtype == np.float32


def test_numpy_scalars_encode_as_plain():
    assert encode(np.int32(7)) == 7
    assert encode(np.float64(0.5)) == 0.5
    assert encode(np.bool_(True)) is True


def test_unsupported_dtype_rejected():
    with pytest.raises(WireValueError):
        encode(np.array([1 + 2j], dtype="complex64"))


def test_unencodable_object_rejected():
    with pytest.raises(WireValueError):
        encode(object())


def test_handle_decode_via_table():
    table = {3: "the-object"}
    assert decode({"$h": 3}, table) == "the-object"
    with pytest.raises(WireValueError):
        decode({"$h": 4}, table)


def test_handle_encode_via_lookup():
    blob = object()
    table = {5: blob}

    def handle_of(o):
        for hid, known in table.items():
            if known is o:
                return hid
        return None

    assert encode(blob, handle_of) == {"$h": 5}


def test_decode_rejects_malformed():
    for bad in [{"$t": [1], "x": 2}, {"$q": 1}, {"$f": "infinity"},
                {"$nd": {"dtype": "uint31", "shape": [1], "data": [0]}},
                {"$nd": {"dtype": "uint8", "shape": [2], "data": [0]}}]:
        with pytest.raises(WireValueError):
            decode(bad, {})


def test_conformance_fixture_value_bytes_match():
    with open(CONFORMANCE, "rb") as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith(b"#")]
    checked = 0
    for line in lines:
        kind, _, payload = line.partition(b" ")
        if kind != b"value":
            continue
        j = json.loads(payload.decode("utf-8"))
        if _mentions_handle(j):
            continue  # handles only decode against a live table
        native = decode(j, {})
        assert dumps(encode(native)) == payload, payload
        checked += 1
    assert checked >= 15


def _mentions_handle(j):
    if isinstance(j, dict):
        if "$h" in j:
            return True
        return any(_mentions_handle(v) for v in j.values())
    if isinstance(j, list):
        return any(_mentions_handle(v) for v in j)
    return False
