"""Protocol-exercise subject: small functions with known behaviors."""

import json
import time

GREETING = "stub subject"


def identity(x):
    return x


def add(a, b):
    return a + b


def boom():
    raise ValueError("nope")


def assert_fail():
    assert False, "expected shapes to agree"


def call_lib():
    return json.loads("{not json")


def sleeper(ms):
    time.sleep(ms / 1000.0)
    return ms


def printer():
    print("hello from subject stdout")
    return "printed"


def make_obj(tag):
    return {"tag": tag}


class Opaque:
    pass


def make_opaque():
    return Opaque()


def want_kwargs(k, **kwargs):
    return [k, sorted(kwargs)]


class Counter:
    def __init__(self, start):
        if start < 0:
            raise ValueError("negative start")
        self.n = start

    def bump(self, k):
        self.n += k
        return self.n
