"""Smoke test for the instream extension module.

Build it first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""
import json
import pathlib

import instream

SPECS = pathlib.Path(__file__).resolve().parent.parent / "specs"


def main():
    text = (SPECS / "branch.bta").read_text()
    canonical = instream.parse(text)
    assert instream.parse(canonical) == canonical

    lts = json.loads(instream.extract(text))
    assert lts["states"], lts

    product = json.loads(instream.compose(text, maxlen=2))
    assert len(product["states"]) >= len(lts["states"])

    verdict = instream.check(text, maxlen=1)
    assert verdict["equivalent"], verdict

    metrics = instream.simulate((SPECS / "linear8.bta").read_text(), maxlen=2, strategy="breadth+wildcard")
    assert metrics["busy"] + metrics["idle"] == metrics["total"]

    try:
        instream.parse((SPECS / "bad.bta").read_text())
    except ValueError as e:
        assert "unknown variable W" in str(e)
    else:
        raise AssertionError("bad spec parsed")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
