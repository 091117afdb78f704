"""
Command line walkthrough
========================

The same pipeline through ``graspdiff`` subcommands, each writing a fresh run
directory with a manifest. Equivalent shell lines are in the comments.
"""

import json
import tempfile
from pathlib import Path

from graspdiff.cli import main

work = Path(tempfile.mkdtemp())


def run(*args):
    args = [str(a) for a in args]
    print("$ graspdiff", " ".join(args))
    assert main(args) == 0


# graspdiff gen-data --objects 8 --views 2 --grasps 25 --seed 1 --out data
run("gen-data", "--objects", 8, "--views", 2, "--grasps", 25, "--seed", 1, "--out", work / "data")
run("train-evaluator", "--data", work / "data", "--epochs", 3, "--out", work / "ev")
run("train-sampler", "--data", work / "data", "--epochs", 3, "--width", 32, "--tokens", 4, "--batch", 64, "--out", work / "sp")

meta = json.loads((work / "data" / "object_0000.json").read_text())
cloud = work / "data" / meta["views"][0]["cloud"]
run("sample", "--model", work / "sp" / "sampler.gdw", "--cloud", cloud, "--n", 5, "--out", work / "s")
run("refine", "--sampler", work / "sp" / "sampler.gdw", "--evaluator", work / "ev" / "evaluator.gdw",
    "--cloud", cloud, "--method", "egd+esr2", "--n", 5, "--out", work / "r")
run("bench", "--sampler", work / "sp" / "sampler.gdw", "--evaluator", work / "ev" / "evaluator.gdw",
    "--data", work / "data", "--test-views", 1, "--n", 5, "--out", work / "bench")

# replaying a manifest reproduces the outputs byte for byte
run("sample", "--config", work / "s" / "manifest.json", "--out", work / "s2")
print((work / "s" / "grasps.json").read_bytes() == (work / "s2" / "grasps.json").read_bytes())
