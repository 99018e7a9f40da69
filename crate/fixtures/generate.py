#!/usr/bin/env python3
"""Regenerates the bundled scenario fixtures. Output is deterministic."""
import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent
PODS = 100


def pod_label(rng):
    return "pod-" + "".join(rng.choice("0123456789abcdef") for _ in range(16))


def write(name, config, pods):
    d = ROOT / name
    d.mkdir(exist_ok=True)
    (d / "scenario.toml").write_text(config.lstrip())
    with open(d / "pods.jsonl", "w") as f:
        for p in pods:
            f.write(json.dumps(p, sort_keys=True, separators=(",", ":")) + "\n")


def ads(rng):
    items = ["book", "headphones", "kettle", "yoga_mat", "board_game", "lamp", "sneakers"]
    matching = set(rng.sample(range(PODS), 17))
    pods = []
    for i in range(PODS):
        bought = [{"item": rng.choice(items), "price": rng.randint(5, 200)} for _ in range(rng.randint(1, 4))]
        if i in matching:
            bought.insert(rng.randint(0, len(bought)), {"item": "nintendo_switch", "price": 299})
        tags = ["shopper"] + (["gamer"] if rng.random() < 0.3 else [])
        pods.append({
            "pod": pod_label(rng),
            "tags": tags,
            "records": [{"source": "hardware_signed", "signer": rng.choice(["shop-a", "shop-b"]),
                         "data": {"purchases": bought}}],
        })
    write("ads", '''
name = "ads"
seed = 1

[network]
nodes = 6
high_assurance = 2

[pods]
data = "pods.jsonl"

[task]
code = 'exists(purchases, item == "nintendo_switch")'
delivery = "Nintendo Switch accessories: 20% off this week"
selector = ["shopper"]
epsilon = 1.0
signers = ["shop-a", "shop-b"]
high_importance = ["dp_gate"]
''', pods)


def dpquery(rng):
    pods = []
    for _ in range(PODS):
        balance = rng.randint(0, 12000)
        pods.append({
            "pod": pod_label(rng),
            "tags": ["bank-customer"],
            "records": [{"source": "org_signed", "signer": "bank", "data": {"balance": balance}}],
        })
    write("dpquery", '''
name = "dpquery"
seed = 1

[network]
nodes = 5

[pods]
data = "pods.jsonl"

[task]
code = "mean(balance, 0, 10000)"
selector = ["bank-customer"]
epsilon = 0.5
signers = ["bank"]
''', pods)


def fedavg(rng):
    pods = []
    for _ in range(PODS):
        params = [round(rng.uniform(-5, 5), 6) for _ in range(2)]
        pods.append({
            "pod": pod_label(rng),
            "tags": ["device"],
            "records": [{"source": "hardware_signed", "signer": "device-attest", "data": {"params": params}}],
        })
    write("fedavg", '''
name = "fedavg"
seed = 1

[network]
nodes = 5
high_assurance = 1

[pods]
data = "pods.jsonl"

[task]
builtin = "fedavg"
dim = 2
lo = -100.0
hi = 100.0
selector = ["device"]
epsilon = 1.0
signers = ["device-attest"]
high_importance = ["aggregator"]
''', pods)


def survey(rng):
    outsider = rng.randrange(PODS)
    pods = []
    for i in range(PODS):
        answer = "yes" if rng.random() < 0.6 else "no"
        if i == outsider:
            rec = {"source": "alleged", "data": {"answer": "yes"}}
        else:
            rec = {"source": "org_signed", "signer": "member-registry", "data": {"answer": answer}}
        pods.append({"pod": pod_label(rng), "tags": ["voter"], "records": [rec]})
    write("survey", '''
name = "survey"
seed = 1

[network]
nodes = 4

[pods]
data = "pods.jsonl"

[task]
code = 'count(answer == "yes")'
selector = ["voter"]
require_dp = false
signers = ["member-registry"]
exclude_alleged = true
''', pods)


if __name__ == "__main__":
    rng = random.Random(20260114)
    for gen in (ads, dpquery, fedavg, survey):
        gen(rng)
