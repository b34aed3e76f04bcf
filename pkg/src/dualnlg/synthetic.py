"""Template-based synthetic NLG corpora.

Four domains mirror the usual benchmark pair structure: ``hotel`` and
``restaurant`` share most slots and phrasing, as do ``tv`` and ``laptop``.
Output is the standard JSON-lines corpus format, one DA per line with one or
more references.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DialogueAct, write_jsonl
from .nn import named_rng


@dataclass
class SlotSpec:
    values: list
    phrases: list  # templates with "{v}"; binary slots map value -> phrase list instead
    question: str = ""
    binary: dict = field(default_factory=dict)


def _names(rng, heads, n):
    out = set()
    while len(out) < n:
        out.add(f"{rng.choice(heads)} {int(rng.integers(10, 99))}")
    return sorted(out)


_VENUE_SHARED = {
    "area": SlotSpec(
        ["north", "south", "centre", "riverside", "old town", "mission bay", "union square"],
        ["is in the {v} area", "is located in {v}", "is in {v}"],
        "which area do you prefer",
    ),
    "pricerange": SlotSpec(
        ["cheap", "moderate", "expensive", "inexpensive"],
        ["is {v}", "is in the {v} price range", "has {v} prices"],
        "what price range are you looking for",
    ),
    "phone": SlotSpec(
        ["4155551234", "4155559876", "4155550001", "4155553333", "4155557777"],
        ["can be reached at {v}", "has phone number {v}", "'s phone is {v}"],
        "",
    ),
    "address": SlotSpec(
        ["12 market street", "88 pine street", "5 geary boulevard", "301 mission street", "40 lake road"],
        ["is at {v}", "is located at {v}", "has the address {v}"],
        "",
    ),
    "near": SlotSpec(
        ["the park", "city hall", "the station", "chinatown", "the pier"],
        ["is near {v}", "is close to {v}"],
        "what should it be near",
    ),
}

_PRODUCT_SHARED = {
    "type": SlotSpec(["television", "laptop"], ["is a {v}", "is a nice {v}"], "what type of product"),
    "price": SlotSpec(
        ["299 dollars", "499 dollars", "899 dollars", "1500 dollars", "2000 dollars", "749 dollars"],
        ["costs {v}", "is priced at {v}", "has a price of {v}"],
        "what price range do you want",
    ),
    "family": SlotSpec(
        ["l1", "l2", "l7", "e3", "hades", "satellite"],
        ["is in the {v} family", "is part of the {v} product family", "belongs to the {v} family"],
        "which product family",
    ),
    "warranty": SlotSpec(
        ["1 year", "2 year", "3 year"],
        ["comes with a {v} warranty", "has a {v} warranty"],
        "",
    ),
    "color": SlotSpec(["black", "silver", "white", "red"], ["comes in {v}", "is available in {v}"], "which colour"),
}


def _domain_slots(name):
    if name == "hotel":
        slots = dict(_VENUE_SHARED)
        slots["dogsallowed"] = SlotSpec(
            ["yes", "no"], [], "do you want a place that allows dogs",
            binary={"yes": ["allows dogs", "is dog friendly"], "no": ["does not allow dogs"]},
        )
        slots["acceptscreditcards"] = SlotSpec(
            ["yes", "no"], [], "",
            binary={"yes": ["accepts credit cards"], "no": ["does not accept credit cards"]},
        )
        return "hotel", slots, ["grand", "regency", "palace", "harbor", "lodge", "inn"]
    if name == "restaurant":
        slots = dict(_VENUE_SHARED)
        slots["food"] = SlotSpec(
            ["italian", "chinese", "thai", "indian", "mexican", "sushi", "vegetarian"],
            ["serves {v} food", "offers {v} cuisine", "is a {v} restaurant"],
            "what kind of food would you like",
        )
        slots["goodformeal"] = SlotSpec(
            ["breakfast", "lunch", "dinner", "brunch"],
            ["is good for {v}", "is a nice place for {v}"],
            "which meal is it for",
        )
        slots["kidsallowed"] = SlotSpec(
            ["yes", "no"], [], "",
            binary={"yes": ["is kid friendly", "allows kids"], "no": ["does not allow kids"]},
        )
        return "restaurant", slots, ["bistro", "tavern", "kitchen", "garden", "diner", "cafe"]
    if name == "tv":
        slots = dict(_PRODUCT_SHARED)
        slots["screensize"] = SlotSpec(
            ["32 inch", "40 inch", "46 inch", "55 inch", "65 inch"],
            ["has a {v} screen", "comes with a {v} screen"],
            "what screen size",
        )
        slots["hdmiport"] = SlotSpec(
            ["1", "2", "3", "4"],
            ["has {v} hdmi port -s", "comes with {v} hdmi port -s"],
            "how many hdmi ports",
        )
        slots["audio"] = SlotSpec(
            ["nicam stereo", "radio and nicam stereo", "dolby surround"],
            ["has {v} audio", "comes with {v} sound"],
            "",
        )
        slots["resolution"] = SlotSpec(
            ["720p", "1080p", "4k"], ["has a {v} resolution", "supports {v}"], "what resolution"
        )
        return "tv", slots, ["typhon", "hades", "proteus", "triton", "nereus", "pontus"]
    if name == "laptop":
        slots = dict(_PRODUCT_SHARED)
        slots["battery"] = SlotSpec(
            ["3.5 hour", "4 hour", "6 hour", "9 hour", "12 hour"],
            ["has a {v} battery life", "can last {v}", "has a battery rating of {v}"],
            "how long should the battery last",
        )
        slots["drive"] = SlotSpec(
            ["320 gb", "500 gb", "750 gb", "1 tb"],
            ["has a {v} drive", "comes with a {v} drive"],
            "what drive size",
        )
        slots["memory"] = SlotSpec(
            ["4 gb", "8 gb", "16 gb"], ["has {v} of memory", "comes with {v} of ram"], "how much memory"
        )
        slots["isforbusinesscomputing"] = SlotSpec(
            ["true", "false"], [], "",
            binary={"true": ["is good for business computing"], "false": ["is not meant for business computing"]},
        )
        return "laptop", slots, ["satellite pallas", "satellite dinlas", "tecra", "portege", "equium"]
    raise ValueError(f"unknown synthetic domain {name!r}")


DOMAINS = ("hotel", "restaurant", "tv", "laptop")
CLOSE_PAIRS = {"hotel": "restaurant", "restaurant": "hotel", "tv": "laptop", "laptop": "tv"}
_COMPARE_DOMAINS = ("tv", "laptop")


class Realizer:
    """Samples dialogue acts for one domain and renders references for them."""

    def __init__(self, domain, seed=0):
        self.domain = domain
        self.entity, self.slots, heads = _domain_slots(domain)
        # names depend only on the domain so every split shares the ontology
        self.names = _names(named_rng(0, f"names/{domain}"), heads, 24)
        self.rng = np.random.default_rng(seed)
        self.valued = [s for s, spec in self.slots.items() if not spec.binary]
        self.askable = [s for s, spec in self.slots.items() if spec.question]

    def _pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def _value(self, slot):
        return self._pick(self.slots[slot].values)

    def _phrase(self, slot, value, rng):
        spec = self.slots[slot]
        if spec.binary:
            opts = spec.binary[value]
        else:
            opts = spec.phrases
        return opts[int(rng.integers(len(opts)))].replace("{v}", value)

    @staticmethod
    def _join(phrases):
        if len(phrases) == 1:
            return phrases[0]
        return " , ".join(phrases[:-1]) + " and " + phrases[-1]

    def sample_da(self, max_slots=4):
        acts = ["inform", "inform", "recommend", "request", "confirm", "inform_no_match", "inform_count"]
        if self.domain in _COMPARE_DOMAINS:
            acts += ["compare", "compare"]
        act = self._pick(acts)
        rng = self.rng
        attrs = [s for s in self.slots]
        if act in ("inform", "recommend"):
            k = int(rng.integers(1, max_slots + 1))
            chosen = list(rng.choice(attrs, size=min(k, len(attrs)), replace=False))
            slots = [("name", self._pick(self.names))] + [(s, self._value(s)) for s in chosen]
            return DialogueAct(act, tuple(slots))
        if act == "compare":
            k = int(rng.integers(1, 3))
            chosen = list(rng.choice(self.valued, size=k, replace=False))
            n1, n2 = rng.choice(len(self.names), size=2, replace=False)
            slots = [("name", self.names[n1])] + [(s, self._value(s)) for s in chosen]
            slots += [("name", self.names[n2])] + [(s, self._value(s)) for s in chosen]
            return DialogueAct(act, tuple(slots))
        if act == "request":
            return DialogueAct(act, ((self._pick(self.askable), None),))
        if act == "confirm":
            s = self._pick(self.valued)
            return DialogueAct(act, ((s, self._value(s)),))
        if act == "inform_no_match":
            k = int(rng.integers(1, 3))
            chosen = list(rng.choice(self.valued, size=k, replace=False))
            return DialogueAct(act, tuple((s, self._value(s)) for s in chosen))
        k = int(rng.integers(1, 3))
        chosen = list(rng.choice(self.valued, size=k, replace=False))
        count = str(int(rng.integers(2, 9)))
        return DialogueAct("inform_count", (("count", count),) + tuple((s, self._value(s)) for s in chosen))

    def realize(self, da, rng):
        e = self.entity
        if da.act_type in ("inform", "recommend"):
            name = da.slots[0][1]
            rest = list(da.slots[1:])
            order = rng.permutation(len(rest))
            phrases = [self._phrase(rest[i][0], rest[i][1], rng) for i in order]
            if da.act_type == "inform":
                opener = ["the {n} " , "{n} "][int(rng.integers(2))].replace("{n}", name)
                return opener + self._join(phrases) + " ."
            opener = ["i would recommend {n} , it ", "{n} is a nice {e} , it ", "how about {n} ? it "][
                int(rng.integers(3))
            ]
            return opener.replace("{n}", name).replace("{e}", e) + self._join(phrases) + " ."
        if da.act_type == "compare":
            half = len(da.slots) // 2
            a, b = da.slots[:half], da.slots[half:]
            pa = self._join([self._phrase(s, v, rng) for s, v in a[1:]])
            pb = self._join([self._phrase(s, v, rng) for s, v in b[1:]])
            form = int(rng.integers(3))
            if form == 0:
                out = f"compared to {a[0][1]} which {pa} , {b[0][1]} {pb} ."
            elif form == 1:
                out = f"the {a[0][1]} {pa} , while the {b[0][1]} {pb} ."
            else:
                out = f"{a[0][1]} {pa} but {b[0][1]} {pb} ."
            tail = ["", " which one do you prefer ?", " which would you like ?"][int(rng.integers(3))]
            return out + tail
        if da.act_type == "request":
            q = self.slots[da.slots[0][0]].question
            return [f"{q} ?", f"can you tell me {q} ?"][int(rng.integers(2))]
        if da.act_type == "confirm":
            s, v = da.slots[0]
            return [f"you want a {e} that {self._phrase(s, v, rng)} , right ?",
                    f"just to confirm , the {e} {self._phrase(s, v, rng)} ?"][int(rng.integers(2))]
        if da.act_type == "inform_no_match":
            phrases = [self._phrase(s, v, rng) for s, v in da.slots]
            return [f"there is no {e} that {self._join(phrases)} .",
                    f"sorry , i could not find a {e} that {self._join(phrases)} ."][int(rng.integers(2))]
        count = da.slots[0][1]
        phrases = [self._phrase(s, v, rng) for s, v in da.slots[1:]]
        return [f"there are {count} {e} -s that {self._join(phrases)} .",
                f"i found {count} {e} -s that {self._join(phrases)} ."][int(rng.integers(2))]

    def example(self, n_refs):
        da = self.sample_da()
        refs = []
        for _ in range(n_refs * 4):
            r = self.realize(da, self.rng)
            if r not in refs:
                refs.append(r)
            if len(refs) == n_refs:
                break
        return {"da": da.serialize(), "refs": refs}


def generate_domain(domain, n_train, n_valid, n_test, seed=0, train_refs=1, eval_refs=3):
    """Return ``{split: [json objects]}``. Evaluation DAs never repeat a training DA."""
    r = Realizer(domain, seed)
    train = [r.example(train_refs) for _ in range(n_train)]
    seen = {ex["da"] for ex in train}
    held = []
    while len(held) < n_valid + n_test:
        ex = r.example(eval_refs)
        if ex["da"] not in seen:
            seen.add(ex["da"])
            held.append(ex)
    return {"train": train, "valid": held[:n_valid], "test": held[n_valid:]}


def write_corpus(root, domains=DOMAINS, n_train=2000, n_valid=200, n_test=200, seed=0):
    """Write ``root/<domain>/{train,valid,test}.jsonl`` for each domain."""
    root = Path(root)
    for i, d in enumerate(domains):
        splits = generate_domain(d, n_train, n_valid, n_test, seed=seed * 1000 + i)
        (root / d).mkdir(parents=True, exist_ok=True)
        for split, rows in splits.items():
            write_jsonl(root / d / f"{split}.jsonl", rows)
    return root
