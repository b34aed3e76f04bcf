"""Dialogue acts, delexicalisation, vocabularies and training scenarios."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
NONE_VALUE = "<none>"
SENTINEL_SLOT = "<sentinel>"
MAX_LEN = 73

# values that are realised by wording rather than copied into the text
BINARY_VALUES = frozenset({"yes", "no", "true", "false", "none", "dontcare", "dont_care"})

_SLOT_RE = re.compile(r"[a-z_][a-z0-9_]*")
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[.'][a-z0-9]+)*|[^\sa-z0-9]")


class DAParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class DialogueAct:
    act_type: str
    slots: tuple = ()  # ((name, value or None), ...) in surface order, duplicates kept

    def __post_init__(self):
        if not self.act_type:
            raise ValueError("act_type must be non-empty")
        for name, _ in self.slots:
            if not _SLOT_RE.fullmatch(name):
                raise ValueError(f"slot name {name!r} is not a lowercase identifier")

    def serialize(self):
        parts = []
        for name, value in self.slots:
            if value is None:
                parts.append(name)
            else:
                esc = value.replace("\\", "\\\\").replace("'", "\\'")
                parts.append(f"{name}='{esc}'")
        return f"{self.act_type}({'; '.join(parts)})"

    __str__ = serialize

    def valued_slots(self):
        """Slots whose value is copied into the text (the ones that get delexicalised)."""
        return [(n, v) for n, v in self.slots if v is not None and v.lower() not in BINARY_VALUES]


def parse_da(text):
    """Parse ``act(slot=value; slot2='quoted'; flag)``.

    Values may be bare, single- or double-quoted (backslash escapes inside
    quotes). Slot order and repeated slot names are preserved.
    """
    s = text

    def offset(i):
        return len(s[:i].encode("utf-8"))

    i = 0
    n = len(s)
    while i < n and s[i].isspace():
        i += 1
    start = i
    while i < n and (s[i].isalnum() or s[i] in "_-"):
        i += 1
    act = s[start:i]
    if not act:
        raise DAParseError("expected act type", offset(i))
    while i < n and s[i].isspace():
        i += 1
    if i >= n or s[i] != "(":
        raise DAParseError("expected '('", offset(i))
    i += 1
    slots = []
    while True:
        while i < n and s[i].isspace():
            i += 1
        if i < n and s[i] == ")":
            i += 1
            break
        start = i
        while i < n and (s[i].isalnum() or s[i] == "_"):
            i += 1
        name = s[start:i]
        if not _SLOT_RE.fullmatch(name or "-"):
            raise DAParseError("expected lowercase slot name", offset(start))
        while i < n and s[i].isspace():
            i += 1
        value = None
        if i < n and s[i] == "=":
            i += 1
            while i < n and s[i].isspace():
                i += 1
            if i < n and s[i] in "'\"":
                quote = s[i]
                i += 1
                buf = []
                while True:
                    if i >= n:
                        raise DAParseError("unterminated quoted value", offset(i))
                    ch = s[i]
                    if ch == "\\" and i + 1 < n:
                        buf.append(s[i + 1])
                        i += 2
                        continue
                    if ch == quote:
                        i += 1
                        break
                    buf.append(ch)
                    i += 1
                value = "".join(buf)
            else:
                start = i
                while i < n and s[i] not in ";)":
                    i += 1
                value = s[start:i].strip()
        slots.append((name, value))
        while i < n and s[i].isspace():
            i += 1
        if i < n and s[i] == ";":
            i += 1
            continue
        if i < n and s[i] == ")":
            i += 1
            break
        raise DAParseError("expected ';' or ')'", offset(i))
    while i < n and s[i].isspace():
        i += 1
    if i != n:
        raise DAParseError("trailing characters", offset(i))
    return DialogueAct(act, tuple(slots))


# tokens ------------------------------------------------------------------------


def placeholder(slot_name):
    return f"SLOT_{slot_name.upper()}"


def is_placeholder(token):
    return token.startswith("SLOT_")


def placeholder_slot(token):
    return token[5:].lower()


def tokenize(text):
    """Lowercase, then split into alphanumeric words and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text):
    return " ".join(tokenize(text))


@dataclass(frozen=True)
class Utterance:
    tokens: tuple
    alignment: tuple = ()  # ((slot_name, surface value), ...) one entry per placeholder, in token order

    def __len__(self):
        return len(self.tokens)


def delexicalize(surface, da, lint=None):
    """Replace slot values in ``surface`` by ``SLOT_<NAME>`` placeholders.

    Matching is on lowercased tokens, longest value first, leftmost free
    occurrence. Values that cannot be found are appended to ``lint``.
    """
    tokens = tokenize(surface)
    wanted = []
    for order, (name, value) in enumerate(da.slots):
        if value is None or value.lower() in BINARY_VALUES:
            continue
        vt = tokenize(value)
        if vt:
            wanted.append((order, name, value, vt))
    wanted.sort(key=lambda w: (-len(w[3]), w[0]))
    claimed = [None] * len(tokens)
    spans = {}
    for order, name, value, vt in wanted:
        k = len(vt)
        hit = None
        for start in range(len(tokens) - k + 1):
            if tokens[start : start + k] == vt and all(c is None for c in claimed[start : start + k]):
                hit = start
                break
        if hit is None:
            if lint is not None:
                lint.append((name, value))
            continue
        for j in range(hit, hit + k):
            claimed[j] = order
        spans[hit] = (name, value, k)
    out, alignment = [], []
    i = 0
    while i < len(tokens):
        if i in spans:
            name, value, k = spans[i]
            out.append(placeholder(name))
            alignment.append((name, value))
            i += k
        else:
            out.append(tokens[i])
            i += 1
    return Utterance(tuple(out), tuple(alignment))


def relexicalize(u, da, redundant=None):
    """Fill placeholders with DA values, consuming same-named slots in DA order.

    Placeholders without a remaining slot are left verbatim and reported through
    ``redundant``.
    """
    tokens = u.tokens if isinstance(u, Utterance) else tuple(u)
    queues = {}
    for name, value in da.slots:
        if value is not None:
            queues.setdefault(name, []).append(value)
    out = []
    for tok in tokens:
        if is_placeholder(tok):
            q = queues.get(placeholder_slot(tok))
            if q:
                out.append(normalize(q.pop(0)))
                continue
            if redundant is not None:
                redundant.append(tok)
        out.append(tok)
    return " ".join(out)


def corrupt_swap(tokens, n_swaps, rng):
    """Exchange ``n_swaps`` disjoint random position pairs (clipped to len // 2)."""
    tokens = list(tokens)
    n = min(max(n_swaps, 0), len(tokens) // 2)
    if n == 0:
        return tokens
    pos = rng.permutation(len(tokens))[: 2 * n]
    for a, b in zip(pos[0::2], pos[1::2]):
        tokens[a], tokens[b] = tokens[b], tokens[a]
    return tokens


def default_swaps(length):
    return max(1, int(math.floor(0.05 * length)))


# vocabulary -------------------------------------------------------------------------


class Vocabulary:
    """Utterance tokens plus the separate slot-name and value tables of the DA encoder."""

    def __init__(self, tokens=(), slots=(), values=()):
        self.itos = list(RESERVED)
        self.slot_itos = ["<pad>", "<unk>", SENTINEL_SLOT]
        self.value_itos = ["<pad>", "<unk>", NONE_VALUE]
        for t in tokens:
            self._add(self.itos, t)
        for s in slots:
            self._add(self.slot_itos, s)
        for v in values:
            self._add(self.value_itos, v)
        self._reindex()

    @staticmethod
    def _add(table, item):
        if item not in table:
            table.append(item)

    def _reindex(self):
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.slot_stoi = {t: i for i, t in enumerate(self.slot_itos)}
        self.value_stoi = {t: i for i, t in enumerate(self.value_itos)}

    @classmethod
    def build(cls, examples):
        toks, slots, values = [], [], []
        seen_t, seen_s, seen_v = set(), set(), set()
        for ex in examples:
            for s, v in da_pairs(ex.da) if ex.da is not None else ():
                if s not in seen_s:
                    seen_s.add(s)
                    slots.append(s)
                if v not in seen_v:
                    seen_v.add(v)
                    values.append(v)
            for u in ex.utterances:
                for t in u.tokens:
                    if t not in seen_t:
                        seen_t.add(t)
                        toks.append(t)
        return cls(toks, slots, values)

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def encode_da(self, da):
        pairs = da_pairs(da)
        slot_ids = [self.slot_stoi.get(s, 1) for s, _ in pairs]
        value_ids = [self.value_stoi.get(v, 1) for _, v in pairs]
        return slot_ids, value_ids

    def to_json(self):
        return {"tokens": self.itos, "slots": self.slot_itos, "values": self.value_itos}

    @classmethod
    def from_json(cls, obj):
        v = cls()
        v.itos = list(obj["tokens"])
        v.slot_itos = list(obj["slots"])
        v.value_itos = list(obj["values"])
        if tuple(v.itos[:4]) != RESERVED:
            raise ValueError("vocabulary reserved ids are corrupt")
        v._reindex()
        return v

    def fingerprint(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def da_pairs(da):
    """(slot, value) token pairs fed to the DA encoder.

    The act type leads as its own pair; an act without slots gets a sentinel pair.
    """
    pairs = [(f"act_{da.act_type}", NONE_VALUE)]
    for name, value in da.slots:
        pairs.append((name, NONE_VALUE if value is None else value.lower()))
    if not da.slots:
        pairs.append((SENTINEL_SLOT, NONE_VALUE))
    return pairs


# examples and datasets ------------------------------------------------------------------


@dataclass
class Example:
    da: DialogueAct
    refs: list
    utterances: list = field(default_factory=list)  # delexicalised refs, parallel to ``refs``
    index: int = -1

    @classmethod
    def from_json(cls, obj, index=-1, max_len=MAX_LEN):
        da = parse_da(obj["da"])
        refs = list(obj.get("refs", []))
        ex = cls(da, refs, index=index)
        ex.utterances = []
        for r in refs:
            lint = []
            u = delexicalize(r, da, lint)
            if lint:
                log.debug("example %d: values not found in reference: %s", index, lint)
            if len(u.tokens) > max_len - 1:
                log.warning("example %d: utterance of %d tokens truncated to %d", index, len(u.tokens), max_len - 1)
                u = Utterance(u.tokens[: max_len - 1], u.alignment)
            ex.utterances.append(u)
        return ex

    def to_json(self):
        return {"da": self.da.serialize(), "refs": self.refs}


def read_jsonl(path, max_len=MAX_LEN):
    examples = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if line:
                examples.append(Example.from_json(json.loads(line), index=len(examples), max_len=max_len))
    return examples


def write_jsonl(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json() if isinstance(ex, Example) else ex, ensure_ascii=False) + "\n")


SPLITS = ("train", "valid", "test")


def load_dataset(root, domains):
    """``{domain: {split: [Example]}}`` from ``root/<domain>/<split>.jsonl``."""
    root = Path(root)
    data = {}
    for d in domains:
        ddir = root / d
        if not ddir.is_dir():
            raise FileNotFoundError(f"unknown domain {d!r}: {ddir} does not exist")
        data[d] = {s: read_jsonl(ddir / f"{s}.jsonl") for s in SPLITS}
    return data


def corpus_hash(root, domains):
    h = hashlib.sha256()
    for d in sorted(domains):
        for s in SPLITS:
            p = Path(root) / d / f"{s}.jsonl"
            h.update(f"{d}/{s}\n".encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# scenarios ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str  # scratch | adaptation | semi
    target_domain: str
    train_fraction: float = 1.0
    source_domains: tuple = ()
    unlabeled_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("scratch", "adaptation", "semi"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.kind == "semi" and not 0.0 < self.unlabeled_fraction <= 1.0:
            raise ValueError("unlabeled_fraction must lie in (0, 1]")
        if self.kind == "adaptation" and not self.source_domains:
            raise ValueError("adaptation needs at least one source domain")

    @classmethod
    def from_name(cls, name, target_domain, source_domains=(), seed=0):
        """``scr10`` / ``scr30`` / ``scr100`` / ``adapt`` / ``semi-U50-L10``."""
        m = re.fullmatch(r"scr(\d+)", name)
        if m:
            return cls("scratch", target_domain, int(m.group(1)) / 100.0, seed=seed)
        m = re.fullmatch(r"semi-U(\d+)-L(\d+)", name)
        if m:
            return cls(
                "semi", target_domain, int(m.group(2)) / 100.0, unlabeled_fraction=int(m.group(1)) / 100.0, seed=seed
            )
        m = re.fullmatch(r"adapt(\d+)?", name)
        if m:
            frac = int(m.group(1)) / 100.0 if m.group(1) else 0.10
            return cls("adaptation", target_domain, frac, tuple(source_domains), seed=seed)
        raise ValueError(f"unknown scenario {name!r}")


def _count(fraction, n):
    return int(math.floor(fraction * n + 0.5))


def strip_da(example):
    """Unlabelled copy: utterances only."""
    return Example(None, list(example.refs), list(example.utterances), example.index)


def make_scenario(dataset, spec):
    """Carve ``dataset`` into train / valid / test / unlabeled (and finetune) splits.

    Returns ``(splits, manifest)``; the manifest lists split membership by
    example index and is enough to rebuild the splits.
    """
    if spec.target_domain not in dataset:
        raise ValueError(f"unknown domain {spec.target_domain!r}")
    for d in spec.source_domains:
        if d not in dataset:
            raise ValueError(f"unknown domain {d!r}")
    target = dataset[spec.target_domain]
    n = len(target["train"])
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_lab = _count(spec.train_fraction, n)
    n_unl = _count(spec.unlabeled_fraction, n) if spec.kind == "semi" else 0
    if n_lab < 1:
        raise ValueError("train fraction selects no examples")
    if n_lab + n_unl > n:
        raise ValueError(f"requested {n_lab}+{n_unl} examples but only {n} available")
    lab_idx = sorted(int(i) for i in perm[:n_lab])
    unl_idx = sorted(int(i) for i in perm[n_lab : n_lab + n_unl])
    splits = {
        "valid": list(target["valid"]),
        "test": list(target["test"]),
        "unlabeled": [strip_da(target["train"][i]) for i in unl_idx],
        "finetune": [],
    }
    manifest = {"spec": spec.__dict__ | {"source_domains": list(spec.source_domains)}, "target_train_size": n}
    if spec.kind == "adaptation":
        src = []
        manifest["source"] = {}
        for d in spec.source_domains:
            src.extend(dataset[d]["train"])
            manifest["source"][d] = list(range(len(dataset[d]["train"])))
        splits["train"] = src
        splits["finetune"] = [target["train"][i] for i in lab_idx]
        manifest["finetune"] = lab_idx
    else:
        splits["train"] = [target["train"][i] for i in lab_idx]
        manifest["train"] = lab_idx
    manifest["unlabeled"] = unl_idx
    return splits, manifest
