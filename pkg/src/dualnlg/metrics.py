"""Corpus BLEU-4 and slot error rate."""

from __future__ import annotations

import logging
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field

from .corpus import is_placeholder, placeholder

log = logging.getLogger(__name__)

SMOOTHING = 1e-9


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n=4, smoothing=SMOOTHING):
    """Corpus-level BLEU with clipped n-gram counts and the closest-reference brevity penalty.

    ``candidates`` is a list of token lists; ``references`` a parallel list of
    non-empty lists of token lists. An n-gram order with candidate n-grams but
    no matches contributes ``smoothing / total`` instead of zero; an order with
    no candidate n-grams at all (every candidate shorter than n) contributes 1,
    so a sentence scored against itself always gets 1.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} reference sets")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            best = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            totals[n - 1] += sum(counts.values())
    log_p = 0.0
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        p = m / t if m > 0 else smoothing / t
        log_p += math.log(p) / max_n
    if cand_len == 0:
        return 0.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def slot_error_counts(tokens, da):
    """``(missing, redundant, required)`` placeholder counts for one delexicalised output."""
    required = Counter(placeholder(name) for name, _ in da.valued_slots())
    produced = Counter(t for t in tokens if is_placeholder(t))
    missing = sum(max(0, c - produced[p]) for p, c in required.items())
    redundant = sum(max(0, c - required[p]) for p, c in produced.items())
    return missing, redundant, sum(required.values())


def slot_error_rate(generated, das):
    """Pooled ``100 * (missing + redundant) / required`` over a corpus.

    Binary and value-less slots are not realised as placeholders, so they are
    left out of the count.
    """
    if len(generated) != len(das):
        raise ValueError(f"{len(generated)} outputs but {len(das)} dialogue acts")
    p = q = n = 0
    skipped = 0
    for tokens, da in zip(generated, das):
        tokens = getattr(tokens, "tokens", tokens)
        a, b, c = slot_error_counts(tokens, da)
        p, q, n = p + a, q + b, n + c
        skipped += len(da.slots) - len(da.valued_slots())
    if skipped:
        log.debug("%d binary or value-less slots excluded from ERR", skipped)
    return 100.0 * (p + q) / max(n, 1)


@dataclass
class ScoreRow:
    domain: str
    scenario: str
    model: str
    bleu: list = field(default_factory=list)  # one value per seed
    err: list = field(default_factory=list)

    @staticmethod
    def _mean(xs):
        return statistics.fmean(xs) if xs else float("nan")

    @staticmethod
    def _std(xs):
        return statistics.pstdev(xs) if len(xs) > 1 else 0.0

    @property
    def bleu_mean(self):
        return self._mean(self.bleu)

    @property
    def bleu_std(self):
        return self._std(self.bleu)

    @property
    def err_mean(self):
        return self._mean(self.err)

    @property
    def err_std(self):
        return self._std(self.err)


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def row(self, domain, scenario, model):
        for r in self.rows:
            if (r.domain, r.scenario, r.model) == (domain, scenario, model):
                return r
        r = ScoreRow(domain, scenario, model)
        self.rows.append(r)
        return r

    def add(self, domain, scenario, model, bleu_value, err_value):
        r = self.row(domain, scenario, model)
        r.bleu.append(bleu_value)
        r.err.append(err_value)

    def to_markdown(self):
        """One line per model, one BLEU/ERR column pair per (domain, scenario)."""
        cols = []
        for r in self.rows:
            if (r.domain, r.scenario) not in cols:
                cols.append((r.domain, r.scenario))
        models = []
        for r in self.rows:
            if r.model not in models:
                models.append(r.model)
        head = "| model | " + " | ".join(f"{d} {s} BLEU | {d} {s} ERR" for d, s in cols) + " |"
        sep = "|---" * (1 + 2 * len(cols)) + "|"
        lines = [head, sep]
        for m in models:
            cells = []
            for d, s in cols:
                r = next((x for x in self.rows if (x.domain, x.scenario, x.model) == (d, s, m)), None)
                if r is None:
                    cells += ["", ""]
                else:
                    cells += [
                        f"{r.bleu_mean:.4f} ± {r.bleu_std:.4f} (n={len(r.bleu)})",
                        f"{r.err_mean:.2f}% ± {r.err_std:.2f}",
                    ]
            lines.append(f"| {m} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_rows(self):
        out = []
        for r in self.rows:
            out.append(
                {
                    "domain": r.domain,
                    "scenario": r.scenario,
                    "model": r.model,
                    "seeds": len(r.bleu),
                    "bleu_mean": r.bleu_mean,
                    "bleu_std": r.bleu_std,
                    "err_mean": r.err_mean,
                    "err_std": r.err_std,
                    "bleu_per_seed": " ".join(repr(x) for x in r.bleu),
                    "err_per_seed": " ".join(repr(x) for x in r.err),
                }
            )
        return out
