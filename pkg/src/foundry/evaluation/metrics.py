"""Caption and VQA metrics.

Conventions, fixed here and mirrored by the brute-force test oracles:

* Tokenization is plain whitespace splitting of the raw text (leading and
  trailing whitespace is therefore irrelevant).
* BLEU-4: modified n-gram precisions for n = 1..4; a zero precision is
  replaced by EPS = 1e-9; n-levels where the candidate has no n-grams at all
  are excluded from the geometric mean (so identity scores exactly 1.0 for
  short texts too); brevity penalty uses the closest reference length, ties
  to the shorter.
* ROUGE-L: LCS F-measure with beta = 1.2, maximum over references.
* METEOR-lite: exact-unigram greedy in-order alignment, F_mean with
  alpha = 0.9, fragmentation penalty gamma * (chunks/m)^theta with
  gamma = 0.5, theta = 3; no stemming or synonymy; maximum over references.
* CIDEr: TF-IDF n-gram cosine for n = 1..4 over the reference corpus,
  averaged over references then over n, scaled by 10.  When both vectors
  are zero at some n (texts shorter than n, or all weights idf-zero) the
  cosine is 1 if the two token sequences are identical and 0 otherwise, so
  identity always attains the maximum; when exactly one vector is zero the
  cosine is 0.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Mapping, Sequence

from ..textnorm import modal_answer, normalize_answer

EPS = 1e-9
ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_THETA = 3.0
CIDER_SCALE = 10.0
MAX_NGRAM = 4


class CorpusTooSmall(Exception):
    pass


def _tokens(text: str) -> list[str]:
    return text.split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# VQA accuracy


def vqa_accuracy(candidate: str, gt_answers: Sequence[str], mode: str = "consensus") -> float:
    """Consensus accuracy min(matches/3, 1) against ten annotator answers.

    ``mode="strict"`` instead scores 1.0 iff the candidate equals the modal
    normalized answer.  Both compare normalized strings.
    """
    if len(gt_answers) != 10:
        raise ValueError(f"expected 10 ground-truth answers, got {len(gt_answers)}")
    cand = normalize_answer(candidate)
    if mode == "strict":
        return 1.0 if cand == modal_answer(list(gt_answers)) else 0.0
    if mode != "consensus":
        raise ValueError(f"unknown accuracy mode {mode!r}")
    matches = sum(1 for g in gt_answers if normalize_answer(g) == cand)
    return min(matches / 3.0, 1.0)


# ---------------------------------------------------------------------------
# BLEU-4


def bleu4(candidate: str, references: Sequence[str]) -> float:
    cand = _tokens(candidate)
    refs = [_tokens(r) for r in references]
    if not cand or not refs:
        return 0.0
    log_sum = 0.0
    levels = 0
    for n in range(1, MAX_NGRAM + 1):
        cand_ngrams = _ngrams(cand, n)
        total = sum(cand_ngrams.values())
        if total == 0:
            continue
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        matched = sum(min(count, max_ref[gram]) for gram, count in cand_ngrams.items())
        precision = matched / total if matched > 0 else EPS
        log_sum += math.log(precision)
        levels += 1
    if levels == 0:
        return 0.0
    geo_mean = math.exp(log_sum / levels)
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    brevity = 1.0 if len(cand) > ref_len else math.exp(1.0 - ref_len / len(cand))
    return brevity * geo_mean


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok_a in a:
        cur = [0] * (len(b) + 1)
        for j, tok_b in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if tok_a == tok_b else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, references: Sequence[str]) -> float:
    cand = _tokens(candidate)
    best = 0.0
    for reference in references:
        ref = _tokens(reference)
        lcs = _lcs_length(cand, ref)
        if lcs == 0 or not cand or not ref:
            continue
        p = lcs / len(cand)
        r = lcs / len(ref)
        beta2 = ROUGE_BETA ** 2
        f = (1 + beta2) * p * r / (r + beta2 * p)
        best = max(best, f)
    return best


# ---------------------------------------------------------------------------
# METEOR-lite


def _greedy_alignment(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Match candidate tokens to reference tokens: exact matches only,
    candidate scanned left to right, each taking the first unused identical
    reference position."""
    used = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, rtok in enumerate(ref):
            if not used[j] and rtok == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    if not pairs:
        return 0
    count = 1
    for (ci, ri), (cj, rj) in zip(pairs, pairs[1:]):
        if not (cj == ci + 1 and rj == ri + 1):
            count += 1
    return count


def meteor_lite(candidate: str, references: Sequence[str]) -> float:
    cand = _tokens(candidate)
    best = 0.0
    for reference in references:
        ref = _tokens(reference)
        if not cand or not ref:
            continue
        pairs = _greedy_alignment(cand, ref)
        m = len(pairs)
        if m == 0:
            continue
        p = m / len(cand)
        r = m / len(ref)
        f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
        penalty = METEOR_GAMMA * (_chunks(pairs) / m) ** METEOR_THETA
        best = max(best, f_mean * (1.0 - penalty))
    return best


# ---------------------------------------------------------------------------
# CIDEr


def cider(candidates: Mapping[str, str],
          references: Mapping[str, Sequence[str]]) -> tuple[dict[str, float], float]:
    """Per-image CIDEr scores and the corpus mean.

    IDF is computed over the reference corpus only: df(g) = number of images
    whose reference set contains n-gram g, idf = ln(N) - ln(max(1, df)).
    """
    if set(candidates) != set(references):
        raise ValueError("candidate and reference image ids differ")
    n_images = len(references)
    if n_images < 2:
        raise CorpusTooSmall(f"CIDEr needs at least 2 images, got {n_images}")

    df: list[Counter] = [Counter() for _ in range(MAX_NGRAM)]
    for refs in references.values():
        seen: list[set] = [set() for _ in range(MAX_NGRAM)]
        for ref in refs:
            toks = _tokens(ref)
            for n in range(1, MAX_NGRAM + 1):
                seen[n - 1].update(_ngrams(toks, n).keys())
        for n in range(MAX_NGRAM):
            for gram in seen[n]:
                df[n][gram] += 1

    log_n = math.log(n_images)

    def tfidf(tokens: Sequence[str], n: int) -> dict:
        return {
            gram: count * (log_n - math.log(max(1.0, df[n - 1][gram])))
            for gram, count in _ngrams(tokens, n).items()
        }

    def cosine(u: dict, v: dict, identical: bool) -> float:
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 and nv == 0.0:
            return 1.0 if identical else 0.0
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(weight * v.get(gram, 0.0) for gram, weight in u.items())
        return dot / (nu * nv)

    scores: dict[str, float] = {}
    for image_id in sorted(candidates):
        cand = _tokens(candidates[image_id])
        refs = [_tokens(r) for r in references[image_id]]
        per_n = []
        for n in range(1, MAX_NGRAM + 1):
            cand_vec = tfidf(cand, n)
            sims = [cosine(cand_vec, tfidf(ref, n), cand == ref) for ref in refs]
            per_n.append(sum(sims) / len(sims))
        scores[image_id] = CIDER_SCALE * sum(per_n) / MAX_NGRAM
    corpus_mean = sum(scores.values()) / len(scores)
    return scores, corpus_mean
