"""Recovery metrics: vector matching, squared residual, wrong-vector count."""
from dataclasses import dataclass

import numpy as np

WRONG_THRESHOLD = 0.1


@dataclass(frozen=True)
class Match:
    truth: int  # column in the ground-truth matrix
    estimate: int  # column in the recovered matrix
    sign: float  # sign applied to the estimate before comparing
    sq_dist: float  # ||v - sign * v_hat||^2


def match_vectors(V_true, V_hat):
    """Greedy maximum-|cosine| one-to-one matching with sign alignment.

    Repeatedly pairs the remaining (truth, estimate) columns with the largest
    absolute cosine. Returns one Match per estimate column (or per truth
    column, whichever is fewer), ordered by estimate index.
    """
    V_true = np.asarray(V_true, dtype=np.float64)
    V_hat = np.asarray(V_hat, dtype=np.float64)
    nt = np.linalg.norm(V_true, axis=0)
    nh = np.linalg.norm(V_hat, axis=0)
    cos = (V_true.T @ V_hat) / np.outer(np.where(nt > 0, nt, 1), np.where(nh > 0, nh, 1))
    score = np.abs(cos)
    matches = []
    for _ in range(min(score.shape)):
        i, j = np.unravel_index(np.argmax(score), score.shape)
        sign = 1.0 if cos[i, j] >= 0 else -1.0
        d = V_true[:, i] - sign * V_hat[:, j]
        matches.append(Match(int(i), int(j), sign, float(d @ d)))
        score[i, :] = -1.0
        score[:, j] = -1.0
    return sorted(matches, key=lambda m: m.estimate)


def recovery_metrics(V_true, V_hat, threshold=WRONG_THRESHOLD):
    """(squared residual summed over matched pairs, number of pairs above threshold, matches)."""
    matches = match_vectors(V_true, V_hat)
    residual = float(sum(m.sq_dist for m in matches))
    wrong = sum(m.sq_dist > threshold for m in matches)
    return residual, int(wrong), matches
