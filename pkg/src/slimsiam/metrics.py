"""Verification-protocol evaluation: trials, scoring, EER, DET points.

Distances are used directly as scores with accept-if-at-most-t polarity:
a lower distance means more likely genuine. FAR(t) is the fraction of
impostor distances <= t, FRR(t) the fraction of genuine distances > t.

The EER estimator is exact for finite score sets: candidate thresholds
are the midpoints between consecutive distinct pooled scores plus one
sentinel below the minimum and one above the maximum; FAR - FRR is a
step function rising from -1 to +1, and the equal-error point is read
off at the first sign change, linearly interpolating between the two
bracketing candidates.
"""

from dataclasses import dataclass, field

import numpy as np

from . import net as N
from .errors import CapacityError, DomainError


@dataclass(frozen=True)
class Trial:
    utt_a: str
    utt_b: str
    label: int             # 1 genuine, 0 impostor


@dataclass
class TrialSet:
    trials: list
    seed: int


@dataclass
class EvalReport:
    genuine: np.ndarray
    impostor: np.ndarray
    eer: float
    threshold: float
    det: list = field(default_factory=list)


def make_trials(dataset, n_genuine, n_impostor, seed):
    """Sample genuine and impostor trial pairs without replacement.

    Args:
        dataset: mapping speaker_id -> sequence of utterance ids.
        n_genuine: same-speaker pairs to draw (distinct utterances).
        n_impostor: different-speaker pairs to draw.
        seed: draw seed; identical arguments give an identical TrialSet.

    Raises:
        CapacityError: fewer than 2 speakers, a speaker with fewer than
            2 utterances, or a requested count above the distinct pairs
            available.
    """
    speakers = sorted(dataset)
    if len(speakers) < 2:
        raise CapacityError(f"need >= 2 speakers, got {len(speakers)}")
    for s in speakers:
        if len(dataset[s]) < 2:
            raise CapacityError(f"speaker {s} has {len(dataset[s])} "
                                f"utterances, need >= 2")
    genuine_cands = []
    for s in speakers:
        utts = list(dataset[s])
        for i in range(len(utts)):
            for j in range(i + 1, len(utts)):
                genuine_cands.append((utts[i], utts[j]))
    impostor_cands = []
    for si in range(len(speakers)):
        for sj in range(si + 1, len(speakers)):
            for ua in dataset[speakers[si]]:
                for ub in dataset[speakers[sj]]:
                    impostor_cands.append((ua, ub))
    if n_genuine > len(genuine_cands):
        raise CapacityError(f"{n_genuine} genuine trials requested, "
                            f"{len(genuine_cands)} distinct pairs exist")
    if n_impostor > len(impostor_cands):
        raise CapacityError(f"{n_impostor} impostor trials requested, "
                            f"{len(impostor_cands)} distinct pairs exist")
    rng = np.random.Generator(np.random.PCG64(seed))
    trials = []
    for idx in rng.choice(len(genuine_cands), size=n_genuine, replace=False):
        a, b = genuine_cands[idx]
        trials.append(Trial(a, b, 1))
    for idx in rng.choice(len(impostor_cands), size=n_impostor,
                          replace=False):
        a, b = impostor_cands[idx]
        trials.append(Trial(a, b, 0))
    return TrialSet(trials, seed)


def score_trials(model, trials, features):
    """Embedding distance per trial.

    Args:
        model: embedding network.
        trials: TrialSet or list of Trial.
        features: mapping utterance id -> feature cube.

    Returns:
        list of (Trial, distance), in trial order.
    """
    items = trials.trials if isinstance(trials, TrialSet) else trials
    cache = {}

    def embed(utt):
        if utt not in cache:
            cache[utt] = N.forward(model, features[utt])
        return cache[utt]

    return [(t, N.distance(embed(t.utt_a), embed(t.utt_b))) for t in items]


def _candidates(genuine, impostor):
    pooled = np.unique(np.concatenate([genuine, impostor]))
    mids = (pooled[:-1] + pooled[1:]) / 2.0
    return np.concatenate([[pooled[0] - 1.0], mids, [pooled[-1] + 1.0]])


def _far_frr(genuine, impostor, thresholds):
    far = np.array([np.mean(impostor <= t) for t in thresholds])
    frr = np.array([np.mean(genuine > t) for t in thresholds])
    return far, frr


def eer(genuine, impostor):
    """Equal error rate and its threshold.

    Returns:
        (eer, threshold) with eer in [0, 1].

    Raises:
        DomainError: an empty score list.
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise DomainError("eer needs non-empty genuine and impostor scores")
    cand = _candidates(genuine, impostor)
    far, frr = _far_frr(genuine, impostor, cand)
    d = far - frr
    j = int(np.argmax(d >= 0.0))    # first index at or past the crossing
    if d[j] == 0.0:
        return float(far[j]), float(cand[j])
    alpha = -d[j - 1] / (d[j] - d[j - 1])
    value = far[j - 1] + alpha * (far[j] - far[j - 1])
    threshold = cand[j - 1] + alpha * (cand[j] - cand[j - 1])
    return float(value), float(threshold)


def det_points(genuine, impostor):
    """(threshold, FAR, FRR) at every candidate threshold."""
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise DomainError("det needs non-empty genuine and impostor scores")
    cand = _candidates(genuine, impostor)
    far, frr = _far_frr(genuine, impostor, cand)
    return [(float(t), float(a), float(r))
            for t, a, r in zip(cand, far, frr)]


def evaluate(model, trials, features):
    """Score a trial set and assemble the full evaluation report."""
    scored = score_trials(model, trials, features)
    genuine = np.array([d for t, d in scored if t.label == 1])
    impostor = np.array([d for t, d in scored if t.label == 0])
    e, thr = eer(genuine, impostor)
    det = det_points(genuine, impostor)
    return EvalReport(genuine, impostor, e, thr, det), scored


def scores_csv(scored):
    lines = ["trial_id,label,distance"]
    for i, (t, d) in enumerate(scored):
        lines.append(f"{i},{t.label},{d:.17g}")
    return "\n".join(lines) + "\n"


def report_csv(report):
    lines = ["metric,value",
             f"eer,{report.eer:.17g}",
             f"threshold,{report.threshold:.17g}",
             f"n_genuine,{report.genuine.size}",
             f"n_impostor,{report.impostor.size}"]
    return "\n".join(lines) + "\n"


def det_csv(report):
    lines = ["threshold,far,frr"]
    for t, a, r in report.det:
        lines.append(f"{t:.17g},{a:.17g},{r:.17g}")
    return "\n".join(lines) + "\n"
