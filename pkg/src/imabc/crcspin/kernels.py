"""Hot loops of the cohort simulation.

Every kernel exists twice: a vectorized numpy function (``*_numpy``) and an
explicit-loop function compiled with numba (``*_numba``). The public name
points at the numba version unless numba is missing or disabled through
``IMABC_DISABLE_NUMBA``. Random inputs are drawn by the caller, so both
versions see the same numbers.
"""
from __future__ import annotations

import math

import numpy as np

from .._accel import HAS_NUMBA, njit
from .params import D_0, D_INF, LOGNORMAL_SD, SHAPE_P, WEIBULL_SHAPE

C0 = (D_0 / D_INF) ** (1.0 / SHAPE_P)
G10 = -math.log(((10.0 / D_INF) ** (1.0 / SHAPE_P) - 1.0) / (C0 - 1.0))
INV_P = 1.0 / SHAPE_P
INV_K = 1.0 / WEIBULL_SHAPE

KNOTS = np.array([20.0, 50.0, 60.0, 70.0])
SEG_LEN = np.array([30.0, 10.0, 10.0, np.inf])
# tuple copies for the compiled loops
KNOTS_T = (20.0, 50.0, 60.0, 70.0)
SEG_T = (30.0, 10.0, 10.0, math.inf)

NONE, ADENOMA, CANCER = 0, 1, 2


def _knot_offsets(slopes):
    # log-intensity at each knot relative to the value at age 20
    return np.array([0.0, 30.0 * slopes[0], 30.0 * slopes[0] + 10.0 * slopes[1],
                     30.0 * slopes[0] + 10.0 * slopes[1] + 10.0 * slopes[2]])


# ---------------------------------------------------------------------------
# cumulative intensity from age 20
# ---------------------------------------------------------------------------

def cum_intensity_numpy(c0, slopes, ages):
    c0 = np.asarray(c0, dtype=float)
    ages = np.asarray(ages, dtype=float)
    off = _knot_offsets(slopes)
    total = np.zeros(np.broadcast(c0, ages).shape)
    for k in range(4):
        L = np.clip(ages - KNOTS[k], 0.0, SEG_LEN[k])
        b = slopes[k]
        ec = np.exp(c0 + off[k])
        if b == 0.0:
            part = L * ec
        else:
            part = ec * np.expm1(b * L) / b
        total += np.where(L > 0, part, 0.0)
    return total


@njit(cache=True)
def _cum_intensity_loop(c0, slopes, off, ages, out):
    for i in range(ages.shape[0]):
        total = 0.0
        for k in range(4):
            L = ages[i] - KNOTS_T[k]
            if L <= 0.0:
                break
            if L > SEG_T[k]:
                L = SEG_T[k]
            b = slopes[k]
            ec = math.exp(c0[i] + off[k])
            if b == 0.0:
                total += L * ec
            else:
                total += ec * math.expm1(b * L) / b
        out[i] = total
    return out


def cum_intensity_numba(c0, slopes, ages):
    c0 = np.ascontiguousarray(c0, dtype=np.float64)
    ages = np.ascontiguousarray(ages, dtype=np.float64)
    c0, ages = np.broadcast_arrays(c0, ages)
    out = np.empty(ages.shape[0])
    return _cum_intensity_loop(np.ascontiguousarray(c0), np.asarray(slopes, dtype=np.float64),
                               _knot_offsets(slopes), np.ascontiguousarray(ages), out)


# ---------------------------------------------------------------------------
# inverse cumulative intensity
# ---------------------------------------------------------------------------

def invert_intensity_numpy(c0, slopes, y):
    """Ages where the cumulative intensity from 20 reaches ``y`` (inf if never)."""
    c0 = np.asarray(c0, dtype=float)
    y = np.asarray(y, dtype=float).copy()
    off = _knot_offsets(slopes)
    age = np.full(y.shape, np.inf)
    todo = np.ones(y.shape, dtype=bool)
    for k in range(4):
        b = slopes[k]
        c = c0 + off[k]
        ec = np.exp(c)
        if np.isfinite(SEG_LEN[k]):
            mass = SEG_LEN[k] * ec if b == 0.0 else ec * np.expm1(b * SEG_LEN[k]) / b
        elif b < 0:
            mass = -ec / b
        else:
            mass = np.full(y.shape, np.inf)
        here = todo & (y <= mass)
        if b == 0.0:
            x = y * np.exp(-c)
        else:
            arg = y * b * np.exp(-c)
            with np.errstate(invalid="ignore"):
                x = np.where(arg > -1.0, np.log1p(np.maximum(arg, -1.0)) / b, np.inf)
        age = np.where(here, KNOTS[k] + x, age)
        todo &= ~here
        y = np.where(todo, y - mass, y)
    return age


@njit(cache=True)
def _invert_intensity_loop(c0, slopes, off, y, out):
    for i in range(y.shape[0]):
        rem = y[i]
        res = math.inf
        for k in range(4):
            b = slopes[k]
            c = c0[i] + off[k]
            ec = math.exp(c)
            if k < 3:
                if b == 0.0:
                    mass = SEG_T[k] * ec
                else:
                    mass = ec * math.expm1(b * SEG_T[k]) / b
            elif b < 0.0:
                mass = -ec / b
            else:
                mass = math.inf
            if rem <= mass:
                if b == 0.0:
                    res = KNOTS_T[k] + rem * math.exp(-c)
                else:
                    arg = rem * b * math.exp(-c)
                    if arg > -1.0:
                        res = KNOTS_T[k] + math.log1p(arg) / b
                break
            rem -= mass
        out[i] = res
    return out


def invert_intensity_numba(c0, slopes, y):
    y = np.ascontiguousarray(y, dtype=np.float64)
    c0 = np.ascontiguousarray(np.broadcast_to(np.asarray(c0, dtype=np.float64), y.shape))
    out = np.empty(y.shape[0])
    return _invert_intensity_loop(c0, np.asarray(slopes, dtype=np.float64),
                                  _knot_offsets(slopes), y, out)


# ---------------------------------------------------------------------------
# per-adenoma events
# ---------------------------------------------------------------------------

def adenoma_events_numpy(female, onset, rectal, u_t10, z_size, u_soj, p):
    """Growth rate, transition size, transition age and clinical age per adenoma.

    ``p`` is the 21-vector of natural history parameters in canonical order.
    """
    f = female.astype(float)
    r = rectal.astype(float)
    beta1 = np.where(rectal, p[8], p[7])
    beta2 = np.where(rectal, p[10], p[9])
    tau = np.where(rectal, p[20], p[19])
    t10 = beta2 * (-np.log(u_t10)) ** (-1.0 / beta1)
    lam = G10 / t10
    mu = (p[11] + p[12] * f + p[13] * r + p[14] * f * r
          + (p[15] + p[16] * f + p[17] * r + p[18] * f * r) * onset)
    size = np.exp(mu + LOGNORMAL_SD * z_size)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = -np.log(((size / D_INF) ** INV_P - 1.0) / (C0 - 1.0)) / G10
    ratio = np.where(size <= D_0, 0.0, np.where(size >= D_INF, np.inf, ratio))
    trans = onset + t10 * ratio
    clin = trans + tau * (-np.log1p(-u_soj)) ** INV_K
    return lam, size, trans, clin


@njit(cache=True)
def _adenoma_events_loop(female, onset, rectal, u_t10, z_size, u_soj, p, lam, size, trans, clin):
    for i in range(onset.shape[0]):
        f = 1.0 if female[i] else 0.0
        r = 1.0 if rectal[i] else 0.0
        if rectal[i]:
            beta1, beta2, tau = p[8], p[10], p[20]
        else:
            beta1, beta2, tau = p[7], p[9], p[19]
        t10 = beta2 * (-math.log(u_t10[i])) ** (-1.0 / beta1)
        lam[i] = G10 / t10
        mu = (p[11] + p[12] * f + p[13] * r + p[14] * f * r
              + (p[15] + p[16] * f + p[17] * r + p[18] * f * r) * onset[i])
        s = math.exp(mu + LOGNORMAL_SD * z_size[i])
        size[i] = s
        if s <= D_0:
            ratio = 0.0
        elif s >= D_INF:
            ratio = math.inf
        else:
            ratio = -math.log(((s / D_INF) ** INV_P - 1.0) / (C0 - 1.0)) / G10
        trans[i] = onset[i] + t10 * ratio
        clin[i] = trans[i] + tau * (-math.log1p(-u_soj[i])) ** INV_K
    return lam, size, trans, clin


def adenoma_events_numba(female, onset, rectal, u_t10, z_size, u_soj, p):
    n = onset.shape[0]
    outs = [np.empty(n) for _ in range(4)]
    return _adenoma_events_loop(np.ascontiguousarray(female, dtype=np.bool_),
                                np.ascontiguousarray(onset, dtype=np.float64),
                                np.ascontiguousarray(rectal, dtype=np.bool_),
                                u_t10, z_size, u_soj, np.asarray(p, dtype=np.float64), *outs)


# ---------------------------------------------------------------------------
# first clinical cancer per person
# ---------------------------------------------------------------------------

def first_clinical_numpy(owner, clin, rectal, n):
    first = np.full(n, np.inf)
    np.minimum.at(first, owner, clin)
    first_rectal = np.zeros(n, dtype=bool)
    hit = np.isfinite(clin) & (clin == first[owner])
    first_rectal[owner[hit]] = rectal[hit]
    return first, first_rectal


@njit(cache=True)
def _first_clinical_loop(owner, clin, rectal, first, first_rectal):
    for i in range(owner.shape[0]):
        o = owner[i]
        if clin[i] < first[o]:
            first[o] = clin[i]
            first_rectal[o] = rectal[i]
    return first, first_rectal


def first_clinical_numba(owner, clin, rectal, n):
    return _first_clinical_loop(np.ascontiguousarray(owner, dtype=np.int64), clin,
                                np.ascontiguousarray(rectal, dtype=np.bool_),
                                np.full(n, np.inf), np.zeros(n, dtype=np.bool_))


# ---------------------------------------------------------------------------
# lesion status and detection at a colonoscopy
# ---------------------------------------------------------------------------

def _sens_adenoma_numpy(s):
    miss = np.where(s <= 15, 0.34 - 0.0349 * s + 0.0009 * s * s,
                    np.where(s <= 30, 0.01, np.where(s <= 40, 0.005, 0.001)))
    return 1.0 - miss


def screen_lesions_numpy(exam, onset, lam, trans, tsize, u_det, perfect=False):
    """Lesion state, size and detection at exam age (per adenoma, exam broadcast).

    Adenomas are sized on their growth curve; preclinical cancers keep the
    size reached at transition.
    """
    present = onset < exam
    cancer = present & (trans <= exam)
    t = np.maximum(exam - onset, 0.0)
    d_ad = D_INF * (1.0 + (C0 - 1.0) * np.exp(-lam * t)) ** SHAPE_P
    size = np.where(cancer, tsize, d_ad)
    sens = _sens_adenoma_numpy(np.maximum(size, 1.0))
    sens = np.where(cancer, np.maximum(sens, 0.95), sens)
    if perfect:
        sens = np.ones_like(sens)
    state = np.where(cancer, CANCER, np.where(present, ADENOMA, NONE)).astype(np.int8)
    detected = present & (u_det < sens)
    return state, size, detected


@njit(cache=True)
def _screen_loop(exam, onset, lam, trans, tsize, u_det, perfect, state, size, detected):
    for i in range(onset.shape[0]):
        if onset[i] >= exam[i]:
            state[i] = NONE
            size[i] = D_0
            detected[i] = False
            continue
        if trans[i] <= exam[i]:
            state[i] = CANCER
            s = tsize[i]
        else:
            state[i] = ADENOMA
            t = exam[i] - onset[i]
            s = D_INF * (1.0 + (C0 - 1.0) * math.exp(-lam[i] * t)) ** SHAPE_P
        size[i] = s
        sc = s if s > 1.0 else 1.0
        if sc <= 15.0:
            sens = 1.0 - (0.34 - 0.0349 * sc + 0.0009 * sc * sc)
        elif sc <= 30.0:
            sens = 0.99
        elif sc <= 40.0:
            sens = 0.995
        else:
            sens = 0.999
        if state[i] == CANCER and sens < 0.95:
            sens = 0.95
        if perfect:
            sens = 1.0
        detected[i] = u_det[i] < sens
    return state, size, detected


def screen_lesions_numba(exam, onset, lam, trans, tsize, u_det, perfect=False):
    n = onset.shape[0]
    exam = np.ascontiguousarray(np.broadcast_to(np.asarray(exam, dtype=np.float64), (n,)))
    return _screen_loop(exam, onset, lam, trans, tsize, u_det, bool(perfect),
                        np.empty(n, dtype=np.int8), np.empty(n), np.empty(n, dtype=np.bool_))


if HAS_NUMBA:
    cum_intensity = cum_intensity_numba
    invert_intensity = invert_intensity_numba
    adenoma_events = adenoma_events_numba
    first_clinical = first_clinical_numba
    screen_lesions = screen_lesions_numba
else:
    cum_intensity = cum_intensity_numpy
    invert_intensity = invert_intensity_numpy
    adenoma_events = adenoma_events_numpy
    first_clinical = first_clinical_numpy
    screen_lesions = screen_lesions_numpy
