"""Time the numba kernels against their numpy fallbacks.

Run from the repository root:

    python benchmarks/bench_kernels.py [--persons 200000] [--repeat 5]

Each kernel is called once before timing so numba compilation is excluded.
Both versions receive the same inputs and their outputs are compared.
"""
from __future__ import annotations

import argparse
import time
from types import SimpleNamespace

import numpy as np

from imabc._accel import HAS_NUMBA
from imabc.crcspin import kernels
from imabc.crcspin.model import simulate_seer
from imabc.crcspin.params import REFERENCE_POSTERIOR_MEANS as P
from imabc.crcspin.population import LifeTable, default_populations

NAMES = ("cum_intensity", "invert_intensity", "adenoma_events", "first_clinical", "screen_lesions")


def backend(kind: str) -> SimpleNamespace:
    return SimpleNamespace(**{n: getattr(kernels, f"{n}_{kind}") for n in NAMES})


def best_of(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_inputs(n_persons: int, rng: np.random.Generator) -> dict:
    slopes = P.risk_slopes()
    c0 = P.A + P.sigma_alpha * rng.standard_normal(n_persons)
    ages = rng.uniform(50.0, 85.0, n_persons)
    total = kernels.cum_intensity_numpy(c0, slopes, ages)
    owner = np.repeat(np.arange(n_persons), rng.poisson(total))
    k = owner.size
    onset = kernels.invert_intensity_numpy(c0[owner], slopes, rng.random(k) * total[owner])
    female, rectal = rng.random(k) < 0.5, rng.random(k) < 0.09
    lam, size, trans, clin = kernels.adenoma_events_numpy(
        female, onset, rectal, rng.random(k), rng.standard_normal(k), rng.random(k), P.as_vector())
    return dict(c0=c0, slopes=slopes, ages=ages, total=total, owner=owner, onset=onset,
                female=female, rectal=rectal, lam=lam, size=size, trans=trans, clin=clin,
                u=[rng.random(k) for _ in range(4)], z=rng.standard_normal(k), n=n_persons)


def calls(d: dict, b: SimpleNamespace) -> dict:
    p = P.as_vector()
    return {
        "cum_intensity": lambda: b.cum_intensity(d["c0"], d["slopes"], d["ages"]),
        "invert_intensity": lambda: b.invert_intensity(d["c0"][d["owner"]], d["slopes"],
                                                       d["u"][0] * d["total"][d["owner"]]),
        "adenoma_events": lambda: b.adenoma_events(d["female"], d["onset"], d["rectal"], d["u"][1],
                                                   d["z"], d["u"][2], p),
        "first_clinical": lambda: b.first_clinical(d["owner"], d["clin"], d["rectal"], d["n"]),
        "screen_lesions": lambda: b.screen_lesions(d["ages"][d["owner"]], d["onset"], d["lam"],
                                                   d["trans"], d["size"], d["u"][3]),
    }


def _max_diff(a, b) -> float:
    a, b = np.atleast_1d(np.asarray(a, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float))
    same = (a == b) | (np.isnan(a) & np.isnan(b))
    if same.all():
        return 0.0
    return float(np.max(np.abs(a[~same] - b[~same])))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--persons", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seer-persons", type=int, default=400_000)
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        raise SystemExit("numba is unavailable or disabled; nothing to compare")
    d = kernel_inputs(args.persons, np.random.default_rng(0))
    print(f"{args.persons} persons, {d['owner'].size} adenomas, best of {args.repeat}")
    print(f"{'kernel':>18s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    fast, slow = calls(d, backend("numba")), calls(d, backend("numpy"))
    for name in NAMES:
        t_np, t_nb = best_of(slow[name], args.repeat), best_of(fast[name], args.repeat)
        out_np, out_nb = slow[name](), fast[name]()
        if not isinstance(out_np, tuple):
            out_np, out_nb = (out_np,), (out_nb,)
        diff = max(_max_diff(a, b) for a, b in zip(out_np, out_nb))
        print(f"{name:>18s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.1f} {diff:11.2e}")

    pop, life = default_populations()["seer"], LifeTable.default()
    times = {}
    for kind in ("numpy", "numba"):
        b = backend(kind)
        times[kind] = best_of(lambda: simulate_seer(P, pop, life, args.seer_persons,
                                                    np.random.default_rng(1), backend=b), 3)
    print(f"simulate_seer, {args.seer_persons} persons: numpy {times['numpy']:.2f} s, "
          f"numba {times['numba']:.2f} s, speedup {times['numpy'] / times['numba']:.1f}x")


if __name__ == "__main__":
    main()
