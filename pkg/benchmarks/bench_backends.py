"""Time the compiled stepping kernels against the numpy fallback.

Both backends run the same ensembles from the same seeds; besides timing,
the script re-checks that every trajectory matches bitwise, since the whole
point of the fallback is interchangeable arithmetic.

Usage: python3 benchmarks/bench_backends.py [--samples N] [--repeat R]
"""

import argparse
import sys
import time

import numpy as np

from sdemoments.backend import load_backend
from sdemoments.config import load_bundled
from sdemoments.engine import propagate_ensemble
from sdemoments.rigidbody import rigidbody_sde_model
from sdemoments.twobody import twobody_sde_model


def _cases(n_samples):
    rb = load_bundled("rigidbody_default").override(
        t_final=20.0, n_samples=n_samples
    )
    tb = load_bundled("twobody_default").override(
        t_final=2.0, n_samples=n_samples
    )
    yield "rigidbody", rigidbody_sde_model(rb.inertia, rb.q_diag), rb
    yield "twobody", twobody_sde_model(tb.grav), tb


def _run(model, cfg, kernels):
    return propagate_ensemble(
        model,
        cfg.initial,
        cfg.grid(),
        cfg.n_samples,
        cfg.master_seed,
        substeps=cfg.substeps,
        kernels=kernels,
    )


def _time(model, cfg, kernels, repeat):
    best = np.inf
    series = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        series = _run(model, cfg, kernels)
        best = min(best, time.perf_counter() - t0)
    return series, best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    compiled, compiled_name = load_backend("auto")
    fallback, _ = load_backend("python")
    if compiled_name != "compiled":
        print("compiled extension not built; nothing to compare against")
        return 1

    print(f"{args.samples} paths per case, best of {args.repeat} runs")
    for name, model, cfg in _cases(args.samples):
        steps = args.samples * (len(cfg.grid()) - 1) * cfg.substeps
        fast_series, fast = _time(model, cfg, compiled, args.repeat)
        slow_series, slow = _time(model, cfg, fallback, args.repeat)
        identical = np.array_equal(fast_series.states, slow_series.states)
        print(
            f"  {name:<10} compiled {fast:8.3f} s   python {slow:8.3f} s   "
            f"speedup {slow / fast:5.1f}x   "
            f"({steps / fast / 1e6:.1f} M substeps/s)   "
            f"bitwise match: {'yes' if identical else 'NO'}"
        )
        if not identical:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
