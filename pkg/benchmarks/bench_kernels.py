"""Compare the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once untimed so JIT compilation is excluded, then the best
of ``--repeat`` timings is reported. The last section times one full
training step of the desk-size compound model under each backend (run in a
subprocess so the environment flag takes effect at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from lobforecast import kernels

STEP_SNIPPET = """
import time
from lobforecast import data, kernels, transforms as tf
from lobforecast.model import ModelConfig, build_model
from lobforecast.objective import total_loss
ds = data.synth_dataset(0, 400, params=data.SynthParams(levels=5))
sc = tf.fit_pipeline(ds.values[:250], ds.layout.is_price, "both")
raw = data.make_windows(ds.values[250:], 30, 6, 10, ds.times[250:], lead=1)[:8]
batch = tf.stack_windows(tf.pipeline_forward(raw, sc))
cfg = ModelConfig(mode="compound", d_model=24, n_heads=3, n_encoder_layers=1,
                  n_decoder_layers=1, d_ff=48, context=30, target=6, levels=5)
model = build_model(cfg, 0)
def step():
    loss, _ = total_loss(model.forward(batch), batch, sc, ds.layout, 0.01)
    loss.backward()
step()
times = []
for _ in range({repeat}):
    t = time.perf_counter()
    step()
    times.append(time.perf_counter() - t)
print(kernels.backend(), min(times))
"""


def best_of(fn, repeat, number):
    fn()  # warm-up (and JIT compile)
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def cases(rng):
    idx = rng.integers(0, 120, size=36 * 20 * 8)
    src = rng.normal(size=(idx.size, 24))
    events = np.sort(rng.uniform(34200, 57600, size=200_000))
    grid = 34200.0 + 5.0 * np.arange(4681)
    asks = rng.normal(100, 0.05, size=(200_000, 5))
    bids = rng.normal(100, 0.05, size=(200_000, 5))
    y = kernels.softmax_rows(rng.normal(size=(8, 3, 120, 120)))
    g = rng.normal(size=y.shape)
    return [
        ("scatter_add_rows", lambda f: f(120, idx, src),
         kernels.scatter_add_rows_numpy, getattr(kernels, "scatter_add_rows_numba", None)),
        ("locf_index", lambda f: f(events, grid),
         kernels.locf_index_numpy, getattr(kernels, "locf_index_numba", None)),
        ("ordinal_terms", lambda f: f(asks, bids),
         kernels.ordinal_terms_numpy, getattr(kernels, "ordinal_terms_numba", None)),
        ("softmax_rows_grad", lambda f: f(y, g),
         kernels.softmax_rows_grad_numpy, getattr(kernels, "softmax_rows_grad_numba", None)),
    ]


def train_step(flag, repeat):
    env = dict(os.environ, LOBFORECAST_DISABLE_NUMBA=flag)
    code = STEP_SNIPPET.replace("{repeat}", str(repeat))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    ap.add_argument("--skip-step", action="store_true", help="skip the training-step timing")
    args = ap.parse_args()

    print(f"numba available: {kernels.HAVE_NUMBA}")
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, call, np_fn, nb_fn in cases(np.random.default_rng(0)):
        t_np = best_of(lambda: call(np_fn), args.repeat, args.number)
        if nb_fn is None:
            print(f"{name:<20} {t_np * 1e3:>10.3f} {'n/a':>10} {'':>8}")
            continue
        t_nb = best_of(lambda: call(nb_fn), args.repeat, args.number)
        print(f"{name:<20} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.2f}x")

    if not args.skip_step:
        print("\ntraining step (compound, d_model 24, batch 8, N 20, L_c 30, L_t 6)")
        for flag in ("1", "0"):
            backend, t = train_step(flag, args.repeat)
            print(f"  {backend:<6} {t * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
