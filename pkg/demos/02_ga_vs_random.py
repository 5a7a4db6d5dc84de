"""GA, random configuration and a grid oracle on a small test set.

The GA optimises both phase vectors and the time split; the random baseline
draws phases uniformly and tunes only tau.  On N=3 the grid oracle gives an
(approximate) upper bound, so the gap each method leaves is visible.

    python3 demos/02_ga_vs_random.py
"""
from irs_wpcn import SystemParams, generate_dataset
from irs_wpcn.baselines import GAParams
from irs_wpcn.bench import evaluate_method, ga_solver, oracle_solver, random_solver, rate_ratio

p = SystemParams(M=2, N=3)
test = generate_dataset(p, 100, seed=11)

methods = [ga_solver(p, GAParams(generations=5, seed=1)),
           ga_solver(p, GAParams(generations=50, seed=1)),
           random_solver(p, GAParams(seed=1)),
           oracle_solver(p, resolution=32)]
results = [evaluate_method(m, test, p, repeats=1) for m in methods]
ref = results[0].mean_throughput
print(f"{'method':>8} {'C (bits/s/Hz)':>16} {'vs GA-5':>8} {'ms/sample':>10}")
for r in results:
    print(f"{r.method:>8} {r.mean_throughput:9.4f}±{r.stderr:.4f} "
          f"{rate_ratio(r.mean_throughput, ref):8.3f} {r.per_sample_ms:10.3f}")
