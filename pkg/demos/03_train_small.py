"""Train IRS-Net on a small problem and compare it with GA-5.

Uses the desk training preset on 20k samples, so it finishes in a minute or
two.  Prints the learning curve every few epochs, then the rate ratio and the
per-sample time ratio against GA-5 on a held-out test set.

    python3 demos/03_train_small.py
"""
from irs_wpcn import SystemParams, generate_dataset, irsnet
from irs_wpcn.baselines import GAParams
from irs_wpcn.bench import evaluate_method, ga_solver, irsnet_solver, rate_ratio, time_ratio

p = SystemParams(M=2, N=4)
train = generate_dataset(p, 20_000, seed=1)
val = generate_dataset(p, 2_000, seed=2)
test = generate_dataset(p, 300, seed=3)

net = irsnet.network_for(p, seed=4)
print("hidden layers:", [W.shape[1] for W in net.weights[:-1]])
cfg = irsnet.desk_config(batch_size=1000, max_epochs=40, patience=10, seed=5)


def show(h):
    if h["epoch"] % 5 == 0 or h["epoch"] == 1:
        print(f"epoch {h['epoch']:3d}  train {h['train_loss']:.4f}  val {h['val_loss']:.4f}")


res = irsnet.train(train, val, net, cfg, p, progress=show)
print(f"stopped: {res.stop_reason}, best epoch {res.best_epoch}")

ga = evaluate_method(ga_solver(p, GAParams(seed=6)), test, p, repeats=1)
nn = evaluate_method(irsnet_solver(res.params), test, p, repeats=3)
print(f"GA-5    C={ga.mean_throughput:.4f}  {ga.per_sample_ms:.3f} ms/sample")
print(f"IRS-Net C={nn.mean_throughput:.4f}  {nn.per_sample_ms:.4f} ms/sample")
print(f"rate ratio {rate_ratio(nn.mean_throughput, ga.mean_throughput):.3f}, "
      f"time ratio {time_ratio(ga.per_sample_ms, nn.per_sample_ms):.0f}")
