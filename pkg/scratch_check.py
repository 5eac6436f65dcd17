"""Dev scratch: sampler exactness + timing checks."""
import time

import numpy as np

from subtemper import (
    ChainConfig, KernelConfig, MvnMeanModel, RngStream, make_geometric_ladder,
    mvn_analytic_posterior, run_chain, simulate_mvn_data, diagnostic_report,
)

D, N = 2, 64
proto = MvnMeanModel(D, sigma0=1.0)
data = simulate_mvn_data(proto, np.array([0.7, -0.3]), N, RngStream(7).substream(1))
model = proto.with_data(data)
mean, cov = mvn_analytic_posterior(model)
sd = np.sqrt(np.diag(cov))
print("analytic mean", mean, "sd", sd)

ladder = make_geometric_ladder(6, 0.125)
kconf = KernelConfig(kind="hmc", hmc_eps=0.05, hmc_steps=10)
S = 4000

for method in ("none", "pt", "tt", "spt", "stt"):
    t0 = time.perf_counter()
    traces = []
    for c in range(3):
        cc = ChainConfig(ladder=ladder, kernel=kconf, n_samples=S,
                         theta0=np.full(D, [0.5, 1.0, 2.0][c]), chain_id=c)
        traces.append(run_chain(method, model, cc, RngStream(11).substream(10, c)))
    dt = time.perf_counter() - t0
    rep = diagnostic_report(traces)
    post = np.concatenate([t.samples[S // 2:] for t in traces])
    err = np.abs(post.mean(axis=0) - mean)
    bound = 4 * sd / np.sqrt(np.array([r["ess"] for r in rep.per_dim]))
    cov_emp = np.cov(post.T)
    frob = np.linalg.norm(cov_emp - cov) / np.linalg.norm(cov)
    acc = [f"{s.rate:.2f}" for s in traces[0].level_stats]
    traj = (traces[0].trajectory_accepts / max(traces[0].trajectory_attempts, 1)
            if traces[0].trajectory_attempts else None)
    print(f"{method:5s} t={dt:6.2f}s err={err} bound={bound} ok={(err < bound).all()} "
          f"frob={frob:.3f} rhat={rep.median_r_hat:.4f} lvl_acc={acc} traj={traj}")
