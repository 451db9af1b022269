"""Scratch: full-size dry runs of the heavy acceptance criteria."""
import time

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score

import bllim
from bllim.cli import RunConfig, bench_table1_replicate, bench_table2_replicate, _replicate_seeds

t_all = time.time()

# --- criterion 6: table 1, 20 replicates -----------------------------------
cfg = RunConfig(k_range=(1, 2, 3, 4, 5), max_structures=20, seed=60)
t0 = time.time()
first = bench_table1_replicate(0, cfg)
probe = time.time() - t0
print(f"[c6] probe replicate: {probe:.1f} s", flush=True)
scores = {"bllim": [first["bllim"]], "gllim": [first["gllim"]]}
for rep in range(1, 20):
    t0 = time.time()
    res = bench_table1_replicate(rep, cfg)
    for m in scores:
        scores[m].append(res[m])
    print(f"[c6] rep {rep}: bllim {np.round(res['bllim'],3)} gllim {np.round(res['gllim'],3)} ({time.time()-t0:.0f}s)", flush=True)
b = np.array(scores["bllim"]); g = np.array(scores["gllim"])
print(f"[c6] means: bllim {b.mean(axis=0).round(4)} gllim {g.mean(axis=0).round(4)}", flush=True)
print(f"[c6] sd: bllim {b.std(axis=0).round(4)}; worst rep {b.max(axis=0).round(3)}", flush=True)

# --- criterion 9: planted recovery, 20 replicates ---------------------------
def partition_labels(groups, dim):
    lab = np.zeros(dim, dtype=int)
    for gi, grp in enumerate(groups):
        for i in grp:
            lab[i] = gi
    return lab

good = 0
pcfg = bllim.PipelineConfig(max_structures=20)
for rep in range(20):
    t0 = time.time()
    seeds = _replicate_seeds(90, rep, 2)
    spec = bllim.PlanASpec(n=4162, seed=seeds[0])
    theta = bllim.sample_plan_a_params(spec)
    data, labels = bllim.generate_plan_a(theta, spec.n, seed=seeds[1])
    base = bllim.fit(data, 5, bllim.BlockStructure.singletons(5, 100), pcfg.em)
    hard = base.responsibilities.argmax(axis=1)
    cont = np.zeros((5, 5))
    for i in range(len(labels)):
        cont[hard[i], labels[i]] += 1
    rows, cols = linear_sum_assignment(-cont)
    perm = dict(zip(rows, cols))
    truth = bllim.BlockStructure(tuple(theta.structure.groups[perm[r]] for r in range(5)), 100)
    out = bllim.bllim_pipeline(data, [5], pcfg, extra_structures=[truth])
    hard2 = out.fit.responsibilities.argmax(axis=1)
    cont2 = np.zeros((5, 5))
    for i in range(len(labels)):
        cont2[hard2[i], labels[i]] += 1
    rows2, cols2 = linear_sum_assignment(-cont2)
    aris = [adjusted_rand_score(partition_labels(out.structure.groups[r], 100),
                                partition_labels(theta.structure.groups[c], 100))
            for r, c in zip(rows2, cols2)]
    ok = min(aris) >= 0.9
    good += ok
    print(f"[c9] rep {rep}: pi_min {theta.weights.min():.4f} min ARI {min(aris):.3f} {'OK' if ok else 'MISS'} ({time.time()-t0:.0f}s)", flush=True)
print(f"[c9] success {good}/20", flush=True)

# --- criterion 7: table 2 blocks/g, 20 replicates ---------------------------
cfg2 = RunConfig(k_range=(1, 2, 3, 4, 5), seed=70)
wins = 0
for rep in range(20):
    res = bench_table2_replicate(rep, cfg2)
    win = res["bllim"][0] < res["gllim"][0]
    wins += win
    print(f"[c7] rep {rep}: bllim {res['bllim'][0]:.3f} gllim {res['gllim'][0]:.3f} {'WIN' if win else 'LOSS'}", flush=True)
print(f"[c7] wins {wins}/20", flush=True)

# --- criterion 8: identity manifolds, 20 replicates -------------------------
sizes = []
cfg3 = RunConfig(k_range=(1, 2, 3, 4, 5), seed=80)
for rep in range(20):
    (s,) = _replicate_seeds(cfg3.seed, rep, 1)
    sample = bllim.generate_manifold(bllim.ManifoldSpec(function="f", covariance="identity", seed=s))
    out = bllim.bllim_pipeline(sample.data, cfg3.k_range, cfg3.pipeline_config())
    sizes.append(out.structure.mean_group_size())
print(f"[c8] mean group sizes: {np.round(sizes, 2)}", flush=True)
print(f"[c8] overall mean {np.mean(sizes):.3f}", flush=True)

print(f"total {time.time()-t_all:.0f} s", flush=True)
