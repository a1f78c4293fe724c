//! Emits the per-run matplotlib script. Rendering stays outside the binary:
//! the CSV is the contract, the script is a convenience that draws the mean
//! with a ±1 standard deviation band across seeds.

use crate::config::{Family, RunSpec};

const PRELUDE: &str = r##"#!/usr/bin/env python3
"""Renders records.csv (same directory) as mean +/- 1 std bands over seeds."""
import csv
import math
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read_rows():
    with open(os.path.join(HERE, "records.csv"), newline="") as fh:
        return list(csv.DictReader(fh))


def band(ax, series, label):
    # Seeds may produce different lengths (episode counts under a shared
    # step budget, early-stopped traces); align on the shortest.
    n = min(len(s) for s in series)
    xs = list(range(n))
    cols = [[s[i] for s in series] for i in range(n)]
    mean = [sum(c) / len(c) for c in cols]
    std = [math.sqrt(sum((v - m) ** 2 for v in c) / len(c)) for c, m in zip(cols, mean)]
    ax.plot(xs, mean, label=label, linewidth=2)
    ax.fill_between(xs, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)], alpha=0.25)


def rolling(vals, w):
    out = []
    for i in range(len(vals)):
        j = max(0, i - w + 1)
        out.append(sum(vals[j:i + 1]) / (i - j + 1))
    return out


fig, ax = plt.subplots(figsize=(7.0, 4.5))
"##;

const SUPERVISED_BODY: &str = r##"
rows = read_rows()
for metric in ("train_mse", "test_mse"):
    per_seed = {}
    for r in rows:
        if r["metric"] == metric:
            per_seed.setdefault(r["seed"], []).append((int(r["step"]), float(r["value"])))
    series = [[v for _, v in sorted(pts)] for pts in per_seed.values()]
    if series:
        band(ax, series, metric)
ax.set_xlabel("evaluation index")
ax.set_ylabel("mse")
ax.set_yscale("log")
"##;

const EPISODE_BODY: &str = r##"
rows = read_rows()
per_seed = {}
for r in rows:
    per_seed.setdefault(r["seed"], []).append((int(r["episode"]), float(r["return"])))
series = []
for pts in per_seed.values():
    vals = [v for _, v in sorted(pts)]
    series.append(rolling(vals, min(25, len(vals))))
if series:
    band(ax, series, "return (rolling mean)")
ax.set_xlabel("episode")
ax.set_ylabel("return")
"##;

const LQR_BODY: &str = r##"
rows = read_rows()
per_seed = {}
for r in rows:
    per_seed.setdefault(r["seed"], []).append((int(r["improvement_index"]), float(r["k_error_inf"])))
series = [[v for _, v in sorted(pts)] for pts in per_seed.values()]
if series:
    band(ax, series, "gain error")
ax.set_xlabel("improvement")
ax.set_ylabel("max-abs gain error")
ax.set_yscale("log")
"##;

const GRID_BODY: &str = r##"
rows = read_rows()
per_alpha = {}
for r in rows:
    if r["diverged"] == "1":
        continue
    per_alpha.setdefault(float(r["alpha"]), []).append(float(r["final_metric"]))
alphas = sorted(per_alpha)
mean = [sum(per_alpha[a]) / len(per_alpha[a]) for a in alphas]
std = [math.sqrt(sum((v - m) ** 2 for v in per_alpha[a]) / len(per_alpha[a])) for a, m in zip(alphas, mean)]
ax.errorbar(alphas, mean, yerr=std, marker="o", capsize=3, label="mean final metric")
ax.set_xlabel("alpha")
ax.set_ylabel("final-window metric")
ax.set_xscale("log")
"##;

const FOOTER: &str = r##"
ax.legend(loc="best")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "plot.png"), dpi=150)
print("wrote", os.path.join(HERE, "plot.png"))
"##;

pub fn script(rs: &RunSpec) -> String {
    let body = if rs.grid.is_some() {
        GRID_BODY
    } else {
        match rs.family {
            Family::Supervised => SUPERVISED_BODY,
            Family::Frozenlake | Family::Cartpole => EPISODE_BODY,
            Family::Lqr => LQR_BODY,
        }
    };
    let mut out = String::with_capacity(PRELUDE.len() + body.len() + FOOTER.len() + 64);
    out.push_str(PRELUDE);
    out.push_str(body);
    out.push_str(&format!("ax.set_title({:?})\n", rs.run_id));
    out.push_str(FOOTER);
    out
}
