"""Screening out implausibly low stillbirth-to-neonatal-death ratios.

Fits the normal hierarchy to high-quality SBR:NMR ratios and shows the
resulting exclusion boundary and per-observation tail probabilities.
"""

import numpy as np

from sbrest.ratio_screen import (
    apply_exclusion,
    exclusion_tail_probability,
    fit_ratio_model,
)
from sbrest.sampler import SamplerConfig
from sbrest.synthetic import make_hq_ratios

hq = make_hq_ratios(n=120, mu=-0.18, sigma2=0.083, v2=0.005, seed=0)
fit = fit_ratio_model(hq, SamplerConfig(n_chains=2, n_iter=800, n_warmup=300, seed=0))
print(f"mean log-ratio: {fit.mu_theta:.3f} "
      f"(95% interval {fit.mu_interval[0]:.3f} to {fit.mu_interval[1]:.3f})")
print(f"across-setting variance: {fit.sigma2_theta:.3f}")
print(f"exclusion boundary (zero-variance observation): "
      f"{fit.exclusion_boundary(0.05):.3f}")

print("\ntail probabilities by ratio:")
for ratio in (0.3, 0.45, 0.55, 0.8, 1.2):
    p = exclusion_tail_probability(ratio, 0.0, fit)
    flag = "EXCLUDE" if p < 0.05 else "keep"
    print(f"  ratio {ratio:.2f}: p = {p:.4f}  {flag}")


class Report:
    def __init__(self, id, sbr, nmr):
        self.id, self.sbr, self.nmr = id, sbr, nmr


reports = [Report(1, 5.0, 6.0), Report(2, 1.5, 8.0), Report(3, 4.0, None)]
result = apply_exclusion(reports, fit, nmr_source_policy=lambda o: o.nmr)
print(f"\nscreened {len(reports)} reports: "
      f"{len(result.kept)} kept, {len(result.excluded)} excluded, "
      f"{len(result.cannot_screen)} without an NMR to screen against")
