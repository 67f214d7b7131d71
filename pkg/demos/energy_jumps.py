"""Continuous energy diffusion against quantized jumps.

Both models share the mean and the relaxation rate; they differ in the
variance and in where the energy can sit.  Sparse samples of the jump
process are tested against the binned continuum.
"""
# %%
import numpy as np

from qstat.jumps import (EnergyModelH0, EnergyModelH1, binned_pair, gillespie_jump,
                         iid_energy_test, sample_sparse, sample_steady_state,
                         simulate_energy_sde)

gamma, s = 1.0, 2.0

# %% one path of each
t, e = simulate_energy_sde(EnergyModelH0(gamma, s), 20.0, 0.01, seed=1, n_paths=1)
jump = gillespie_jump(EnergyModelH1(gamma, s), 20.0, seed=2)
print(f"diffusion: mean {e.mean():.2f}  min {e.min():.3f}")
print(f"jumps: {jump.energy.size - 1} transitions, lowest levels {sorted(set(jump.energy.tolist()))[:4]}")

# %% sparse sampling of a long jump path (interval >> 1/gamma)
path = gillespie_jump(EnergyModelH1(gamma, s), 20000.0, seed=3)
smp = sample_sparse(path, 10.0)
res = iid_energy_test(smp, s)
print(f"{smp.values.size} sparse samples: ln Lambda = {res.ln_lambda:.2f}, "
      f"P(H1) = {res.posterior_h1:.3f}")

# %% evidence per sample is small: the binned models are close
d = binned_pair(s).relative_entropy()
print(f"binned D = {d:.2e} nats/sample, so ~{int(np.ceil(10 / d))} samples for ln Lambda ~ 10")
big = iid_energy_test(sample_steady_state("H1", s, 200000, seed=4), s)
print(f"200000 steady-state samples: ln Lambda/N = {big.ln_lambda / 200000:.2e}")
