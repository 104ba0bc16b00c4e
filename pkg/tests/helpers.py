"""Hand-constructed posterior ensembles for prediction/acquisition tests.

Prediction and acquisition only read the virtual-grid utility block and the
utility kernel hyperparameters, so these states carry zeros everywhere else
and need no density-level consistency.
"""

import numpy as np

from therm_elicit.model import LatentState, PreferenceDataset, VirtualGrid, layout_for
from therm_elicit.sampler import HmcConfig, PosteriorEnsemble

GRID = VirtualGrid()


def bump(center, width=1.5, height=1.0, grid=GRID):
    return height * np.exp(-((grid.array - center) ** 2) / (2 * width**2))


def make_sample(u, log_nu=0.0, log_rho=0.0, grid=GRID):
    J = len(grid)
    return LatentState(
        u_virt=np.asarray(u, dtype=np.float64),
        du_virt=np.zeros(J),
        du_obs=np.zeros(0),
        g_virt=np.zeros(J),
        dg_virt=np.zeros(J),
        log_theta_u=np.array([log_nu, log_rho]),
        log_theta_g=np.zeros(2),
    )


def make_ensemble(u_rows, thetas=None, grid=GRID):
    lay = layout_for(grid, PreferenceDataset())
    rows = []
    for i, u in enumerate(u_rows):
        log_nu, log_rho = thetas[i] if thetas is not None else (0.0, 0.0)
        rows.append(lay.pack(make_sample(u, log_nu, log_rho, grid)))
    cfg = HmcConfig(burn_in=1, retained=max(len(rows), 1), thin=1)
    return PosteriorEnsemble(
        positions=np.asarray(rows).reshape(len(rows), lay.dim),
        config=cfg,
        accept_rate=1.0,
        layout=lay,
    )
