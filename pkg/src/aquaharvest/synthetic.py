"""Model-generated weekly lice data in the export format read by :mod:`ingest`.

Each farming period is one host-parasite path observed weekly: lice per
fish with multiplicative noise, and a mechanical-removal flag in every week
that contains at least one treatment. A share of periods additionally get a
medicinal or cleaner-fish flag (so the selector has something to reject),
and some farms sit outside the target region.
"""

from __future__ import annotations

import numpy as np

from .biology import simulate_host_parasite
from .calibrate import euler_grid
from .config import Config
from .ingest import WEEKS_PER_YEAR, LiceRecord, week_index, year_week
from .rng import BIOLOGY, SYNTHETIC, Substreams


def generate_lice_records(
    cfg: Config,
    n_farms: int = 60,
    periods_per_farm: int = 2,
    seed: int = 0,
    noise: float = 0.1,
    other_treatment_share: float = 0.25,
    other_region_share: float = 0.15,
    weeks_range: tuple[int, int] = (75, 100),
    region: str = "Trøndelag",
) -> list[LiceRecord]:
    """Simulate weekly records for ``n_farms`` localities."""
    rng = np.random.default_rng([seed, 7])
    n_periods = n_farms * periods_per_farm
    max_weeks = weeks_range[1]
    g = cfg.globals
    dt = euler_grid(g.T, g.n_exercise)[1]
    grid = dt * np.arange(int(np.ceil(max_weeks / WEEKS_PER_YEAR / dt)) + 2)
    paths = simulate_host_parasite(cfg.bio, cfg.threshold, grid, n_periods, Substreams(seed, SYNTHETIC, BIOLOGY))
    lpf = paths.lice_per_fish
    event_times = grid[paths.event_step]

    records: list[LiceRecord] = []
    path = 0
    for farm in range(n_farms):
        loc = f"{10000 + farm}"
        farm_region = region if rng.random() >= other_region_share else "Nordland"
        start = week_index(2018, 1) + int(rng.integers(0, 40))
        for _ in range(periods_per_farm):
            n_weeks = int(rng.integers(weeks_range[0], weeks_range[1] + 1))
            week_t = np.arange(n_weeks) / WEEKS_PER_YEAR
            obs_idx = np.searchsorted(grid, week_t + 1e-12, side="right") - 1
            obs = lpf[path, obs_idx] * np.clip(1.0 + noise * rng.standard_normal(n_weeks), 0.0, None)
            ev = event_times[paths.event_path == path]
            # week k covers treatments in ((k-1)/52, k/52]
            flagged = set(np.ceil(ev * WEEKS_PER_YEAR - 1e-9).astype(int).tolist())
            other = None
            if rng.random() < other_treatment_share:
                other = (int(rng.integers(5, n_weeks)), "medicinal" if rng.random() < 0.5 else "cleanerfish")
            for k in range(n_weeks):
                y, w = year_week(start + k)
                records.append(
                    LiceRecord(
                        locality_id=loc,
                        year=y,
                        week=w,
                        adult_female_lpf=round(float(obs[k]), 6),
                        moving_lpf=round(float(2.0 * obs[k]), 6),
                        stuck_lpf=round(float(0.5 * obs[k]), 6),
                        mechanical=k in flagged,
                        medicinal=other is not None and other == (k, "medicinal"),
                        cleanerfish=other is not None and other == (k, "cleanerfish"),
                        region=farm_region,
                    )
                )
            path += 1
            # fallow period without any reporting
            start += n_weeks + int(rng.integers(8, 16))
    return records
