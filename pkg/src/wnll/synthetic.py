"""Synthetic click log with campaign-dependent value.

Generative model, per click:

* campaign ``k`` is drawn with probability proportional to a log-normal
  volume; its base conversion logit is ``a_k ~ N(base_logit, base_sd)``.
* ``site`` (categorical column 0) shifts the logit by ``s_site * g_k``.
  The slope ``g_k = clip(logit(1 / high_cpa) - a_k, -1, slope_cap)`` is
  negative for ordinary campaigns and grows as the campaign's CR falls
  below the high-CPA threshold.  A model without campaign x site crosses
  must compromise between the groups, and unweighted training sides with
  the larger, higher-CR group.
* ``device`` (column 1), a ``segment`` token (column 2), ``n_extra``
  further categorical columns and ``log1p(x0)`` add effects shared by all
  campaigns; ``x1`` is noise and ``x0`` is missing for 10% of clicks.
* ``n_rare`` high-cardinality columns (``rare_levels`` tokens each, so every
  token is seen only a few dozen times) add small ``N(0, rare_sd)``
  effects.  Their scale sits near ``1/sqrt(lambda_h)``, which is what makes
  the mean-squared-norm regularization strength a sensible choice here.
* conversion ~ Bernoulli(sigmoid(logit)); conversion timestamps follow the
  click by an exponential delay.  Clicks are uniform over ``days`` days.

Values are not generated: the pipeline assigns CPA = 1/SmoothCR from the
reference window, so a campaign's value is inversely proportional to its
historical conversion rate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import DAY, DatasetSchema, RawEvent


@dataclass(frozen=True)
class SyntheticConfig:
    n_records: int = 200_000
    n_campaigns: int = 300
    days: int = 28
    n_sites: int = 40
    n_devices: int = 4
    n_segments: int = 12
    n_extra: int = 8
    extra_levels: int = 50
    extra_sd: float = 0.4
    n_rare: int = 8
    rare_levels: int = 3000
    rare_sd: float = 0.15
    base_logit: float = -2.2
    base_sd: float = 1.0
    volume_sd: float = 0.8
    site_sd: float = 0.5
    slope_cap: float = 1.0
    shared_scale: float = 2.0
    high_cpa: float = 10.0
    mean_delay_days: float = 2.0
    seed: int = 0

    @property
    def schema_arity(self) -> tuple[int, int]:
        return 2, 3 + self.n_extra + self.n_rare

    def schema(self, hash_bits: int = 20) -> DatasetSchema:
        num, cat = self.schema_arity
        return DatasetSchema(num, cat, hash_bits)

    def to_dict(self) -> dict:
        return asdict(self)


def generate_events(cfg: SyntheticConfig = SyntheticConfig()) -> list[RawEvent]:
    rng = np.random.default_rng(cfg.seed)
    K = cfg.n_campaigns
    base = rng.normal(cfg.base_logit, cfg.base_sd, size=K)
    volume = rng.lognormal(0.0, cfg.volume_sd, size=K)
    slope = np.clip(np.log(1.0 / (cfg.high_cpa - 1.0)) - base, -1.0, cfg.slope_cap)
    site_eff = rng.normal(0.0, cfg.site_sd, size=cfg.n_sites)
    site_pop = rng.dirichlet(np.full(cfg.n_sites, 2.0))
    device_eff = rng.normal(0.0, 0.3 * cfg.shared_scale, size=cfg.n_devices)
    segment_eff = rng.normal(0.0, 0.4 * cfg.shared_scale, size=cfg.n_segments)
    extra_eff = rng.normal(0.0, cfg.extra_sd, size=(cfg.n_extra, cfg.extra_levels))
    rare_eff = rng.normal(0.0, cfg.rare_sd, size=(cfg.n_rare, cfg.rare_levels))

    n = cfg.n_records
    camp = rng.choice(K, size=n, p=volume / volume.sum())
    site = rng.choice(cfg.n_sites, size=n, p=site_pop)
    device = rng.integers(0, cfg.n_devices, size=n)
    segment = rng.integers(0, cfg.n_segments, size=n)
    x0 = rng.exponential(20.0, size=n)
    x1 = rng.normal(0.0, 5.0, size=n)
    missing0 = rng.random(n) < 0.1
    extra = rng.integers(0, cfg.extra_levels, size=(cfg.n_extra, n))
    rare = rng.integers(0, cfg.rare_levels, size=(cfg.n_rare, n))

    logit = (
        base[camp]
        + site_eff[site] * slope[camp]
        + device_eff[device]
        + segment_eff[segment]
        + np.where(missing0, 0.0, 0.3 * cfg.shared_scale * (np.log1p(x0) - 2.5))
        + sum(extra_eff[j, extra[j]] for j in range(cfg.n_extra))
        + sum(rare_eff[j, rare[j]] for j in range(cfg.n_rare))
    )
    converted = rng.random(n) < 1.0 / (1.0 + np.exp(-logit))
    click_ts = np.sort(rng.integers(0, cfg.days * DAY, size=n))
    delay = rng.exponential(cfg.mean_delay_days * DAY, size=n).astype(np.int64)

    events = []
    for i in range(n):
        conv = int(click_ts[i] + delay[i]) if converted[i] else None
        events.append(
            RawEvent(
                int(click_ts[i]),
                conv,
                f"camp{camp[i]}",
                [None if missing0[i] else round(float(x0[i]), 3), round(float(x1[i]), 3)],
                [f"site{site[i]}", f"dev{device[i]}", f"seg{segment[i]}"]
                + [f"e{extra[j, i]}" for j in range(cfg.n_extra)]
                + [f"r{rare[j, i]}" for j in range(cfg.n_rare)],
            )
        )
    return events
