"""Sharp and fuzzy estimation entry points and donut exclusion."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._variance import VarianceSpec
from .bandwidth import BandwidthPair, BandwidthSpec, select_bandwidth
from .core import Sample
from .inference import RddResult, robust_bias_corrected, robust_bias_corrected_fuzzy


@dataclass(frozen=True)
class EstimationRequest:
    """Everything needed to go from a sample to an :class:`RddResult`.

    ``treated_below`` selects the sign convention: the intention-to-treat
    rule in this application is "running variable strictly below the cutoff",
    so impacts default to the left limit minus the right limit.
    """

    outcome: str = "y"
    exposure: str | None = None
    cutoff: float | None = None
    bandwidth: BandwidthSpec = field(default_factory=BandwidthSpec)
    variance: VarianceSpec = field(default_factory=VarianceSpec)
    donut_radius: float = 0.0
    weighted: bool = False
    treated_below: bool = True

    def __post_init__(self):
        if self.donut_radius < 0:
            raise ValueError("donut radius must be nonnegative")
        if self.exposure is not None and self.exposure == self.outcome:
            raise ValueError("outcome and exposure must be different columns")


def donut_filter(sample: Sample, radius: float) -> Sample:
    """Drop observations strictly closer than ``radius`` to the cutoff."""
    if radius < 0:
        raise ValueError("donut radius must be nonnegative")
    if radius == 0:
        return sample
    return sample.subset(np.abs(sample.xc) >= radius)


def _selector_spec(req: EstimationRequest) -> BandwidthSpec:
    spec = req.bandwidth
    flavor = req.variance.flavor
    return replace(
        spec,
        weighted=req.weighted,
        vce="hc0" if flavor == "cluster" else flavor,
        cluster_aware=spec.cluster_aware or flavor == "cluster",
        nn_neighbors=req.variance.nn_neighbors,
    )


def prepare(sample: Sample, req: EstimationRequest) -> Sample:
    """Apply the request's cutoff override and donut exclusion."""
    if req.cutoff is not None and req.cutoff != sample.cutoff:
        sample = sample.with_cutoff(req.cutoff)
    return donut_filter(sample, req.donut_radius)


def resolve_bandwidths(sample: Sample, req: EstimationRequest, fuzzy: bool = False) -> BandwidthPair:
    spec = _selector_spec(req)
    return select_bandwidth(sample, spec, t=sample.t if fuzzy else None)


def estimate_sharp(sample: Sample, req: EstimationRequest | None = None,
                   bw: BandwidthPair | None = None) -> RddResult:
    """Sharp jump of the sample outcome at the cutoff.

    The donut filter is applied first, then bandwidths are selected (unless
    ``bw`` is passed) on the filtered sample.
    """
    req = req or EstimationRequest()
    sample = prepare(sample, req)
    if bw is None:
        bw = resolve_bandwidths(sample, req)
    return robust_bias_corrected(
        sample, req.bandwidth.p, req.bandwidth.kernel, bw, req.variance, q=req.bandwidth.q,
        use_weights=req.weighted, treated_below=req.treated_below)


def estimate_fuzzy(sample: Sample, req: EstimationRequest | None = None,
                   bw: BandwidthPair | None = None) -> RddResult:
    """Ratio of the outcome jump to the exposure jump (``sample.t``)."""
    req = req or EstimationRequest(exposure="t")
    if sample.t is None:
        raise ValueError("fuzzy estimation needs an exposure column on the sample")
    sample = prepare(sample, req)
    if bw is None:
        bw = resolve_bandwidths(sample, req, fuzzy=True)
    return robust_bias_corrected_fuzzy(
        sample, req.bandwidth.p, req.bandwidth.kernel, bw, req.variance, q=req.bandwidth.q,
        use_weights=req.weighted, treated_below=req.treated_below)


def estimate(sample: Sample, req: EstimationRequest, bw: BandwidthPair | None = None) -> RddResult:
    """Dispatch on ``req.exposure``: ``None`` means sharp."""
    if req.exposure is None:
        return estimate_sharp(sample, req, bw)
    return estimate_fuzzy(sample, req, bw)
