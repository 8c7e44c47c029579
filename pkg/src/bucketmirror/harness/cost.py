"""Transfer cost arithmetic under per-volume, per-CPU-time and flat subscription pricing.

Amounts are `Decimal` rounded half-up to cents.
"""

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Union

from bucketmirror.objects.base import GiB

CENT = Decimal("0.01")

Number = Union[int, float, str, Decimal]


def to_cents(amount: Decimal) -> Decimal:
    return amount.quantize(CENT, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class PerGBPricing:
    """A price per GB moved plus a fixed fee per task execution.

    `gb` is the number of bytes billed as one GB. Billing statements that quote 12,165 GB for an 11.88 TiB transfer count binary gigabytes, hence the default.
    """

    price_per_gb: Decimal = Decimal("0.015")
    task_fee: Decimal = Decimal("0.55")
    gb: int = GiB

    def cost(self, bytes_transferred: Number) -> Decimal:
        gigabytes = Decimal(bytes_transferred) / Decimal(self.gb)
        return to_cents(gigabytes * self.price_per_gb + self.task_fee)


@dataclass(frozen=True)
class PerCPUMsPricing:
    """A price per million CPU milliseconds consumed."""

    price_per_million: Decimal = Decimal("0.05")

    def cost(self, cpu_ms: Number) -> Decimal:
        return to_cents(Decimal(cpu_ms) / Decimal(1_000_000) * self.price_per_million)


@dataclass(frozen=True)
class SubscriptionPricing:
    monthly_fee: Decimal = Decimal("99")

    def cost(self, _: Number = 0) -> Decimal:
        return to_cents(self.monthly_fee)


PricingModel = Union[PerGBPricing, PerCPUMsPricing, SubscriptionPricing]


def compute_cost(quantity: Number, model: PricingModel) -> Decimal:
    """Cost of a transfer.

    Args:
        quantity: bytes transferred for PerGBPricing, CPU milliseconds for PerCPUMsPricing (ignored by SubscriptionPricing).

        model: the pricing model.
    """
    if Decimal(quantity) < 0:
        raise ValueError(f"quantity must be non-negative, got {quantity}")
    return model.cost(quantity)


def savings_factor(baseline: Decimal, alternative: Decimal) -> Decimal:
    """How many times cheaper `alternative` is than `baseline`, to two decimals."""
    if alternative <= 0:
        raise ValueError(f"alternative must be positive, got {alternative}")
    return to_cents(baseline / alternative)
