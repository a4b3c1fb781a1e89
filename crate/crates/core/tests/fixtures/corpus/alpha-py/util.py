"""Utility helpers for order processing."""

MAX_ITEMS = 50


def compute_total(values, tax_rate):
    """Sum values and apply the tax rate."""
    subtotal = sum(values)
    taxed = subtotal * (1.0 + tax_rate)
    return round(taxed, 2)


def clamp_count(count):
    if count > MAX_ITEMS:
        return MAX_ITEMS
    return count
