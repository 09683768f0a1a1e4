#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Input validation module
Validation utilities for configuration values and command-line input
"""
from utils.errors import ValidationError


# ========== Number Validation ==========

class NumberValidator:
    """Number validation utilities"""

    @staticmethod
    def is_integer(value):
        """Check if value is an integer (bools excluded)"""
        if isinstance(value, bool):
            return False
        try:
            return int(value) == float(value)
        except (ValueError, TypeError):
            return False

    @staticmethod
    def is_float(value):
        """Check if value is a number"""
        try:
            float(value)
            return True
        except (ValueError, TypeError):
            return False

    @staticmethod
    def in_range(value, min_value=None, max_value=None, inclusive=True):
        """Check if number is within range"""
        try:
            num = float(value)
        except (ValueError, TypeError):
            return False

        if min_value is not None:
            if num < min_value or (not inclusive and num == min_value):
                return False

        if max_value is not None:
            if num > max_value or (not inclusive and num == max_value):
                return False

        return True

    @staticmethod
    def strictly_increasing(values):
        """Check that a sequence is strictly increasing"""
        return all(b > a for a, b in zip(values, values[1:]))


# ========== Config Validation ==========

class ConfigValidator:
    """Accumulates field errors, raises once"""

    def __init__(self, data):
        self.data = data
        self.errors = {}

    def require_integer(self, field, min_value=None, max_value=None, message=None):
        value = self.data.get(field)

        if not NumberValidator.is_integer(value):
            self.errors[field] = message or f"{field} must be an integer"
            return False

        if not NumberValidator.in_range(value, min_value, max_value):
            self.errors[field] = message or f"{field} out of range [{min_value}, {max_value}]"
            return False

        return True

    def require_float(self, field, min_value=None, max_value=None, inclusive=True, message=None):
        value = self.data.get(field)

        if not NumberValidator.is_float(value):
            self.errors[field] = message or f"{field} must be a number"
            return False

        if not NumberValidator.in_range(value, min_value, max_value, inclusive=inclusive):
            bounds = "[]" if inclusive else "()"
            self.errors[field] = message or (
                f"{field} out of range {bounds[0]}{min_value}, {max_value}{bounds[1]}")
            return False

        return True

    def require_choice(self, field, choices, message=None):
        value = self.data.get(field)

        if value not in choices:
            self.errors[field] = message or f"{field} must be one of {sorted(choices)}"
            return False

        return True

    def require_subset(self, field, choices, message=None):
        values = self.data.get(field) or []

        unknown = [v for v in values if v not in choices]
        if not values or unknown:
            self.errors[field] = message or f"{field} has unknown entries {unknown}"
            return False

        return True

    def require_increasing(self, field, min_value=None, max_value=None, message=None):
        values = list(self.data.get(field) or [])

        if not values or not NumberValidator.strictly_increasing(values):
            self.errors[field] = message or f"{field} must be non-empty and strictly increasing"
            return False

        for value in values:
            if not NumberValidator.in_range(value, min_value, max_value, inclusive=False):
                self.errors[field] = message or f"{field} entries must lie in ({min_value}, {max_value})"
                return False

        return True

    def check(self, condition, field, message):
        if not condition:
            self.errors[field] = message
        return condition

    def is_valid(self):
        return len(self.errors) == 0

    def raise_if_invalid(self):
        if self.errors:
            detail = "; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items()))
            raise ValidationError(f"Invalid configuration - {detail}",
                                  payload={'fields': self.errors})
