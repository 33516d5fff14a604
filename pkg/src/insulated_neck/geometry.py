"""Neck region between two nearly touching convex inclusions.

The upper inclusion boundary is ``z = eps/2 + h1(r)`` and the lower one is
``z = -eps/2 + h2(r)``, with ``r = |x'|`` and

    h1(r) =  lambda1 * r**2 + c3_top * r**3
    h2(r) = -lambda2 * r**2 + c3_bot * r**3

All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DomainError

# points in [0, R] tested for the separation invariant
_SEPARATION_SAMPLES = 513


@dataclass(frozen=True)
class NeckGeometry:
    eps: float
    lambda1: float = 0.5
    lambda2: float = 0.5
    c3_top: float = 0.0
    c3_bot: float = 0.0
    R: float = 0.5

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ConfigError("lambda1 and lambda2 must be positive")
        if not 0 < self.R < 1:
            raise ConfigError(f"R must lie in (0, 1), got {self.R}")
        r = np.linspace(0.0, self.R, _SEPARATION_SAMPLES)
        if np.any(self.eps + self._h1(r) - self._h2(r) <= 0):
            raise ConfigError("inclusions overlap: eps + h1(r) - h2(r) <= 0 somewhere in [0, R]")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self):
        return asdict(self)

    @property
    def is_paraboloid(self):
        """True for the normalized pure paraboloid pair (lambda = 1/2, no cubic)."""
        return (self.lambda1 == 0.5 and self.lambda2 == 0.5
                and self.c3_top == 0.0 and self.c3_bot == 0.0)

    # raw profiles, no domain check
    def _h1(self, r):
        return self.lambda1 * r**2 + self.c3_top * r**3

    def _h2(self, r):
        return -self.lambda2 * r**2 + self.c3_bot * r**3

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r > self.R):
            raise DomainError(f"radius outside [0, {self.R}]")
        return r

    def profile_top(self, r):
        return self._h1(self._check(r))

    def profile_bot(self, r):
        return self._h2(self._check(r))

    def dprofile_top(self, r):
        r = self._check(r)
        return 2 * self.lambda1 * r + 3 * self.c3_top * r**2

    def dprofile_bot(self, r):
        r = self._check(r)
        return -2 * self.lambda2 * r + 3 * self.c3_bot * r**2

    def d2profile_top(self, r):
        r = self._check(r)
        return 2 * self.lambda1 + 6 * self.c3_top * r

    def d2profile_bot(self, r):
        r = self._check(r)
        return -2 * self.lambda2 + 6 * self.c3_bot * r

    def z_top(self, r):
        """Height of the upper surface."""
        return 0.5 * self.eps + self.profile_top(r)

    def z_bot(self, r):
        return -0.5 * self.eps + self.profile_bot(r)

    def gap(self, r):
        return self.z_top(r) - self.z_bot(r)

    def conormal_top(self, r):
        """Outward non-unit conormal ``(-h1'(r), 1)`` on the upper surface.

        Returns a ``(radial, axial)`` pair. For the normalized paraboloid this
        is ``(-r, 1)``.
        """
        dh = self.dprofile_top(r)
        return -dh, np.ones_like(dh)

    def conormal_bot(self, r):
        """Outward (pointing into the lower inclusion) conormal ``(h2'(r), -1)``."""
        dh = self.dprofile_bot(r)
        return dh, -np.ones_like(dh)

    def in_neck(self, r, z):
        r = np.asarray(r, dtype=float)
        z = np.asarray(z, dtype=float)
        inside = (r >= 0) & (r < self.R)
        rc = np.clip(r, 0.0, self.R)
        top = 0.5 * self.eps + self._h1(rc)
        bot = -0.5 * self.eps + self._h2(rc)
        out = inside & (z > bot) & (z < top)
        return bool(out) if out.ndim == 0 else out
