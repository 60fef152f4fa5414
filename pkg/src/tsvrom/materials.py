"""Isotropic thermoelastic materials and the copper/liner/silicon table."""

from __future__ import annotations

from dataclasses import dataclass

COPPER, LINER, SILICON = 0, 1, 2
MATERIAL_NAMES = ("copper", "liner", "silicon")


def lame_parameters(E: float, nu: float) -> tuple[float, float]:
    """Lamé constants (lambda, mu) from Young's modulus and Poisson's ratio."""
    if not E > 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if nu == 0.5:
        raise ValueError("nu = 0.5 (incompressible) is not supported")
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in (-1, 0.5), got {nu}")
    lam = E * nu / (1.0 + nu) / (1.0 - 2.0 * nu)
    mu = E / 2.0 / (1.0 + nu)
    return lam, mu


@dataclass(frozen=True)
class Material:
    E: float
    nu: float
    alpha: float  # linear thermal expansion, 1/K

    def __post_init__(self):
        lame_parameters(self.E, self.nu)

    @property
    def lam(self) -> float:
        return lame_parameters(self.E, self.nu)[0]

    @property
    def mu(self) -> float:
        return lame_parameters(self.E, self.nu)[1]

    @property
    def thermal_modulus(self) -> float:
        """alpha * (3 lambda + 2 mu): stress per kelvin of free expansion."""
        lam, mu = lame_parameters(self.E, self.nu)
        return self.alpha * (3.0 * lam + 2.0 * mu)


# Literature values; configurable, not measured here.
DEFAULT_MATERIALS = {
    "copper": Material(E=110e9, nu=0.35, alpha=17e-6),
    "liner": Material(E=71e9, nu=0.16, alpha=0.5e-6),
    "silicon": Material(E=130e9, nu=0.28, alpha=2.8e-6),
}


@dataclass(frozen=True)
class MaterialTable:
    """Materials indexed by id (0 copper, 1 liner, 2 silicon)."""

    copper: Material = DEFAULT_MATERIALS["copper"]
    liner: Material = DEFAULT_MATERIALS["liner"]
    silicon: Material = DEFAULT_MATERIALS["silicon"]

    def __getitem__(self, mat_id: int) -> Material:
        return (self.copper, self.liner, self.silicon)[mat_id]

    def __len__(self):
        return 3

    def items(self):
        return list(zip(MATERIAL_NAMES, (self.copper, self.liner, self.silicon)))
