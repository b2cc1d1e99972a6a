import numpy as np
import pytest

from mobcal.geo import Antenna, Arrondissement, GeoPoint, Geography, LivelihoodZone


def square_arr(aid: str, x0: float, y0: float, side: float, lz: int) -> Arrondissement:
    ring = np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])
    return Arrondissement(id=aid, name=aid, rings=[ring], lz_id=lz,
                          centroid=GeoPoint(x0 + side / 2, y0 + side / 2))


@pytest.fixture
def grid_geography() -> Geography:
    """Four 0.5-degree square arrondissements in a row, two zones, one antenna each."""
    arrs = [square_arr(f"A{i}", 0.5 * i, 0.0, 0.5, lz=1 if i < 2 else 2)
            for i in range(4)]
    antennas = [Antenna(f"T{i}", GeoPoint(0.5 * i + 0.25, 0.25), f"A{i}")
                for i in range(4)]
    zones = [LivelihoodZone(1, "west"), LivelihoodZone(2, "east")]
    return Geography(arrs, zones, antennas)
