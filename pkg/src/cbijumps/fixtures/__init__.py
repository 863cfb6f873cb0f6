"""Bundled parameter files used as regression anchors."""

from importlib import resources

from ..params import CBIParams

NAMES = ("remark56", "remark57", "cir_single", "pure_immigration", "two_type", "prop53")


def fixture_path(name: str):
    return resources.files(__name__).joinpath(f"{name}.json")


def load_fixture(name: str) -> CBIParams:
    if name not in NAMES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(NAMES)}")
    return CBIParams.from_json(fixture_path(name).read_text())
