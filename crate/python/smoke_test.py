"""Smoke test for the labdash_py extension module.

Build and install it first:

    pip install --no-build-isolation -e crates/py

then run `python python/smoke_test.py` from the repository root.
"""

import math
import pathlib
import sys

import labdash_py as ld

ROOT = pathlib.Path(__file__).resolve().parent.parent
HBA1C = "159644AAAAAAAAAAAAAAAAAAAAAAAAAAAAAA"
FPG = "160912AAAAAAAAAAAAAAAAAAAAAAAAAAAAAA"


def main():
    config = ld.Config.load(str(ROOT / "config" / "default-bands.toml"))
    assert len(config.concepts()) == 8, config
    assert config.clinic_timezone == "America/Indiana/Indianapolis"

    # boundaries belong to the upper band
    assert config.classify(HBA1C, 6.5, "percent")["color"] == "red"
    assert config.classify(HBA1C, 6.49, "percent")["color"] == "yellow"
    assert config.classify(FPG, 90.0, "mg_per_dL")["color"] == "green"

    mg = config.convert(FPG, 5.0, "mmol_per_L", "mg_per_dL")
    assert abs(mg - 90.08) < 0.01, mg

    # the JSON echo loads back into an identical config
    echoed = ld.Config.from_json(config.to_json())
    assert echoed.band_spec(HBA1C) == config.band_spec(HBA1C)

    for name in ["gap", "overlap", "unknown-concept", "empty-bands"]:
        try:
            ld.Config.load(str(ROOT / "config" / "invalid" / f"{name}.toml"))
        except ld.ConfigError as e:
            print(f"rejected {name}: {e}")
        else:
            raise AssertionError(f"{name} config was accepted")

    ld.check_band_spec(HBA1C, "percent", [(0.0, 5.7, "green"), (5.7, math.inf, "red")])
    try:
        ld.check_band_spec(HBA1C, "percent", [(0.0, 5.0, "green"), (5.7, math.inf, "red")])
    except ld.BandSpecError as e:
        assert "gap" in str(e), e
    else:
        raise AssertionError("gap accepted")

    demo = (ROOT / "fixtures" / "demo-observations.csv").read_text()
    obs = ld.parse_fixture_csv(config, demo)
    assert len(obs) == 48

    summary = ld.gauge_summaries(config, obs)
    assert len(summary["gauges"]) == 8 and summary["missing"] == []
    hba1c = next(g for g in summary["gauges"] if g["concept_uuid"] == HBA1C)
    assert hba1c["latest_value"] == 7.1 and hba1c["classification"]["color"] == "red"

    table = ld.visit_table(config, obs, size=5, date="2018-11-30")
    assert table["size"] == 10 and table["total_rows"] == 1

    trend = ld.trend_series(config, obs, FPG, unit="mg_per_dL")
    assert len(trend["points"]) == 6
    assert trend["month_labels"][-2:] == ["October", "November"]

    generated = ld.generate_fixture(config, seed=7)
    assert generated == ld.generate_fixture(config, seed=7)
    assert len(ld.parse_fixture_csv(config, generated)) == 48

    print("labdash_py smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
