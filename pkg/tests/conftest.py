"""Shared fixtures: the unicycle benchmark systems and sampling plans.

The vehicle moves in the plane with linear speed and turn rate as inputs;
in polar coordinates (range r, bearing-of-vehicle phi, heading theta) the
dynamics are  r' = v cos(theta-phi),  phi' = v sin(theta-phi)/r,
theta' = w.  Six benchmark cases pair each of three outputs (range, local
bearing theta-phi, global bearing phi) with one input known and the other
unknown.  A GPS variant in cartesian coordinates measures position
directly with both inputs either known or unknown.
"""

import pathlib

import pytest

from uiobs.extension import SystemSpec
from uiobs.geometry import SamplePlan
from uiobs.single_disturbance import CoordinateChangeSpec

SPEC_DIR = pathlib.Path(__file__).resolve().parent.parent / "specs"

X0 = (1.3, 0.2, 0.9)
POLAR_STATES = ("r", "phi", "theta")
DRIVE = ["cos(theta - phi)", "sin(theta - phi)/r", "0"]
TURN = ["0", "0", "1"]

RANGE_TURNRATE_CHANGE = (
    ["r", "theta - phi", "theta"],
    ["x1'", "x3' - x2'", "x3'"],
)
GLOBAL_BEARING_TURNRATE_CHANGE = (
    ["phi", "sin(theta - phi)/r", "cos(theta - phi)/r"],
    ["1/sqrt(x2'^2 + x3'^2)", "x1'", "x1' + atan(x2'/x3')"],
)


def polar_system(output, known, unknown):
    return SystemSpec.from_strings(
        states=POLAR_STATES, outputs=[output], x0=X0, known=[known], unknown=[unknown]
    )


@pytest.fixture
def plan():
    return SamplePlan.around(X0)


@pytest.fixture
def range_unknown_speed():
    return polar_system("r", TURN, DRIVE)


@pytest.fixture
def range_unknown_turnrate():
    return polar_system("r", DRIVE, TURN)


@pytest.fixture
def range_unknown_turnrate_change(range_unknown_turnrate):
    return CoordinateChangeSpec.from_strings(
        range_unknown_turnrate.space, *RANGE_TURNRATE_CHANGE
    )


@pytest.fixture
def local_bearing_unknown_speed():
    return polar_system("theta - phi", TURN, DRIVE)


@pytest.fixture
def local_bearing_unknown_turnrate():
    return polar_system("theta - phi", DRIVE, TURN)


@pytest.fixture
def global_bearing_unknown_speed():
    return polar_system("phi", TURN, DRIVE)


@pytest.fixture
def global_bearing_unknown_turnrate():
    return polar_system("phi", DRIVE, TURN)


@pytest.fixture
def global_bearing_unknown_turnrate_change(global_bearing_unknown_turnrate):
    return CoordinateChangeSpec.from_strings(
        global_bearing_unknown_turnrate.space, *GLOBAL_BEARING_TURNRATE_CHANGE
    )


@pytest.fixture
def gps_known_inputs():
    return SystemSpec.from_strings(
        states=["x_v", "y_v", "theta_v"],
        outputs=["x_v", "y_v"],
        x0=[2.0, 1.0, 0.5],
        known=[["cos(theta_v)", "sin(theta_v)", "0"], ["0", "0", "1"]],
    )


@pytest.fixture
def gps_unknown_inputs():
    return SystemSpec.from_strings(
        states=["x_v", "y_v", "theta_v"],
        outputs=["x_v", "y_v"],
        x0=[2.0, 1.0, 0.5],
        unknown=[["cos(theta_v)", "sin(theta_v)", "0"], ["0", "0", "1"]],
    )
