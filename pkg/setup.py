# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.

from setuptools import setup

setup(
    name="stsim",
    version="1.0",
    description="Mobile Boolean-model detection and space-time percolation simulator",
    packages=[
        "stsim",
        "stsim.lib"
    ],
    entry_points={
        "console_scripts": ["stsim = stsim:main"],
    },
    python_requires=">=3.8",
    install_requires=["numpy>=1.20", "scipy>=1.7"],
    extras_require={
        "test": ["pytest>=7", "hypothesis>=6"],
    },
)
