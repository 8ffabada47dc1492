#!/usr/bin/env python3

"""
Setup script for fetchsim package.
"""

import setuptools

import fetchsim


def main():
    setuptools.setup(version=fetchsim.__version__,)
    # Rest of options are specified in `setup.cfg`


if __name__ == '__main__':
    main()
