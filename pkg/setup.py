#!/usr/bin/env python
# -*- coding: utf-8 -*-
import os

from setuptools import setup, find_packages

version = '0.1'

description = ('epiunwarp simulates and corrects susceptibility distortion in EPI b0 '
               'images with a 2.5D residual U-Net that predicts a voxel displacement map.')


def read(fname):
    return open(os.path.join(os.path.dirname(__file__), fname)).read()

long_description = read('README.rst')



setup(
    name='epiunwarp',
    version=version,
    description=description,
    long_description=long_description,
    packages=find_packages(exclude=('test',)),
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.6',
        'torch>=1.12',
    ],
    entry_points={
        'console_scripts': ['epi-unwarp = epiunwarp.cli:main'],
    },
    classifiers=[
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
    ],
)
