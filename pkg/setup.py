#!/usr/bin/env python
# -*- coding: utf-8 -*-

from setuptools import setup


def readme():
    with open('README.rst') as f:
        return f.read()


try:
    from lvfusion.version import __version__
except ImportError:
    pass

exec(open('lvfusion/version.py').read())

setup(
    name='lvfusion',
    version=__version__,
    description='Day-ahead probabilistic load forecasting for low-voltage networks',
    long_description=readme(),
    long_description_content_type='text/x-rst',
    packages=[
        'lvfusion'
    ],
    classifiers=[
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering'
    ],
    keywords='forecasting electricity smart-meter gamlss',
    python_requires='>=3.8, <4',
    install_requires=[
        'numpy',
        'scipy>=1.8',
        'pandas>=2.0',
        'joblib',
        'appdirs',
        'tzlocal'
    ],
    entry_points={
        'console_scripts': ['lvfusion=lvfusion.starter:main'],
    },
    scripts=['lvfusion.py']
)
