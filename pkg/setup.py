#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""The setup script."""

from setuptools import setup, find_packages

with open('README.rst') as readme_file:
    readme = readme_file.read()

with open('HISTORY.rst') as history_file:
    history = history_file.read()

with open('requirements.txt') as requirements_file:
    requirements = requirements_file.read().splitlines()

setup_requirements = [
    'pytest-runner',
]

test_requirements = [
    'pytest',
]

setup(
    name='graspdict',
    version='0.1.0',
    description="Semi-supervised 3D hand-object pose estimation with a "
                "pose dictionary",
    long_description=readme + '\n\n' + history,
    author="Konrad Förstner",
    author_email='konrad@foerstner.org',
    url='https://github.com/konrad/graspdict',
    packages=find_packages(include=['graspdict']),
    entry_points={
        'console_scripts': [
            'graspdict=graspdict.cli:main',
        ],
    },
    include_package_data=True,
    install_requires=requirements,
    license="ISC license",
    zip_safe=False,
    keywords='graspdict hand pose estimation grasp',
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: ISC License (ISCL)',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],
    python_requires='>=3.8',
    test_suite='tests',
    tests_require=test_requirements,
    setup_requires=setup_requirements,
)
