#  Copyright (c) 2025 Markus Ressel
#
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.
#

from setuptools import setup, find_packages

VERSION_NUMBER = "0.1.0"

DEVELOPMENT_STATUS = "Development Status :: 3 - Alpha"
VERSION_NAME = VERSION_NUMBER


def readme_type() -> str:
    import os
    if os.path.exists("README.rst"):
        return "text/x-rst"
    if os.path.exists("README.md"):
        return "text/markdown"


def readme() -> [str]:
    if readme_type() == "text/markdown":
        file_name = "README.md"
    else:
        file_name = "README.rst"

    with open(file_name) as f:
        return f.read()


def pipfile_requirements(section: str) -> [str]:
    """
    Reads package names of a section of the 'Pipfile'.
    """
    import os

    if not os.path.exists("Pipfile"):
        return []

    packages = []
    current = None
    with open("Pipfile") as pip_file:
        for line in pip_file:
            line = line.strip()
            if line.startswith("["):
                current = line.strip("[]")
                continue
            if current == section and "=" in line:
                packages.append(line.split("=", 1)[0].strip().strip('"'))
    return packages


setup(
    name='splitsim',
    version=VERSION_NAME,
    description='Discrete event simulator of host OS functions offloaded to an IPU',
    long_description=readme(),
    long_description_content_type=readme_type(),
    license='MIT',
    packages=find_packages(exclude=['tests']),
    data_files=[('scenarios', ['scenarios/{}'.format(name) for name in [
        'ablation.cfg', 'fifo_onhost.cfg', 'fifo_wave15.cfg', 'fifo_wave16.cfg',
        'memtier_p1.cfg', 'memtier_p2.cfg', 'memtier_p4.cfg', 'memtier_p8.cfg', 'memtier_p16.cfg',
        'rpc_offload_all.cfg', 'rpc_onhost_all.cfg', 'rpc_onhost_sched.cfg',
        'shenango.cfg', 'shinjuku_mq.cfg', 'shinjuku_sq.cfg', 'upi_profile.cfg',
    ]])],
    classifiers=[
        DEVELOPMENT_STATUS,
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
    ],
    install_requires=pipfile_requirements('packages'),
    tests_require=pipfile_requirements('dev-packages'),
    entry_points={
        'console_scripts': [
            'splitsim = splitsim.cli:main',
        ],
    },
)
