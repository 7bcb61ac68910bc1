from setuptools import setup, find_packages

_version = {}
with open('dfl_sentinel/_version.py') as fh:
    exec(fh.read(), _version)

setup(
    name='dfl-sentinel',
    version=_version['__version__'],
    license='LGPL-2.1-only',
    description='Decentralized federated learning simulator with the Sentinel '
                'robust aggregation protocol',
    long_description=open('README.rst').read(),
    packages=find_packages(
        '.', exclude=('tests', 'tests.*',
                      'ci', 'ci.*',
                      '*.tests', '*.tests.*')),
    zip_safe=False,
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.22',
        'matplotlib>=3.5',
    ],
    entry_points={
        'console_scripts': [
            'dfl-sentinel=dfl_sentinel.cli:main',
        ],
    },
    platforms='any',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Programming Language :: Python :: 3.13',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Security',
    ],
)
