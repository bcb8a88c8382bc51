from setuptools import setup, find_packages

setup(
    name='poisson-cs',
    version='1.0.0',
    packages=find_packages(exclude=['tests', 'tests.*']),
    url='',
    license='MIT',
    description='Poisson compressed sensing with the square-root Jensen-Shannon divergence: physically '
                'realizable sensing matrices, SQJSD statistics and l1-regularized reconstruction.',
    include_package_data=True,
    python_requires='>=3.9',
    install_requires=[
        "joblib>=1.3.2",
        "numpy>=1.26.1",
        "pandas>=1.4.4",
        "Pillow>=10.1.0",
        "scipy>=1.11.3",
    ],
    extras_require={
        "test": [
            "pytest>=7.4",
        ],
    },
    entry_points={
        "console_scripts": [
            "poisson-cs=poisson_cs.cli:main",
        ],
    },
)
