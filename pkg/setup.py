from setuptools import setup, find_packages

setup(
    name="heterosim",
    version="0.3.0",
    packages=find_packages(exclude=["test", "test.*", "examples", "examples.*"]),
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "scipy>=1.9",
        "pandas>=1.5",
        "pydantic>=2.0",
        "jinja2",
        "python-dotenv",
        "scikit-rf",
    ],
    extras_require={"test": ["pytest", "pytest-mock"]},
    entry_points={"console_scripts": ["heterosim = app.main:main"]},
)
