import os

from setuptools import find_packages, setup


PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))


with open(os.path.join(PROJECT_ROOT, 'README.md')) as readme:
    README = readme.read()

# allow setup.py to be run from any path
os.chdir(os.path.normpath(os.path.join(os.path.abspath(__file__), os.pardir)))

# e.g. ['django>=3.2', 'numpy>=1.22']
with open(os.path.join(PROJECT_ROOT, 'requirements.txt')) as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith('#')]

setup(
    name='normalnorm',
    version='0.1.0',
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=requirements,
    include_package_data=True,
    license='MIT License',
    description='Normality normalization layers: a one-step Yeo-Johnson power transform with additive Gaussian '
                'noise, a small autodiff MLP trainer and gaussianity diagnostics, driven by Django management '
                'commands.',
    long_description=README,
    long_description_content_type='text/markdown',
    python_requires='>=3.9',
    classifiers=[
        'Framework :: Django',
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Software Development :: Libraries :: Python Modules'
    ],
)
