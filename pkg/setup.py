from setuptools import setup, find_packages

setup(
    name='gpsbeam',
    version='0.1.0',
    packages=find_packages(exclude=['tests', 'examples']),
    include_package_data=True,
    python_requires='>=3.7',
    install_requires=[
        'click>=7.0',
        'numpy>=1.17',
        'petl>=1.2',
        'pint>=0.9'
    ],
    extras_require={
        'test': ['pytest']
    },
    entry_points='''
        [console_scripts]
        gpsbeam=core.beam_cli:main
    '''
)
