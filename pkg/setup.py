from setuptools import setup


setup(
    name='kwspot',
    author='KWS team',
    maintainer='KWS team',
    version='0.1.0',
    packages=['kwspot'],
    package_data={},
    include_package_data=True,
    install_requires=['numpy>=1.20', 'PyYAML>=5.1'],
    extras_require={'json5': ['json5']},
    entry_points={'console_scripts': ['kwspot=kwspot.cli:main']},
    license='BSD',
    description='Keyword spotting over CTC posteriorgrams with keyword-biased beam search and phonetic matching.',
    long_description=open('README.md', encoding='utf-8').read(),
    long_description_content_type='text/markdown',
    python_requires='>=3.8',
    tests_require=['pytest>=3.6', 'pytest-runner', 'hypothesis'],
    test_suite='tests'
)
