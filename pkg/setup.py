from setuptools import find_packages,setup
from typing import List


HYPEN_E_DOT='-e .'
def get_requirements(file_path:str)->List[str]:
    requirements=[]
    with open(file_path) as file_obj:
        requirements=file_obj.readlines()
        requirements=[req.replace("\n","") for req in requirements]
        requirements=[req for req in requirements if req and not req.startswith("#")]

        if HYPEN_E_DOT in requirements:
            requirements.remove(HYPEN_E_DOT)

    return requirements


setup(
name='probfm_evidential_forecasting',
version='0.0.1',
author='Huy',
author_email='nhathuyit1103@gmail.com',
packages=find_packages(exclude=['tests', 'examples*']),
install_requires=get_requirements('requirements.txt'),
entry_points={'console_scripts': ['probfm=src.cli:main']},
)
