from setuptools import setup

from netsetup_pkg.hooks import PostInstall

commands = dict(install=PostInstall)

setup(name="netsetup", version="2.0.0", packages=["netsetup_pkg"], cmdclass=commands)
