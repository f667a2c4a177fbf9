"""Path-coupled Bellman flows: a flow-matching distributional RL critic.

Subpackages cover the velocity network (`nn`), linear-interpolant flow
machinery (`flow`), the coupled Bellman target construction (`bellman`),
the training loop (`trainer`), analytically tractable toy environments
(`envs`), alternative training targets (`baselines`), distribution metrics
and closed-form validation checks (`analysis`), and the command-line
entry point (`cli`).
"""

__version__ = "0.1.0"
