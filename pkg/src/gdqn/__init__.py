"""Goal-conditioned deep Q-learning lab.

Two environments (randomized-goal gridworld navigation, 2D target block
stacking) and a small dense Q-network trained with experience replay and a
target network. Q-values are conditioned on (state, goal), so one model
serves every goal in a task family.
"""

__version__ = "0.1.0"
