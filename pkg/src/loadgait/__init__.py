"""loadgait: planar bipedal locomotion under dynamic loads.

A desk-scale research toolkit: a planar 5-link biped simulator with penalty
ground contact and a 2 kHz PD inner loop, four force-coupled dynamic load
models (tray-box, cart, carry-pole, water-jug), clock-based gait rewards,
a recurrent actor-critic trained with PPO, and an evaluation battery
(pass rate, speed tracking, push recovery, max speed, phase portraits).
"""

__version__ = "0.1.0"
