# ReachCert: hierarchical probabilistic verification of reach-avoid policies
# Scenario-optimisation certificates, local safe-set growth and tiered switching control

__version__ = "1.0.0"
__author__ = "ReachCert Team"
__description__ = "Probabilistic reach-avoid certification and switching control for drone racing"
