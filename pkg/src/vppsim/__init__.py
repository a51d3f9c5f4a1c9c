"""Desk-scale simulator for decentralized virtual-power-plant energy
management: household scheduling, peer-to-peer trading via a splitting
loop, and a simulated proof-of-authority ledger hosting the coordinator.
"""

__version__ = "0.1.0"
