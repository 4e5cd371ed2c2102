"""Critical sign-cluster percolation of the cable-graph free field on Z^d.

Two simulation routes to the same clusters (Gaussian field with bridge edge
openings, and the loop soup at intensity one half with cable gluing), exact
random-walk oracles, cluster geometry, glued-loop chain combinatorics and Monte
Carlo estimators.
"""
__version__ = "0.1.0"
