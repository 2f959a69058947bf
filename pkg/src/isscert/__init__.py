"""isscert: executable input-to-state stability certificates.

Modules: compfun (comparison-function algebra), gainops (gain operators
and small-gain conditions), monotone_dt (discrete-time monotone systems),
netlyap (decay paths and composite Lyapunov functions), pdelab
(discretized 1-D models and audits), linstab (linear semigroup
constructions), cli (batch front end).
"""

__version__ = "0.1.0"
