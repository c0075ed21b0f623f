"""Gaussian belief propagation and circular BP for pairwise relative measurements.

Every agent ``i`` owns one vector variable ``x_i``.  A pairwise factor
``q(z | x_i, x_j) = N(z; x_i - x_j, Omega^{-1})`` links two agents.  Messages
are kept as raw information pairs because a vacuous message (zero
information) is a legitimate value that is not a proper density.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import GaussianDensity, _symmetrize
from .errors import LayoutError, MessageDegeneracyError

_PSD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BPMessage:
    """Message ``m_{sender -> receiver}(x_receiver)`` in information form."""

    sender: object
    receiver: object
    info_matrix: np.ndarray
    info_vector: np.ndarray

    def __post_init__(self):
        om = _symmetrize(np.array(self.info_matrix, dtype=float, ndmin=2))
        eta = np.array(self.info_vector, dtype=float).reshape(-1)
        if eta.shape[0] != om.shape[0]:
            raise LayoutError("message information vector and matrix disagree")
        if not (np.all(np.isfinite(om)) and np.all(np.isfinite(eta))):
            raise MessageDegeneracyError(f"non-finite message {self.sender}->{self.receiver}")
        eig = np.linalg.eigvalsh(om)
        if eig[0] < -_PSD_TOL * max(1.0, abs(eig[-1])):
            raise MessageDegeneracyError(
                f"message {self.sender}->{self.receiver} has negative information {eig[0]:.3e}")
        om.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "info_matrix", om)
        object.__setattr__(self, "info_vector", eta)

    @classmethod
    def _computed(cls, sender, receiver, info_matrix, info_vector):
        """Skip validation for messages built by :func:`message` (PSD by construction)."""
        if not (np.all(np.isfinite(info_matrix)) and np.all(np.isfinite(info_vector))):
            raise MessageDegeneracyError(f"non-finite message {sender}->{receiver}")
        msg = object.__new__(cls)
        om = _symmetrize(info_matrix)
        om.setflags(write=False)
        info_vector.setflags(write=False)
        for k, v in (("sender", sender), ("receiver", receiver), ("info_matrix", om),
                     ("info_vector", info_vector)):
            object.__setattr__(msg, k, v)
        return msg

    @classmethod
    def vacuous(cls, sender, receiver, dim):
        return cls(sender, receiver, np.zeros((dim, dim)), np.zeros(dim))

    @property
    def is_vacuous(self):
        return not np.any(self.info_matrix)

    def density(self, var):
        """The message as a proper Gaussian over ``var`` (fails if not positive definite)."""
        return GaussianDensity((var,), (len(self.info_vector),), self.info_matrix, self.info_vector)

    @property
    def mean(self):
        return np.linalg.solve(self.info_matrix, self.info_vector)


@dataclass(frozen=True, eq=False)
class PairwiseFactor:
    """Relative measurement ``z ~ N(x_i - x_j, info^{-1})`` between agents ``i`` and ``j``."""

    i: object
    j: object
    info: np.ndarray
    z: np.ndarray

    def oriented(self, sender, receiver):
        """Return (info, z') with ``z' ~ x_sender - x_receiver``."""
        if (sender, receiver) == (self.i, self.j):
            return self.info, np.asarray(self.z, dtype=float)
        if (sender, receiver) == (self.j, self.i):
            return self.info, -np.asarray(self.z, dtype=float)
        raise LayoutError(f"factor {(self.i, self.j)} does not link {sender} and {receiver}")


@dataclass(frozen=True)
class CircularBPConfig:
    """Circular BP with ``beta = gamma = kappa = 1``; ``alpha = 1`` is standard BP."""

    alpha: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("circular BP alpha must lie in (0, 1]")


def _info(density):
    return density.info_matrix, density.info_vector


def message(self_info, incoming, factor, sender, receiver, alpha=1.0):
    """Compute ``m_{sender -> receiver}``.

    ``self_info`` is the sender's (Omega, eta); ``incoming`` maps each
    neighbour ``k`` of the sender to ``m_{k -> sender}``.  The reverse message
    from ``receiver`` enters with exponent ``1 - alpha``.
    """
    om_g = np.array(self_info[0], dtype=float)
    eta_g = np.array(self_info[1], dtype=float)
    for k, m in incoming.items():
        if k == receiver:
            if alpha != 1.0:
                om_g = om_g + (1.0 - alpha) * m.info_matrix
                eta_g = eta_g + (1.0 - alpha) * m.info_vector
        else:
            om_g = om_g + m.info_matrix
            eta_g = eta_g + m.info_vector
    om, z = factor.oriented(sender, receiver)
    # x_receiver = x_sender - z + noise: integrate x_sender out of factor * p^g
    gain = np.linalg.solve(om_g + om, om).T  # om (om_g + om)^{-1}
    om_m = om - gain @ om
    eta_m = -om_m @ z + gain @ eta_g
    return BPMessage._computed(sender, receiver, om_m, eta_m)


def _round(beliefs, inbox, factors, self_terms, alpha, compound, neighbors, directed):
    """Shared body of :func:`bp_round` and :func:`circular_bp_round`."""
    if neighbors is None:
        neighbors = {i: [] for i in beliefs}
        for f in factors.values():
            neighbors[f.i].append(f.j)
            neighbors[f.j].append(f.i)

    def factor(i, j):
        if directed:
            return factors.get((i, j))
        return factors.get((i, j)) or factors.get((j, i))

    outbox, nxt = {}, {}
    for i, belief in beliefs.items():
        dim = len(belief.info_vector)
        inc = {k: inbox.get((k, i)) or BPMessage.vacuous(k, i, dim) for k in neighbors[i]}
        base = belief if self_terms is None else self_terms[i]
        for j in neighbors[i]:
            f = factor(i, j)
            if f is not None:
                outbox[(i, j)] = message(_info(base), inc, f, i, j, alpha)
        root = belief if compound else base
        om = root.info_matrix + sum((m.info_matrix for m in inc.values()), np.zeros((dim, dim)))
        eta = root.info_vector + sum((m.info_vector for m in inc.values()), np.zeros(dim))
        nxt[i] = GaussianDensity(root.vars, root.dims, _symmetrize(om), eta)
    return nxt, outbox


def _check(beliefs, factors):
    for key, f in factors.items():
        if f.i not in beliefs or f.j not in beliefs:
            raise LayoutError(f"factor {key} references an unknown agent")
    for i, b in beliefs.items():
        if len(b.vars) != 1:
            raise LayoutError(f"agent {i} belief must be over its own variable only")


def bp_round(beliefs, inbox, factors, self_terms=None, compound=True, neighbors=None,
             directed=False):
    """One synchronous Gaussian BP round.

    ``beliefs`` maps agent to its belief over its own variable, ``inbox``
    maps ``(k, i)`` to the previous round's message (missing means vacuous),
    and ``factors`` maps an edge to its :class:`PairwiseFactor`.  Messages are
    built from ``self_terms`` when given, else from the current beliefs.
    With ``compound=True`` the next belief is the current belief times all
    incoming messages (streaming recursion); otherwise it is the self term
    times the incoming messages (static BP, exact on trees at convergence).

    With ``directed=True`` the factor keyed ``(i, j)`` is agent ``i``'s own
    measurement and only shapes ``m_{i->j}``; ``neighbors`` then lists who
    exchanges messages even in rounds without a measurement.
    Returns ``(next_beliefs, outbox)``.
    """
    _check(beliefs, factors)
    return _round(beliefs, inbox, factors, self_terms, 1.0, compound, neighbors, directed)


def circular_bp_round(beliefs, inbox, factors, config=CircularBPConfig(), self_terms=None,
                      compound=True, neighbors=None, directed=False):
    """Circular BP round: the reverse message enters with exponent ``1 - alpha``."""
    _check(beliefs, factors)
    return _round(beliefs, inbox, factors, self_terms, float(config.alpha), compound,
                  neighbors, directed)
