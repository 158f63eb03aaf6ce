"""Model layer: pseudo-linear ODE models and the built-in catalog.

A model is an ODE written in pseudo-linear form

    xdot = A_theta(x, t) x

together with a control channel B (how external forcing enters each
equation), an observation matrix C (which linear combinations of the state
are measured), and box bounds on the parameter vector. The factorization
A_theta is the user's responsibility — the library never invents one; where
an ODE has an exogenous constant term, the standard trick is to append a
constant state Z = 1 and absorb the term into Z's column (the catalog does
this for the neuron and gene-network models).

Catalog entries bundle a model with reference parameter values, initial
conditions and a time horizon, so the simulation and benchmark layers can
reproduce the standard experiments without further configuration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, DataFormatError, MissingConstantsError

Array = np.ndarray

_RANK_RTOL = 1e-12  # full-column-rank test: sigma_min > rtol * sigma_max


# ---------------------------------------------------------------------------
# core containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PseudoLinearModel:
    """ODE model xdot = A_theta(x, t) x with control and observation maps.

    Parameters
    ----------
    state_dim, control_dim, obs_dim, param_dim : int
        Dimensions d, d_u, d', p.
    system_matrix : callable (x, t, theta) -> (d, d) array
        The pseudo-linear factorization A_theta(x, t).
    control_matrix : (d, d_u) array
        B, must have full column rank.
    obs_matrix : (d', d) array
        C.
    param_bounds : optional (lower, upper) pair of (p,) arrays
        Box constraints on theta; defaults to unbounded. Infinite entries
        are allowed and mean "no bound on this side".
    is_linear : bool
        True when A_theta(x, t) does not depend on x. Enables exact
        shortcuts (single-pass objective evaluation).
    autonomous : bool
        True when A_theta(x, t) does not depend on t explicitly.
    system_matrix_seq : optional callable (X, ts, theta) -> (m, d, d)
        Vectorized evaluation of A along a trajectory; a loop fallback is
        used when absent.
    semiparam_dims : optional (d_base, d_f)
        Set on models produced by extend_semiparametric; records how the
        extended state splits so weight matrices can be assembled.
    """

    state_dim: int
    control_dim: int
    obs_dim: int
    param_dim: int
    system_matrix: Callable[[Array, float, Array], Array]
    control_matrix: Array
    obs_matrix: Array
    param_bounds: tuple[Array, Array] | None = None
    is_linear: bool = False
    autonomous: bool = False
    name: str = "model"
    system_matrix_seq: Callable[[Array, Array, Array], Array] | None = None
    semiparam_dims: tuple[int, int] | None = None

    def __post_init__(self):
        d, du, dobs, p = self.state_dim, self.control_dim, self.obs_dim, self.param_dim
        B = np.asarray(self.control_matrix, dtype=float)
        C = np.asarray(self.obs_matrix, dtype=float)
        if B.shape != (d, du):
            raise ValueError(f"control_matrix shape {B.shape}, expected {(d, du)}")
        if C.shape != (dobs, d):
            raise ValueError(f"obs_matrix shape {C.shape}, expected {(dobs, d)}")
        sv = np.linalg.svd(B, compute_uv=False)
        if sv[-1] <= _RANK_RTOL * sv[0]:
            raise ValueError(
                "control_matrix must have full column rank "
                f"(singular values {sv[0]:.3e} .. {sv[-1]:.3e})"
            )
        if self.param_bounds is None:
            lo = np.full(p, -np.inf)
            hi = np.full(p, np.inf)
        else:
            lo = np.asarray(self.param_bounds[0], dtype=float)
            hi = np.asarray(self.param_bounds[1], dtype=float)
            if lo.shape != (p,) or hi.shape != (p,):
                raise ValueError("param_bounds must be a pair of (param_dim,) arrays")
            if np.any(lo >= hi):
                raise ValueError("param lower bounds must be strictly below upper bounds")
        object.__setattr__(self, "control_matrix", B)
        object.__setattr__(self, "obs_matrix", C)
        object.__setattr__(self, "param_bounds", (lo, hi))

    def system_matrices(self, states: Array, times: Array, theta: Array) -> Array:
        """A_theta evaluated along a trajectory, shape (m, d, d)."""
        if self.system_matrix_seq is not None:
            return self.system_matrix_seq(states, times, theta)
        return np.stack(
            [self.system_matrix(x, t, theta) for x, t in zip(states, times)]
        )


@dataclass(frozen=True)
class ModelCatalogEntry:
    """A model plus the reference configuration of its standard experiment."""

    name: str
    model: PseudoLinearModel
    true_theta: Array
    true_x0: Array  # (d,) — or (n_subjects, d) for multi-subject entries
    horizon: float
    raw_field: Callable[[Array, float, Array], Array]
    impulse_susceptibility: Array | None = None  # gLV antibiotic jump s_i

    def initial_states(self) -> Array:
        """Reference initial conditions as a (n_subjects, d) array."""
        x0 = np.atleast_2d(np.asarray(self.true_x0, dtype=float))
        return x0


def apply_impulse(x0: Array, susceptibility: Array | None) -> Array:
    """State jump x(0+) = x0 + s*x0 for an impulsive forcing at t = 0."""
    x0 = np.asarray(x0, dtype=float)
    if susceptibility is None:
        return x0
    return x0 * (1.0 + np.asarray(susceptibility, dtype=float))


@dataclass(frozen=True)
class SemiParamSpec:
    """Recipe for estimating a time-varying parameter alongside theta.

    base_model's system_matrix takes an extra trailing argument — the current
    value of the functional parameter — and returns the d x (d + d_f) block
    [A_x | A_fn] with x-dynamics A_x(x, t, theta) x + A_fn(x, t, theta) v(t).
    lambda1 weights the state-equation controls, lambda2 the controls driving
    the functional parameter's second derivative.
    """

    base_model: PseudoLinearModel
    functional_dim: int
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.functional_dim < 1:
            raise ValueError("functional_dim must be >= 1")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("lambda1 and lambda2 must be positive")


# ---------------------------------------------------------------------------
# alpha-pinene: linear 5-state isomerization network
# ---------------------------------------------------------------------------

def _apinene_matrix(x, t, theta):
    t1, t2, t3, t4, t5 = theta
    A = np.zeros((5, 5))
    A[0, 0] = -(t1 + t2)
    A[1, 0] = t1
    A[2, 0] = t2
    A[2, 2] = -(t3 + t4)
    A[2, 4] = t5
    A[3, 2] = t3
    A[4, 2] = t4
    A[4, 4] = -t5
    return A


def _apinene_matrix_seq(states, times, theta):
    return np.broadcast_to(_apinene_matrix(None, 0.0, theta), (len(times), 5, 5))


def _apinene_field(x, t, theta):
    # mass-conserving first-order network: 1 -> 2, 1 -> 3, 3 -> 4, 3 <-> 5
    t1, t2, t3, t4, t5 = theta
    return np.array(
        [
            -(t1 + t2) * x[0],
            t1 * x[0],
            t2 * x[0] - (t3 + t4) * x[2] + t5 * x[4],
            t3 * x[2],
            t4 * x[2] - t5 * x[4],
        ]
    )


def catalog_alpha_pinene() -> ModelCatalogEntry:
    """Five-species thermal isomerization network (linear, fully observed)."""
    p = 5
    model = PseudoLinearModel(
        state_dim=5,
        control_dim=5,
        obs_dim=5,
        param_dim=p,
        system_matrix=_apinene_matrix,
        system_matrix_seq=_apinene_matrix_seq,
        control_matrix=np.eye(5),
        obs_matrix=np.eye(5),
        param_bounds=(np.zeros(p), np.full(p, np.inf)),
        is_linear=True,
        autonomous=True,
        name="apinene",
    )
    return ModelCatalogEntry(
        name="apinene",
        model=model,
        true_theta=np.array([5.93e-2, 2.96e-2, 2.05e-2, 27.5e-2, 4.00e-2]),
        true_x0=np.array([100.0, 0.0, 0.0, 0.0, 0.0]),
        horizon=100.0,
        raw_field=_apinene_field,
    )


# ---------------------------------------------------------------------------
# fitzhugh-nagumo: neuron membrane potential, partially observed
# ---------------------------------------------------------------------------

def _fhn_matrix(x, t, theta):
    a, b, c = theta
    V = x[0]
    return np.array(
        [
            [c * (1.0 - V * V / 3.0), c, 0.0],
            [-1.0 / c, -b / c, a / c],
            [0.0, 0.0, 0.0],
        ]
    )


def _fhn_matrix_seq(states, times, theta):
    a, b, c = theta
    m = len(times)
    A = np.zeros((m, 3, 3))
    A[:, 0, 0] = c * (1.0 - states[:, 0] ** 2 / 3.0)
    A[:, 0, 1] = c
    A[:, 1, 0] = -1.0 / c
    A[:, 1, 1] = -b / c
    A[:, 1, 2] = a / c
    return A


def _fhn_field(x, t, theta):
    a, b, c = theta
    V, R = x[0], x[1]
    return np.array(
        [
            c * (V - V ** 3 / 3.0 + R),
            -(V - a + b * R) / c,
            0.0,
        ]
    )


def catalog_fitzhugh_nagumo() -> ModelCatalogEntry:
    """Two-state neuron model plus constant state Z = 1; only V is observed."""
    model = PseudoLinearModel(
        state_dim=3,
        control_dim=3,
        obs_dim=1,
        param_dim=3,
        system_matrix=_fhn_matrix,
        system_matrix_seq=_fhn_matrix_seq,
        control_matrix=np.eye(3),
        obs_matrix=np.array([[1.0, 0.0, 0.0]]),
        param_bounds=(np.zeros(3), np.full(3, np.inf)),
        is_linear=False,
        autonomous=True,
        name="fhn",
    )
    return ModelCatalogEntry(
        name="fhn",
        model=model,
        true_theta=np.array([0.2, 0.2, 3.0]),
        true_x0=np.array([-1.0, 1.0, 1.0]),
        horizon=20.0,
        raw_field=_fhn_field,
    )


# ---------------------------------------------------------------------------
# repressilator: 3-gene feedback loop, mRNA observed, Hill repression
# ---------------------------------------------------------------------------

# structurally fixed constants: third repression threshold and the three
# translation rates
_REP_K31 = 40.0
_REP_TRANSLATION = (5.0, 6.0, 7.0)


def _rep_hill(v, k, p_conc, n):
    # transcription of gene i repressed by the next protein in the loop;
    # protein concentration clamped at 0 so fractional n stays defined when
    # a reference trajectory overshoots below zero
    p_conc = np.maximum(p_conc, 0.0)
    kn = k ** n
    return v * kn / (p_conc ** n + kn)


def _repressilator_matrix(x, t, theta):
    v1, v2, v3, k12, k23, kg1, kg2, kg3, kp1, kp2, kp3, n = theta
    p1, p2, p3 = x[3], x[4], x[5]
    k1, k2, k3 = _REP_TRANSLATION
    A = np.zeros((7, 7))
    A[0, 0] = -kg1
    A[1, 1] = -kg2
    A[2, 2] = -kg3
    A[0, 6] = _rep_hill(v1, k12, p2, n)
    A[1, 6] = _rep_hill(v2, k23, p3, n)
    A[2, 6] = _rep_hill(v3, _REP_K31, p1, n)
    A[3, 0] = k1
    A[4, 1] = k2
    A[5, 2] = k3
    A[3, 3] = -kp1
    A[4, 4] = -kp2
    A[5, 5] = -kp3
    return A


def _repressilator_matrix_seq(states, times, theta):
    v1, v2, v3, k12, k23, kg1, kg2, kg3, kp1, kp2, kp3, n = theta
    k1, k2, k3 = _REP_TRANSLATION
    m = len(times)
    A = np.zeros((m, 7, 7))
    A[:, 0, 0] = -kg1
    A[:, 1, 1] = -kg2
    A[:, 2, 2] = -kg3
    A[:, 0, 6] = _rep_hill(v1, k12, states[:, 4], n)
    A[:, 1, 6] = _rep_hill(v2, k23, states[:, 5], n)
    A[:, 2, 6] = _rep_hill(v3, _REP_K31, states[:, 3], n)
    A[:, 3, 0] = k1
    A[:, 4, 1] = k2
    A[:, 5, 2] = k3
    A[:, 3, 3] = -kp1
    A[:, 4, 4] = -kp2
    A[:, 5, 5] = -kp3
    return A


def _repressilator_field(x, t, theta):
    v1, v2, v3, k12, k23, kg1, kg2, kg3, kp1, kp2, kp3, n = theta
    r1, r2, r3, p1, p2, p3 = x[:6]
    k1, k2, k3 = _REP_TRANSLATION
    return np.array(
        [
            v1 * k12 ** n / (p2 ** n + k12 ** n) - kg1 * r1,
            v2 * k23 ** n / (p3 ** n + k23 ** n) - kg2 * r2,
            v3 * _REP_K31 ** n / (p1 ** n + _REP_K31 ** n) - kg3 * r3,
            k1 * r1 - kp1 * p1,
            k2 * r2 - kp2 * p2,
            k3 * r3 - kp3 * p3,
            0.0,
        ]
    )


def catalog_repressilator() -> ModelCatalogEntry:
    """Three mRNA/protein pairs in a repression cycle, plus constant Z = 1.

    theta = (v1, v2, v3, k12, k23, kg1, kg2, kg3, kp1, kp2, kp3, n); the
    remaining structural constants (k31, translation rates) are fixed for
    identifiability. Only the three mRNA concentrations are observed.
    """
    lo = np.zeros(12)
    hi = np.full(12, np.inf)
    lo[11], hi[11] = 0.5, 6.0  # Hill exponent kept in a sane box
    C = np.zeros((3, 7))
    C[0, 0] = C[1, 1] = C[2, 2] = 1.0
    model = PseudoLinearModel(
        state_dim=7,
        control_dim=7,
        obs_dim=3,
        param_dim=12,
        system_matrix=_repressilator_matrix,
        system_matrix_seq=_repressilator_matrix_seq,
        control_matrix=np.eye(7),
        obs_matrix=C,
        param_bounds=(lo, hi),
        is_linear=False,
        autonomous=True,
        name="repressilator",
    )
    return ModelCatalogEntry(
        name="repressilator",
        model=model,
        true_theta=np.array(
            [50.0, 100.0, 80.0, 50.0, 30.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0]
        ),
        true_x0=np.array([60.0, 20.0, 6.0, 18.0, 27.0, 1.0, 1.0]),
        horizon=20.0,
        raw_field=_repressilator_field,
    )


# ---------------------------------------------------------------------------
# microbiota: generalized Lotka-Volterra, constants supplied by file
# ---------------------------------------------------------------------------

# species labels of the restricted 7-species community (original numbering
# of the 11-species system it was reduced from)
GLV_SPECIES_LABELS = (1, 2, 3, 4, 5, 9, 11)

# the 31 interaction entries treated as unknown, (row, column) in original
# labels, listed in the canonical reporting order (column blocks, then the
# row-11 block)
GLV_ESTIMATED_ENTRIES: tuple[tuple[int, int], ...] = (
    (1, 1), (3, 1), (4, 1), (5, 1),
    (2, 2), (3, 2), (4, 2), (5, 2),
    (1, 3), (2, 3), (3, 3),
    (1, 4), (2, 4), (4, 4),
    (2, 5), (3, 5), (4, 5), (5, 5),
    (3, 9), (5, 9),
    (1, 11), (2, 11), (3, 11), (4, 11), (5, 11),
    (11, 1), (11, 2), (11, 3), (11, 5), (11, 9), (11, 11),
)


@dataclass(frozen=True)
class GlvConstants:
    """Fixed quantities of a Lotka-Volterra community read from file."""

    labels: tuple[int, ...]
    mu: Array                 # growth rates, (d,)
    susceptibility: Array     # antibiotic susceptibilities s_i, (d,)
    m_fixed: Array            # (d, d) interactions, zeros at estimated slots
    theta_ref: Array | None   # (p,) reference values of estimated entries
    x0_subjects: Array        # (n_subjects, d)


def load_glv_constants(
    path: str | Path,
    labels: tuple[int, ...] = GLV_SPECIES_LABELS,
    estimated: tuple[tuple[int, int], ...] | None = GLV_ESTIMATED_ENTRIES,
) -> GlvConstants:
    """Parse a kind,i,j,value constants CSV (see README for the format).

    With `estimated` given, every fixed interaction slot must be listed
    explicitly (so the file documents which entries are frozen), estimated
    slots must not appear as fixed rows, and a `theta` row is required for
    each estimated entry.
    """
    path = Path(path)
    if not path.exists():
        raise MissingConstantsError(f"constants file not found: {path}")
    d = len(labels)
    pos = {lab: k for k, lab in enumerate(labels)}
    est_set = set(estimated) if estimated else set()

    mu = {}
    s = {}
    m_rows = {}
    theta = {}
    x0 = {}
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["kind", "i"]:
            raise DataFormatError(f"{path}: expected header kind,i,j,value")
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 fields")
            kind = row[0].strip().lower()
            try:
                i = int(row[1])
                j = int(row[2]) if row[2].strip() else None
                value = float(row[3])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if not np.isfinite(value):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            if kind in ("mu", "s"):
                if i not in pos:
                    raise DataFormatError(f"{path}:{lineno}: unknown species {i}")
                (mu if kind == "mu" else s)[i] = value
            elif kind == "m":
                if i not in pos or j not in pos:
                    raise DataFormatError(f"{path}:{lineno}: unknown species pair ({i},{j})")
                if (i, j) in est_set:
                    raise DataFormatError(
                        f"{path}:{lineno}: M[{i},{j}] is an estimated entry, "
                        "it must appear as a theta row, not a fixed m row"
                    )
                m_rows[(i, j)] = value
            elif kind == "theta":
                if (i, j) not in est_set:
                    raise DataFormatError(
                        f"{path}:{lineno}: M[{i},{j}] is not an estimated entry"
                    )
                theta[(i, j)] = value
            elif kind == "x0":
                if j not in pos:
                    raise DataFormatError(f"{path}:{lineno}: unknown species {j}")
                x0[(i, j)] = value
            else:
                raise DataFormatError(f"{path}:{lineno}: unknown kind '{kind}'")

    missing = [lab for lab in labels if lab not in mu] + [
        lab for lab in labels if lab not in s
    ]
    if missing:
        raise DataFormatError(f"{path}: missing mu/s rows for species {sorted(set(missing))}")
    if estimated:
        missing_theta = [e for e in estimated if e not in theta]
        if missing_theta:
            raise DataFormatError(f"{path}: missing theta rows for {missing_theta[:5]}...")
        fixed_slots = [
            (a, b)
            for a in labels
            for b in labels
            if (a, b) not in est_set and (a, b) not in m_rows
        ]
        if fixed_slots:
            raise DataFormatError(
                f"{path}: fixed interaction entries must be listed explicitly; "
                f"missing {fixed_slots[:5]}..."
            )
    if not x0:
        raise DataFormatError(f"{path}: no x0 rows")
    subjects = sorted({i for (i, _) in x0})
    x0_arr = np.zeros((len(subjects), d))
    for si, subj in enumerate(subjects):
        for lab in labels:
            if (subj, lab) not in x0:
                raise DataFormatError(f"{path}: subject {subj} missing x0 for species {lab}")
            x0_arr[si, pos[lab]] = x0[(subj, lab)]

    m_fixed = np.zeros((d, d))
    for (a, b), v in m_rows.items():
        m_fixed[pos[a], pos[b]] = v
    theta_ref = (
        np.array([theta[e] for e in estimated]) if estimated else None
    )
    return GlvConstants(
        labels=tuple(labels),
        mu=np.array([mu[lab] for lab in labels]),
        susceptibility=np.array([s[lab] for lab in labels]),
        m_fixed=m_fixed,
        theta_ref=theta_ref,
        x0_subjects=x0_arr,
    )


def _glv_interactions(theta, m_fixed, est_rows, est_cols):
    M = m_fixed.copy()
    M[est_rows, est_cols] = theta
    return M


def _glv_matrix(x, t, theta, mu, m_fixed, est_rows, est_cols):
    M = _glv_interactions(theta, m_fixed, est_rows, est_cols)
    return np.diag(mu) + x[:, None] * M


def _glv_matrix_seq(states, times, theta, mu, m_fixed, est_rows, est_cols):
    M = _glv_interactions(theta, m_fixed, est_rows, est_cols)
    return np.diag(mu)[None, :, :] + states[:, :, None] * M[None, :, :]


def _glv_field(x, t, theta, mu, m_fixed, est_rows, est_cols):
    M = _glv_interactions(theta, m_fixed, est_rows, est_cols)
    return x * (mu + M @ x)


def microbiota_demo_constants() -> Path:
    """Path of the packaged demo constants for the 7-species community."""
    return Path(__file__).parent / "data" / "microbiota_demo.csv"


def glv_full_demo_constants() -> Path:
    """Path of the packaged demo constants for the full 11-species system."""
    return Path(__file__).parent / "data" / "glv_full_demo.csv"


def catalog_microbiota(constants_path: str | Path | None = None) -> ModelCatalogEntry:
    """Restricted 7-species gut community under an antibiotic impulse.

    The growth rates mu_i, susceptibilities s_i, frozen interaction entries,
    reference values for the 31 estimated interactions and the per-subject
    initial conditions all come from a constants file — they are data, not
    code. `microbiota_demo_constants()` points at a packaged illustrative
    file; real analyses supply their own.

    The antibiotic acts as the impulse v(t) = 1{t=0}: a state jump
    x(0+) = x0 + s*x0 applied before integration (see `apply_impulse`).
    """
    if constants_path is None:
        raise MissingConstantsError(
            "catalog_microbiota needs a constants file (mu, s, fixed M entries, "
            "theta reference values, subject x0s); see README for the format "
            "or use microbiota_demo_constants() for the packaged demo"
        )
    consts = load_glv_constants(constants_path)
    d = len(consts.labels)
    p = len(GLV_ESTIMATED_ENTRIES)
    pos = {lab: k for k, lab in enumerate(consts.labels)}
    est_rows = np.array([pos[i] for i, _ in GLV_ESTIMATED_ENTRIES])
    est_cols = np.array([pos[j] for _, j in GLV_ESTIMATED_ENTRIES])
    kw = dict(
        mu=consts.mu,
        m_fixed=consts.m_fixed,
        est_rows=est_rows,
        est_cols=est_cols,
    )
    model = PseudoLinearModel(
        state_dim=d,
        control_dim=d,
        obs_dim=d,
        param_dim=p,
        system_matrix=partial(_glv_matrix, **kw),
        system_matrix_seq=partial(_glv_matrix_seq, **kw),
        control_matrix=np.eye(d),
        obs_matrix=np.eye(d),
        param_bounds=None,  # interactions may take either sign
        is_linear=False,
        autonomous=True,
        name="microbiota",
    )
    return ModelCatalogEntry(
        name="microbiota",
        model=model,
        true_theta=consts.theta_ref,
        true_x0=consts.x0_subjects,
        horizon=16.0,
        raw_field=partial(_glv_field, **kw),
        impulse_susceptibility=consts.susceptibility,
    )


def full_glv_field(constants: GlvConstants) -> Callable[[Array, float], Array]:
    """Vector field of a fully specified community (no free parameters)."""
    mu = constants.mu
    M = constants.m_fixed

    def field(x, t):
        return x * (mu + M @ x)

    return field


# states of the full 11-species system that the restricted community keeps
FULL_TO_RESTRICTED = tuple(lab - 1 for lab in GLV_SPECIES_LABELS)


# ---------------------------------------------------------------------------
# semi-parametric extension: estimate a time-varying coefficient by
# augmenting the state with (z1, z2) = (vartheta, vartheta-dot)
# ---------------------------------------------------------------------------

def _extended_matrix(x_e, t, theta, base_sm, d, d_f):
    x = x_e[:d]
    z1 = x_e[d:d + d_f]
    de = d + 2 * d_f
    A_e = np.zeros((de, de))
    # the base block is d x (d + d_f): [A_x | A_vartheta], so the functional
    # state occupies a real column of the frozen system. Putting its effect
    # inside A_x instead (as a coefficient on x) would leave the z1 column
    # zero, making the functional invisible to the inner solve: the optimal
    # curvature control would be identically zero and the recovered path
    # could never bend away from a straight line.
    A_e[:d, :d + d_f] = base_sm(x, t, theta, z1)
    A_e[d:d + d_f, d + d_f:] = np.eye(d_f)
    return A_e


def extend_semiparametric(spec: SemiParamSpec) -> PseudoLinearModel:
    """Build the augmented model whose extra states carry the functional.

    The extended state is (x, z1, z2) with z1 playing the role of the
    time-varying parameter and z2 its derivative, so that under zero control
    z1 evolves affinely. The control channel is

        B_ext = [[B, 0], [0, 0], [0, I_{d_f}]]

    — the state equations keep their original forcing, z1 is never forced
    directly, and z2 absorbs the functional's curvature. The observation
    matrix is padded with zero columns.
    """
    base = spec.base_model
    d, d_f = base.state_dim, spec.functional_dim
    de = d + 2 * d_f
    B = base.control_matrix
    du = base.control_dim
    B_ext = np.zeros((de, du + d_f))
    B_ext[:d, :du] = B
    B_ext[d + d_f:, du:] = np.eye(d_f)
    C_ext = np.hstack([base.obs_matrix, np.zeros((base.obs_dim, 2 * d_f))])
    return PseudoLinearModel(
        state_dim=de,
        control_dim=du + d_f,
        obs_dim=base.obs_dim,
        param_dim=base.param_dim,
        system_matrix=partial(
            _extended_matrix, base_sm=base.system_matrix, d=d, d_f=d_f
        ),
        control_matrix=B_ext,
        obs_matrix=C_ext,
        param_bounds=base.param_bounds,
        is_linear=False,
        autonomous=base.autonomous,
        name=base.name + "+functional",
        semiparam_dims=(d, d_f),
    )


def semiparam_weight_matrix(spec: SemiParamSpec) -> Array:
    """Control weight diag(lambda1 I_{d_u}, lambda2 I_{d_f}) for the extension."""
    du = spec.base_model.control_dim
    w = np.concatenate(
        [np.full(du, spec.lambda1), np.full(spec.functional_dim, spec.lambda2)]
    )
    return np.diag(w)


# --- neuron model with a drifting excitation threshold ---------------------

def _fhn_functional_matrix(x, t, theta, vartheta):
    b, c = theta
    V = x[0]
    # columns: V, R, a(t); the excitation enters the recovery equation only
    return np.array(
        [
            [c * (1.0 - V * V / 3.0), c, 0.0],
            [-1.0 / c, -b / c, 1.0 / c],
        ]
    )


def fhn_functional_base() -> PseudoLinearModel:
    """Two-state FHN with the excitation parameter `a` left as a functional
    input: theta = (b, c), and the system-matrix block's trailing column
    carries a(t)'s coefficient (no constant-absorbing dummy state needed).
    """
    return PseudoLinearModel(
        state_dim=2,
        control_dim=2,
        obs_dim=1,
        param_dim=2,
        system_matrix=_fhn_functional_matrix,
        control_matrix=np.eye(2),
        obs_matrix=np.array([[1.0, 0.0]]),
        param_bounds=(np.zeros(2), np.full(2, np.inf)),
        is_linear=False,
        autonomous=False,
        name="fhn-functional",
    )


def fhn_functional_spec(lambda1: float, lambda2: float) -> SemiParamSpec:
    return SemiParamSpec(
        base_model=fhn_functional_base(),
        functional_dim=1,
        lambda1=lambda1,
        lambda2=lambda2,
    )


def _fhn_timevarying_field(x, t, theta, a_fun):
    b, c = theta
    V, R = x[0], x[1]
    return np.array(
        [
            c * (V - V ** 3 / 3.0 + R),
            -(V - a_fun(t) + b * R) / c,
        ]
    )


def fhn_timevarying_field(a_fun: Callable[[float], float]):
    """Raw FHN field with a time-dependent excitation parameter a(t)."""
    return partial(_fhn_timevarying_field, a_fun=a_fun)


def sinusoidal_a(t: float) -> float:
    """Drifting excitation a(t) = 0.2 (1 + sin(t/5)) used by the benchmark."""
    return 0.2 * (1.0 + np.sin(t / 5.0))


# ---------------------------------------------------------------------------
# catalog registry
# ---------------------------------------------------------------------------

CATALOG_BUILDERS: dict[str, Callable[..., ModelCatalogEntry]] = {
    "apinene": catalog_alpha_pinene,
    "fhn": catalog_fitzhugh_nagumo,
    "repressilator": catalog_repressilator,
    "microbiota": catalog_microbiota,
}


def get_catalog_entry(name: str, constants_path: str | Path | None = None) -> ModelCatalogEntry:
    """Look up a catalog model by name (the CLI's --model values)."""
    if name not in CATALOG_BUILDERS:
        known = ", ".join(sorted(CATALOG_BUILDERS))
        raise ConfigError(f"unknown model '{name}'; available models: {known}")
    if name == "microbiota":
        return catalog_microbiota(constants_path)
    return CATALOG_BUILDERS[name]()
