"""The designed precedence function: a monotone, human-auditable policy.

A phase combination's precedence is the sum, over its member phases, of
signed powers of weighted state variables, multiplied by a signed power of
the weighted active clearance flag:

    g(s, combo) = [ sum_phi sum_i spow(w[phi,i] * s_phi[i], p[phi,i]) ]
                  * sum_j spow(w'[j] * f_j, p'[j])

where spow(x, q) = sign(x) * |x|**q and spow(0, q) = 0. The signed power
keeps the function real-valued for negative weights while preserving the
constant-sign partial derivatives that make the policy auditable: for fixed
parameters, d g / d s_phi[i] never changes sign across valid states.

Exponents are clamped to [P_MIN, P_MAX] during optimization to avoid the
singularity of |x|**(p-1) at x=0 for p<1 blowing up and to bound overflow.

Flat-vector canonical order (used by checkpoints and CMA-ES): combos by
combo_index; within a combo: weights row-major (phase-major, then variable),
then exponents row-major, then the 4 flag weights, then the 4 flag exponents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intersection import ClearanceFlags, IntersectionLayout, PhaseCombo, param_count

N_STATE_VARS = 6
N_FLAGS = 4

P_MIN = 0.1
P_MAX = 4.0


def spow(x: np.ndarray | float, p: np.ndarray | float) -> np.ndarray:
    """Signed power: sign(x) * |x|**p, with spow(0, p) = 0."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    ax = np.abs(x)
    safe = np.where(ax > 0.0, ax, 1.0)
    return np.where(ax > 0.0, np.sign(x) * safe ** p, 0.0)


@dataclass
class PrecedenceParams:
    """Tunable parameter set of the designed precedence function.

    Per combo c (with k_c member phases): ``weights[c]`` and ``exponents[c]``
    are (k_c, 6) arrays over phase state variables; ``flag_weights[c]`` and
    ``flag_exponents[c]`` are (4,) arrays over clearance cases.
    """

    weights: list[np.ndarray]
    exponents: list[np.ndarray]
    flag_weights: list[np.ndarray]
    flag_exponents: list[np.ndarray]

    @classmethod
    def ones(cls, layout: IntersectionLayout) -> "PrecedenceParams":
        """The all-ones initialization used before any tuning."""
        return cls(
            weights=[np.ones((len(c.phases), N_STATE_VARS)) for c in layout.combos],
            exponents=[np.ones((len(c.phases), N_STATE_VARS)) for c in layout.combos],
            flag_weights=[np.ones(N_FLAGS) for c in layout.combos],
            flag_exponents=[np.ones(N_FLAGS) for c in layout.combos],
        )

    @classmethod
    def random(
        cls,
        layout: IntersectionLayout,
        rng: np.random.Generator,
        weight_range: tuple[float, float] = (0.5, 1.5),
        exponent_range: tuple[float, float] = (P_MIN, P_MAX),
        signed_weights: bool = False,
    ) -> "PrecedenceParams":
        """Random draw around the all-ones init; weights positive by default.

        With ``signed_weights`` the weight signs are flipped independently
        at random, which makes the per-variable response directions (and,
        through the flag factor, the audit verdicts) sign-diverse.
        """
        params = cls.ones(layout)
        wl, wh = weight_range
        pl, ph = exponent_range

        def draw_w(shape):
            w = rng.uniform(wl, wh, size=shape)
            if signed_weights:
                w = w * rng.choice([-1.0, 1.0], size=shape)
            return w

        params.weights = [draw_w(w.shape) for w in params.weights]
        params.flag_weights = [draw_w(w.shape) for w in params.flag_weights]
        params.exponents = [rng.uniform(pl, ph, size=e.shape) for e in params.exponents]
        params.flag_exponents = [rng.uniform(pl, ph, size=e.shape)
                                 for e in params.flag_exponents]
        return params

    def copy(self) -> "PrecedenceParams":
        return PrecedenceParams(
            weights=[w.copy() for w in self.weights],
            exponents=[e.copy() for e in self.exponents],
            flag_weights=[w.copy() for w in self.flag_weights],
            flag_exponents=[e.copy() for e in self.flag_exponents],
        )

    @property
    def size(self) -> int:
        return sum(w.size + e.size + fw.size + fe.size
                   for w, e, fw, fe in zip(self.weights, self.exponents,
                                           self.flag_weights, self.flag_exponents))

    def flatten(self) -> np.ndarray:
        """Serialize to the canonical flat vector (see module docstring)."""
        chunks = []
        for w, e, fw, fe in zip(self.weights, self.exponents,
                                self.flag_weights, self.flag_exponents):
            chunks.extend([w.ravel(), e.ravel(), fw.ravel(), fe.ravel()])
        return np.concatenate(chunks)

    @classmethod
    def unflatten(cls, layout: IntersectionLayout, vec: np.ndarray) -> "PrecedenceParams":
        expected = param_count(layout)
        vec = np.asarray(vec, dtype=float)
        if vec.size != expected:
            raise ValueError(f"expected {expected} values, got {vec.size}")
        params = cls.ones(layout)
        pos = 0

        def take(n, shape):
            nonlocal pos
            block = vec[pos:pos + n].reshape(shape)
            pos += n
            return block.copy()

        for c, combo in enumerate(layout.combos):
            k = len(combo.phases)
            params.weights[c] = take(k * N_STATE_VARS, (k, N_STATE_VARS))
            params.exponents[c] = take(k * N_STATE_VARS, (k, N_STATE_VARS))
            params.flag_weights[c] = take(N_FLAGS, (N_FLAGS,))
            params.flag_exponents[c] = take(N_FLAGS, (N_FLAGS,))
        return params

    def clamp_exponents(self, lo: float = P_MIN, hi: float = P_MAX) -> None:
        for c in range(len(self.exponents)):
            np.clip(self.exponents[c], lo, hi, out=self.exponents[c])
            np.clip(self.flag_exponents[c], lo, hi, out=self.flag_exponents[c])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all()
                   for group in (self.weights, self.exponents,
                                 self.flag_weights, self.flag_exponents)
                   for a in group)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for v in self.flatten():
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def load(cls, layout: IntersectionLayout, path) -> "PrecedenceParams":
        with open(path) as fh:
            values = [float(line) for line in fh
                      if line.strip() and not line.lstrip().startswith("#")]
        return cls.unflatten(layout, np.asarray(values))


@dataclass
class PrecedenceReport:
    """Per-variable decomposition of precedence values for explanation.

    ``terms[c]`` holds the raw spow(w*s, p) contribution per (phase, variable)
    of combo c; the combo's precedence equals terms[c].sum() * flag_factor[c].
    ``difference`` is the chosen combo's term block minus the previous one's
    (zero-padded when the combos have different phase counts).
    """

    values: np.ndarray
    terms: list[np.ndarray]
    flag_factors: np.ndarray
    winner: int
    previous: int | None = None
    difference: np.ndarray | None = None


def _state_matrix(observation, layout: IntersectionLayout, combo: PhaseCombo) -> np.ndarray:
    return np.stack([observation.phase_state(pid) for pid in combo.phases])


def flag_factor(flags: ClearanceFlags, fw: np.ndarray, fe: np.ndarray) -> float:
    """sum_j spow(w'_j * f_j, p'_j); only the active flag contributes."""
    return float(spow(fw * flags.as_array(), fe).sum())


def precedence_terms(
    s_mat: np.ndarray, w: np.ndarray, p: np.ndarray
) -> np.ndarray:
    """Raw per-(phase, variable) contribution terms spow(w*s, p)."""
    return spow(w * s_mat, p)


def precedence(
    observation,
    combo: PhaseCombo,
    flags: ClearanceFlags,
    params: PrecedenceParams,
) -> float:
    """Evaluate the designed precedence of granting right-of-way to a combo."""
    if not params.is_finite():
        raise ValueError("theta not finite")
    c = combo.combo_index
    s_mat = _state_matrix(observation, observation.layout, combo)
    terms = precedence_terms(s_mat, params.weights[c], params.exponents[c])
    factor = flag_factor(flags, params.flag_weights[c], params.flag_exponents[c])
    return float(terms.sum() * factor)


def precedence_from_arrays(
    s_mat: np.ndarray,
    flags_vec: np.ndarray,
    combo_index: int,
    params: PrecedenceParams,
) -> float:
    """precedence() on raw arrays: s_mat is (k, 6), flags_vec one-hot (4,)."""
    c = combo_index
    terms = precedence_terms(s_mat, params.weights[c], params.exponents[c])
    factor = float(spow(params.flag_weights[c] * flags_vec,
                        params.flag_exponents[c]).sum())
    return float(terms.sum() * factor)


def combo_values(observation, params: PrecedenceParams) -> np.ndarray:
    """Precedence of every combo at this observation (vector over combos)."""
    layout = observation.layout
    vals = np.empty(len(layout.combos))
    for combo in layout.combos:
        c = combo.combo_index
        s_mat = _state_matrix(observation, layout, combo)
        flags = observation.clearance_flags[c]
        vals[c] = precedence_from_arrays(s_mat, flags.as_array(), c, params)
    return vals


def combo_values_from_vec(vec: np.ndarray, codec, params: PrecedenceParams) -> np.ndarray:
    """Precedence of every combo from a flattened observation vector."""
    vals = np.empty(codec.n_combos)
    for combo in codec.layout.combos:
        c = combo.combo_index
        s_mat = codec.combo_state_matrix(vec, combo)
        flags = codec.combo_flags(vec, c)
        vals[c] = precedence_from_arrays(s_mat, flags, c, params)
    return vals


def param_slices(layout: IntersectionLayout) -> list[dict[str, slice]]:
    """Flat-vector slices of each combo's parameter blocks, canonical order."""
    out = []
    pos = 0
    for combo in layout.combos:
        k = len(combo.phases)
        out.append({
            "weights": slice(pos, pos + 6 * k),
            "exponents": slice(pos + 6 * k, pos + 12 * k),
            "flag_weights": slice(pos + 12 * k, pos + 12 * k + 4),
            "flag_exponents": slice(pos + 12 * k + 4, pos + 12 * k + 8),
        })
        pos += 12 * k + 8
    return out


class BatchPrecedence:
    """Vectorized precedence evaluation and gradients over observation batches.

    Operates on flattened observation matrices (B, n_features); results are
    identical to the per-sample functions, computed with whole-batch numpy
    operations. Used by the training loops, where per-sample calls dominate
    the runtime otherwise.
    """

    def __init__(self, codec):
        self.codec = codec
        self.layout = codec.layout
        self.slices = param_slices(self.layout)
        self._phase_idx = []
        self._flag_slices = []
        for combo in self.layout.combos:
            idx = np.concatenate([
                np.arange(codec.phase_slice(pid).start,
                          codec.phase_slice(pid).stop)
                for pid in combo.phases])
            self._phase_idx.append(idx.reshape(len(combo.phases), 6))
            self._flag_slices.append(codec.flags_slice(combo.combo_index))

    def values(self, X: np.ndarray, params: PrecedenceParams) -> np.ndarray:
        """Precedence of every combo for every row: shape (B, n_combos)."""
        X = np.atleast_2d(X)
        out = np.empty((X.shape[0], len(self.layout.combos)))
        for c, combo in enumerate(self.layout.combos):
            S = X[:, self._phase_idx[c]]
            terms = spow(params.weights[c] * S, params.exponents[c])
            F = X[:, self._flag_slices[c]]
            factor = spow(params.flag_weights[c] * F,
                          params.flag_exponents[c]).sum(axis=1)
            out[:, c] = terms.sum(axis=(1, 2)) * factor
        return out

    def accumulate_grad(self, X: np.ndarray, coeffs: np.ndarray,
                        params: PrecedenceParams) -> np.ndarray:
        """sum_b coeffs[b, c] * d g_c(X[b]) / d theta, over the flat vector."""
        X = np.atleast_2d(X)
        flat = np.zeros(params.size)
        for c in range(len(self.layout.combos)):
            lam = coeffs[:, c]
            if not np.any(lam):
                continue
            w, p = params.weights[c], params.exponents[c]
            fw, fe = params.flag_weights[c], params.flag_exponents[c]
            S = X[:, self._phase_idx[c]]
            U = w * S
            AU = np.abs(U)
            nz = AU > 0.0
            safe = np.where(nz, AU, 1.0)
            dU = np.where(nz, p * safe ** (p - 1.0), 0.0)
            dP = np.where(nz, np.sign(U) * safe ** p * np.log(safe), 0.0)
            terms = np.where(nz, np.sign(U) * safe ** p, 0.0)
            inner = terms.sum(axis=(1, 2))
            F = X[:, self._flag_slices[c]]
            UF = fw * F
            AUF = np.abs(UF)
            nzf = AUF > 0.0
            safef = np.where(nzf, AUF, 1.0)
            dUF = np.where(nzf, fe * safef ** (fe - 1.0), 0.0)
            dPF = np.where(nzf, np.sign(UF) * safef ** fe * np.log(safef), 0.0)
            factor = np.where(nzf, np.sign(UF) * safef ** fe, 0.0).sum(axis=1)
            lf = lam * factor
            sl = self.slices[c]
            flat[sl["weights"]] += np.einsum("b,bkj->kj", lf, dU * S).ravel()
            flat[sl["exponents"]] += np.einsum("b,bkj->kj", lf, dP).ravel()
            li = lam * inner
            flat[sl["flag_weights"]] += li @ (dUF * F)
            flat[sl["flag_exponents"]] += li @ dPF
        return flat


def select_action(observation, params: PrecedenceParams, combos=None) -> PhaseCombo:
    """argmax over combo precedences; ties resolve to the lowest combo_index."""
    layout = observation.layout
    if combos is None:
        combos = layout.combos
    vals = combo_values(observation, params)
    best = max(combos, key=lambda combo: (vals[combo.combo_index], -combo.combo_index))
    return best


@dataclass
class PrecedenceGradient:
    """Partials of one combo's precedence w.r.t. every parameter entry.

    Entries for combos other than ``combo_index`` are structurally zero and
    not materialized; ``flatten(layout)`` scatters into the full flat vector.
    """

    combo_index: int
    d_weights: np.ndarray
    d_exponents: np.ndarray
    d_flag_weights: np.ndarray
    d_flag_exponents: np.ndarray

    def flatten(self, layout: IntersectionLayout) -> np.ndarray:
        out = np.zeros(param_count(layout))
        pos = 0
        for combo in layout.combos:
            k = len(combo.phases)
            block = 12 * k + 8
            if combo.combo_index == self.combo_index:
                out[pos:pos + k * 6] = self.d_weights.ravel()
                out[pos + k * 6:pos + 12 * k] = self.d_exponents.ravel()
                out[pos + 12 * k:pos + 12 * k + 4] = self.d_flag_weights
                out[pos + 12 * k + 4:pos + block] = self.d_flag_exponents
            pos += block
        return out


def grad_params(
    s_mat: np.ndarray,
    flags_vec: np.ndarray,
    combo_index: int,
    params: PrecedenceParams,
) -> PrecedenceGradient:
    """Analytic gradient of precedence_from_arrays w.r.t. the combo's params.

    The spow subgradient at a zero base is taken as 0 throughout.
    """
    c = combo_index
    w, p = params.weights[c], params.exponents[c]
    fw, fe = params.flag_weights[c], params.flag_exponents[c]
    s_mat = np.asarray(s_mat, dtype=float)
    flags_vec = np.asarray(flags_vec, dtype=float)

    u = w * s_mat
    au = np.abs(u)
    nz = au > 0.0
    # d spow(u,p)/du = p*|u|**(p-1); d spow(u,p)/dp = spow(u,p)*ln|u|
    with np.errstate(divide="ignore", invalid="ignore"):
        du = np.where(nz, p * au ** (p - 1.0), 0.0)
        dp = np.where(nz, spow(u, p) * np.log(np.where(nz, au, 1.0)), 0.0)
    terms = spow(u, p)
    inner = terms.sum()

    uf = fw * flags_vec
    auf = np.abs(uf)
    nzf = auf > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        duf = np.where(nzf, fe * auf ** (fe - 1.0), 0.0)
        dpf = np.where(nzf, spow(uf, fe) * np.log(np.where(nzf, auf, 1.0)), 0.0)
    factor = spow(uf, fe).sum()

    return PrecedenceGradient(
        combo_index=c,
        d_weights=du * s_mat * factor,
        d_exponents=dp * factor,
        d_flag_weights=duf * flags_vec * inner,
        d_flag_exponents=dpf * inner,
    )


def grad_params_obs(observation, combo: PhaseCombo, flags: ClearanceFlags,
                    params: PrecedenceParams) -> PrecedenceGradient:
    """grad_params() taking an Observation like precedence() does."""
    s_mat = _state_matrix(observation, observation.layout, combo)
    return grad_params(s_mat, flags.as_array(), combo.combo_index, params)


def state_partials(
    s_mat: np.ndarray,
    flags_vec: np.ndarray,
    combo_index: int,
    params: PrecedenceParams,
) -> np.ndarray:
    """d precedence / d s_phi[i] for every (phase, variable) of the combo."""
    c = combo_index
    w, p = params.weights[c], params.exponents[c]
    u = w * np.asarray(s_mat, dtype=float)
    au = np.abs(u)
    nz = au > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        dspow = np.where(nz, p * au ** (p - 1.0), 0.0)
    factor = float(spow(params.flag_weights[c] * np.asarray(flags_vec, dtype=float),
                        params.flag_exponents[c]).sum())
    return dspow * w * factor


NON_NEGATIVE = "non-negative"
NON_POSITIVE = "non-positive"
MIXED = "mixed"


def monotonicity_audit(
    params: PrecedenceParams,
    sample_states: list,
    tol: float = 0.0,
) -> dict[tuple[int, int, int], str]:
    """Classify the response direction of every (combo, phase slot, variable).

    Evaluates the analytic partial d g / d s_phi[i] at each sampled state and
    reports whether it stays non-negative, stays non-positive, or takes both
    strict signs ("mixed"). A parameter set whose audit is free of "mixed"
    verdicts responds to every state variable in one consistent direction,
    which is what makes its decisions attributable.
    """
    if not sample_states:
        raise ValueError("sample set must be non-empty")
    layout = sample_states[0].layout
    verdict: dict[tuple[int, int, int], str] = {}
    for combo in layout.combos:
        c = combo.combo_index
        saw_pos = np.zeros((len(combo.phases), N_STATE_VARS), dtype=bool)
        saw_neg = np.zeros_like(saw_pos)
        for obs in sample_states:
            s_mat = _state_matrix(obs, layout, combo)
            flags = obs.clearance_flags[c]
            d = state_partials(s_mat, flags.as_array(), c, params)
            saw_pos |= d > tol
            saw_neg |= d < -tol
        for slot in range(len(combo.phases)):
            for i in range(N_STATE_VARS):
                if saw_pos[slot, i] and saw_neg[slot, i]:
                    verdict[(c, slot, i)] = MIXED
                elif saw_neg[slot, i]:
                    verdict[(c, slot, i)] = NON_POSITIVE
                else:
                    verdict[(c, slot, i)] = NON_NEGATIVE
    return verdict


def explain(
    observation,
    params: PrecedenceParams,
    chosen: PhaseCombo,
    previous: PhaseCombo | None = None,
) -> PrecedenceReport:
    """Decompose the decision into per-variable contribution terms.

    Statements like "combo X now wins because variable i's term grew by d"
    read directly off ``term_deltas`` for the chosen and previous combos.
    """
    layout = observation.layout
    values = combo_values(observation, params)
    terms = []
    factors = np.empty(len(layout.combos))
    for combo in layout.combos:
        c = combo.combo_index
        s_mat = _state_matrix(observation, layout, combo)
        terms.append(precedence_terms(s_mat, params.weights[c], params.exponents[c]))
        factors[c] = flag_factor(observation.clearance_flags[c],
                                 params.flag_weights[c], params.flag_exponents[c])
    difference = None
    if previous is not None:
        a, b = terms[chosen.combo_index], terms[previous.combo_index]
        k = max(a.shape[0], b.shape[0])
        pad_a = np.zeros((k, N_STATE_VARS))
        pad_b = np.zeros((k, N_STATE_VARS))
        pad_a[:a.shape[0]] = a
        pad_b[:b.shape[0]] = b
        difference = pad_a - pad_b
    return PrecedenceReport(
        values=values,
        terms=terms,
        flag_factors=factors,
        winner=int(np.argmax(values)),
        previous=previous.combo_index if previous is not None else None,
        difference=difference,
    )


def explain_change(
    before: PrecedenceReport, after: PrecedenceReport
) -> list[np.ndarray]:
    """Per-combo term movement between two reports (after - before)."""
    return [a - b for a, b in zip(after.terms, before.terms)]
