"""Target parameters and their JSON form.

Policies inside an estimand JSON may be written as ``"uniform"``,
``{"point_mass": a}`` or an explicit ``[a][s]`` matrix.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mdp_core import action_mask, point_mass_policy, uniform_policy


@dataclass
class PolicyValue:
    """``E_0[V^{pi,gamma}_{r0}(S)]`` with pseudo-reward ``r0 = log pi0``."""

    pi: np.ndarray
    gamma: float
    kind = "PolicyValue"


@dataclass
class SoftmaxValue:
    """Value of the soft-optimal policy of ``r0`` at temperature ``tau_star`` on ``action_set``."""

    action_set: tuple
    tau_star: float
    gamma: float
    kind = "SoftmaxValue"


@dataclass
class NormalizedPolicyValue:
    """``E_0[V^{pi,gamma'}_{r_nu}(S)]`` for the ``nu``-normalized reward at discount ``gamma``."""

    pi: np.ndarray
    nu: np.ndarray
    gamma: float
    gamma_prime: float
    kind = "NormalizedPolicyValue"


ESTIMAND_TYPES = {cls.kind: cls for cls in (PolicyValue, SoftmaxValue, NormalizedPolicyValue)}


def _check_gamma(g, name):
    if not 0.0 <= g < 1.0:
        raise ValidationError(f"{name} must lie in [0, 1), got {g}")


def validate_estimand(estimand, n_states, n_actions, behavior_gamma=None):
    """Check shapes and discounts; ``behavior_gamma`` is the discount generating the data."""
    _check_gamma(estimand.gamma, "gamma")
    if isinstance(estimand, SoftmaxValue):
        action_mask(estimand.action_set, n_actions)
        if estimand.tau_star <= 0:
            raise ValidationError("tau_star must be positive")
        if behavior_gamma is not None and estimand.gamma != behavior_gamma:
            raise ValidationError("SoftmaxValue requires the behavioral discount factor")
        return
    pols = [("pi", estimand.pi)]
    if isinstance(estimand, NormalizedPolicyValue):
        _check_gamma(estimand.gamma_prime, "gamma_prime")
        pols.append(("nu", estimand.nu))
        if behavior_gamma is not None and estimand.gamma != behavior_gamma:
            raise ValidationError("normalization must use the behavioral discount factor")
    elif not isinstance(estimand, PolicyValue):
        raise ValidationError(f"unknown estimand {estimand!r}")
    for name, pi in pols:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (n_actions, n_states):
            raise ValidationError(f"{name} must have shape {(n_actions, n_states)}")
        if pi.min() < 0 or np.max(np.abs(pi.sum(axis=0) - 1)) > 1e-9:
            raise ValidationError(f"{name} is not a valid policy")


def policy_from_json(obj, n_actions, n_states):
    if obj == "uniform":
        return uniform_policy(n_actions, n_states)
    if isinstance(obj, dict) and "point_mass" in obj:
        return point_mass_policy(n_actions, n_states, int(obj["point_mass"]))
    return np.array(obj, dtype=float)


def estimand_from_dict(obj, n_actions, n_states):
    """Build an estimand from its JSON mapping (``{"kind": ..., ...}``)."""
    kind = obj.get("kind")
    try:
        if kind == "PolicyValue":
            est = PolicyValue(policy_from_json(obj["pi"], n_actions, n_states), float(obj["gamma"]))
        elif kind == "SoftmaxValue":
            est = SoftmaxValue(tuple(int(a) for a in obj["action_set"]), float(obj["tau_star"]), float(obj["gamma"]))
        elif kind == "NormalizedPolicyValue":
            est = NormalizedPolicyValue(
                policy_from_json(obj["pi"], n_actions, n_states),
                policy_from_json(obj["nu"], n_actions, n_states),
                float(obj["gamma"]),
                float(obj["gamma_prime"]),
            )
        else:
            raise ValidationError(f"unknown estimand kind {kind!r}")
    except KeyError as exc:
        raise ValidationError(f"estimand missing field {exc}") from None
    validate_estimand(est, n_states, n_actions)
    return est


def estimand_to_dict(est):
    out = {"kind": est.kind, "gamma": est.gamma}
    if isinstance(est, SoftmaxValue):
        out.update(action_set=list(est.action_set), tau_star=est.tau_star)
    else:
        out["pi"] = np.asarray(est.pi).tolist()
    if isinstance(est, NormalizedPolicyValue):
        out.update(nu=np.asarray(est.nu).tolist(), gamma_prime=est.gamma_prime)
    return out
