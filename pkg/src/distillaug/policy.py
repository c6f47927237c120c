"""Augmentation policies: uniform RandAugment-style sampling and file-defined
sub-policies, plus the 14-slot transform-vector view of a sampled sequence.

A policy is immutable once constructed and sampling is pure given a
generator, so one policy object can be shared by any number of workers. The
trainer derives one generator per (seed, epoch, sample) so augmentation is
reproducible no matter how samples are batched or distributed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageops import (
    BLEND_KINDS,
    DIRECTIONAL_KINDS,
    AugmentSpace,
    Image,
    TransformKind,
    TransformParam,
    apply,
    magnitude_to_param,
    tau_magnitude,
)

__all__ = [
    "TransformVector",
    "PolicyTriple",
    "RandAugmentPolicy",
    "SubPolicyList",
    "TransformInstance",
    "PolicyError",
    "derive_rng",
    "sample",
    "to_tau",
    "augment",
    "parse_policy",
    "format_policy",
]

TAU_DIM = 14


class PolicyError(ValueError):
    """Raised for malformed policy files or invalid policy parameters."""


@dataclass(frozen=True)
class TransformVector:
    """Magnitudes and application probabilities over the 14 full-space slots.

    At most two slots carry a non-zero magnitude; slot order follows the
    canonical operator order (``TransformKind`` values 0..13).
    """

    entries: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.entries) != TAU_DIM or len(self.probs) != TAU_DIM:
            raise PolicyError(f"transform vector must have {TAU_DIM} slots")
        nonzero = sum(1 for e in self.entries if e != 0.0)
        if nonzero > 2:
            raise PolicyError(f"at most 2 slots may be non-zero, got {nonzero}")
        if any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise PolicyError("probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class PolicyTriple:
    """One gated transform of a sub-policy: operator, gate probability,
    magnitude level on the full-space 0..30 scale."""

    kind: TransformKind
    probability: float
    magnitude: int

    def __post_init__(self):
        if self.kind not in AugmentSpace.FULL14.kinds:
            raise PolicyError(f"{self.kind.token} is not allowed in sub-policies")
        if not 0.0 <= self.probability <= 1.0:
            raise PolicyError(f"probability out of range: {self.probability}")
        if not 0 <= self.magnitude <= AugmentSpace.FULL14.max_level:
            raise PolicyError(f"magnitude out of range: {self.magnitude}")


@dataclass(frozen=True)
class RandAugmentPolicy:
    """Apply ``n`` uniformly drawn operators at one shared distortion level."""

    n: int
    m: int
    space: AugmentSpace = AugmentSpace.DESTRUCTION

    def __post_init__(self):
        if self.n < 1:
            raise PolicyError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.m <= self.space.max_level:
            raise PolicyError(
                f"m={self.m} out of range 0..{self.space.max_level} for {self.space.value}"
            )


@dataclass(frozen=True)
class SubPolicyList:
    """AutoAugment-style policy: a list of two-transform sub-policies, one of
    which is drawn uniformly per image."""

    subpolicies: tuple[tuple[PolicyTriple, PolicyTriple], ...]

    def __post_init__(self):
        if not self.subpolicies:
            raise PolicyError("policy contains no sub-policies")
        for sp in self.subpolicies:
            if len(sp) != 2:
                raise PolicyError("each sub-policy must contain exactly 2 transforms")


PolicySpec = RandAugmentPolicy | SubPolicyList


@dataclass(frozen=True)
class TransformInstance:
    """A sampled transform with sign/placement resolved and its gate outcome."""

    param: TransformParam
    applied: bool
    probability: float = 1.0


def derive_rng(seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Per-sample generator hashed from (seed, epoch, sample index).

    Identical arguments always yield an identical stream, so augmentation
    does not depend on worker count or batch order.
    """
    return np.random.default_rng([seed, epoch, sample_index])


def _resolve_sign(param: TransformParam, rng: np.random.Generator) -> TransformParam:
    kind = param.kind
    if kind in DIRECTIONAL_KINDS:
        if rng.integers(2):
            return TransformParam(kind, -param.value)
        return param
    if kind in BLEND_KINDS:
        # blend strength reflects around the identity factor 1.0
        if rng.integers(2):
            return TransformParam(kind, 2.0 - param.value)
        return param
    if kind is TransformKind.CUTOUT:
        center = (float(rng.random()), float(rng.random()))
        return TransformParam(kind, param.value, center)
    return param


def sample(policy: PolicySpec, rng: np.random.Generator) -> list[TransformInstance]:
    """Draw one transform sequence for one image.

    RandAugment mode yields exactly ``n`` instances, kinds uniform with
    replacement, each unconditionally applied. Sub-policy mode draws one
    sub-policy uniformly and gates each of its two transforms by its
    probability.
    """
    if isinstance(policy, RandAugmentPolicy):
        kinds = policy.space.kinds
        out = []
        for _ in range(policy.n):
            kind = kinds[int(rng.integers(len(kinds)))]
            param = _resolve_sign(magnitude_to_param(kind, policy.m, policy.space), rng)
            out.append(TransformInstance(param, applied=True, probability=1.0))
        return out
    if isinstance(policy, SubPolicyList):
        sub = policy.subpolicies[int(rng.integers(len(policy.subpolicies)))]
        out = []
        for triple in sub:
            applied = bool(rng.random() < triple.probability)
            param = _resolve_sign(
                magnitude_to_param(triple.kind, triple.magnitude, AugmentSpace.FULL14),
                rng,
            )
            out.append(TransformInstance(param, applied, triple.probability))
        return out
    raise TypeError(f"not a policy: {policy!r}")


def to_tau(instances: list[TransformInstance]) -> TransformVector:
    """Pack sampled instances into the 14-slot transform vector."""
    entries = [0.0] * TAU_DIM
    probs = [0.0] * TAU_DIM
    kinds = set()
    for inst in instances:
        kind = inst.param.kind
        if kind is TransformKind.CUTOUT:
            raise ValueError("cutout has no transform-vector slot")
        kinds.add(kind)
        if len(kinds) > 2:
            raise ValueError("more than 2 distinct kinds in one sequence")
        entries[kind.value] = tau_magnitude(inst.param)
        probs[kind.value] = inst.probability
    return TransformVector(tuple(entries), tuple(probs))


def augment(img: Image, instances: list[TransformInstance], fill: int) -> Image:
    """Left-to-right composition of every applied instance."""
    out = img
    for inst in instances:
        if inst.applied:
            out = apply(out, inst.param, fill)
    return out


_SPACE_TOKENS = {"full14": AugmentSpace.FULL14, "destruction": AugmentSpace.DESTRUCTION}


def parse_policy(text: str) -> PolicySpec:
    """Parse the line-oriented policy format.

    Either a single ``randaugment n=<int> m=<int> space=<full14|destruction>``
    line, or one ``subpolicy <kind> <prob> <mag> <kind> <prob> <mag>`` line
    per sub-policy. ``#`` starts a comment.
    """
    randaugment: RandAugmentPolicy | None = None
    subs: list[tuple[PolicyTriple, PolicyTriple]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        verb = fields[0]
        if verb == "randaugment":
            if randaugment is not None or subs:
                raise PolicyError(f"line {lineno}: randaugment must be the only directive")
            kv = {}
            for tok in fields[1:]:
                if "=" not in tok:
                    raise PolicyError(f"line {lineno}: expected key=value, got {tok!r}")
                key, _, val = tok.partition("=")
                kv[key] = val
            missing = {"n", "m", "space"} - kv.keys()
            if missing:
                raise PolicyError(f"line {lineno}: missing {sorted(missing)}")
            extra = kv.keys() - {"n", "m", "space"}
            if extra:
                raise PolicyError(f"line {lineno}: unknown keys {sorted(extra)}")
            if kv["space"] not in _SPACE_TOKENS:
                raise PolicyError(f"line {lineno}: unknown space {kv['space']!r}")
            try:
                n, m = int(kv["n"]), int(kv["m"])
            except ValueError:
                raise PolicyError(f"line {lineno}: n and m must be integers") from None
            try:
                randaugment = RandAugmentPolicy(n, m, _SPACE_TOKENS[kv["space"]])
            except PolicyError as e:
                raise PolicyError(f"line {lineno}: {e}") from None
        elif verb == "subpolicy":
            if randaugment is not None:
                raise PolicyError(f"line {lineno}: randaugment must be the only directive")
            if len(fields) != 7:
                raise PolicyError(
                    f"line {lineno}: subpolicy takes exactly 2 (kind prob mag) triples"
                )
            triples = []
            for kind_tok, prob_tok, mag_tok in (fields[1:4], fields[4:7]):
                try:
                    kind = TransformKind.from_token(kind_tok)
                except ValueError as e:
                    raise PolicyError(f"line {lineno}: {e}") from None
                try:
                    prob, mag = float(prob_tok), int(mag_tok)
                except ValueError:
                    raise PolicyError(
                        f"line {lineno}: expected numeric prob and integer mag"
                    ) from None
                try:
                    triples.append(PolicyTriple(kind, prob, mag))
                except PolicyError as e:
                    raise PolicyError(f"line {lineno}: {e}") from None
            subs.append((triples[0], triples[1]))
        else:
            raise PolicyError(f"line {lineno}: unknown directive {verb!r}")
    if randaugment is not None:
        return randaugment
    if not subs:
        raise PolicyError("empty policy: no directives found")
    return SubPolicyList(tuple(subs))


def format_policy(policy: PolicySpec) -> str:
    """Serialize a policy so that ``parse_policy`` round-trips it."""
    if isinstance(policy, RandAugmentPolicy):
        return f"randaugment n={policy.n} m={policy.m} space={policy.space.value}\n"
    lines = []
    for a, b in policy.subpolicies:
        lines.append(
            f"subpolicy {a.kind.token} {a.probability!r} {a.magnitude}"
            f" {b.kind.token} {b.probability!r} {b.magnitude}"
        )
    return "\n".join(lines) + "\n"
