"""Explanation spaces for an access-loss observation.

An observer who finds their access gone can attribute it to various
(actor, action) pairs. A :class:`WorldModel` declares a small set of boolean
facts, which complete assignments produce which observation, and which
explanation is the proximate cause in each assignment. An explanation is
*consistent* for an observer when some world agreeing with everything the
observer knows produces the observation and is labelled with it.

World sets are capped at 12 facts so consistency is decided by exhaustive
enumeration rather than by any clever inference.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .policy_engine import RC_SENSITIVE, Condition, condition_ids

MAX_FACTS = 12
DENIED = "denied"
NO_LOSS = "access-ok"
SYSTEM = "system"


class AmbiguityError(Exception):
    pass


class FactSetTooLarge(AmbiguityError):
    pass


class WorldModelError(AmbiguityError, ValueError):
    pass


class Actor(str, enum.Enum):
    RM = "RM"
    RC = "RC"
    SYSTEM = "System"
    MUTUAL = "Mutual"


class Action(str, enum.Enum):
    EXPLICIT_NON_RENEWAL = "ExplicitNonRenewal"
    FORGOT_TO_RENEW = "ForgotToRenew"
    REALLOCATED_FOR_SCARCITY = "ReallocatedForScarcity"
    CONDITION_FIRED = "ConditionFired"
    JOINT_FAILURE_TO_ACT = "JointFailureToAct"
    OWN_ACTIONS_TRIGGERED = "OwnActionsTriggered"
    EXPLICIT_REVOCATION = "ExplicitRevocation"


@dataclass(frozen=True, order=True)
class Explanation:
    actor: Actor
    action: Action
    condition: str | None = None

    def __post_init__(self):
        fired = self.action is Action.CONDITION_FIRED
        if (self.actor is Actor.SYSTEM) != fired:
            raise WorldModelError("ConditionFired is attributed to System and nothing else is")
        if fired != (self.condition is not None):
            raise WorldModelError("a condition id goes with ConditionFired only")

    @property
    def action_label(self) -> str:
        if self.condition is not None:
            return f"{self.action.value}({self.condition})"
        return self.action.value

    def to_json(self) -> dict[str, str]:
        return {"actor": self.actor.value, "action": self.action_label}

    def __str__(self) -> str:
        return f"({self.actor.value}, {self.action_label})"


# -- designs -----------------------------------------------------------------

@dataclass(frozen=True)
class LeaseDesign:
    expiration: tuple[Condition, ...] = ()
    renewal: tuple[Condition, ...] = ()
    pooled: bool = False
    name: str = "lease"


@dataclass(frozen=True)
class StaticRevocable:
    name: str = "static-revocable"


@dataclass(frozen=True)
class StaticUnrevocable:
    name: str = "static-unrevocable"


Design = LeaseDesign | StaticRevocable | StaticUnrevocable


def _references_rc(c: Condition) -> bool:
    if hasattr(c, "conditions"):
        return any(_references_rc(s) for s in c.conditions)
    return isinstance(c, RC_SENSITIVE)


def explanation_space(design: Design) -> list[Explanation]:
    """Every (actor, action) pair the design makes available as a story."""
    if isinstance(design, StaticUnrevocable):
        return []
    if isinstance(design, StaticRevocable):
        return [Explanation(Actor.RM, Action.EXPLICIT_REVOCATION)]
    space = [Explanation(Actor.RM, Action.EXPLICIT_NON_RENEWAL),
             Explanation(Actor.RM, Action.FORGOT_TO_RENEW)]
    if design.pooled:
        space.append(Explanation(Actor.RM, Action.REALLOCATED_FOR_SCARCITY))
    seen = set()
    for c in design.expiration:
        for cid in condition_ids(c):
            if cid not in seen:
                seen.add(cid)
                space.append(Explanation(Actor.SYSTEM, Action.CONDITION_FIRED, cid))
    space.append(Explanation(Actor.MUTUAL, Action.JOINT_FAILURE_TO_ACT))
    if any(_references_rc(c) for c in design.expiration):
        space.append(Explanation(Actor.RC, Action.OWN_ACTIONS_TRIGGERED))
    return space


# -- world models ------------------------------------------------------------

Predicate = Callable[[int], bool]


def compile_expr(doc: Any, index: Mapping[str, int], path: str = "$") -> Predicate:
    """Turn a JSON boolean expression over fact names into a predicate on a bitmask.

    Grammar: a fact name, ``true``/``false``, ``{"not": e}``,
    ``{"all": [e, ...]}`` or ``{"any": [e, ...]}``.
    """
    if isinstance(doc, bool):
        return (lambda _: True) if doc else (lambda _: False)
    if isinstance(doc, str):
        if doc not in index:
            raise WorldModelError(f"{path}: undeclared fact {doc!r}")
        bit = 1 << index[doc]
        return lambda w: bool(w & bit)
    if isinstance(doc, dict) and len(doc) == 1:
        (op, arg), = doc.items()
        if op == "not":
            inner = compile_expr(arg, index, f"{path}.not")
            return lambda w: not inner(w)
        if op in ("all", "any"):
            if not isinstance(arg, list) or not arg:
                raise WorldModelError(f"{path}.{op}: must be a non-empty list")
            parts = [compile_expr(a, index, f"{path}.{op}[{i}]") for i, a in enumerate(arg)]
            if op == "all":
                return lambda w: all(p(w) for p in parts)
            return lambda w: any(p(w) for p in parts)
    raise WorldModelError(f"{path}: not a boolean expression: {doc!r}")


@dataclass(frozen=True)
class Fact:
    name: str
    author: str = SYSTEM
    truth: bool | None = None
    public: bool = False


@dataclass(frozen=True)
class Rule:
    when: Any
    observation: str | None = None
    explanation: Explanation | None = None


@dataclass
class WorldModel:
    facts: tuple[Fact, ...]
    outcomes: tuple[Rule, ...]
    causes: tuple[Rule, ...]
    _observe: list[tuple[Predicate, str]] = field(init=False, repr=False)
    _label: list[tuple[Predicate, Explanation]] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.facts) > MAX_FACTS:
            raise FactSetTooLarge(f"{len(self.facts)} facts; at most {MAX_FACTS} can be enumerated")
        names = [f.name for f in self.facts]
        if len(set(names)) != len(names):
            raise WorldModelError(f"duplicate fact names in {names}")
        self.index = {n: i for i, n in enumerate(names)}
        self._observe = [(compile_expr(r.when, self.index, f"$.outcomes[{i}].when"), r.observation)
                         for i, r in enumerate(self.outcomes)]
        self._label = [(compile_expr(r.when, self.index, f"$.causes[{i}].when"), r.explanation)
                       for i, r in enumerate(self.causes)]
        for w in self.worlds():
            if self.observe(w) != NO_LOSS and self.label(w) is None:
                raise WorldModelError(
                    f"world {self.describe(w)} loses access but no cause rule labels it")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.facts]

    def fact(self, name: str) -> Fact:
        return self.facts[self.index[name]]

    def worlds(self) -> range:
        return range(1 << len(self.facts))

    def observe(self, world: int) -> str:
        for pred, obs in self._observe:
            if pred(world):
                return obs
        return NO_LOSS

    def label(self, world: int) -> Explanation | None:
        """Proximate cause of a world: the first cause rule that matches."""
        for pred, expl in self._label:
            if pred(world):
                return expl
        return None

    def describe(self, world: int) -> dict[str, bool]:
        return {n: bool(world >> i & 1) for i, n in enumerate(self.names)}

    def encode(self, assignment: Mapping[str, bool]) -> tuple[int, int]:
        """(mask, value) bit pair for a partial assignment."""
        mask = value = 0
        for name, v in assignment.items():
            if name not in self.index:
                raise WorldModelError(f"unknown fact {name!r}")
            bit = 1 << self.index[name]
            mask |= bit
            if v:
                value |= bit
        return mask, value

    def to_json(self) -> dict[str, Any]:
        return {
            "facts": [{"name": f.name, "author": f.author, "truth": f.truth, "public": f.public}
                      for f in self.facts],
            "outcomes": [{"when": r.when, "observation": r.observation} for r in self.outcomes],
            "causes": [{"when": r.when, **r.explanation.to_json()} for r in self.causes],
        }


def _explanation_from_json(doc: dict, path: str) -> Explanation:
    try:
        actor = Actor(doc.get("actor"))
    except ValueError:
        raise WorldModelError(f"{path}.actor: unknown actor {doc.get('actor')!r}") from None
    label = doc.get("action")
    if not isinstance(label, str):
        raise WorldModelError(f"{path}.action: must be a string")
    condition = doc.get("condition")
    if label.startswith("ConditionFired(") and label.endswith(")"):
        condition = label[len("ConditionFired("):-1]
        label = "ConditionFired"
    try:
        action = Action(label)
    except ValueError:
        raise WorldModelError(f"{path}.action: unknown action {label!r}") from None
    try:
        return Explanation(actor, action, condition)
    except WorldModelError as exc:
        raise WorldModelError(f"{path}: {exc}") from None


def world_from_json(doc: Any, path: str = "$") -> WorldModel:
    if not isinstance(doc, dict):
        raise WorldModelError(f"{path}: fact model must be an object")
    facts_doc = doc.get("facts")
    if not isinstance(facts_doc, list):
        raise WorldModelError(f"{path}.facts: must be a list")
    if len(facts_doc) > MAX_FACTS:
        raise FactSetTooLarge(f"{path}.facts: {len(facts_doc)} facts; at most {MAX_FACTS}")
    facts = []
    for i, f in enumerate(facts_doc):
        p = f"{path}.facts[{i}]"
        if isinstance(f, str):
            f = {"name": f}
        if not isinstance(f, dict) or not isinstance(f.get("name"), str) or not f["name"]:
            raise WorldModelError(f"{p}.name: must be a non-empty string")
        author = f.get("author", SYSTEM)
        truth = f.get("truth")
        if not isinstance(author, str) or not author:
            raise WorldModelError(f"{p}.author: must be a non-empty string")
        if truth is not None and not isinstance(truth, bool):
            raise WorldModelError(f"{p}.truth: must be a boolean")
        if not isinstance(f.get("public", False), bool):
            raise WorldModelError(f"{p}.public: must be a boolean")
        facts.append(Fact(f["name"], author, truth, f.get("public", False)))
    outcomes, causes = [], []
    for key, out in (("outcomes", outcomes), ("causes", causes)):
        rules = doc.get(key)
        if not isinstance(rules, list):
            raise WorldModelError(f"{path}.{key}: must be a list")
        for i, r in enumerate(rules):
            p = f"{path}.{key}[{i}]"
            if not isinstance(r, dict) or "when" not in r:
                raise WorldModelError(f"{p}.when: required")
            if key == "outcomes":
                if not isinstance(r.get("observation"), str):
                    raise WorldModelError(f"{p}.observation: must be a string")
                out.append(Rule(r["when"], observation=r["observation"]))
            else:
                out.append(Rule(r["when"], explanation=_explanation_from_json(r, p)))
    try:
        return WorldModel(tuple(facts), tuple(outcomes), tuple(causes))
    except WorldModelError as exc:
        msg = str(exc)
        if msg.startswith("$") and path != "$":
            raise WorldModelError(path + msg[1:]) from None
        raise


def static_world(design: StaticRevocable | StaticUnrevocable) -> WorldModel:
    """A static grant can only be lost by the RM revoking it, if at all."""
    if isinstance(design, StaticUnrevocable):
        return WorldModel((), (), ())
    return WorldModel(
        (Fact("rm_revoked", author="RM"),),
        (Rule("rm_revoked", observation=DENIED),),
        (Rule("rm_revoked", explanation=Explanation(Actor.RM, Action.EXPLICIT_REVOCATION)),),
    )


# -- observers ---------------------------------------------------------------

@dataclass(frozen=True)
class ObserverKnowledge:
    observer: str
    known_facts: Mapping[str, bool] = field(default_factory=dict)

    def with_facts(self, extra: Mapping[str, bool]) -> ObserverKnowledge:
        merged = dict(self.known_facts)
        for name, value in extra.items():
            if name in merged and merged[name] != value:
                raise WorldModelError(f"conflicting knowledge about {name!r}")
            merged[name] = value
        return ObserverKnowledge(self.observer, merged)

    def restricted_to(self, world: WorldModel) -> ObserverKnowledge:
        return ObserverKnowledge(self.observer,
                                 {k: v for k, v in self.known_facts.items() if k in world.index})

    @classmethod
    def derive(cls, world: WorldModel, observer: str,
               truth: Mapping[str, bool] | None = None) -> ObserverKnowledge:
        """What an observer knows first hand: their own acts plus anything public.

        System facts (what fired, what the RM was told) stay unknown.
        """
        known = {}
        for f in world.facts:
            if f.author == observer or (f.public and f.author != SYSTEM):
                value = truth.get(f.name, f.truth) if truth else f.truth
                if value is None:
                    raise WorldModelError(f"{observer} authored {f.name!r} but it has no truth value")
                known[f.name] = value
        return cls(observer, known)


def consistent_explanations(obs: str, k: ObserverKnowledge, w: WorldModel) -> set[Explanation]:
    """Labels of every world that agrees with ``k`` and yields ``obs``.

    A world with no loss of access has nothing to explain.
    """
    if obs == NO_LOSS:
        return set()
    mask, value = w.encode(k.known_facts)
    found = set()
    for world in w.worlds():
        if world & mask != value or w.observe(world) != obs:
            continue
        label = w.label(world)
        if label is not None:
            found.add(label)
    return found


def consistent(e: Explanation, obs: str, k: ObserverKnowledge, w: WorldModel) -> bool:
    """True iff some world extending the observer's knowledge yields ``obs`` with cause ``e``."""
    return e in consistent_explanations(obs, k, w)


@dataclass(frozen=True)
class AmbiguityDegree:
    n_explanations: int
    n_actors: int
    explanations: tuple[Explanation, ...]


def world_for(design: Design, w: WorldModel | None) -> WorldModel:
    if isinstance(design, (StaticRevocable, StaticUnrevocable)):
        return static_world(design)
    if w is None:
        raise WorldModelError("a lease design needs a declared fact model")
    return w


def ambiguity_degree(obs: str, k: ObserverKnowledge, design: Design,
                     w: WorldModel | None = None) -> AmbiguityDegree:
    world = world_for(design, w)
    found = consistent_explanations(obs, k.restricted_to(world), world)
    explanations = tuple(e for e in explanation_space(design) if e in found)
    return AmbiguityDegree(len(explanations), len({e.actor for e in explanations}), explanations)


def report_row(design: Design, obs: str, degree: AmbiguityDegree,
               observer: str | None = None) -> dict[str, Any]:
    row: dict[str, Any] = {
        "design": design.name,
        "observation": obs,
        "n_explanations": degree.n_explanations,
        "n_actors": degree.n_actors,
        "explanations": [e.to_json() for e in degree.explanations],
    }
    if observer is not None:
        row["observer"] = observer
    return row


def compare_designs(world: WorldModel | None, designs: Sequence[Design],
                    observers: Iterable[ObserverKnowledge],
                    observation: str = DENIED) -> list[dict[str, Any]]:
    """One report row per (design, observer) pair, designs in the order given."""
    observers = list(observers)
    return [report_row(d, observation, ambiguity_degree(observation, k, d, world), k.observer)
            for d in designs for k in observers]
