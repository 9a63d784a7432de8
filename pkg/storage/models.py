# Filename: storage/models.py
"""
Pydantic schema of the JSON model file.

Only the structure is checked here; variable names and effects are
resolved against a scheme in :mod:`storage.import_manager`.
"""

from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


# ------------------------------------------------------------------------------
# One conditional independence A _||_ B | given
# ------------------------------------------------------------------------------
class IndependenceEntry(BaseModel):
    """
    Conditional independence statement.

    :ivar a: First variable set
    :ivar b: Second variable set
    :ivar given: Conditioning set (may be empty)
    """
    model_config = ConfigDict(extra="forbid")

    a: List[str]
    b: List[str]
    given: List[str] = Field(default_factory=list)


# ------------------------------------------------------------------------------
# Graph blocks
# ------------------------------------------------------------------------------
class DagBlock(BaseModel):
    """
    Directed acyclic graph.

    :ivar edges: Arrows as ``[parent, child]`` pairs
    """
    model_config = ConfigDict(extra="forbid")

    edges: List[Tuple[str, str]] = Field(default_factory=list)


class ChainBlock(BaseModel):
    """
    Chain graph read under the multivariate regression Markov property.

    :ivar components: Chain components in any order
    :ivar edges: Arrows between components as ``[parent, child]`` pairs
    :ivar lines: Undirected edges inside components; a component without lines is complete
    """
    model_config = ConfigDict(extra="forbid")

    components: List[List[str]]
    edges: List[Tuple[str, str]] = Field(default_factory=list)
    lines: List[Tuple[str, str]] = Field(default_factory=list)


# ------------------------------------------------------------------------------
# Effect references for zero effects and equality constraints
# ------------------------------------------------------------------------------
class EffectRef(BaseModel):
    """
    An effect, optionally pinned to the marginal it is housed in.

    :ivar marginal: Housing marginal (checked against the parameterization)
    :ivar effect: Effect variables
    """
    model_config = ConfigDict(extra="forbid")

    marginal: Optional[List[str]] = None
    effect: List[str]


class EqualityPair(BaseModel):
    """
    Two effects of equal dimension whose components are set equal.

    :ivar left: First effect
    :ivar right: Second effect
    """
    model_config = ConfigDict(extra="forbid")

    left: EffectRef
    right: EffectRef


ZeroEntry = Union[str, List[str], EffectRef]
EqualityEntry = Union[Tuple[str, str], EqualityPair]


# ------------------------------------------------------------------------------
# Model file = root object
# ------------------------------------------------------------------------------
class ModelFile(BaseModel):
    """
    Root of a model file.

    At most one of ``independences``, ``dag`` and ``chain`` may be given;
    ``zero_effects`` and ``equality_constraints`` are added on top of
    whatever they compile to.

    :ivar marginals: Marginal sequence (lists of variable names); empty means chosen by the compiler
    :ivar coding: Odds-ratio coding of every component
    :ivar zero_effects: Effects set to zero
    :ivar independences: Conditional independence list
    :ivar dag: Directed acyclic graph
    :ivar chain: Chain graph
    :ivar path: Also zero every remaining effect with more than two variables (DAG only)
    :ivar equality_constraints: Pairs of component labels or effects set equal
    :ivar levels: Level labels per variable, pinning the level order of tables
    :ivar variables: Number of levels per variable when no table or ``levels`` are given
    :ivar parameters: Component values used by ``simulate`` (unlisted ones are zero)
    """
    model_config = ConfigDict(extra="forbid")

    marginals: List[List[str]] = Field(default_factory=list)
    coding: Literal["local", "spanning", "global", "continuation"] = "local"
    zero_effects: List[ZeroEntry] = Field(default_factory=list)
    independences: List[IndependenceEntry] = Field(default_factory=list)
    dag: Optional[DagBlock] = None
    chain: Optional[ChainBlock] = None
    path: bool = False
    equality_constraints: List[EqualityEntry] = Field(default_factory=list)
    levels: Dict[str, List[str]] = Field(default_factory=dict)
    variables: Dict[str, int] = Field(default_factory=dict)
    parameters: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_structure(self) -> "ModelFile":
        given = [name for name, block in (("independences", self.independences), ("dag", self.dag),
                                          ("chain", self.chain)) if block]
        if len(given) > 1:
            raise ValueError(f"only one of independences, dag and chain may be given, found {given}")
        if self.path and self.dag is None:
            raise ValueError("path=true needs a dag block")
        for name, labels in self.levels.items():
            if len(labels) < 2 or len(set(labels)) != len(labels):
                raise ValueError(f"levels of {name} must be at least two distinct labels")
            if name in self.variables and self.variables[name] != len(labels):
                raise ValueError(f"variables and levels disagree on the number of levels of {name}")
        return self


# ------------------------------------------------------------------------------
# Helper function to validate and load model data
# ------------------------------------------------------------------------------
def load_model_from_dict(data: dict) -> ModelFile:
    """
    Validates a JSON-like dictionary as a model file.

    :param data: Parsed JSON object
    :return: Valid ModelFile
    """
    return ModelFile(**data)
