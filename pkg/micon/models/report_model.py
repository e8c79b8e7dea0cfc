from typing import Literal

from pydantic import BaseModel, Field, model_validator

Constraint = Literal["none", "NSB", "NSS"]
CONSTRAINTS: tuple[str, ...] = ("none", "NSB", "NSS")


class QueryMatch(BaseModel):
    query_key: str = Field(..., description="Well key of the query well")
    matched_key: str = Field(..., description="Well key of its nearest eligible retrieval well")
    query_perturbation: str
    matched_perturbation: str
    distance: float = Field(..., description="Cosine distance to the match")
    correct: bool


class RetrievalReport(BaseModel):
    """Constrained 1-NN compound-replicate matching result."""

    constraint: Constraint
    n_queries: int = Field(..., ge=0)
    n_correct: int = Field(..., ge=0)
    accuracy: float = Field(..., ge=0.0, le=1.0)
    chance_level: float = Field(..., ge=0.0, le=1.0, description="1 / distinct retrieval perturbations")
    per_query: list[QueryMatch] = Field(default_factory=list)

    method: str | None = Field(default=None, description="Training method, or 'features' for the raw-feature baseline")
    seed: int | None = None
    postprocess: bool | None = Field(default=None, description="Whether MAD + spherizing was applied")
    representation: Literal["real", "generated"] = "real"
    permutation_p: float | None = Field(
        default=None, ge=0.0, le=1.0, description="Label-permutation null p-value of the accuracy"
    )

    @model_validator(mode="after")
    def _check_counts(self) -> "RetrievalReport":
        if self.n_correct > self.n_queries:
            raise ValueError("n_correct cannot exceed n_queries")
        expected = self.n_correct / self.n_queries if self.n_queries else 0.0
        if abs(self.accuracy - expected) > 1e-12:
            raise ValueError("accuracy must equal n_correct / n_queries")
        return self


class SignificanceTest(BaseModel):
    """One-tailed test that MICON beats ``baseline`` in one setting."""

    baseline: str
    setting: str
    t: float
    p: float
    significant: bool
    stars: str = ""

    model_config = {"ser_json_inf_nan": "constants"}


class AnovaResult(BaseModel):
    contrast: str = Field(..., description="Conditions compared, e.g. 'micon vs paclr_only'")
    subjects: int
    conditions: int
    f: float
    p: float

    model_config = {"ser_json_inf_nan": "constants"}


class MethodSummary(BaseModel):
    method: str
    setting: str = Field(..., description="'<constraint>[+post][/generated]'")
    accuracies: list[float] = Field(..., description="Per-seed accuracies, ordered by seed")
    seeds: list[int]
    mean: float
    sd: float = Field(..., description="Sample standard deviation over seeds (0 for one seed)")
    chance_level: float


class ComparisonReport(BaseModel):
    """Per method x setting x seed accuracies with significance against MICON."""

    summaries: list[MethodSummary] = Field(default_factory=list)
    tests: list[SignificanceTest] = Field(default_factory=list)
    anova: list[AnovaResult] = Field(default_factory=list)
    reference_method: str = "micon"

    model_config = {
        "ser_json_inf_nan": "constants",
        "json_schema_extra": {
            "examples": [
                {
                    "summaries": [
                        {
                            "method": "micon",
                            "setting": "NSB",
                            "accuracies": [0.41, 0.44, 0.39],
                            "seeds": [0, 1, 2],
                            "mean": 0.413,
                            "sd": 0.025,
                            "chance_level": 0.125,
                        }
                    ],
                    "tests": [
                        {"baseline": "simclr", "setting": "NSB", "t": 4.1, "p": 0.007, "significant": True, "stars": "**"}
                    ],
                }
            ]
        }
    }
