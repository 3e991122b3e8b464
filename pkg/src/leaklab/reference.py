"""Published KoNViD-1k correlation numbers used to annotate reports.

Display-only: nothing in the pipeline reads these values to compute a result.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict

# "claimed": as first published for the two-stage pipeline. "reimplemented": the same pipeline
# re-measured under each split protocol. "comparison": other VQA methods.
Source = Literal["comparison", "claimed", "reimplemented"]


class ReferenceRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    row: int
    method: str
    source: Source
    plcc: float
    plcc_std: float | None
    srocc: float
    srocc_std: float | None
    pooling: str | None = None
    ft_ok: bool | None = None
    test_ok: bool | None = None
    protocol: str | None = None

    def cell(self, metric: Literal["plcc", "srocc"]) -> str:
        mean = getattr(self, metric)
        std = getattr(self, f"{metric}_std")
        return f"{mean:.2f} (±{'-.--' if std is None else f'{std:.2f}'})"


class ReferenceConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: tuple[ReferenceRow, ...]
    endtoend: ReferenceRow
    dominant_class_pct: float = 41.08
    peak_class_accuracy_pct: float = 46.52
    class_uplift_points: float = 5.44
    leaky_validation_accuracy_pct: float = 95.0

    def for_protocol(self, protocol: str) -> ReferenceRow | None:
        if protocol == self.endtoend.protocol:
            return self.endtoend
        for r in self.rows:
            if r.protocol == protocol:
                return r
        return None

    def claimed_for(self, protocol: str) -> ReferenceRow | None:
        """The claimed row a reimplemented protocol is compared against in the kernel charts."""
        if protocol == "NoFinetune":
            return self.row(6)
        if protocol in {"Clean", "LeakyFt_CleanTest", "LeakyFt_TaintedTest", "CleanFt_TaintedTest"}:
            return self.row(8)
        return None

    def row(self, number: int) -> ReferenceRow:
        for r in self.rows:
            if r.row == number:
                return r
        raise KeyError(number)


REFERENCE = ReferenceConstants(
    rows=(
        ReferenceRow(row=1, method="CORNIA", source="comparison", plcc=0.51, plcc_std=0.02, srocc=0.51, srocc_std=0.04),
        ReferenceRow(row=2, method="V-BLIINDS", source="comparison", plcc=0.58, plcc_std=0.05, srocc=0.61, srocc_std=0.04),
        ReferenceRow(row=3, method="STFC", source="comparison", plcc=0.64, plcc_std=None, srocc=0.61, srocc_std=None),
        ReferenceRow(row=4, method="TLVQM", source="comparison", plcc=0.77, plcc_std=0.02, srocc=0.78, srocc_std=0.02),
        ReferenceRow(row=5, method="MLSP-VQA-FF", source="comparison", plcc=0.83, plcc_std=0.02, srocc=0.82, srocc_std=0.02),
        ReferenceRow(row=6, method="Inception-V3", source="claimed", plcc=0.72, plcc_std=None, srocc=0.68, srocc_std=None, pooling="max"),
        ReferenceRow(row=7, method="Inception-V3", source="reimplemented", plcc=0.73, plcc_std=0.02, srocc=0.70, srocc_std=0.03, pooling="max", protocol="NoFinetune"),
        ReferenceRow(row=8, method="Inception-V3", source="claimed", plcc=0.85, plcc_std=None, srocc=0.85, srocc_std=None, pooling="avg", ft_ok=False, test_ok=False),
        ReferenceRow(row=9, method="Inception-V3", source="reimplemented", plcc=0.83, plcc_std=0.02, srocc=0.84, srocc_std=0.03, pooling="avg", ft_ok=False, test_ok=False, protocol="LeakyFt_TaintedTest"),
        ReferenceRow(row=10, method="Inception-V3", source="reimplemented", plcc=0.76, plcc_std=0.03, srocc=0.74, srocc_std=0.04, pooling="avg", ft_ok=True, test_ok=False, protocol="CleanFt_TaintedTest"),
        ReferenceRow(row=11, method="Inception-V3", source="reimplemented", plcc=0.72, plcc_std=0.03, srocc=0.69, srocc_std=0.04, pooling="avg", ft_ok=False, test_ok=True, protocol="LeakyFt_CleanTest"),
        ReferenceRow(row=12, method="Inception-V3", source="reimplemented", plcc=0.71, plcc_std=0.03, srocc=0.69, srocc_std=0.04, pooling="avg", ft_ok=True, test_ok=True, protocol="Clean"),
    ),
    endtoend=ReferenceRow(
        row=0, method="Inception-V3 regression head", source="reimplemented",
        plcc=0.66, plcc_std=0.02, srocc=0.65, srocc_std=0.03, pooling="avg", ft_ok=True, test_ok=True,
        protocol="EndToEnd",
    ),
)
