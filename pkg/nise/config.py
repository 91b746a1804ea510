"""
Run configuration: sectioned ``key = value`` files with units in the key names.

    [system]
    hamiltonian_file = hamiltonian.csv
    dipole_file = dipoles.csv
    initial_site = 1

    [bath]
    peaks = 0:20:100, 725:20:100, 1200:20:100   # Omega_cm1:lambda_cm1:width_fs
    temperature_K = 300

    [bath.site2]
    reorg_cm1 = 35

    [noise]
    dt_fs = 2
    length_fs = 10000
    realizations = 1000

    [run]
    seed = 1234

Validation errors name the file, line, section and key.
"""
import configparser
import hashlib
import re
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ConfigError
from .models import AveragingKind, PropagationMode

SITE_SECTION = re.compile(r"^bath\.site(\d+)$")
SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")
KEY_LINE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class PeakSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    center_cm1: float = Field(ge=0)
    reorg_cm1: float = Field(ge=0)
    width_fs: float = Field(gt=0)

    def to_text(self) -> str:
        return f"{self.center_cm1!r}:{self.reorg_cm1!r}:{self.width_fs!r}"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemSection(Section):
    hamiltonian_file: Optional[str] = None
    dipole_file: Optional[str] = None
    initial_site: int = Field(default=1, ge=1)


class SiteBathSection(Section):
    peaks: Optional[List[PeakSpec]] = None
    sd_file: Optional[str] = None
    reorg_cm1: Optional[float] = Field(default=None, ge=0)

    @field_validator("peaks", mode="before")
    @classmethod
    def parse_peaks(cls, value):
        if not isinstance(value, str):
            return value
        peaks = []
        for item in _split_list(value):
            parts = item.split(":")
            if len(parts) != 3:
                raise ValueError(
                    f"peak '{item}' must be Omega_cm1:lambda_cm1:width_fs"
                )
            center, reorg, width = parts
            peaks.append(
                {"center_cm1": center, "reorg_cm1": reorg, "width_fs": width}
            )
        return peaks

    @model_validator(mode="after")
    def one_source(self):
        if self.peaks is not None and self.sd_file is not None:
            raise ValueError("give either peaks or sd_file, not both")
        return self


class BathSection(SiteBathSection):
    temperature_K: float = Field(default=300.0, gt=0)
    low_pass_cm1: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def has_source(self):
        if self.peaks is None and self.sd_file is None:
            raise ValueError("the bath needs peaks or sd_file")
        return self


class NoiseSection(Section):
    dt_fs: float = Field(gt=0)
    length_fs: float = Field(default=10000.0, gt=0)
    realizations: int = Field(default=1, ge=1)
    trajectory_files: Optional[List[str]] = None
    stride_fs: Optional[float] = Field(default=None, gt=0)
    resample_dt_fs: Optional[float] = Field(default=None, gt=0)

    _split = field_validator("trajectory_files", mode="before")(_split_list)


class PropagationSection(Section):
    mode: PropagationMode = PropagationMode.NISE
    averaging: List[AveragingKind] = [AveragingKind.PLAIN]
    interpolation_factor: float = Field(default=5.0, gt=0)
    length_fs: float = Field(default=1000.0, gt=0)
    dt_sub_fs: Optional[float] = Field(default=None, gt=0)
    write_density: bool = False
    lifetime_source: str = Field(
        default="populations", pattern="^(populations|survival)$"
    )

    _split = field_validator("averaging", mode="before")(_split_list)


class AbsorptionSection(Section):
    length_fs: float = Field(default=2000.0, gt=0)
    window: bool = False
    n_fft: Optional[int] = Field(default=None, ge=4)
    normalize: bool = False
    center_on_mean_site_energy: bool = False
    align_to: Optional[str] = None


class RunSection(Section):
    seed: int = Field(ge=0)
    workers: int = Field(default=1, ge=1)
    chunk_size: int = Field(default=64, ge=1)


class OutputSection(Section):
    directory: str = "output"


SECTIONS = {
    "system": SystemSection,
    "bath": BathSection,
    "noise": NoiseSection,
    "propagation": PropagationSection,
    "absorption": AbsorptionSection,
    "run": RunSection,
    "output": OutputSection,
}
REQUIRED = ("bath", "noise", "run")


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    system: SystemSection = SystemSection()
    bath: BathSection
    sites: Dict[int, SiteBathSection] = {}
    noise: NoiseSection
    propagation: PropagationSection = PropagationSection()
    absorption: AbsorptionSection = AbsorptionSection()
    run: RunSection
    output: OutputSection = OutputSection()

    _base_dir: Path = PrivateAttr(default=Path("."))

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def resolve(self, path: str) -> Path:
        """Paths in the file are relative to the file's directory."""
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self._base_dir / candidate

    def site_bath(self, site: int) -> SiteBathSection:
        """Bath settings for 1-based ``site`` with overrides applied."""
        override = self.sites.get(site)
        base = SiteBathSection(
            peaks=self.bath.peaks,
            sd_file=self.bath.sd_file,
            reorg_cm1=self.bath.reorg_cm1,
        )
        if override is None:
            return base
        if override.peaks is not None or override.sd_file is not None:
            base = SiteBathSection(peaks=override.peaks, sd_file=override.sd_file)
        reorg = override.reorg_cm1
        if reorg is None:
            reorg = self.bath.reorg_cm1
        return base.model_copy(update={"reorg_cm1": reorg})

    def to_ini(self) -> str:
        blocks = []
        for name in SECTIONS:
            blocks.append(_format_section(name, getattr(self, name)))
            if name == "bath":
                for site in sorted(self.sites):
                    blocks.append(_format_section(f"bath.site{site}", self.sites[site]))
        return "\n".join(blocks)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    @classmethod
    def from_ini(
        cls, text: str, source: str = "<config>", base_dir: Optional[Path] = None,
        check_files: bool = False,
    ) -> "RunConfig":
        parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#", ";")
        )
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", 0)
            raise ConfigError(f"{source}:{line} {exc.message.splitlines()[0]}") from exc

        lines = _locate(text)
        sections: Dict[str, BaseModel] = {}
        sites: Dict[int, SiteBathSection] = {}
        for name in parser.sections():
            values = dict(parser.items(name))
            site = SITE_SECTION.match(name)
            if site:
                sites[int(site.group(1))] = _build(
                    SiteBathSection, name, values, source, lines
                )
            elif name in SECTIONS:
                sections[name] = _build(SECTIONS[name], name, values, source, lines)
            else:
                line = lines.get((name, None), 0)
                raise ConfigError(f"{source}:{line} [{name}]: unknown section")
        for name in REQUIRED:
            if name not in sections:
                raise ConfigError(f"{source}:0 [{name}]: section is required")

        config = cls(sites=sites, **sections)
        config._base_dir = Path(base_dir) if base_dir is not None else Path(".")
        if check_files:
            _check_files(config, source, lines)
        return config

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}:0 configuration file not found")
        return cls.from_ini(
            path.read_text(encoding="utf-8"),
            source=str(path),
            base_dir=path.parent,
            check_files=True,
        )


def _locate(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    positions: Dict[Tuple[str, Optional[str]], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        header = SECTION_LINE.match(line)
        if header:
            section = header.group(1).strip()
            positions[(section, None)] = number
            continue
        key = KEY_LINE.match(line)
        if key and section is not None:
            positions[(section, key.group(1).strip())] = number
    return positions


def _build(model, name, values, source, lines):
    try:
        return model(**values)
    except ValidationError as exc:
        error = exc.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else None
        line = lines.get((name, key), lines.get((name, None), 0))
        label = f" {key}" if key else ""
        raise ConfigError(f"{source}:{line} [{name}]{label}: {error['msg']}") from exc


def _check_files(config: RunConfig, source: str, lines) -> None:
    references = [
        ("system", "hamiltonian_file", config.system.hamiltonian_file),
        ("system", "dipole_file", config.system.dipole_file),
        ("bath", "sd_file", config.bath.sd_file),
        ("absorption", "align_to", config.absorption.align_to),
    ]
    references += [
        (f"bath.site{site}", "sd_file", section.sd_file)
        for site, section in config.sites.items()
    ]
    references += [
        ("noise", "trajectory_files", path)
        for path in (config.noise.trajectory_files or [])
    ]
    for section, key, path in references:
        if path is not None and not config.resolve(path).exists():
            line = lines.get((section, key), 0)
            raise ConfigError(
                f"{source}:{line} [{section}] {key}: file '{path}' not found"
            )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(
            item.to_text() if isinstance(item, PeakSpec) else _format_value(item)
            for item in value
        )
    return str(value)


def _format_section(name: str, section: BaseModel) -> str:
    rows = [f"[{name}]"]
    for key in type(section).model_fields:
        value = getattr(section, key)
        if value is not None:
            rows.append(f"{key} = {_format_value(value)}")
    return "\n".join(rows) + "\n"
