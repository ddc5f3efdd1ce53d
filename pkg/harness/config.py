"""Experiment configuration read from an INI file.

Every section maps onto a frozen dataclass; keys are parsed according to the
dataclass field types. Unknown sections or keys are errors.
"""

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from network.mlp import DEPTH_PRESETS, ArchitectureError, MlpArchitecture
from optimize.adam import AdamConfig
from optimize.lbfgs import LbfgsConfig
from physics.loss import METHODS
from physics.parameters import BoundarySpec, DomainSpec, LossWeights, PhysicalParams

FIELD_SOURCES = ('analytic', 'grf', 'file')
LAYOUTS = ('uniform_random', 'grid')
MPINN_TRAINING = ('sequential', 'simultaneous')
SWEEP_AXES = ('N', 'N_K', 'N_h', 'N_C', 'm_h', 'N_f_h', 'N_f_C', 'depth')


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSection:
    name: str = 'example1'
    methods: Tuple[str, ...] = ('data_driven', 'pinn_darcy')
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    output_dir: str = 'results'
    threads: int = 1
    # wall times differ between runs; off keeps the CSV byte-identical
    csv_wall_time: bool = False


@dataclass(frozen=True)
class FieldConfig:
    source: str = 'analytic'
    nx: int = 256
    ny: int = 128
    correlation_length: float = 0.2
    sigma2: float = 1.0
    seed: int = 0
    covariance_form: str = 'literal'
    input_dir: str = ''

    @property
    def label(self) -> str:
        if self.source == 'grf':
            return (f'grf(lambda={self.correlation_length:g},sigma2={self.sigma2:g},'
                    f'seed={self.seed})')
        return self.source


@dataclass(frozen=True)
class LossConfig:
    omega_f: float = 1.0
    omega_b: float = 1.0
    velocity_delta: float = 1e-8
    dispersion_mode: str = 'full'

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.omega_f, self.omega_b)


@dataclass(frozen=True)
class DataConfig:
    n_k: int = 16
    n_h: int = 16
    n_c: int = 0
    n_f_h: int = 400
    n_f_c: int = 0
    n_boundary: int = 64    # points per boundary segment
    measurement_seed: int = 0
    residual_seed: int = 0
    layout: str = 'uniform_random'


@dataclass(frozen=True)
class NetworkConfig:
    k_hidden: Tuple[int, ...] = (32, 32, 32)
    h_hidden: Tuple[int, ...] = (32, 32)
    c_hidden: Tuple[int, ...] = (32, 32, 32)
    log_k: bool = False

    def architectures(self) -> typing.Dict[str, MlpArchitecture]:
        return {'K': MlpArchitecture(self.k_hidden), 'h': MlpArchitecture(self.h_hidden),
                'C': MlpArchitecture(self.c_hidden)}


@dataclass(frozen=True)
class TrainingConfig:
    mpinn_training: str = 'sequential'
    optimizer: str = 'lbfgs'
    hybrid_switch_loss: float = 5e-4
    progress: bool = False


@dataclass(frozen=True)
class SweepConfig:
    axis: str = ''
    values: Tuple[str, ...] = ()


# (ini section, attribute of ExperimentConfig, dataclass)
SECTIONS = (
    ('Experiment', 'experiment', ExperimentSection),
    ('Field', 'field', FieldConfig),
    ('Physics', 'physics', PhysicalParams),
    ('Domain', 'domain', DomainSpec),
    ('Boundary', 'boundary', BoundarySpec),
    ('Loss', 'loss', LossConfig),
    ('Data', 'data', DataConfig),
    ('Networks', 'networks', NetworkConfig),
    ('Training', 'training', TrainingConfig),
    ('Adam', 'adam', AdamConfig),
    ('LBFGS', 'lbfgs', LbfgsConfig),
    ('Sweep', 'sweep', SweepConfig),
)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = dataclasses.field(default_factory=ExperimentSection)
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    physics: PhysicalParams = dataclasses.field(default_factory=PhysicalParams)
    domain: DomainSpec = dataclasses.field(default_factory=DomainSpec)
    boundary: BoundarySpec = dataclasses.field(default_factory=BoundarySpec)
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    networks: NetworkConfig = dataclasses.field(default_factory=NetworkConfig)
    training: TrainingConfig = dataclasses.field(default_factory=TrainingConfig)
    adam: AdamConfig = dataclasses.field(default_factory=AdamConfig)
    lbfgs: LbfgsConfig = dataclasses.field(default_factory=LbfgsConfig)
    sweep: SweepConfig = dataclasses.field(default_factory=SweepConfig)

    def __post_init__(self):
        validate(self)

    def to_ini(self) -> str:
        lines = []
        for section, attr, cls in SECTIONS:
            lines.append(f'[{section}]')
            obj = getattr(self, attr)
            for f in dataclasses.fields(cls):
                lines.append(f'{f.name} = {_format_value(getattr(obj, f.name))}')
            lines.append('')
        return '\n'.join(lines)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ', '.join(_format_value(v) for v in value)
    return str(value)


def _parse_scalar(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            states = configparser.ConfigParser.BOOLEAN_STATES
            if raw.lower() not in states:
                raise ValueError(f'not a boolean: {raw!r}')
            return states[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f'{where}: {e}')


def _parse_value(raw: str, hint, where: str):
    if typing.get_origin(hint) is tuple:
        item = typing.get_args(hint)[0]
        if item is int and raw.strip() in DEPTH_PRESETS:
            return DEPTH_PRESETS[raw.strip()]
        return tuple(_parse_scalar(part, item, where) for part in raw.split(',') if part.strip())
    return _parse_scalar(raw, hint, where)


def _build_section(cls, items: typing.Mapping[str, str], section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f'[{section}] unknown key {key!r}')
        kwargs[key] = _parse_value(raw, hints[key], f'[{section}] {key}')
    try:
        return cls(**kwargs)
    except (ValueError, ArchitectureError) as e:
        raise ConfigError(f'[{section}] {e}')


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e))
    by_name = {section: (attr, cls) for section, attr, cls in SECTIONS}
    kwargs = {}
    for section in parser.sections():
        if section not in by_name:
            raise ConfigError(f'unknown section [{section}]')
        attr, cls = by_name[section]
        kwargs[attr] = _build_section(cls, dict(parser.items(section)), section)
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    path = os.path.expanduser(path)
    if not os.path.isfile(path):
        raise ConfigError(f'config file {path} not found')
    with open(path, encoding='utf-8') as f:
        return parse_config(f.read())


def validate(cfg: ExperimentConfig) -> None:
    e = cfg.experiment
    if not e.methods or any(m not in METHODS for m in e.methods):
        raise ConfigError(f'[Experiment] methods must be among {METHODS}, got {e.methods}')
    if len(e.seeds) < 2:
        raise ConfigError('[Experiment] seeds needs at least two values')
    if e.threads < 1:
        raise ConfigError('[Experiment] threads must be at least 1')
    f = cfg.field
    if f.source not in FIELD_SOURCES:
        raise ConfigError(f'[Field] source must be one of {FIELD_SOURCES}')
    if f.nx < 2 or f.ny < 2:
        raise ConfigError('[Field] nx and ny must be at least 2')
    if f.source == 'file' and not os.path.isdir(os.path.expanduser(f.input_dir)):
        raise ConfigError(f'[Field] input_dir {f.input_dir!r} is not a directory')
    if f.source == 'grf' and (f.correlation_length <= 0 or f.sigma2 < 0):
        raise ConfigError('[Field] correlation_length must be positive and sigma2 non-negative')
    if f.covariance_form not in ('literal', 'squared'):
        raise ConfigError(f'[Field] unknown covariance_form {f.covariance_form!r}')
    d = cfg.data
    counts = (d.n_k, d.n_h, d.n_c, d.n_f_h, d.n_f_c, d.n_boundary)
    if any(n < 0 for n in counts):
        raise ConfigError('[Data] counts must be non-negative')
    if max(d.n_k, d.n_h, d.n_c) > f.nx * f.ny:
        raise ConfigError('[Data] more measurements than grid cells')
    if d.layout not in LAYOUTS:
        raise ConfigError(f'[Data] layout must be one of {LAYOUTS}')
    if d.n_k == 0 or d.n_h == 0:
        raise ConfigError('[Data] n_k and n_h must be positive')
    try:
        cfg.networks.architectures()
    except ArchitectureError as e:
        raise ConfigError(f'[Networks] {e}')
    if cfg.loss.dispersion_mode not in ('full', 'frozen'):
        raise ConfigError(f'[Loss] unknown dispersion_mode {cfg.loss.dispersion_mode!r}')
    if cfg.loss.velocity_delta <= 0:
        raise ConfigError('[Loss] velocity_delta must be positive')
    if cfg.training.mpinn_training not in MPINN_TRAINING:
        raise ConfigError(f'[Training] mpinn_training must be one of {MPINN_TRAINING}')
    if cfg.training.optimizer not in ('lbfgs', 'adam', 'hybrid'):
        raise ConfigError(f'[Training] unknown optimizer {cfg.training.optimizer!r}')
    if cfg.training.hybrid_switch_loss <= 0:
        raise ConfigError('[Training] hybrid_switch_loss must be positive')
    if cfg.sweep.axis and normalize_axis(cfg.sweep.axis) not in SWEEP_AXES:
        raise ConfigError(f'[Sweep] axis must be one of {SWEEP_AXES}')


def normalize_axis(axis: str) -> str:
    return axis.replace('^', '_')


def apply_axis(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    """Copy of ``cfg`` with one sweep axis set to ``value``."""
    axis = normalize_axis(axis)
    if axis not in SWEEP_AXES:
        raise ConfigError(f'unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}')
    value = str(value).strip()
    data, nets = cfg.data, cfg.networks
    try:
        if axis == 'depth':
            if value in DEPTH_PRESETS:
                widths = DEPTH_PRESETS[value]
            else:
                widths = (32,) * int(value)
            nets = dataclasses.replace(nets, k_hidden=widths, h_hidden=widths, c_hidden=widths)
        elif axis == 'm_h':
            width = int(value)
            nets = dataclasses.replace(nets, k_hidden=(width,) * len(nets.k_hidden))
        else:
            n = int(value)
            key = {'N_K': 'n_k', 'N_h': 'n_h', 'N_C': 'n_c',
                   'N_f_h': 'n_f_h', 'N_f_C': 'n_f_c'}.get(axis)
            data = (dataclasses.replace(data, n_k=n, n_h=n) if axis == 'N'
                    else dataclasses.replace(data, **{key: n}))
        return dataclasses.replace(cfg, data=data, networks=nets)
    except (ValueError, ArchitectureError) as e:
        raise ConfigError(f'sweep axis {axis}: bad value {value!r} ({e})')


def with_overrides(cfg: ExperimentConfig, output_dir: Optional[str] = None,
                   seeds: Optional[Sequence[int]] = None,
                   threads: Optional[int] = None) -> ExperimentConfig:
    """Apply command-line overrides of the [Experiment] section."""
    changes = {}
    if output_dir is not None:
        changes['output_dir'] = output_dir
    if seeds is not None:
        try:
            changes['seeds'] = tuple(int(s) for s in seeds)
        except ValueError as e:
            raise ConfigError(f'--seeds: {e}')
    if threads is not None:
        changes['threads'] = int(threads)
    if not changes:
        return cfg
    return dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, **changes))
