"""Experiment configuration: flat key = value files with typed validation.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Command-line flags override file values; the fully resolved config is
embedded in every manifest so a run can be reproduced byte-for-byte.
"""

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .priors import GammaPrior, HyperPriors, default_lengthscale_prior
from .samplers import SCHEMES, GibbsConfig

FORMAT_VERSION = 1


class ConfigError(Exception):
    """Invalid configuration; the message lists every violation."""


@dataclass
class ExperimentConfig:
    scheme: str = "pm"
    kind: str = "isotropic"
    approx_method: str = "ep"
    n_imp: int = 64
    n_chains: int = 2
    n_iterations: int = 2000
    burn_in: int = 1000
    thinning: int = 1
    latent_repeats: int = 10
    theta_repeats: int = 1
    seed: int = 0
    seeds: list = None  # explicit per-chain seeds; default spawns from `seed`
    a_sigma: float = 1.2
    b_sigma: float = 0.2
    a_tau: float = 1.0
    b_tau: float = None  # default rule: 1/sqrt(d), resolved at build time
    fix_sigma: bool = False
    sigma_value: float = None
    fix_tau: bool = False
    tau_value: float = None
    initial_step: float = 0.4
    target_acceptance: float = 0.25
    adaptation_window: int = 100
    warm_start: bool = True
    sample_latents: bool = True
    latent_stride: int = 10
    save_latents: bool = False
    output_dir: str = "out"

    def validate(self):
        problems = []
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.kind not in ("isotropic", "ard"):
            problems.append(f"kind must be isotropic or ard, got {self.kind!r}")
        if self.approx_method not in ("la", "ep"):
            problems.append(f"approx_method must be la or ep, got {self.approx_method!r}")
        for name in ("n_imp", "n_chains", "thinning", "theta_repeats", "latent_stride"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        for name in ("n_iterations", "burn_in", "latent_repeats", "adaptation_window"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.n_iterations > 0 and self.burn_in >= self.burn_in + self.n_iterations:
            problems.append("burn_in must be smaller than the total iteration count")
        for name in ("a_sigma", "b_sigma", "a_tau"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.b_tau is not None and self.b_tau <= 0:
            problems.append("b_tau must be positive")
        if not 0 < self.target_acceptance < 1:
            problems.append("target_acceptance must be in (0, 1)")
        if self.initial_step <= 0:
            problems.append("initial_step must be positive")
        if self.fix_sigma and self.sigma_value is None:
            problems.append("fix_sigma requires sigma_value")
        if self.fix_tau and self.tau_value is None:
            problems.append("fix_tau requires tau_value")
        if self.sigma_value is not None and self.sigma_value <= 0:
            problems.append("sigma_value must be positive")
        if self.tau_value is not None and self.tau_value <= 0:
            problems.append("tau_value must be positive")
        if self.seeds is not None and len(self.seeds) != self.n_chains:
            problems.append("seed list length must equal the chain count")
        if self.fix_sigma and self.fix_tau:
            problems.append("at least one hyper-parameter must be free")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def priors(self, d):
        b_tau = self.b_tau if self.b_tau is not None else float(1.0 / np.sqrt(d))
        return HyperPriors(
            sigma=GammaPrior(self.a_sigma, self.b_sigma),
            tau=GammaPrior(self.a_tau, b_tau),
            fix_sigma=self.fix_sigma,
            fix_tau=self.fix_tau,
        )

    def gibbs_config(self):
        return GibbsConfig(
            scheme=self.scheme,
            n_iterations=self.n_iterations,
            burn_in=self.burn_in,
            thinning=self.thinning,
            latent_repeats=self.latent_repeats,
            theta_repeats=self.theta_repeats,
            approx_method=self.approx_method,
            n_imp=self.n_imp,
            initial_step=self.initial_step,
            target_acceptance=self.target_acceptance,
            adaptation_window=self.adaptation_window,
            warm_start=self.warm_start,
            sample_latents=self.sample_latents,
            latent_stride=self.latent_stride,
        )

    def chain_seeds(self):
        """Per-chain seeds: explicit list, or children spawned from `seed`."""
        if self.seeds is not None:
            return list(self.seeds)
        return [
            int(s.generate_state(1)[0])
            for s in np.random.SeedSequence(self.seed).spawn(self.n_chains)
        ]


_BOOL_FIELDS = {"fix_sigma", "fix_tau", "warm_start", "sample_latents", "save_latents"}
_FLOAT_FIELDS = {
    "a_sigma", "b_sigma", "a_tau", "b_tau", "sigma_value", "tau_value",
    "initial_step", "target_acceptance",
}
_STR_FIELDS = {"scheme", "kind", "approx_method", "output_dir"}
_LIST_FIELDS = {"seeds"}


def _coerce(name, raw):
    if raw in ("none", "None", ""):
        return None
    if name in _BOOL_FIELDS:
        lowered = str(raw).strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: cannot parse boolean {raw!r}")
    if name in _FLOAT_FIELDS:
        return float(raw)
    if name in _STR_FIELDS:
        return str(raw)
    if name in _LIST_FIELDS:
        return [int(tok) for tok in str(raw).replace(",", " ").split()]
    return int(raw)


def parse_config_text(text):
    """Parse the flat key = value format into an ExperimentConfig."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"line {lineno}: expected key = value")
            continue
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in known:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = _coerce(key, raw)
        except (ValueError, ConfigError) as exc:
            problems.append(f"line {lineno}: {key}: {exc}")
    if problems:
        raise ConfigError("; ".join(problems))
    return ExperimentConfig(**values)


def load_config(path):
    """Load a config from a flat text file or a manifest JSON."""
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        payload = json.loads(text)
        cfg = payload.get("config", payload)
        known = {f.name for f in fields(ExperimentConfig)}
        return ExperimentConfig(**{k: v for k, v in cfg.items() if k in known})
    return parse_config_text(text)


def manifest_dict(config, extra=None):
    """Reproducibility manifest: resolved config plus per-chain seeds."""
    payload = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "chain_seeds": config.chain_seeds(),
    }
    if extra:
        payload.update(extra)
    return payload
