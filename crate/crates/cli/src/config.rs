//! Optional TOML configuration. Every field may also be given as a flag;
//! flags take precedence.

use std::path::Path;
use std::str::FromStr;

use nndp::baselines::{FdConfig, FdMode, DEFAULT_EXACT_CAP};
use nndp::kernel::Direction;
use nndp::neighbors::DegeneracyPolicy;
use nndp::pipeline::{Engine, ModelSettings};
use nndp::posterior::{ChainConfig, Mode, Priors};
use serde::Deserialize;

use crate::cli::{ChainArgs, DirectionArgs, FdArgs, GradArgs, ModelArgs, PriorArgs};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub model: ModelSection,
    pub chain: ChainSection,
    pub priors: PriorSection,
    pub gradients: GradientSection,
    pub fd: FdSection,
    pub exact: ExactSection,
    pub bench: BenchSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub m: Option<usize>,
    pub smoothness: Option<String>,
    pub ordering: Option<String>,
    pub stencil: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub log_phi_step: Option<f64>,
    pub adapt: Option<bool>,
    pub mode: Option<String>,
    pub phi_init: Option<f64>,
    pub intercept: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub sigma2_shape: Option<f64>,
    pub sigma2_scale: Option<f64>,
    pub phi_lower: Option<f64>,
    pub phi_upper: Option<f64>,
    pub tau2_shape: Option<f64>,
    pub tau2_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientSection {
    pub batch: Option<usize>,
    pub directions: Option<Vec<String>>,
    pub engine: Option<String>,
    pub perturb: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdSection {
    pub scale: Option<f64>,
    pub mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactSection {
    pub cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Option<Vec<usize>>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub scale: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Settings after merging flags over the file.
pub struct Resolved<'a> {
    pub file: &'a FileConfig,
    pub seed: u64,
}

fn parse<T: FromStr<Err = nndp::NndpError>>(flag: &Option<String>, file: &Option<String>) -> Result<Option<T>, CliError> {
    flag.as_ref().or(file.as_ref()).map(|s| s.parse::<T>()).transpose().map_err(CliError::from)
}

impl Resolved<'_> {
    pub fn model(&self, a: &ModelArgs) -> Result<ModelSettings, CliError> {
        let f = &self.file.model;
        let d = ModelSettings::default();
        let m = a.m.or(f.m).unwrap_or(d.m);
        if m == 0 {
            return Err(CliError::Config("m must be at least 1".into()));
        }
        Ok(ModelSettings {
            m,
            smoothness: parse(&a.smoothness, &f.smoothness)?.unwrap_or(d.smoothness),
            ordering: parse(&a.ordering, &f.ordering)?.unwrap_or(d.ordering),
            stencil: parse(&a.stencil, &f.stencil)?.unwrap_or(d.stencil),
        })
    }

    pub fn chain(&self, a: &ChainArgs) -> Result<ChainConfig, CliError> {
        let f = &self.file.chain;
        let d = ChainConfig::default();
        let cfg = ChainConfig {
            iterations: a.iterations.or(f.iterations).unwrap_or(d.iterations),
            burn_in: a.burn_in.or(f.burn_in).unwrap_or(d.burn_in),
            thin: a.thin.or(f.thin).unwrap_or(d.thin),
            seed: self.seed,
            log_phi_step: a.phi_step.or(f.log_phi_step).unwrap_or(d.log_phi_step),
            adapt: if a.no_adapt { false } else { f.adapt.unwrap_or(d.adapt) },
            mode: parse::<Mode>(&a.mode, &f.mode)?.unwrap_or(d.mode),
            phi_init: a.phi_init.or(f.phi_init),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn intercept(&self, a: &ChainArgs) -> bool {
        a.intercept || self.file.chain.intercept.unwrap_or(false)
    }

    pub fn priors(&self, a: &PriorArgs) -> Result<Priors, CliError> {
        let f = &self.file.priors;
        let d = Priors::default();
        let p = Priors {
            sigma2_shape: a.sigma2_shape.or(f.sigma2_shape).unwrap_or(d.sigma2_shape),
            sigma2_scale: a.sigma2_scale.or(f.sigma2_scale).unwrap_or(d.sigma2_scale),
            phi_lower: a.phi_lower.or(f.phi_lower).unwrap_or(d.phi_lower),
            phi_upper: a.phi_upper.or(f.phi_upper).unwrap_or(d.phi_upper),
            tau2_shape: a.tau2_shape.or(f.tau2_shape).unwrap_or(d.tau2_shape),
            tau2_scale: a.tau2_scale.or(f.tau2_scale).unwrap_or(d.tau2_scale),
            ..d
        };
        p.validate()?;
        Ok(p)
    }

    pub fn batch(&self, flag: Option<usize>) -> Result<usize, CliError> {
        let b = flag.or(self.file.gradients.batch).unwrap_or(100);
        if b == 0 {
            return Err(CliError::Config("batch must be at least 1".into()));
        }
        Ok(b)
    }

    pub fn directions(&self, a: &DirectionArgs, dim: usize) -> Result<Vec<Direction>, CliError> {
        let list = if !a.directions.is_empty() { Some(&a.directions) } else { self.file.gradients.directions.as_ref() };
        match list {
            None => Ok(Direction::canonical(dim)),
            Some(l) if l.is_empty() => Err(CliError::Config("direction list is empty".into())),
            Some(l) => l.iter().map(|s| Direction::parse(s.trim(), dim).map_err(CliError::from)).collect(),
        }
    }

    pub fn engine(&self, a: &GradArgs) -> Result<Engine, CliError> {
        Ok(parse(&a.engine, &self.file.gradients.engine)?.unwrap_or_default())
    }

    pub fn policy(&self, a: &GradArgs) -> DegeneracyPolicy {
        if a.perturb || self.file.gradients.perturb.unwrap_or(false) {
            DegeneracyPolicy::Perturb
        } else {
            DegeneracyPolicy::Strict
        }
    }

    pub fn fd(&self, a: &FdArgs) -> Result<FdConfig, CliError> {
        let f = &self.file.fd;
        let d = FdConfig::default();
        let cfg = FdConfig {
            scale: a.scale.or(f.scale).unwrap_or(d.scale),
            mode: parse::<FdMode>(&a.fd_mode, &f.mode)?.unwrap_or(d.mode),
            policy: d.policy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cap(&self, flag: Option<usize>) -> usize {
        flag.or(self.file.exact.cap).unwrap_or(DEFAULT_EXACT_CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[model]\nneighbours = 3\n").is_err());
        let c: FileConfig = toml::from_str("seed = 4\n[model]\nm = 6\nsmoothness = \"rbf\"\n[fd]\nscale = 0.5\n").unwrap();
        assert_eq!((c.seed, c.model.m, c.fd.scale), (Some(4), Some(6), Some(0.5)));
    }

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("[model]\nm = 6\nsmoothness = \"rbf\"\n").unwrap();
        let r = Resolved { file: &file, seed: 1 };
        let flags = ModelArgs { m: Some(8), ..ModelArgs::default() };
        let s = r.model(&flags).unwrap();
        assert_eq!(s.m, 8);
        assert_eq!(s.smoothness, nndp::kernel::Smoothness::Rbf);
        assert!(r.model(&ModelArgs { m: Some(0), ..ModelArgs::default() }).is_err());
    }
}
