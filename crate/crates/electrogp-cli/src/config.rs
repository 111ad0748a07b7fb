//! Optional TOML configuration file.
//!
//! Keys mirror the kebab-case command-line flags. A value given on the
//! command line wins over the config file, which wins over the built-in
//! default; `resolve` encodes that order.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Config {
    pub r: Option<f64>,
    pub quad_points: Option<usize>,
    pub k_neighbors: Option<usize>,
    pub reg: Option<f64>,
    pub max_iters: Option<usize>,
    pub rel_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub n_mu: Option<usize>,
    pub eta: Option<f64>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n_samples: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub center: Option<bool>,
    pub corp_prior: Option<bool>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {}", path.display(), e)))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))
    }
}

/// Flag beats config beats default.
pub fn resolve<T: Copy>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Same order for values with no default, like seeds.
pub fn resolve_required<T: Copy>(
    flag: Option<T>,
    config: Option<T>,
    name: &str,
) -> Result<T, CliError> {
    flag.or(config)
        .ok_or_else(|| CliError::Usage(format!("missing required value: {}", name)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flag_beats_config_beats_default() {
        assert_eq!(resolve(Some(1), Some(2), 3), 1);
        assert_eq!(resolve(None, Some(2), 3), 2);
        assert_eq!(resolve::<i32>(None, None, 3), 3);
    }

    #[test]
    fn required_value_must_come_from_flag_or_config() {
        assert_eq!(resolve_required(Some(5u64), None, "seed").unwrap(), 5);
        assert_eq!(resolve_required(None, Some(7u64), "seed").unwrap(), 7);
        let err = resolve_required::<u64>(None, None, "seed").unwrap_err();
        assert!(format!("{}", err).contains("seed"));
    }

    #[test]
    fn kebab_case_keys_parse() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "k-neighbors = 6\nmax-iters = 120\neta = 0.9\ncorp-prior = false").unwrap();
        let cfg = Config::load(Some(f.path())).unwrap();
        assert_eq!(cfg.k_neighbors, Some(6));
        assert_eq!(cfg.max_iters, Some(120));
        assert_eq!(cfg.eta, Some(0.9));
        assert_eq!(cfg.corp_prior, Some(false));
        assert_eq!(cfg.seed, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "k-neighbours = 6").unwrap();
        assert!(Config::load(Some(f.path())).is_err());
    }

    #[test]
    fn absent_path_gives_empty_config() {
        let cfg = Config::load(None).unwrap();
        assert!(cfg.r.is_none() && cfg.seed.is_none());
    }
}
