//! Run configuration: JSON file merged with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use incompat_core::random::random_assemblage;
use incompat_core::{build_mub, MubFamily, WeightedAssemblage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Contents of a `--config` file. Every field is optional; flags win.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<Scenario>,
    pub eta: Option<EtaGrid>,
    pub subset: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Scenario {
    /// First `m` Heisenberg–Weyl bases in prime dimension `d`.
    Mub { d: usize, m: usize },
    /// Assemblage JSON file.
    File { path: PathBuf },
    /// Random assemblage drawn from the run seed.
    Random {
        d: usize,
        m: usize,
        #[serde(default)]
        outcomes: Option<usize>,
        #[serde(default)]
        projective: Option<bool>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EtaGrid {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl EtaGrid {
    pub fn single(eta: f64) -> Self {
        Self { start: eta, stop: eta, steps: 1 }
    }

    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if self.steps == 0 || !ok(self.start) || !ok(self.stop) || (self.steps == 1 && self.start != self.stop) {
            return Err(CliError::Input(format!("invalid η grid {self:?}")));
        }
        if self.steps == 1 {
            return Ok(vec![self.start]);
        }
        let n = (self.steps - 1) as f64;
        Ok((0..self.steps).map(|k| self.start + (self.stop - self.start) * k as f64 / n).collect())
    }
}

/// Scenario flags shared by the assemblage-based subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    /// Dimension of the MUB (or random) scenario.
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of measurements.
    #[arg(long)]
    pub m: Option<usize>,
    /// Read the assemblage from a JSON file instead.
    #[arg(long, conflicts_with_all = ["d", "random"])]
    pub input: Option<PathBuf>,
    /// Draw a random assemblage of dimension `d` with `m` settings.
    #[arg(long)]
    pub random: bool,
    /// Outcomes per setting for `--random` (default `d`).
    #[arg(long, requires = "random")]
    pub outcomes: Option<usize>,
    /// Projective measurements for `--random`.
    #[arg(long, requires = "random")]
    pub projective: bool,
    /// Single visibility.
    #[arg(long, conflicts_with_all = ["eta_start", "eta_stop", "eta_steps"])]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eta_start: Option<f64>,
    #[arg(long)]
    pub eta_stop: Option<f64>,
    #[arg(long)]
    pub eta_steps: Option<usize>,
}

/// A resolved scenario: the undepolarized assemblage and, for MUBs, the family.
pub struct Resolved {
    pub base: WeightedAssemblage,
    pub family: Option<MubFamily>,
    pub etas: Vec<f64>,
}

impl Resolved {
    pub fn at(&self, eta: f64) -> Result<WeightedAssemblage, CliError> {
        Ok(self.base.depolarize(eta)?)
    }
}

pub fn resolve(args: &ScenarioArgs, cfg: &RunConfig, seed: u64) -> Result<Resolved, CliError> {
    let scenario = if let Some(path) = &args.input {
        Scenario::File { path: path.clone() }
    } else if args.random {
        let (d, m) = args.d.zip(args.m).ok_or_else(|| CliError::Input("--random needs --d and --m".into()))?;
        Scenario::Random { d, m, outcomes: args.outcomes, projective: Some(args.projective) }
    } else if args.d.is_some() || args.m.is_some() {
        let (d0, m0) = match &cfg.scenario {
            Some(Scenario::Mub { d, m }) => (*d, *m),
            _ => (2, 3),
        };
        Scenario::Mub { d: args.d.unwrap_or(d0), m: args.m.unwrap_or(m0) }
    } else if let Some(s) = &cfg.scenario {
        s.clone()
    } else {
        Scenario::Mub { d: 2, m: 3 }
    };
    let (base, family) = match scenario {
        Scenario::Mub { d, m } => {
            let fam = build_mub(d, m)?;
            (fam.assemblage(), Some(fam))
        }
        Scenario::File { path } => {
            let text = fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
            (WeightedAssemblage::from_json(&text)?, None)
        }
        Scenario::Random { d, m, outcomes, projective } => {
            if d < 2 || m == 0 {
                return Err(CliError::Input("random scenario needs d ≥ 2 and m ≥ 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (random_assemblage(d, m, outcomes.unwrap_or(d), projective.unwrap_or(false), &mut rng), None)
        }
    };
    let grid = match (args.eta, args.eta_start, args.eta_stop, args.eta_steps) {
        (Some(e), ..) => EtaGrid::single(e),
        (None, None, None, None) => cfg.eta.unwrap_or(EtaGrid::single(1.0)),
        (None, start, stop, steps) => {
            let dflt = cfg.eta.unwrap_or(EtaGrid { start: 0.0, stop: 1.0, steps: 26 });
            EtaGrid { start: start.unwrap_or(dflt.start), stop: stop.unwrap_or(dflt.stop), steps: steps.unwrap_or(dflt.steps) }
        }
    };
    Ok(Resolved { base, family, etas: grid.points()? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        assert_eq!(EtaGrid { start: 0.5, stop: 1.0, steps: 3 }.points().unwrap(), vec![0.5, 0.75, 1.0]);
        assert_eq!(EtaGrid::single(0.3).points().unwrap(), vec![0.3]);
        assert!(EtaGrid { start: 0.0, stop: 1.5, steps: 3 }.points().is_err());
        assert!(EtaGrid { start: 0.0, stop: 1.0, steps: 0 }.points().is_err());
    }

    #[test]
    fn config_parses_and_rejects_unknown_fields() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"scenario": {"kind": "mub", "d": 3, "m": 4}, "eta": {"start": 0, "stop": 1, "steps": 5}, "seed": 7}"#,
        )
        .unwrap();
        assert_eq!(cfg.scenario, Some(Scenario::Mub { d: 3, m: 4 }));
        assert!(serde_json::from_str::<RunConfig>(r#"{"seeds": 1}"#).is_err());
    }

    #[test]
    fn flags_override_config() {
        let cfg = RunConfig { scenario: Some(Scenario::Mub { d: 3, m: 2 }), ..RunConfig::default() };
        let args = ScenarioArgs { d: Some(2), m: Some(3), eta_steps: Some(2), ..ScenarioArgs::default() };
        let r = resolve(&args, &cfg, 0).unwrap();
        assert_eq!((r.base.dim(), r.base.len()), (2, 3));
        assert_eq!(r.etas, vec![0.0, 1.0]);
        let r = resolve(&ScenarioArgs::default(), &cfg, 0).unwrap();
        assert_eq!((r.base.dim(), r.base.len()), (3, 2));
        let r = resolve(&ScenarioArgs { m: Some(3), ..ScenarioArgs::default() }, &cfg, 0).unwrap();
        assert_eq!((r.base.dim(), r.base.len()), (3, 3));
    }
}
