//! Run settings shared by all subcommands. The same struct is parsed from the
//! command line and from an optional JSON `--config` file; flags win.

use std::path::{Path, PathBuf};

use clap::Args;
use kbnet::centrality::{DegreeThreshold, ImpactMode};
use kbnet::inference::CovMode;
use kbnet::panel::MissingPolicy;
use kbnet::rolling::RollingOptions;
use kbnet::var::VarOptions;
use kbnet::WindowSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default seed of `simulate`, shared with the reference instance.
pub fn default_seed() -> u64 {
    kbnet::simulation::SimulationConfig::reference().seed
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    /// JSON file with any of these settings (snake_case keys); flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Panel CSV: `date` column then one column per node.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Output file (a directory for `simulate`); stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Treat the panel values as returns instead of levels.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub levels_are_returns: Option<bool>,
    /// Centre lagged and current returns before the regression: on|off.
    #[arg(long)]
    pub demean: Option<String>,
    /// Missing-value policy: strict|ffill.
    #[arg(long)]
    pub missing: Option<String>,

    /// Discount factor of the Leontief inverse (default 1.0).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// One-sided confidence for validation and intervals (default 0.975).
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Weight CSV with `label,weight` rows (default unit weights).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Pairwise-test denominator: paper|standard.
    #[arg(long)]
    pub cov_mode: Option<String>,
    /// Degree-centrality edge threshold: a number or `pNN` percentile (default p95).
    #[arg(long)]
    pub degree_threshold: Option<String>,
    /// DebtRank impact mapping: abs|relu.
    #[arg(long)]
    pub debtrank_impact: Option<String>,

    /// Rolling window length in observations (default 252).
    #[arg(long)]
    pub window: Option<usize>,
    /// Observations between window starts (default 21).
    #[arg(long)]
    pub step: Option<usize>,
    /// Trailing moving-average width applied to the output series.
    #[arg(long)]
    pub smooth: Option<usize>,
    /// Abort on the first failing window.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fail_fast: Option<bool>,
    /// First timestamp of the second period for `compare`.
    #[arg(long)]
    pub split: Option<String>,

    /// Pairs for the pairwise test, `a,b;c,d` (labels or 0-based indices).
    #[arg(long)]
    pub pairs: Option<String>,
    /// Test every unordered pair of nodes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub all_pairs: Option<bool>,

    /// Seed for all randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Does not affect results.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Monte Carlo replications (default 2000).
    #[arg(long)]
    pub n_reps: Option<usize>,
    /// Observations per replication (default 600).
    #[arg(long)]
    pub t_len: Option<usize>,
    /// Discarded initial observations per replication (default 100).
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Points on the QQ plot (default 10).
    #[arg(long)]
    pub qq_points: Option<usize>,
    /// JSON simulation instance replacing the built-in reference network.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Exit with status 1 unless coverage lies in `lo,hi`.
    #[arg(long)]
    pub assert_coverage: Option<String>,
}

macro_rules! prefer {
    ($a:ident, $b:ident, $($f:ident),*) => {
        Settings { $($f: $a.$f.or($b.$f)),* }
    };
}

impl Settings {
    /// Combine command-line settings with the config file they name.
    pub fn resolve(self) -> Result<Settings, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let file: Settings = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("bad config {}: {e}", path.display())))?;
        let flags = self;
        Ok(prefer!(
            flags, file, config, input, output, levels_are_returns, demean, missing, alpha, confidence,
            weights, cov_mode, degree_threshold, debtrank_impact, window, step, smooth, fail_fast, split,
            pairs, all_pairs, seed, jobs, n_reps, t_len, burn_in, qq_points, instance, assert_coverage
        ))
    }

    /// Reproducibility stamp: every setting that can change results, defaults
    /// filled in. Output location, thread count and the config path are left
    /// out so that they do not perturb otherwise identical outputs.
    pub fn stamp_value(&self) -> serde_json::Value {
        let mut s = self.clone();
        s.config = None;
        s.output = None;
        s.jobs = None;
        s.alpha = Some(self.alpha());
        s.confidence = Some(self.confidence());
        s.demean = Some(if self.var_options().map(|o| o.demean).unwrap_or(true) { "on" } else { "off" }.into());
        s.missing.get_or_insert_with(|| "strict".into());
        s.levels_are_returns = Some(self.flag(self.levels_are_returns));
        let mut v = serde_json::to_value(&s).expect("settings serialize");
        if let serde_json::Value::Object(map) = &mut v {
            map.retain(|_, x| !x.is_null());
        }
        v
    }

    /// The stamp as a `#` comment line for CSV headers.
    pub fn stamp(&self, command: &str) -> String {
        format!("# kbnet {command} {}", self.stamp_value())
    }

    fn flag(&self, v: Option<bool>) -> bool {
        v.unwrap_or(false)
    }

    pub fn input_path(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::Input("--input is required".into()))
    }

    pub fn levels_are_returns(&self) -> bool {
        self.flag(self.levels_are_returns)
    }

    pub fn fail_fast(&self) -> bool {
        self.flag(self.fail_fast)
    }

    pub fn all_pairs(&self) -> bool {
        self.flag(self.all_pairs)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0)
    }

    pub fn confidence(&self) -> f64 {
        self.confidence.unwrap_or(0.975)
    }

    pub fn checked_confidence(&self) -> Result<f64, CliError> {
        let c = self.confidence();
        if c > 0.0 && c < 1.0 {
            Ok(c)
        } else {
            Err(CliError::Input(format!("--confidence must lie in (0, 1), got {c}")))
        }
    }

    pub fn missing_policy(&self) -> Result<MissingPolicy, CliError> {
        Ok(self.missing.as_deref().unwrap_or("strict").parse()?)
    }

    pub fn var_options(&self) -> Result<VarOptions, CliError> {
        let demean = match self.demean.as_deref() {
            None | Some("on") => true,
            Some("off") => false,
            Some(other) => return Err(CliError::Input(format!("--demean expects on|off, got {other:?}"))),
        };
        Ok(VarOptions {
            demean,
            ..VarOptions::default()
        })
    }

    pub fn cov_mode(&self) -> Result<CovMode, CliError> {
        Ok(self.cov_mode.as_deref().map_or(Ok(CovMode::default()), str::parse)?)
    }

    pub fn degree_threshold(&self) -> Result<DegreeThreshold, CliError> {
        Ok(self
            .degree_threshold
            .as_deref()
            .map_or(Ok(DegreeThreshold::default()), str::parse)?)
    }

    pub fn impact_mode(&self) -> Result<ImpactMode, CliError> {
        Ok(self
            .debtrank_impact
            .as_deref()
            .map_or(Ok(ImpactMode::default()), str::parse)?)
    }

    pub fn window_spec(&self) -> Result<WindowSpec, CliError> {
        Ok(WindowSpec::new(self.window.unwrap_or(252), self.step.unwrap_or(21))?)
    }

    pub fn rolling_options(&self) -> Result<RollingOptions, CliError> {
        Ok(RollingOptions {
            alpha: self.alpha(),
            confidence: self.checked_confidence()?,
            degree_threshold: self.degree_threshold()?,
            debtrank_impact: self.impact_mode()?,
            var: self.var_options()?,
            fail_fast: self.fail_fast(),
        })
    }

    pub fn coverage_bounds(&self) -> Result<Option<(f64, f64)>, CliError> {
        let Some(text) = self.assert_coverage.as_deref() else {
            return Ok(None);
        };
        let bad = || CliError::Input(format!("--assert-coverage expects lo,hi, got {text:?}"));
        let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(bad());
        }
        Ok(Some((lo, hi)))
    }
}
