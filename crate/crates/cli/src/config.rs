use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use qecsa::protocol::{plan_scheme_with, plan_shape, PlanOptions, SchemeParams};
use qecsa::verify::VerifyMode;
use qecsa::FieldSpec;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exhaustive,
    Sampled,
    RankCondition,
}

impl From<ModeArg> for VerifyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exhaustive => VerifyMode::Exhaustive,
            ModeArg::Sampled => VerifyMode::Sampled,
            ModeArg::RankCondition => VerifyMode::RankCondition,
        }
    }
}

impl ModeArg {
    fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "exhaustive" => Ok(ModeArg::Exhaustive),
            "sampled" => Ok(ModeArg::Sampled),
            "rank_condition" => Ok(ModeArg::RankCondition),
            other => bail!("unknown mode {other:?}"),
        }
    }
}

/// Flags shared by every subcommand. Indices (`theta`, servers) are 1-based.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Number of servers
    #[arg(short = 'N')]
    pub n: Option<usize>,
    /// Number of messages
    #[arg(short = 'K')]
    pub k: Option<usize>,
    /// Storage security level
    #[arg(short = 'X')]
    pub x: Option<usize>,
    /// Query privacy level
    #[arg(short = 'T')]
    pub t: Option<usize>,
    /// Maximum number of erased servers
    #[arg(short = 'E')]
    pub e: Option<usize>,
    /// Field size (prime); defaults to the smallest prime that fits the plan
    #[arg(short = 'q')]
    pub q: Option<u64>,
    /// Evaluation points alpha_1..alpha_N, comma separated
    #[arg(long)]
    pub alpha: Option<String>,
    /// Poles f_1..f_L, comma separated
    #[arg(long)]
    pub f: Option<String>,
    /// GRS multipliers u_1..u_N, comma separated
    #[arg(long)]
    pub u: Option<String>,
    /// Desired message index, 1-based
    #[arg(long)]
    pub theta: Option<usize>,
    /// Erased servers, 1-based, comma separated
    #[arg(long)]
    pub erase: Option<String>,
    /// Erasure offsets: all first components, then all second components
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Write JSON here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the above keys; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(alias = "N")]
    n: Option<usize>,
    #[serde(alias = "K")]
    k: Option<usize>,
    #[serde(alias = "X")]
    x: Option<usize>,
    #[serde(alias = "T")]
    t: Option<usize>,
    #[serde(alias = "E")]
    e: Option<usize>,
    q: Option<u64>,
    alpha: Option<Vec<u64>>,
    f: Option<Vec<u64>>,
    u: Option<Vec<u64>>,
    theta: Option<usize>,
    erase: Option<Vec<usize>>,
    delta: Option<Vec<u64>>,
    seed: Option<u64>,
    mode: Option<String>,
    out: Option<PathBuf>,
}

/// Flags merged over the config file over the worked-example defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: usize,
    pub k: usize,
    pub x: usize,
    pub t: usize,
    pub e: usize,
    pub q: Option<u64>,
    pub alpha: Option<Vec<u64>>,
    pub f: Option<Vec<u64>>,
    pub u: Option<Vec<u64>>,
    pub theta: usize,
    pub erase: Vec<usize>,
    pub delta: Option<Vec<u64>>,
    pub seed: u64,
    pub mode: ModeArg,
    pub out: Option<PathBuf>,
}

pub fn parse_csv<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} entry {p:?}: {e}")))
        .collect()
}

fn csv_or<T: FromStr>(flag: &Option<String>, file: Option<Vec<T>>, what: &str) -> Result<Option<Vec<T>>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(s) => parse_csv(s, what).map(Some),
        None => Ok(file),
    }
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };
        let mode = match (&args.mode, &file.mode) {
            (Some(m), _) => *m,
            (None, Some(s)) => ModeArg::parse(s)?,
            (None, None) => ModeArg::Exhaustive,
        };
        let cfg = Self {
            n: args.n.or(file.n).unwrap_or(4),
            k: args.k.or(file.k).unwrap_or(2),
            x: args.x.or(file.x).unwrap_or(1),
            t: args.t.or(file.t).unwrap_or(1),
            e: args.e.or(file.e).unwrap_or(1),
            q: args.q.or(file.q),
            alpha: csv_or(&args.alpha, file.alpha, "alpha")?,
            f: csv_or(&args.f, file.f, "f")?,
            u: csv_or(&args.u, file.u, "u")?,
            theta: args.theta.or(file.theta).unwrap_or(1),
            erase: csv_or(&args.erase, file.erase, "erase")?.unwrap_or_default(),
            delta: csv_or(&args.delta, file.delta, "delta")?,
            seed: args.seed.or(file.seed).unwrap_or(0),
            mode,
            out: args.out.clone().or(file.out),
        };
        ensure!(cfg.theta >= 1 && cfg.theta <= cfg.k, "theta must be in 1..={}", cfg.k);
        for &s in &cfg.erase {
            ensure!(s >= 1 && s <= cfg.n, "erased server {s} out of range 1..={}", cfg.n);
        }
        Ok(cfg)
    }

    /// The explicit `q`, or the smallest prime with room for `N` points and the poles.
    pub fn field(&self) -> Result<FieldSpec> {
        let q = match self.q {
            Some(q) => q,
            None => {
                let (_, shape) = plan_shape(self.n, self.x, self.t, self.e)?;
                let max_l = shape.iter().map(|s| s.1).max().unwrap_or(0);
                FieldSpec::smallest_at_least((self.n + max_l) as u64).modulus()
            }
        };
        Ok(FieldSpec::new(q)?)
    }

    pub fn params(&self) -> Result<SchemeParams> {
        let field = self.field()?;
        for (what, vals) in [("alpha", &self.alpha), ("f", &self.f), ("u", &self.u)] {
            if let Some(vals) = vals {
                if let Some(v) = vals.iter().find(|&&v| v >= field.modulus()) {
                    bail!("{what} entry {v} is not a residue mod {}", field.modulus());
                }
            }
        }
        let opts = PlanOptions { alpha: self.alpha.clone(), f: self.f.clone(), u: self.u.clone() };
        Ok(plan_scheme_with(self.n, self.k, self.x, self.t, self.e, field, &opts)?)
    }

    pub fn theta0(&self) -> usize {
        self.theta - 1
    }

    pub fn erase0(&self) -> Vec<usize> {
        self.erase.iter().map(|s| s - 1).collect()
    }
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_worked_example() {
        let cfg = RunConfig::resolve(&CommonArgs::default()).unwrap();
        assert_eq!((cfg.n, cfg.k, cfg.x, cfg.t, cfg.e), (4, 2, 1, 1, 1));
        assert_eq!(cfg.field().unwrap().modulus(), 5);
        assert_eq!(cfg.mode, ModeArg::Exhaustive);
    }

    #[test]
    fn csv_parsing() {
        assert_eq!(parse_csv::<u64>("1, 2,3", "x").unwrap(), vec![1, 2, 3]);
        assert!(parse_csv::<u64>("", "x").unwrap().is_empty());
        assert!(parse_csv::<u64>("1,a", "x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("qecsa-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        fs::write(&path, r#"{"N": 6, "K": 3, "q": 11, "erase": [2], "mode": "rank_condition"}"#).unwrap();
        let args = CommonArgs { k: Some(2), config: Some(path), ..CommonArgs::default() };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!((cfg.n, cfg.k, cfg.q, cfg.erase.clone()), (6, 2, Some(11), vec![2]));
        assert_eq!(cfg.mode, ModeArg::RankCondition);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let args = CommonArgs { theta: Some(3), ..CommonArgs::default() };
        assert!(RunConfig::resolve(&args).is_err());
        let args = CommonArgs { erase: Some("5".into()), ..CommonArgs::default() };
        assert!(RunConfig::resolve(&args).is_err());
        let args = CommonArgs { alpha: Some("0,1,2,7".into()), ..CommonArgs::default() };
        assert!(RunConfig::resolve(&args).unwrap().params().is_err());
    }
}
