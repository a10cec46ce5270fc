//! Flat `key = value` configuration files.
//!
//! Grammar: one assignment per line, `#` starts a comment that runs to the
//! end of the line, blank lines are ignored, keys are lowercase identifiers
//! and may appear once. Lists are comma separated and may be wrapped in
//! parentheses, e.g. `ranks = (3, 3, 2)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::selection::BicForm;
use crate::shorr::ShorrOptions;
use crate::var_process::DgpSpec;

/// Parsed assignments in file order with their line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(usize, String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Argument(format!("line {line_no}: expected `key = value`")));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-') {
                return Err(Error::Argument(format!("line {line_no}: invalid key `{key}`")));
            }
            if value.is_empty() {
                return Err(Error::Argument(format!("line {line_no}: `{key}` has no value")));
            }
            if let Some((first, _, _)) = entries.iter().find(|(_, k, _)| *k == key) {
                return Err(Error::Argument(format!("line {line_no}: `{key}` already set on line {first}")));
            }
            entries.push((line_no, key, value));
        }
        Ok(KeyValues { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(_, k, v)| (k.as_str(), v.as_str()))
    }

    /// Sets or replaces a value, as command-line overrides do.
    pub fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|(_, k, _)| k == key) {
            Some(e) => e.2 = value.to_string(),
            None => self.entries.push((0, key.to_string(), value.to_string())),
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Argument(format!("`{key}`: cannot parse `{value}`")))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let inner = value.trim().trim_start_matches('(').trim_end_matches(')');
    inner.split(',').map(|v| parse_value(key, v)).collect()
}

pub fn parse_triple<T: FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]> {
    let v: Vec<T> = parse_list(key, value)?;
    v.try_into().map_err(|_| Error::Argument(format!("`{key}` needs exactly three values, got `{value}`")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ols,
    Rrr,
    Nn,
    Lasso,
    Mlr,
    Shorr,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [Estimator::Ols, Estimator::Rrr, Estimator::Nn, Estimator::Lasso, Estimator::Mlr, Estimator::Shorr];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ols => "ols",
            Estimator::Rrr => "rrr",
            Estimator::Nn => "nn",
            Estimator::Lasso => "lasso",
            Estimator::Mlr => "mlr",
            Estimator::Shorr => "shorr",
        }
    }

    /// Whether the estimator needs multilinear ranks (RRR uses `r₁`).
    pub fn needs_ranks(self) -> bool {
        matches!(self, Estimator::Rrr | Estimator::Mlr | Estimator::Shorr)
    }

    pub fn is_penalized(self) -> bool {
        matches!(self, Estimator::Nn | Estimator::Lasso | Estimator::Shorr)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Argument(format!("unknown estimator `{s}` (expected one of ols, rrr, nn, lasso, mlr, shorr)")))
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSpec {
    Auto,
    Fixed([usize; 3]),
}

impl FromStr for RankSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "auto" {
            Ok(RankSpec::Auto)
        } else {
            Ok(RankSpec::Fixed(parse_triple("ranks", s)?))
        }
    }
}

impl std::fmt::Display for RankSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankSpec::Auto => f.write_str("auto"),
            RankSpec::Fixed(r) => write!(f, "{},{},{}", r[0], r[1], r[2]),
        }
    }
}

/// Penalty level: a number, or BIC over a grid given either by its length
/// (`bic:12`, default grid) or explicitly (`bic:0.01,0.02,0.05`). Plain
/// `bic` uses the default grid of [`DEFAULT_GRID_LEN`] points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    BicDefault(usize),
    BicGrid(Vec<f64>),
}

pub const DEFAULT_GRID_LEN: usize = 8;

impl FromStr for LambdaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "bic" {
            return Ok(LambdaChoice::BicDefault(DEFAULT_GRID_LEN));
        }
        if let Some(rest) = s.strip_prefix("bic:") {
            let explicit = rest.contains(',') || rest.contains('.') || rest.contains('e');
            if explicit {
                let grid: Vec<f64> = parse_list("lambda", rest)?;
                if grid.iter().any(|l| !(*l > 0.0)) {
                    return Err(Error::Argument("`lambda`: grid values must be positive".into()));
                }
                return Ok(LambdaChoice::BicGrid(grid));
            }
            let len: usize = parse_value("lambda", rest)?;
            if len == 0 {
                return Err(Error::Argument("`lambda`: grid length must be positive".into()));
            }
            return Ok(LambdaChoice::BicDefault(len));
        }
        let v: f64 = parse_value("lambda", s)?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Argument(format!("`lambda` must be a nonnegative number, got {s}")));
        }
        Ok(LambdaChoice::Fixed(v))
    }
}

impl std::fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaChoice::Fixed(v) => write!(f, "{v}"),
            LambdaChoice::BicDefault(n) => write!(f, "bic:{n}"),
            LambdaChoice::BicGrid(g) => {
                let items: Vec<String> = g.iter().map(|x| format!("{x:e}")).collect();
                write!(f, "bic:{}", items.join(","))
            }
        }
    }
}

fn parse_bic_form(s: &str) -> Result<BicForm> {
    match s.trim() {
        "logdet" => Ok(BicForm::LogDet),
        "pooled" => Ok(BicForm::Pooled),
        other => Err(Error::Argument(format!("`bic_form`: expected logdet or pooled, got `{other}`"))),
    }
}

fn bic_form_name(f: BicForm) -> &'static str {
    match f {
        BicForm::LogDet => "logdet",
        BicForm::Pooled => "pooled",
    }
}

/// Everything `fit` needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Lag order `P`.
    pub p: usize,
    pub ranks: RankSpec,
    pub estimator: Estimator,
    pub lambda: LambdaChoice,
    /// Ridge parameter of the rank selector; `None` uses the automatic rule.
    pub c: Option<f64>,
    pub bic_form: BicForm,
    /// Outer tolerance; `None` keeps the estimator's default.
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub shorr: ShorrOptions,
    pub seed: u64,
    /// Number of perturbed starts for MLR and SHORR (1 disables multistart).
    pub starts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            p: 1,
            ranks: RankSpec::Auto,
            estimator: Estimator::Mlr,
            lambda: LambdaChoice::BicDefault(DEFAULT_GRID_LEN),
            c: None,
            bic_form: BicForm::LogDet,
            tol: None,
            max_iter: None,
            shorr: ShorrOptions::default(),
            seed: 0,
            starts: 1,
        }
    }
}

impl FitConfig {
    pub const KEYS: [&'static str; 16] = [
        "p",
        "ranks",
        "estimator",
        "lambda",
        "c",
        "bic_form",
        "tol",
        "max_iter",
        "rho",
        "kappa",
        "soc_rho",
        "inner_tol",
        "inner_max_iter",
        "soc_max_iter",
        "seed",
        "starts",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = FitConfig::default();
        for (k, v) in kv.iter() {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "p" => {
                self.p = parse_value(key, value)?;
                if self.p == 0 {
                    return Err(Error::Argument("`p` must be at least 1".into()));
                }
            }
            "ranks" => self.ranks = value.parse()?,
            "estimator" => self.estimator = value.parse()?,
            "lambda" => self.lambda = value.parse()?,
            "c" => {
                self.c = if value.trim() == "auto" {
                    None
                } else {
                    let c: f64 = parse_value(key, value)?;
                    if !(c > 0.0) {
                        return Err(Error::Argument("`c` must be positive".into()));
                    }
                    Some(c)
                }
            }
            "bic_form" => self.bic_form = parse_bic_form(value)?,
            "tol" => self.tol = Some(parse_value(key, value)?),
            "max_iter" => self.max_iter = Some(parse_value(key, value)?),
            "rho" => self.shorr.rho = parse_triple(key, value)?,
            "kappa" => self.shorr.kappa = parse_value(key, value)?,
            "soc_rho" => self.shorr.soc_rho = parse_value(key, value)?,
            "inner_tol" => self.shorr.inner_tol = parse_value(key, value)?,
            "inner_max_iter" => self.shorr.inner_max_iter = parse_value(key, value)?,
            "soc_max_iter" => self.shorr.soc_max_iter = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "starts" => {
                self.starts = parse_value(key, value)?;
                if self.starts == 0 {
                    return Err(Error::Argument("`starts` must be at least 1".into()));
                }
            }
            other => {
                return Err(Error::Argument(format!(
                    "unknown configuration key `{other}` (known keys: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Canonical text form: every key in [`FitConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "ranks = {}", self.ranks);
        let _ = writeln!(s, "estimator = {}", self.estimator);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "c = {}", self.c.map_or("auto".to_string(), |c| c.to_string()));
        let _ = writeln!(s, "bic_form = {}", bic_form_name(self.bic_form));
        if let Some(t) = self.tol {
            let _ = writeln!(s, "tol = {t}");
        }
        if let Some(m) = self.max_iter {
            let _ = writeln!(s, "max_iter = {m}");
        }
        let _ = writeln!(s, "rho = {}", join(&self.shorr.rho));
        let _ = writeln!(s, "kappa = {}", self.shorr.kappa);
        let _ = writeln!(s, "soc_rho = {}", self.shorr.soc_rho);
        let _ = writeln!(s, "inner_tol = {}", self.shorr.inner_tol);
        let _ = writeln!(s, "inner_max_iter = {}", self.shorr.inner_max_iter);
        let _ = writeln!(s, "soc_max_iter = {}", self.shorr.soc_max_iter);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "starts = {}", self.starts);
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Data-generating process from the keys `dgp`, `n`, `p`, `ranks`,
/// `diagonal` and `sparsity`.
///
/// `dgp` is one of `superdiagonal`, `scaled_random`, `sparse_factor`,
/// `dfm1`, `dfm2` and `sfm_equivalent`.
pub fn parse_dgp(kv: &KeyValues) -> Result<DgpSpec> {
    let kind = kv.get("dgp").ok_or_else(|| Error::Argument("missing `dgp`".into()))?;
    let need = |key: &str| kv.get(key).ok_or_else(|| Error::Argument(format!("dgp `{kind}` needs `{key}`")));
    let n = || -> Result<usize> { parse_value("n", need("n")?) };
    let p = || -> Result<usize> { parse_value("p", need("p")?) };
    Ok(match kind {
        "superdiagonal" | "superdiagonal_core" => DgpSpec::SuperdiagonalCore { n: n()?, p: p()?, diagonal: parse_list("diagonal", need("diagonal")?)? },
        "scaled_random" | "scaled_random_core" => DgpSpec::ScaledRandomCore { n: n()?, p: p()?, ranks: parse_triple("ranks", need("ranks")?)? },
        "sparse_factor" => DgpSpec::SparseFactor {
            n: n()?,
            p: p()?,
            ranks: parse_triple("ranks", need("ranks")?)?,
            sparsity: parse_triple("sparsity", need("sparsity")?)?,
        },
        "dfm1" => DgpSpec::Dfm1 { n: n()? },
        "dfm2" => DgpSpec::Dfm2 { n: n()? },
        "sfm_equivalent" => DgpSpec::SfmEquivalent { n: n()?, diagonal: parse_list("diagonal", need("diagonal")?)? },
        other => return Err(Error::Argument(format!("unknown dgp `{other}`"))),
    })
}

/// Inverse of [`parse_dgp`].
pub fn dgp_key_values(spec: &DgpSpec) -> Vec<(String, String)> {
    let mut out = vec![];
    let mut push = |k: &str, v: String| out.push((k.to_string(), v));
    match spec {
        DgpSpec::SuperdiagonalCore { n, p, diagonal } => {
            push("dgp", "superdiagonal".into());
            push("n", n.to_string());
            push("p", p.to_string());
            push("diagonal", join(diagonal));
        }
        DgpSpec::ScaledRandomCore { n, p, ranks } => {
            push("dgp", "scaled_random".into());
            push("n", n.to_string());
            push("p", p.to_string());
            push("ranks", join(ranks));
        }
        DgpSpec::SparseFactor { n, p, ranks, sparsity } => {
            push("dgp", "sparse_factor".into());
            push("n", n.to_string());
            push("p", p.to_string());
            push("ranks", join(ranks));
            push("sparsity", join(sparsity));
        }
        DgpSpec::Dfm1 { n } => {
            push("dgp", "dfm1".into());
            push("n", n.to_string());
        }
        DgpSpec::Dfm2 { n } => {
            push("dgp", "dfm2".into());
            push("n", n.to_string());
        }
        DgpSpec::SfmEquivalent { n, diagonal } => {
            push("dgp", "sfm_equivalent".into());
            push("n", n.to_string());
            push("diagonal", join(diagonal));
        }
    }
    out
}
