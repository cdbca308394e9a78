//! Flat `key = value` run configuration.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored; a key may appear at most once per file. Values from
//! the command line override values from the file, which override defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    Simulate,
    Localtime,
    Rate,
    VerifyBounds,
    Oracle,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Localtime => "localtime",
            Command::Rate => "rate",
            Command::VerifyBounds => "verify-bounds",
            Command::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Command::Simulate,
            "localtime" => Command::Localtime,
            "rate" => Command::Rate,
            "verify-bounds" => Command::VerifyBounds,
            "oracle" => Command::Oracle,
            other => bail!("unknown command '{other}'"),
        })
    }

    /// Keys accepted by the command, with their defaults (`""` = unset).
    pub fn defaults(&self) -> &'static [(&'static str, &'static str)] {
        match self {
            Command::Simulate => &[("H", "0.75"), ("n", "1024"), ("T", "1"), ("t", ""), ("components", "1"), ("method", "fft")],
            Command::Localtime => &[
                ("H", "0.75"),
                ("n", "4096"),
                ("t", "1"),
                ("levels", "0"),
                ("estimator", "sign"),
                ("eps", ""),
                ("paths", "1"),
            ],
            Command::Rate => &[
                ("experiment", "rate"),
                ("hurst", "0.6,0.75"),
                ("n", "64..2048"),
                ("t", "1"),
                ("pair", "11"),
                ("integrand", "delta:0"),
                ("replicates", "1000"),
                ("max_replicates", "10000"),
                ("auto_scale", "true"),
                ("fine_factor", ""),
                ("reference", ""),
                ("budget", "2e10"),
            ],
            Command::VerifyBounds => &[
                ("suite", "cov"),
                ("hurst", ""),
                ("h_grid", ""),
                ("samples", ""),
                ("functional", "local-crossing"),
                ("level", "0"),
                ("triples", "100000"),
                ("configurations", "1000"),
                ("theta", "0.5,1,2"),
            ],
            Command::Oracle => &[("lemma", "a1"), ("theta", "1"), ("H", "0.75"), ("t", "1"), ("a", "0"), ("p", "1")],
        }
    }

    pub fn accepts(&self, key: &str) -> bool {
        key == "seed" || self.defaults().iter().any(|(k, _)| *k == key)
    }
}

/// Effective configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    /// Every accepted key with its effective value.
    pub settings: BTreeMap<String, String>,
}

/// Parse the flat grammar into ordered pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected 'key = value', got '{}'", no + 1, raw.trim());
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            bail!("line {}: empty key", no + 1);
        }
        if out.iter().any(|(e, _)| e == k) {
            bail!("line {}: duplicate key '{k}'", no + 1);
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Merge defaults, the optional config file and command-line pairs.
    pub fn build(
        command: Command,
        config_path: Option<&Path>,
        overrides: Vec<(String, String)>,
        output_dir: PathBuf,
        seed: Option<u64>,
    ) -> Result<Self> {
        let file_pairs = match config_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_pairs(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Vec::new(),
        };
        let unknown: Vec<&str> = file_pairs
            .iter()
            .chain(&overrides)
            .map(|(k, _)| k.as_str())
            .filter(|k| !command.accepts(k))
            .collect();
        if !unknown.is_empty() {
            bail!("unknown keys for '{}': {}", command.name(), unknown.join(", "));
        }
        let mut settings: BTreeMap<String, String> =
            command.defaults().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut master_seed = 0;
        for (k, v) in file_pairs.iter().chain(&overrides) {
            if k == "seed" {
                master_seed = v.parse().with_context(|| format!("seed must be an unsigned integer, got '{v}'"))?;
            } else {
                settings.insert(k.clone(), v.clone());
            }
        }
        if let Some(s) = seed {
            master_seed = s;
        }
        Ok(Self { command, config_path: config_path.map(Path::to_path_buf), overrides, output_dir, master_seed, settings })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).with_context(|| format!("missing value for '{key}'"))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.require(key)?;
        v.parse().map_err(|e| anyhow::anyhow!("invalid value '{v}' for '{key}': {e}"))
    }

    pub fn parse_optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            Some(_) => self.parse_value(key).map(Some),
            None => Ok(None),
        }
    }

    /// Text form; [`RunConfig::from_manifest`] reads it back.
    pub fn to_manifest(&self) -> String {
        let mut s = format!("# fbmlab {} run manifest\n", env!("CARGO_PKG_VERSION"));
        s.push_str(&format!("command = {}\n", self.command.name()));
        s.push_str(&format!("output_dir = {}\n", self.output_dir.display()));
        s.push_str(&format!("seed = {}\n", self.master_seed));
        for (k, v) in &self.settings {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let take = |key: &str| -> Result<String> {
            pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone()).with_context(|| format!("manifest lacks '{key}'"))
        };
        let command = Command::parse(&take("command")?)?;
        let output_dir = PathBuf::from(take("output_dir")?);
        let rest: Vec<(String, String)> =
            pairs.iter().filter(|(k, _)| k != "command" && k != "output_dir").cloned().collect();
        let mut cfg = Self::build(command, None, rest, output_dir, None)?;
        cfg.overrides.clear();
        Ok(cfg)
    }

    /// Parts that determine the results; equal for a config and its manifest.
    pub fn effective(&self) -> (Command, &Path, u64, &BTreeMap<String, String>) {
        (self.command, &self.output_dir, self.master_seed, &self.settings)
    }
}

pub fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("invalid entry '{s}' in '{key}': {e}")))
        .collect()
}

/// `a..b` for powers of two between `a` and `b`, or a comma list.
pub fn parse_resolutions(v: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = v.split_once("..") {
        let a = parse_power(a)?;
        let b = parse_power(b)?;
        if !(a.is_power_of_two() && b.is_power_of_two() && a <= b) {
            bail!("resolution range '{v}' must run between powers of two");
        }
        let mut out = vec![a];
        while *out.last().unwrap() < b {
            out.push(out.last().unwrap() * 2);
        }
        Ok(out)
    } else {
        parse_list("n", v)
    }
}

fn parse_power(s: &str) -> Result<usize> {
    let s = s.trim();
    match s.strip_prefix("2^") {
        Some(k) => Ok(1usize << k.parse::<u32>().with_context(|| format!("bad exponent in '{s}'"))?),
        None => s.parse().with_context(|| format!("bad resolution '{s}'")),
    }
}

/// `2^-a..2^-b` for the dyadic levels from `2^-a` down to `2^-b`, or a comma list.
pub fn parse_h_grid(v: &str) -> Result<Vec<f64>> {
    if let Some((a, b)) = v.split_once("..") {
        let exp = |s: &str| -> Result<i32> {
            s.trim().strip_prefix("2^").with_context(|| format!("expected 2^k in '{s}'"))?.parse().context("bad exponent")
        };
        let (a, b) = (exp(a)?, exp(b)?);
        if a < b {
            bail!("h-grid '{v}' must run from the largest level down");
        }
        Ok((b..=a).rev().map(|k| 2f64.powi(k)).collect())
    } else {
        parse_list("h_grid", v)
    }
}

/// `11`, `12`, `1,2`, ... into a zero-based pair.
pub fn parse_pair(v: &str) -> Result<(usize, usize)> {
    let digits: Vec<char> = v.chars().filter(|c| !matches!(c, ',' | ' ')).collect();
    match digits.as_slice() {
        [a, b] if matches!(a, '1' | '2') && matches!(b, '1' | '2') => {
            Ok((*a as usize - '1' as usize, *b as usize - '1' as usize))
        }
        _ => bail!("pair must be two component indices in {{1, 2}}, got '{v}'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let p = parse_pairs("# plan\nhurst = 0.6, 0.75  # two values\n\n n=64..256\n").unwrap();
        assert_eq!(p, vec![("hurst".into(), "0.6, 0.75".into()), ("n".into(), "64..256".into())]);
        assert!(parse_pairs("a = 1\na = 2").is_err());
        assert!(parse_pairs("novalue").is_err());
    }

    #[test]
    fn unknown_keys_are_listed() {
        let e = RunConfig::build(
            Command::Rate,
            None,
            vec![("hurst".into(), "0.7".into()), ("bogus".into(), "1".into()), ("other".into(), "2".into())],
            PathBuf::from("out"),
            None,
        )
        .unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("bogus") && msg.contains("other"), "{msg}");
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = RunConfig::build(
            Command::Rate,
            None,
            vec![("hurst".into(), "0.7".into()), ("seed".into(), "9".into())],
            PathBuf::from("out dir"),
            Some(42),
        )
        .unwrap();
        let back = RunConfig::from_manifest(&cfg.to_manifest()).unwrap();
        assert_eq!(back.effective(), cfg.effective());
        assert_eq!(back.master_seed, 42);
    }

    #[test]
    fn value_parsers() {
        assert_eq!(parse_resolutions("64..512").unwrap(), vec![64, 128, 256, 512]);
        assert_eq!(parse_resolutions("2^4..2^6").unwrap(), vec![16, 32, 64]);
        assert_eq!(parse_resolutions("8,16").unwrap(), vec![8, 16]);
        assert_eq!(parse_h_grid("2^-2..2^-4").unwrap(), vec![0.25, 0.125, 0.0625]);
        assert_eq!(parse_pair("12").unwrap(), (0, 1));
        assert_eq!(parse_pair("2,2").unwrap(), (1, 1));
        assert!(parse_pair("13").is_err());
    }
}
