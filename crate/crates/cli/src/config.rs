//! Run settings: defaults, then a `key = value` config file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cvmx_core::iml::ImlSyntax;
use cvmx_core::{OpSet, WordParams};

use crate::error::{read_file, CliError};

pub const WIDTHS: [u32; 5] = [4, 8, 16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected text or json)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OpsProfile {
    /// Arithmetic and comparisons only.
    Builtins,
    /// Builtins, cryptographic stubs and event tags.
    #[default]
    Standard,
    /// Standard plus the three opaque stubs used by the differential driver.
    Difftest,
}

impl std::str::FromStr for OpsProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "builtins" => Ok(OpsProfile::Builtins),
            "standard" => Ok(OpsProfile::Standard),
            "difftest" => Ok(OpsProfile::Difftest),
            _ => Err(format!("unknown ops profile {s:?} (expected builtins, standard or difftest)")),
        }
    }
}

/// Names, arities and output widths of the differential driver's opaque stubs.
pub const STUBS: [(&str, usize, usize); 3] = [("f", 1, 16), ("g", 2, 24), ("h", 1, 8)];

impl OpsProfile {
    pub fn build(self, params: &WordParams) -> OpSet {
        match self {
            OpsProfile::Builtins => OpSet::builtins(),
            OpsProfile::Standard => OpSet::standard(params),
            OpsProfile::Difftest => {
                let mut ops = OpSet::standard(params);
                for (name, arity, bits) in STUBS {
                    ops.register_stub(name, arity, bits, true);
                }
                ops
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub width: u32,
    pub k0: usize,
    pub ops: OpsProfile,
    pub script: Option<PathBuf>,
    pub bound: usize,
    pub seed: u64,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { width: 32, k0: 64, ops: OpsProfile::Standard, script: None, bound: 10_000, seed: 0, format: Format::Text }
    }
}

/// Settings given on the command line; `None` leaves the lower layer in place.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub width: Option<u32>,
    pub k0: Option<usize>,
    pub ops: Option<OpsProfile>,
    pub script: Option<PathBuf>,
    pub bound: Option<usize>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| CliError::Config(format!("{key}: {e}")))
}

impl RunConfig {
    /// Applies config-file entries; relative script paths resolve against the file's directory.
    pub fn apply_file(&mut self, entries: &BTreeMap<String, String>, base: &Path) -> Result<(), CliError> {
        for (k, v) in entries {
            match k.as_str() {
                "width" => self.width = parse_value(k, v)?,
                "k0" => self.k0 = parse_value(k, v)?,
                "ops" => self.ops = parse_value(k, v)?,
                "script" => self.script = Some(base.join(v)),
                "bound" => self.bound = parse_value(k, v)?,
                "seed" => self.seed = parse_value(k, v)?,
                "format" => self.format = parse_value(k, v)?,
                _ => return Err(CliError::Config(format!("unknown config key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        self.width = o.width.unwrap_or(self.width);
        self.k0 = o.k0.unwrap_or(self.k0);
        self.ops = o.ops.unwrap_or(self.ops);
        self.script = o.script.clone().or(self.script.take());
        self.bound = o.bound.unwrap_or(self.bound);
        self.seed = o.seed.unwrap_or(self.seed);
        self.format = o.format.unwrap_or(self.format);
    }

    /// Defaults, then `config_file` if given, then `overrides`.
    pub fn load(config_file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        if let Some(path) = config_file {
            let entries = parse_config_text(&read_file(path)?)?;
            c.apply_file(&entries, path.parent().unwrap_or(Path::new(".")))?;
        }
        c.apply(overrides);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !WIDTHS.contains(&self.width) {
            return Err(CliError::Config(format!("width must be one of 4, 8, 16, 32, 64, not {}", self.width)));
        }
        if self.k0 == 0 {
            return Err(CliError::Config(String::from("k0 must be positive")));
        }
        Ok(())
    }

    pub fn params(&self) -> WordParams {
        WordParams::new(self.width)
    }

    pub fn syntax(&self) -> ImlSyntax {
        ImlSyntax { params: self.params(), k0: self.k0 }
    }

    pub fn opset(&self) -> OpSet {
        self.ops.build(&self.params())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_merge_in_order() {
        let entries = parse_config_text("# settings\nwidth = 16\nseed=4 # trailing\nscript = s.txt\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&entries, Path::new("/cfg")).unwrap();
        c.apply(&Overrides { seed: Some(9), ..Default::default() });
        assert_eq!((c.width, c.seed, c.k0), (16, 9, 64));
        assert_eq!(c.script.as_deref(), Some(Path::new("/cfg/s.txt")));
        assert!(parse_config_text("width 16").is_err());
        assert!(c.apply_file(&parse_config_text("colour = red").unwrap(), Path::new(".")).is_err());
        c.width = 12;
        assert!(c.validate().is_err());
    }
}
