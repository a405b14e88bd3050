use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{parse_ratios, DEFAULT_RATIOS};
use crate::disentangle::DisentangleWeights;
use crate::error::{Error, Result};
use crate::fusion::LossWeights;
use crate::imputation::ImputationConfig;

/// Which of the three components are switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no_S1")]
    NoS1,
    #[serde(rename = "no_S2")]
    NoS2,
    #[serde(rename = "no_S3")]
    NoS3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoS1, Variant::NoS2, Variant::NoS3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoS1 => "no_S1",
            Variant::NoS2 => "no_S2",
            Variant::NoS3 => "no_S3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected full, no_S1, no_S2 or no_S3)")))
    }
}

/// Everything a training run or repetition protocol needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub beta: f64,
    pub tau: f64,
    pub percentile: f64,
    pub k: usize,
    pub fragment: f64,
    pub d: usize,
    pub hidden: usize,
    pub heads: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a validation AP improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub use_s1: bool,
    pub use_s2: bool,
    pub use_s3: bool,
    /// Used by the repetition protocol only.
    pub fmr: f64,
    pub lmr: f64,
    pub ratios: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 2.0,
            lambda1: 0.1,
            lambda2: 0.01,
            gamma: 0.01,
            beta: 0.01,
            tau: 0.5,
            percentile: 90.0,
            k: 10,
            fragment: 0.1,
            d: 64,
            hidden: 128,
            heads: 4,
            lr: 1.0,
            epochs: 200,
            patience: 50,
            repetitions: 5,
            seed: 0,
            use_s1: true,
            use_s2: true,
            use_s3: true,
            fmr: 0.5,
            lmr: 0.5,
            ratios: DEFAULT_RATIOS,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn disentangle_weights(&self) -> DisentangleWeights {
        DisentangleWeights {
            gamma: self.gamma,
            beta: self.beta,
        }
    }

    pub fn imputation(&self) -> ImputationConfig {
        ImputationConfig {
            tau: self.tau,
            percentile: self.percentile,
            k: self.k,
        }
    }

    /// Switches on every component, then off the one named by `variant`.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.use_s1 = variant != Variant::NoS1;
        self.use_s2 = variant != Variant::NoS2;
        self.use_s3 = variant != Variant::NoS3;
        self
    }

    /// The single-component variant these flags describe, if any.
    pub fn variant(&self) -> Option<Variant> {
        match (self.use_s1, self.use_s2, self.use_s3) {
            (true, true, true) => Some(Variant::Full),
            (false, true, true) => Some(Variant::NoS1),
            (true, false, true) => Some(Variant::NoS2),
            (true, true, false) => Some(Variant::NoS3),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        for (name, w) in [("gamma", self.gamma), ("beta", self.beta)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a non-negative number")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau must be > 0"));
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::invalid("percentile must lie in [0, 100]"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.fragment) {
            return Err(Error::invalid("fragment must lie in [0, 1)"));
        }
        if self.d == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::invalid("d, hidden and heads must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.fmr) {
            return Err(Error::invalid("fmr must be < 1 and non-negative"));
        }
        if !(0.0..1.0).contains(&self.lmr) {
            return Err(Error::invalid("lmr must be < 1 and non-negative"));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::invalid(format!("bad value `{value}` for {key}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::invalid(format!("bad value `{value}` for {key}"))),
            }
        }
        let value = value.trim();
        match key.trim() {
            "alpha" => self.alpha = num(key, value)?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "percentile" | "p" => self.percentile = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "fragment" => self.fragment = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "repetitions" => self.repetitions = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "use_s1" | "use_S1" => self.use_s1 = flag(key, value)?,
            "use_s2" | "use_S2" => self.use_s2 = flag(key, value)?,
            "use_s3" | "use_S3" => self.use_s3 = flag(key, value)?,
            "variant" => *self = self.clone().with_variant(value.parse()?),
            "fmr" => self.fmr = num(key, value)?,
            "lmr" => self.lmr = num(key, value)?,
            "ratios" => self.ratios = parse_ratios(value)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The `key=value` form read back by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let r = self.ratios;
        format!(
            "alpha={}\nlambda1={}\nlambda2={}\ngamma={}\nbeta={}\ntau={}\npercentile={}\nk={}\nfragment={}\n\
             d={}\nhidden={}\nheads={}\nlr={}\nepochs={}\npatience={}\nrepetitions={}\nseed={}\n\
             use_s1={}\nuse_s2={}\nuse_s3={}\nfmr={}\nlmr={}\nratios={}:{}:{}\n",
            self.alpha,
            self.lambda1,
            self.lambda2,
            self.gamma,
            self.beta,
            self.tau,
            self.percentile,
            self.k,
            self.fragment,
            self.d,
            self.hidden,
            self.heads,
            self.lr,
            self.epochs,
            self.patience,
            self.repetitions,
            self.seed,
            self.use_s1,
            self.use_s2,
            self.use_s3,
            self.fmr,
            self.lmr,
            r[0],
            r[1],
            r[2],
        )
    }
}
