use serde::{Deserialize, Serialize};

use super::objective::ObjectiveRegistry;
use super::PhaseError;

/// How class counts turn into input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// One orthonormal input per sample: `b = Σ counts` rows, unit weights.
    PerSample,
    /// One orthonormal input per class, weighted by its count. Samples of a
    /// class share their input, like repeated occurrences of a token.
    PerToken,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PerSample => "per_sample",
            Self::PerToken => "per_token",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per_sample" => Ok(Self::PerSample),
            "per_token" => Ok(Self::PerToken),
            other => Err(format!(
                "unknown input mode `{other}` (expected per_sample or per_token)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub d_in: usize,
    pub d: usize,
    pub vocab: usize,
    pub class_counts: Vec<usize>,
    pub lr: f64,
    pub steps: usize,
    pub loss: String,
    pub seed: u64,
    pub init_scale: f64,
    pub input_mode: InputMode,
    /// Logit margin a class must reach to count as learned in the primacy probe.
    pub margin_threshold: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            d_in: 10,
            d: 2,
            vocab: 10,
            class_counts: vec![20, 10, 7, 5, 4, 3, 3, 2, 2, 2],
            lr: 1e-2,
            steps: 2000,
            loss: "xent_exact".into(),
            seed: 0,
            init_scale: 1e-2,
            input_mode: InputMode::PerToken,
            margin_threshold: 1.0,
        }
    }
}

impl ToyConfig {
    /// The default with every class count replaced by their rounded mean.
    pub fn uniform_control(&self) -> Self {
        let total: usize = self.class_counts.iter().sum();
        let v = self.class_counts.len().max(1);
        let each = ((total as f64 / v as f64).round() as usize).max(1);
        Self {
            class_counts: vec![each; v],
            ..self.clone()
        }
    }

    /// Feature dimension raised to the vocabulary size.
    pub fn no_bottleneck_control(&self) -> Self {
        Self {
            d: self.vocab,
            ..self.clone()
        }
    }

    pub fn mse_control(&self) -> Self {
        Self {
            loss: "mse".into(),
            ..self.clone()
        }
    }

    pub fn batch_size(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn has_bottleneck(&self) -> bool {
        self.d < self.vocab
    }

    /// Number of input rows of `S`.
    pub fn input_rows(&self) -> usize {
        match self.input_mode {
            InputMode::PerSample => self.batch_size(),
            InputMode::PerToken => self.vocab,
        }
    }

    /// Class label of each input row.
    pub fn labels(&self) -> Vec<usize> {
        match self.input_mode {
            InputMode::PerSample => self
                .class_counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
                .collect(),
            InputMode::PerToken => (0..self.vocab).collect(),
        }
    }

    /// Loss weight of each input row.
    pub fn weights(&self) -> Vec<f64> {
        match self.input_mode {
            InputMode::PerSample => vec![1.0; self.batch_size()],
            InputMode::PerToken => self.class_counts.iter().map(|&n| n as f64).collect(),
        }
    }

    pub fn validate(&self, registry: &ObjectiveRegistry) -> Result<(), PhaseError> {
        self.validate_shape()?;
        if registry.get(&self.loss).is_none() {
            return Err(PhaseError::UnknownObjective(
                self.loss.clone(),
                registry.names().join(", "),
            ));
        }
        Ok(())
    }

    /// Checks everything except the objective name.
    pub fn validate_shape(&self) -> Result<(), PhaseError> {
        let bad = |m: String| Err(PhaseError::InvalidConfig(m));
        if self.class_counts.len() != self.vocab {
            return bad(format!(
                "{} class counts for vocab {}",
                self.class_counts.len(),
                self.vocab
            ));
        }
        if self.d == 0 || self.vocab == 0 {
            return bad("d and vocab must be positive".into());
        }
        if self.batch_size() < 2 {
            return bad("need at least 2 samples".into());
        }
        if self.input_rows() > self.d_in {
            return bad(format!(
                "{} orthonormal inputs do not fit in d_in = {}",
                self.input_rows(),
                self.d_in
            ));
        }
        if self.input_rows().min(self.d) > self.vocab {
            return bad(
                "rank of the features exceeds the vocabulary; balanced init impossible".into(),
            );
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!(
                "learning rate {} must be finite and nonnegative",
                self.lr
            ));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return bad(format!(
                "init scale {} must be finite and nonnegative",
                self.init_scale
            ));
        }
        if !self.margin_threshold.is_finite() {
            return bad("margin threshold must be finite".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep their
    /// defaults, and `vocab` follows `class_counts` unless given explicitly.
    pub fn parse(text: &str) -> Result<Self, PhaseError> {
        let mut cfg = Self::default();
        let mut vocab_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| PhaseError::Parse { line: n + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("invalid number `{v}`"))
            }
            let r: Result<(), String> = (|| {
                match key {
                    "d_in" => cfg.d_in = num(value)?,
                    "d" => cfg.d = num(value)?,
                    "vocab" => {
                        cfg.vocab = num(value)?;
                        vocab_set = true;
                    }
                    "class_counts" => {
                        cfg.class_counts = value
                            .split(',')
                            .map(|s| num(s.trim()))
                            .collect::<Result<Vec<usize>, String>>()?
                    }
                    "lr" => cfg.lr = num(value)?,
                    "steps" => cfg.steps = num(value)?,
                    "loss" | "loss_kind" => cfg.loss = value.to_string(),
                    "seed" => cfg.seed = num(value)?,
                    "init_scale" => cfg.init_scale = num(value)?,
                    "input_mode" => cfg.input_mode = value.parse()?,
                    "margin_threshold" => cfg.margin_threshold = num(value)?,
                    other => return Err(format!("unknown key `{other}`")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        if !vocab_set {
            cfg.vocab = cfg.class_counts.len();
        }
        Ok(cfg)
    }

    /// Inverse of [`ToyConfig::parse`].
    pub fn to_text(&self) -> String {
        let counts: Vec<String> = self.class_counts.iter().map(|c| c.to_string()).collect();
        format!(
            "d_in = {}\nd = {}\nvocab = {}\nclass_counts = {}\nlr = {}\nsteps = {}\nloss = {}\nseed = {}\ninit_scale = {}\ninput_mode = {}\nmargin_threshold = {}\n",
            self.d_in,
            self.d,
            self.vocab,
            counts.join(","),
            self.lr,
            self.steps,
            self.loss,
            self.seed,
            self.init_scale,
            self.input_mode.as_str(),
            self.margin_threshold
        )
    }
}
