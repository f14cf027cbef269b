//! Run configuration: an optional TOML file with command-line overrides on top.

use std::path::{Path, PathBuf};

use clap::Args;
use conscal::calibrator::FeatureSource;
use conscal::evaluation::{Method, TrialConfig, DEFAULT_RATES};
use conscal::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Directory holding `queries.jsonl`, `generations.jsonl` and optional
    /// `labels.jsonl` / `truth.jsonl`.
    pub dir: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub generations: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl DataPaths {
    fn required(&self, explicit: &Option<PathBuf>, file: &str, flag: &str) -> CliResult<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.dir.as_ref().map(|d| d.join(file)))
            .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or --data)")))
    }

    /// Explicit path, or the file in `dir` if it exists there.
    fn optional(&self, explicit: &Option<PathBuf>, file: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| {
            self.dir
                .as_ref()
                .map(|d| d.join(file))
                .filter(|p| p.exists())
        })
    }

    pub fn queries(&self) -> CliResult<PathBuf> {
        self.required(&self.queries, "queries.jsonl", "queries")
    }

    pub fn generations(&self) -> CliResult<PathBuf> {
        self.required(&self.generations, "generations.jsonl", "generations")
    }

    pub fn labels(&self) -> Option<PathBuf> {
        self.optional(&self.labels, "labels.jsonl")
    }

    pub fn truth(&self) -> Option<PathBuf> {
        self.optional(&self.truth, "truth.jsonl")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectiveOptions {
    pub rates: Vec<f64>,
}

impl Default for SelectiveOptions {
    fn default() -> Self {
        Self {
            rates: DEFAULT_RATES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftOptions {
    pub train_groups: Vec<String>,
    pub test_groups: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into the synth and eval seeds when set.
    pub seed: Option<u64>,
    /// Output directory. Not echoed, so reruns into different directories
    /// produce identical files.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub data: DataPaths,
    pub synth: SynthConfig,
    pub eval: TrialConfig,
    pub selective: SelectiveOptions,
    pub shift: ShiftOptions,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: runs/<timestamp>-<config hash>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated methods, e.g. ours,token_probs,tt_sc.
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long = "cal-frac", global = true)]
    pub cal_frac: Option<f64>,
    /// response, question or external.
    #[arg(long = "feature-source", global = true)]
    pub feature_source: Option<String>,
    /// Samples per query for synth; target subsample size elsewhere.
    #[arg(long, global = true)]
    pub k: Option<usize>,

    /// Dataset directory with the standard file names.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub queries: Option<PathBuf>,
    #[arg(long, global = true)]
    pub generations: Option<PathBuf>,
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    #[arg(long, global = true)]
    pub truth: Option<PathBuf>,
    #[arg(long, global = true)]
    pub targets: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Number of synthetic queries.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Comma-separated abstention rates.
    #[arg(long, global = true, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long = "train-groups", global = true, value_delimiter = ',')]
    pub train_groups: Option<Vec<String>>,
    #[arg(long = "test-groups", global = true, value_delimiter = ',')]
    pub test_groups: Option<Vec<String>>,
}

/// Which meaning `--k` takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMeaning {
    SamplesPerQuery,
    Subsample,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn resolve(args: &CommonArgs, k_meaning: KMeaning) -> CliResult<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if args.seed.is_some() {
            cfg.seed = args.seed;
        }
        if let Some(seed) = cfg.seed {
            cfg.synth.seed = seed;
            cfg.eval.master_seed = seed;
        }
        if args.out.is_some() {
            cfg.out = args.out.clone();
        }
        if let Some(methods) = &args.methods {
            cfg.eval.methods = methods
                .iter()
                .map(|m| m.parse::<Method>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if let Some(b) = args.bins {
            cfg.eval.bins = b;
        }
        if let Some(t) = args.trials {
            cfg.eval.n_trials = t;
        }
        if let Some(f) = args.cal_frac {
            cfg.eval.cal_fraction = f;
        }
        if let Some(fs) = &args.feature_source {
            cfg.eval.feature_source = fs
                .parse::<FeatureSource>()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if let Some(k) = args.k {
            match k_meaning {
                KMeaning::SamplesPerQuery => cfg.synth.k = k,
                KMeaning::Subsample => cfg.eval.k_subsample = Some(k),
            }
        }
        if let Some(n) = args.n {
            cfg.synth.n_queries = n;
        }
        let d = &mut cfg.data;
        for (slot, flag) in [
            (&mut d.dir, &args.data),
            (&mut d.queries, &args.queries),
            (&mut d.generations, &args.generations),
            (&mut d.labels, &args.labels),
            (&mut d.truth, &args.truth),
            (&mut d.targets, &args.targets),
            (&mut d.model, &args.model),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if let Some(r) = &args.rates {
            cfg.selective.rates = r.clone();
        }
        if let Some(g) = &args.train_groups {
            cfg.shift.train_groups = g.clone();
        }
        if let Some(g) = &args.test_groups {
            cfg.shift.test_groups = g.clone();
        }
        Ok(cfg)
    }

    /// Effective configuration as echoed into outputs.
    pub fn echo(&self, command: &str) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("command".into(), command.into());
        }
        v
    }

    /// First 12 hex digits of the SHA-256 of the echoed configuration.
    pub fn hash(&self, command: &str) -> String {
        let digest = Sha256::digest(self.echo(command).to_string().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// The output directory, created if needed.
    pub fn out_dir(&self, command: &str) -> CliResult<PathBuf> {
        let dir = match &self.out {
            Some(d) => d.clone(),
            None => {
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
                PathBuf::from("runs").join(format!("{stamp}-{}", self.hash(command)))
            }
        };
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }
}
