//! Run configuration: INI-style `key = value` file, overridden by flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use narb_core::seed::sha256_hex;

/// Every accepted key with its default and help text. Keys marked `false`
/// in the last column do not enter the config hash.
pub const KEYS: &[(&str, &str, &str, bool)] = &[
    ("task", "rhetorical", "narrative | rhetorical | event | entity | coref | quote", true),
    ("source", "", "ingest source: arn | asp | litbank", true),
    ("arn_narratives", "", "ARN narratives JSON-lines", true),
    ("arn_scores", "", "acceptability CSV (id,score)", true),
    ("arn_relations", "", "near/far relation JSON-lines", true),
    ("threshold", "0.9", "acceptability threshold", true),
    ("asp_sermons", "", "directory of <sermon_id>.txt", true),
    ("asp_annotations", "", "branch-set JSON array", true),
    ("litbank_dir", "", "LitBank root directory", true),
    ("corpus", "", "normalized corpus JSON-lines (from ingest)", true),
    ("pools", "", "pool JSON-lines (from pools); built from corpus when empty", true),
    ("store", "", "NARB1 activation store", true),
    ("model", "", "model id for result rows; defaults to the store's", true),
    ("variant", "base", "base | instruct", true),
    ("scorer", "distance", "cosine | distance | linear | mlp | full", true),
    ("layer", "all_layers", "layer index or all_layers", true),
    ("head", "mlp", "span classifier head: logreg | mlp", true),
    ("x_pos", "4", "narrative positives per pool", true),
    ("y_neg", "16", "narrative negatives per pool", true),
    ("n_neg", "18", "rhetorical negatives per pool", true),
    ("anchors", "all", "rhetorical anchors: all | first", true),
    ("folds", "5", "cross-validation folds", true),
    ("seed", "0", "master seed", true),
    ("learning_rate", "0.001", "Adam learning rate", true),
    ("epochs", "50", "maximum epochs", true),
    ("batch_size", "32", "anchors (or instances) per batch", true),
    ("patience", "5", "early-stopping patience", true),
    ("hidden", "256", "hidden width of mlp/full heads", true),
    ("proj", "256", "span classifier projection width", true),
    ("in_batch_negatives", "true", "add other anchors' positives as negatives", true),
    ("provider", "http", "oracle | constant | replay | http", true),
    ("constant_score", "5", "score returned by the constant provider", true),
    ("endpoint", "https://api.openai.com/v1", "chat-completions base URL", true),
    ("api_key_env", "OPENAI_API_KEY", "environment variable holding the key", true),
    ("max_retries", "3", "retries per example", true),
    ("concurrency", "4", "requests in flight", true),
    ("timeout", "120", "request timeout in seconds", true),
    ("backoff_ms", "2000", "first retry delay", true),
    ("transcript", "", "transcript JSON-lines to replay", true),
    ("annotations", "", "annotation JSON-lines for baselines", true),
    ("n_pairs", "1000", "baseline pairs to sample", true),
    ("methods", "all", "comma-separated baseline methods", true),
    ("probe_dir", "", "train run directory whose probes eval re-scores", true),
    ("probe_csv", "", "probe results CSV for report", true),
    ("prompt_csv", "", "prompt results CSV for report", true),
    ("out", "runs", "output root; the run directory is <out>/<config hash>", false),
    ("jobs", "0", "worker threads for fold-level parallelism (0 = all cores)", false),
];

const PATH_KEYS: &[&str] = &[
    "arn_narratives",
    "arn_scores",
    "arn_relations",
    "asp_sermons",
    "asp_annotations",
    "litbank_dir",
    "corpus",
    "pools",
    "store",
    "transcript",
    "annotations",
    "probe_dir",
    "probe_csv",
    "prompt_csv",
];

/// A config problem tied to one field; reported with exit status 1.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error in `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn is_key(k: &str) -> bool {
    KEYS.iter().any(|(name, ..)| *name == k)
}

impl RunConfig {
    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, d, ..)| (k.to_string(), d.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
            for (k, v) in parse_ini(&text).map_err(|(line, msg)| config_err("config", format!("line {line}: {msg}")))? {
                if !is_key(&k) {
                    return Err(config_err(&k, "unknown key"));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in overrides {
            if !is_key(k) {
                return Err(config_err(k, "unknown key"));
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(RunConfig { values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.str(key)
            .parse()
            .map_err(|e| config_err(key, format!("cannot parse `{}`: {e}", self.str(key))))
    }

    /// Path value, or `None` when unset. Existence is checked by `check_paths`.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.str(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        self.path(key).ok_or_else(|| config_err(key, "required for this command"))
    }

    pub fn check_paths(&self) -> Result<(), ConfigError> {
        for &k in PATH_KEYS {
            if let Some(p) = self.path(k) {
                if !p.exists() {
                    return Err(config_err(k, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Type and range checks for every key, so a bad value fails before
    /// any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for k in ["seed", "max_retries", "timeout", "backoff_ms", "jobs", "n_pairs"] {
            self.parse::<u64>(k)?;
        }
        for (k, min) in [
            ("x_pos", 1),
            ("y_neg", 1),
            ("n_neg", 1),
            ("folds", 2),
            ("epochs", 1),
            ("batch_size", 2),
            ("patience", 1),
            ("hidden", 1),
            ("proj", 1),
            ("concurrency", 1),
        ] {
            if self.parse::<usize>(k)? < min {
                return Err(config_err(k, format!("must be >= {min}")));
            }
        }
        let lr: f64 = self.parse("learning_rate")?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(config_err("learning_rate", "must be a positive number"));
        }
        let t: f64 = self.parse("threshold")?;
        if !(0.0..=1.0).contains(&t) {
            return Err(config_err("threshold", "must lie in [0, 1]"));
        }
        self.parse::<f64>("constant_score")?;
        self.parse::<bool>("in_batch_negatives")?;
        self.parse::<narb_core::probes::ScorerKind>("scorer")?;
        self.parse::<narb_core::probes::LayerSelector>("layer")?;
        self.parse::<narb_core::probes::HeadKind>("head")?;
        for (k, allowed) in [
            ("task", &["narrative", "rhetorical", "event", "entity", "coref", "quote"][..]),
            ("source", &["", "arn", "asp", "litbank"]),
            ("variant", &["base", "instruct"]),
            ("anchors", &["all", "first"]),
            ("provider", &["oracle", "constant", "replay", "http"]),
        ] {
            if !allowed.contains(&self.str(k)) {
                return Err(config_err(k, format!("`{}` is not one of {}", self.str(k), allowed.join(", "))));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` text of every key, in declaration order.
    pub fn to_ini(&self) -> String {
        KEYS.iter().map(|(k, ..)| format!("{k} = {}\n", self.values[*k])).collect()
    }

    /// First 12 hex digits of SHA-256 over the hashed keys.
    pub fn hash(&self) -> String {
        let canon: String = KEYS
            .iter()
            .filter(|(.., hashed)| *hashed)
            .map(|(k, ..)| format!("{k}={}\n", self.values[*k]))
            .collect();
        sha256_hex(canon.as_bytes())[..12].to_string()
    }

    /// Crate version plus a digest of every input file the run names.
    pub fn content_version(&self) -> std::io::Result<String> {
        let mut buf = Vec::new();
        for &k in PATH_KEYS {
            if let Some(p) = self.path(k) {
                buf.extend_from_slice(k.as_bytes());
                digest_path(&p, &mut buf)?;
            }
        }
        Ok(format!("{}+{}", env!("CARGO_PKG_VERSION"), &sha256_hex(&buf)[..12]))
    }
}

/// Appends file contents (directories: sorted relative names and contents).
fn digest_path(path: &Path, buf: &mut Vec<u8>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            buf.extend_from_slice(e.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
            digest_path(&e, buf)?;
        }
    } else {
        buf.extend_from_slice(sha256_hex(&std::fs::read(path)?).as_bytes());
    }
    Ok(())
}

/// `key = value` lines; `#`/`;` comments and `[section]` headers are
/// skipped. Keys may use dashes or underscores.
pub fn parse_ini(text: &str) -> Result<Vec<(String, String)>, (usize, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| (i + 1, format!("expected `key = value`, got `{line}`")))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}
