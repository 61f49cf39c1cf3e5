//! Run configuration files: flat `key = value` lines for the simulation
//! specification followed by one `[target]` section choosing a built-in
//! density.
//!
//! ```text
//! ndim = 4
//! chain_size = 50000
//! output_prefix = out/mvn4
//!
//! [target]
//! kind = mvn
//! mean = 0, 0, 0, 0
//! cov = identity
//! ```
//!
//! `cov` is `identity`, `diag: v1, ..., vd`, or `d²` row-major reals.
//! Mixtures take `weights = w1, ..., wk` plus `mean.<i>` and `cov.<i>` for
//! `i = 1..=k`. Rosenbrock takes an optional `scale` (default 1).
//! `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spec::{parse_reals, Provenance, SimSpec};
use crate::target::{BuiltinTarget, Gaussian, MixtureComponent};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub spec: SimSpec,
    pub target: BuiltinTarget,
    /// Short description for the report, e.g. `mvn(ndim=4)`.
    pub target_label: String,
    /// Source text as read (echoed into the report).
    pub text: String,
    pub path: PathBuf,
}

/// One `key = value` with its source line; overrides carry line 0.
#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Default)]
struct Document {
    spec: BTreeMap<String, Entry>,
    target: BTreeMap<String, Entry>,
}

pub fn load_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig> {
    let path = path.as_ref();
    // An unreadable config is the user's mistake, not a runtime failure.
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("cannot read config: {e}"),
    })?;
    parse_config(&text, path, overrides)
}

/// Parses `text`; `overrides` are `key=value` strings (`target.key=value`
/// addresses the target section) applied on top of the file.
pub fn parse_config(text: &str, path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let err = |line: usize, msg: String| Error::Config { path: path.to_path_buf(), line, msg };
    let mut doc = Document::default();
    let mut in_target = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if content != "[target]" {
                return Err(err(line, format!("unknown section {content}")));
            }
            if in_target {
                return Err(err(line, "duplicate [target] section".into()));
            }
            in_target = true;
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(err(line, format!("expected key = value, found '{content}'")));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        let section = if in_target { &mut doc.target } else { &mut doc.spec };
        if let Some(prev) = section.get(&k) {
            return Err(err(line, format!("key '{k}' already set on line {}", prev.line)));
        }
        section.insert(k, Entry { value: v, line });
    }
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(err(0, format!("override '{o}' is not key=value")));
        };
        let entry = Entry { value: v.trim().to_string(), line: 0 };
        match k.trim().strip_prefix("target.") {
            Some(tk) => doc.target.insert(tk.to_string(), entry),
            None => doc.spec.insert(k.trim().to_string(), entry),
        };
    }

    let target = build_target(&doc, path)?;
    let spec = build_spec(&doc, path, &target)?;
    Ok(RunConfig {
        target_label: label(&target),
        spec,
        target,
        text: text.to_string(),
        path: path.to_path_buf(),
    })
}

fn label(t: &BuiltinTarget) -> String {
    use crate::target::LogDensity;
    match t {
        BuiltinTarget::Mvn(_) => format!("mvn(ndim={})", t.ndim()),
        BuiltinTarget::Rosenbrock { ndim, scale } => format!("rosenbrock(ndim={ndim},scale={scale})"),
        BuiltinTarget::GaussMixture(c) => format!("gauss_mixture(ndim={},components={})", t.ndim(), c.len()),
    }
}

fn build_spec(doc: &Document, path: &Path, target: &BuiltinTarget) -> Result<SimSpec> {
    use crate::target::LogDensity;
    let err = |line: usize, msg: String| Error::Config { path: path.to_path_buf(), line, msg };
    let ndim = match doc.spec.get("ndim") {
        Some(e) => {
            let n: usize = e
                .value
                .parse()
                .map_err(|_| err(e.line, format!("cannot parse '{}' as a value for ndim", e.value)))?;
            if n != target.ndim() {
                return Err(err(e.line, format!("ndim = {n} but the target has {} dimensions", target.ndim())));
            }
            n
        }
        None => target.ndim(),
    };
    let mut spec = SimSpec::new(ndim);
    if doc.spec.contains_key("ndim") {
        spec.set_provenance("ndim", Provenance::User);
    }
    for (k, e) in doc.spec.iter().filter(|(k, _)| k.as_str() != "ndim") {
        spec.set_field(k, &e.value).map_err(|m| err(e.line, m))?;
    }
    spec.validate().map_err(|e| {
        let msg = match e {
            Error::Spec(m) => m,
            other => other.to_string(),
        };
        // messages lead with the offending field
        let line = doc
            .spec
            .iter()
            .find(|(k, _)| msg.starts_with(k.as_str()))
            .map_or(0, |(_, e)| e.line);
        err(line, msg)
    })?;
    Ok(spec)
}

fn build_target(doc: &Document, path: &Path) -> Result<BuiltinTarget> {
    let err = |line: usize, msg: String| Error::Config { path: path.to_path_buf(), line, msg };
    let t = &doc.target;
    let Some(kind) = t.get("kind") else {
        return Err(err(0, "missing [target] section with a 'kind' key".into()));
    };
    let get = |k: &str| t.get(k);
    let reals = |e: &Entry| parse_reals(&e.value).map_err(|m| err(e.line, m));
    let spec_ndim = || -> Result<Option<usize>> {
        doc.spec
            .get("ndim")
            .map(|e| e.value.parse().map_err(|_| err(e.line, format!("cannot parse '{}' as ndim", e.value))))
            .transpose()
    };
    let allowed: &[&str] = match kind.value.as_str() {
        "mvn" => &["kind", "mean", "cov"],
        "rosenbrock" => &["kind", "scale"],
        "gauss_mixture" => &["kind", "weights"],
        other => return Err(err(kind.line, format!("unknown target kind '{other}'"))),
    };
    for (k, e) in t {
        let indexed = kind.value == "gauss_mixture"
            && (k.strip_prefix("mean.").or_else(|| k.strip_prefix("cov."))).is_some_and(|i| i.parse::<usize>().is_ok());
        if !allowed.contains(&k.as_str()) && !indexed {
            return Err(err(e.line, format!("unknown key '{k}' for target kind {}", kind.value)));
        }
    }
    let gaussian = |mean_e: Option<&Entry>, cov_e: Option<&Entry>, d: Option<usize>, what: &str| -> Result<Gaussian> {
        let mean = match mean_e {
            Some(e) => reals(e)?,
            None => vec![0.0; d.ok_or_else(|| err(kind.line, format!("{what}: need 'mean' or ndim")))?],
        };
        let n = mean.len();
        let cov = match cov_e {
            None => DMatrix::identity(n, n),
            Some(e) => parse_cov(&e.value, n).map_err(|m| err(e.line, m))?,
        };
        let line = mean_e.or(cov_e).map_or(kind.line, |e| e.line);
        Gaussian::new(mean, cov).map_err(|e| err(line, format!("{what}: {e}")))
    };
    match kind.value.as_str() {
        "mvn" => Ok(BuiltinTarget::Mvn(gaussian(get("mean"), get("cov"), spec_ndim()?, "mvn")?)),
        "rosenbrock" => {
            let d = spec_ndim()?.ok_or_else(|| err(kind.line, "rosenbrock needs ndim in the main section".into()))?;
            let scale = match get("scale") {
                None => 1.0,
                Some(e) => e.value.parse().map_err(|_| err(e.line, format!("cannot parse scale '{}'", e.value)))?,
            };
            BuiltinTarget::rosenbrock(d, scale).map_err(|e| err(kind.line, e.to_string()))
        }
        _ => {
            let w_e = get("weights").ok_or_else(|| err(kind.line, "gauss_mixture needs 'weights'".into()))?;
            let weights = reals(w_e)?;
            let d = spec_ndim()?;
            let comps = weights
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let what = format!("component {}", i + 1);
                    let g = gaussian(get(&format!("mean.{}", i + 1)), get(&format!("cov.{}", i + 1)), d, &what)?;
                    Ok(MixtureComponent { weight: *w, gaussian: g })
                })
                .collect::<Result<Vec<_>>>()?;
            for k in t.keys() {
                if let Some(i) = k.split_once('.').and_then(|(_, i)| i.parse::<usize>().ok()) {
                    if i == 0 || i > weights.len() {
                        return Err(err(t[k].line, format!("'{k}' refers to a component beyond the {} weights", weights.len())));
                    }
                }
            }
            BuiltinTarget::mixture(comps).map_err(|e| err(w_e.line, e.to_string()))
        }
    }
}

fn parse_cov(value: &str, n: usize) -> std::result::Result<DMatrix<f64>, String> {
    let v = value.trim();
    if v == "identity" {
        return Ok(DMatrix::identity(n, n));
    }
    if let Some(rest) = v.strip_prefix("diag:") {
        let d = parse_reals(rest)?;
        if d.len() != n {
            return Err(format!("diag covariance has {} entries, expected {n}", d.len()));
        }
        return Ok(DMatrix::from_diagonal(&DVector::from_vec(d)));
    }
    let m = parse_reals(v)?;
    if m.len() != n * n {
        return Err(format!("covariance has {} entries, expected {}", m.len(), n * n));
    }
    Ok(DMatrix::from_row_slice(n, n, &m))
}
