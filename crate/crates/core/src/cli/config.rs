//! Experiment configuration: flat `key = value` text with dotted sections.
//!
//! ```text
//! experiment.kind = tail
//! law.kind = lattice3
//! grid.n = 64,256,1024
//! grid.y = 0,1,2
//! run.reps = 10000
//! run.prune = beam:100000,window:30
//! run.seed = 1
//! out.path = tail.csv
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::format::real;
use crate::laws::OffspringLaw;
use crate::simulate::PruneRule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    Calibrate,
    Simulate,
    SpineCheck,
    Walks,
    Tail,
    Frontier,
    Counts,
    Genealogy,
    Concentration,
    Oracle,
    Accept,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::Calibrate,
        ExperimentKind::Simulate,
        ExperimentKind::SpineCheck,
        ExperimentKind::Walks,
        ExperimentKind::Tail,
        ExperimentKind::Frontier,
        ExperimentKind::Counts,
        ExperimentKind::Genealogy,
        ExperimentKind::Concentration,
        ExperimentKind::Oracle,
        ExperimentKind::Accept,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Calibrate => "calibrate",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::SpineCheck => "spine-check",
            ExperimentKind::Walks => "walks",
            ExperimentKind::Tail => "tail",
            ExperimentKind::Frontier => "frontier",
            ExperimentKind::Counts => "counts",
            ExperimentKind::Genealogy => "genealogy",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::Accept => "accept",
        }
    }

    /// Whether the experiment needs a `law.*` block.
    pub fn needs_law(self) -> bool {
        !matches!(self, ExperimentKind::Calibrate | ExperimentKind::Accept)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config {
                key: "experiment.kind".into(),
                message: format!("unknown experiment `{s}`"),
            })
    }
}

/// `law.kind` plus its `law.params.*` entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawBlock {
    pub kind: String,
    pub params: BTreeMap<String, String>,
}

impl LawBlock {
    pub fn new(kind: &str) -> Self {
        LawBlock {
            kind: kind.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn build(&self) -> Result<OffspringLaw> {
        OffspringLaw::from_config(&self.kind, &self.params)
    }

    pub fn of_law(law: &OffspringLaw) -> Self {
        let mut block = LawBlock::new("");
        for (k, v) in law.config_fragment() {
            match k.strip_prefix("law.params.") {
                Some(p) => {
                    block.params.insert(p.into(), v);
                }
                None => block.kind = v,
            }
        }
        block
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub law: Option<LawBlock>,
    pub n: Vec<usize>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<usize>,
    pub h: Option<f64>,
    pub reps: u64,
    pub prune: PruneRule,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    /// Kind-specific settings (`option.*`).
    pub options: BTreeMap<String, String>,
    /// Tolerance overrides (`tol.*`).
    pub tol: BTreeMap<String, f64>,
}

pub const DEFAULT_REPS: u64 = 1000;

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            law: None,
            n: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
            r: Vec::new(),
            h: None,
            reps: DEFAULT_REPS,
            prune: PruneRule::none(),
            seed: 0,
            workers: None,
            out: None,
            options: BTreeMap::new(),
            tol: BTreeMap::new(),
        }
    }

    pub fn with_law(mut self, law: LawBlock) -> Self {
        self.law = Some(law);
        self
    }

    pub fn option(&self, key: &str) -> Option<&str> {
        self.options.get(key).map(String::as_str)
    }

    pub fn option_f64(&self, key: &str) -> Result<Option<f64>> {
        self.option(key)
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Config {
                    key: format!("option.{key}"),
                    message: format!("`{s}` is not a number"),
                })
            })
            .transpose()
    }

    pub fn option_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.option(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(Error::Config {
                key: format!("option.{key}"),
                message: format!("`{s}` is not true or false"),
            }),
        }
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tol.get(key).copied().unwrap_or(default)
    }

    /// All entries as `(key, value)` lines in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![("experiment.kind".to_string(), self.kind.to_string())];
        if let Some(law) = &self.law {
            out.push(("law.kind".into(), law.kind.clone()));
            for (k, v) in &law.params {
                out.push((format!("law.params.{k}"), v.clone()));
            }
        }
        let list = |v: Vec<String>| v.join(",");
        if !self.n.is_empty() {
            out.push(("grid.n".into(), list(self.n.iter().map(|x| x.to_string()).collect())));
        }
        if !self.y.is_empty() {
            out.push(("grid.y".into(), list(self.y.iter().map(|&x| real(x)).collect())));
        }
        if !self.z.is_empty() {
            out.push(("grid.z".into(), list(self.z.iter().map(|&x| real(x)).collect())));
        }
        if !self.r.is_empty() {
            out.push(("grid.r".into(), list(self.r.iter().map(|x| x.to_string()).collect())));
        }
        if let Some(h) = self.h {
            out.push(("grid.h".into(), real(h)));
        }
        out.push(("run.reps".into(), self.reps.to_string()));
        out.push(("run.prune".into(), self.prune.to_string()));
        out.push(("run.seed".into(), self.seed.to_string()));
        if let Some(w) = self.workers {
            out.push(("run.workers".into(), w.to_string()));
        }
        if let Some(p) = &self.out {
            out.push(("out.path".into(), p.display().to_string()));
        }
        for (k, v) in &self.options {
            out.push((format!("option.{k}"), v.clone()));
        }
        for (k, v) in &self.tol {
            out.push((format!("tol.{k}"), real(*v)));
        }
        out
    }

    /// Entries that determine the results: everything except the worker
    /// count and output location.
    pub fn canonical_entries(&self) -> Vec<(String, String)> {
        self.entries()
            .into_iter()
            .filter(|(k, _)| k != "run.workers" && !k.starts_with("out."))
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: format!("line {}", i + 1),
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config {
                    key: k,
                    message: "duplicate key".into(),
                });
            }
        }
        Self::from_map(map)
    }

    pub fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let kind: ExperimentKind = map
            .remove("experiment.kind")
            .ok_or_else(|| Error::Config {
                key: "experiment.kind".into(),
                message: "missing".into(),
            })?
            .parse()?;
        let mut c = ExperimentConfig::new(kind);
        let law_kind = map.remove("law.kind");
        let mut params = BTreeMap::new();
        let mut rest = BTreeMap::new();
        for (k, v) in map {
            if let Some(p) = k.strip_prefix("law.params.") {
                params.insert(p.to_string(), v);
            } else if let Some(o) = k.strip_prefix("option.") {
                c.options.insert(o.to_string(), v);
            } else if let Some(t) = k.strip_prefix("tol.") {
                c.tol.insert(t.to_string(), parse_one(&k, &v)?);
            } else {
                rest.insert(k, v);
            }
        }
        match law_kind {
            Some(kind) => c.law = Some(LawBlock { kind, params }),
            None if !params.is_empty() => {
                return Err(Error::Config {
                    key: "law.kind".into(),
                    message: "law parameters given without a law kind".into(),
                })
            }
            None => {}
        }
        for (k, v) in rest {
            match k.as_str() {
                "grid.n" => c.n = parse_list(&k, &v)?,
                "grid.y" => c.y = parse_list(&k, &v)?,
                "grid.z" => c.z = parse_list(&k, &v)?,
                "grid.r" => c.r = parse_list(&k, &v)?,
                "grid.h" => c.h = Some(parse_one(&k, &v)?),
                "run.reps" => c.reps = parse_one(&k, &v)?,
                "run.seed" => c.seed = parse_one(&k, &v)?,
                "run.workers" => c.workers = Some(parse_one(&k, &v)?),
                "run.prune" => {
                    c.prune = PruneRule::parse(&v).map_err(|e| Error::Config {
                        key: k.clone(),
                        message: e.to_string(),
                    })?
                }
                "out.path" => c.out = Some(PathBuf::from(v)),
                _ => {
                    return Err(Error::Config {
                        key: k,
                        message: "unknown key".into(),
                    })
                }
            }
        }
        Ok(c)
    }

    /// Check the config against the preconditions of its experiment before
    /// any work starts.
    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, message: String| Error::Config {
            key: key.into(),
            message,
        };
        if self.kind.needs_law() {
            let law = self
                .law
                .as_ref()
                .ok_or_else(|| cfg("law.kind", "missing law block".into()))?;
            law.build()?;
        }
        if self.reps == 0 {
            return Err(cfg("run.reps", "must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(cfg("run.workers", "must be positive".into()));
        }
        self.prune
            .validate()
            .map_err(|e| cfg("run.prune", e.to_string()))?;
        if let Some(y) = self.y.iter().find(|y| !(**y >= 0.0) || !y.is_finite()) {
            return Err(cfg("grid.y", format!("{y} must be finite and non-negative")));
        }
        if let Some(z) = self.z.iter().find(|z| !(**z >= 0.0)) {
            return Err(cfg("grid.z", format!("{z} must be non-negative")));
        }
        if let Some(h) = self.h {
            if !(h >= 0.0) || !h.is_finite() {
                return Err(cfg("grid.h", format!("{h} must be finite and non-negative")));
            }
        }
        if let Some((k, v)) = self.tol.iter().find(|(_, v)| !v.is_finite() || **v <= 0.0) {
            return Err(cfg(&format!("tol.{k}"), format!("{v} must be finite and positive")));
        }
        let needs_n = !matches!(
            self.kind,
            ExperimentKind::Calibrate | ExperimentKind::Accept
        );
        if needs_n && self.n.is_empty() {
            return Err(cfg("grid.n", "missing".into()));
        }
        match self.kind {
            ExperimentKind::Tail | ExperimentKind::Frontier | ExperimentKind::Concentration | ExperimentKind::Genealogy
                if self.n.contains(&0) => {
                    return Err(cfg("grid.n", "n must be at least 1".into()));
                }
            _ => {}
        }
        match self.kind {
            ExperimentKind::Tail => {
                for &n in &self.n {
                    if let Some(y) = self.y.iter().find(|&&y| y > (n as f64).sqrt()) {
                        return Err(cfg("grid.y", format!("y = {y} exceeds n^(1/2) at n = {n}")));
                    }
                }
            }
            ExperimentKind::Genealogy => {
                if self.r.contains(&0) {
                    return Err(cfg("grid.r", "R must be at least 1".into()));
                }
                if let Some(e) = self.option("engine") {
                    if !matches!(e, "reduced" | "direct") {
                        return Err(cfg("option.engine", format!("`{e}` (reduced | direct)")));
                    }
                }
            }
            ExperimentKind::Frontier => {
                if let Some(m) = self.option_f64("margin")? {
                    if !(m > 0.0) {
                        return Err(cfg("option.margin", format!("{m} must be positive")));
                    }
                }
            }
            ExperimentKind::Oracle => {
                if self.n.iter().any(|&n| n > 3) {
                    return Err(cfg("grid.n", "exact enumeration is limited to n <= 3".into()));
                }
                super::run::parse_functional(self.option("functional").unwrap_or("wn"))?;
            }
            ExperimentKind::Walks => {
                super::run::parse_walk_event(self.option("event").unwrap_or("ballot"))?;
            }
            ExperimentKind::Calibrate
                if self.option("values").is_none() => {
                    return Err(cfg("option.values", "missing".into()));
                }
            _ => {}
        }
        if let Some(s) = self.option("xi_sign") {
            parse_xi_sign(s)?;
        }
        Ok(())
    }
}

pub(crate) fn parse_xi_sign(s: &str) -> Result<crate::laws::XiSign> {
    match s {
        "child-minus-parent" => Ok(crate::laws::XiSign::ChildMinusParent),
        "parent-minus-child" => Ok(crate::laws::XiSign::ParentMinusChild),
        _ => Err(Error::Config {
            key: "option.xi_sign".into(),
            message: format!("`{s}` (child-minus-parent | parent-minus-child)"),
        }),
    }
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("cannot parse `{v}`"),
    })
}

pub(crate) fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| parse_one(key, t)).collect()
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
