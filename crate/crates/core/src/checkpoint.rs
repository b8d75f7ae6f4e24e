//! Flat key-value checkpoints.
//!
//! ```text
//! seqvi-checkpoint 1
//! method=l-gm-sfsvi
//! task=3
//! arch=2,16,16,3
//! kind=mixture
//! lambda=0.1,-0.3,0.2
//! mu.0=…
//! rho.0=…
//! ```
//!
//! A point estimate stores `theta`, a Gaussian `mu.0`/`rho.0`, a mixture
//! `lambda` plus `mu.κ`/`rho.κ` for every component. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::distributions::{DiagGaussian, GaussMixture};
use crate::error::{Error, Result};
use crate::methods::Method;
use crate::nn::{FcnnSpec, Posterior};

pub const HEADER: &str = "seqvi-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    /// Tasks trained when the checkpoint was taken.
    pub task: usize,
    pub spec: FcnnSpec,
    pub posterior: Posterior,
}

fn join(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 20);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{x:?}").expect("writing to a string");
    }
    s
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let widths: Vec<String> = self.spec.widths().iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "method={}", self.method);
        let _ = writeln!(out, "task={}", self.task);
        let _ = writeln!(out, "arch={}", widths.join(","));
        match &self.posterior {
            Posterior::Point(t) => {
                let _ = writeln!(out, "kind=point");
                let _ = writeln!(out, "theta={}", join(t));
            }
            Posterior::Gaussian(g) => {
                let _ = writeln!(out, "kind=gaussian");
                let _ = writeln!(out, "mu.0={}", join(g.mu()));
                let _ = writeln!(out, "rho.0={}", join(g.rho()));
            }
            Posterior::Mixture(m) => {
                let _ = writeln!(out, "kind=mixture");
                let _ = writeln!(out, "lambda={}", join(m.lambda()));
                for (i, c) in m.components().iter().enumerate() {
                    let _ = writeln!(out, "mu.{i}={}", join(c.mu()));
                    let _ = writeln!(out, "rho.{i}={}", join(c.rho()));
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        parse_checkpoint(&std::fs::read_to_string(path)?)
    }
}

struct Fields<'a> {
    map: BTreeMap<&'a str, (usize, &'a str)>,
}

impl<'a> Fields<'a> {
    fn take(&mut self, key: &str) -> Result<(usize, &'a str)> {
        self.map
            .remove(key)
            .ok_or_else(|| Error::parse(0, format!("missing key {key:?}")))
    }

    fn floats(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let (line, raw) = self.take(key)?;
        let v = raw
            .split(',')
            .map(|f| {
                let x: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad number {f:?} in {key}")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::parse(line, format!("non-finite value in {key}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if v.len() != len {
            return Err(Error::parse(line, format!("{key} has {} values, expected {len}", v.len())));
        }
        Ok(v)
    }
}

/// Parse the text form written by [`Checkpoint::to_text`].
pub fn parse_checkpoint(raw: &str) -> Result<Checkpoint> {
    let mut lines = raw.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(Error::parse(1, format!("expected header {HEADER:?}"))),
    }
    let mut map = BTreeMap::new();
    for (line, text) in lines {
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::parse(line, "expected key=value"))?;
        if map.insert(k.trim(), (line, v.trim())).is_some() {
            return Err(Error::parse(line, format!("duplicate key {:?}", k.trim())));
        }
    }
    let mut f = Fields { map };

    let (line, m) = f.take("method")?;
    let method = Method::from_name(m).ok_or_else(|| Error::parse(line, format!("unknown method {m:?}")))?;
    let (line, t) = f.take("task")?;
    let task = t
        .parse()
        .map_err(|_| Error::parse(line, format!("bad task index {t:?}")))?;
    let (line, a) = f.take("arch")?;
    let widths = a
        .split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::parse(line, format!("bad architecture {a:?}")))?;
    if widths.len() > 64 || widths.iter().any(|&w| w > 1 << 16) {
        return Err(Error::parse(line, "architecture too large"));
    }
    let spec = FcnnSpec::from_widths(&widths).map_err(|e| Error::parse(line, e.to_string()))?;
    let n = spec.num_params();
    if n > 1 << 24 {
        return Err(Error::parse(line, "architecture too large"));
    }

    let (line, kind) = f.take("kind")?;
    let gaussian = |f: &mut Fields, i: usize| -> Result<DiagGaussian> {
        let mu = f.floats(&format!("mu.{i}"), n)?;
        let rho = f.floats(&format!("rho.{i}"), n)?;
        DiagGaussian::new(mu, rho)
    };
    let posterior = match kind {
        "point" => Posterior::Point(f.floats("theta", n)?),
        "gaussian" => Posterior::Gaussian(gaussian(&mut f, 0)?),
        "mixture" => {
            let (_, raw) = *f.map.get("lambda").ok_or_else(|| Error::parse(0, "missing key \"lambda\""))?;
            let k = raw.split(',').count();
            let lambda = f.floats("lambda", k)?;
            let comps = (0..k).map(|i| gaussian(&mut f, i)).collect::<Result<_>>()?;
            Posterior::Mixture(GaussMixture::new(lambda, comps)?)
        }
        other => return Err(Error::parse(line, format!("unknown kind {other:?}"))),
    };
    if let Some((k, (line, _))) = f.map.into_iter().next() {
        return Err(Error::parse(line, format!("unexpected key {k:?}")));
    }
    Ok(Checkpoint {
        method,
        task,
        spec,
        posterior,
    })
}
