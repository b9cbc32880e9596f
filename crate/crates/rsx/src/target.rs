//! Target functions: the scalar fields on the unit cube that networks are
//! synthesized against. Builtins carry known smoothness constants so bound
//! checks can be strict pass/fail; grid-table targets interpolate external
//! data and get advisory checks only.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothness certificate: |f(x) - f(y)| <= mu * |x - y|_2 ^ alpha.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderDescriptor {
    pub mu: f64,
    pub alpha: f64,
}

impl HolderDescriptor {
    pub fn new(mu: f64, alpha: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Invalid(format!("smoothness constant must be positive, got {mu}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Invalid(format!("smoothness exponent must lie in (0, 1], got {alpha}")));
        }
        Ok(Self { mu, alpha })
    }

    /// The modulus mu * r^alpha this certificate implies.
    pub fn modulus(&self, r: f64) -> f64 {
        self.mu * r.powf(self.alpha)
    }
}

#[derive(Clone)]
pub struct TargetFunction {
    name: String,
    d: usize,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub holder: Option<HolderDescriptor>,
    pub range: Option<(f64, f64)>,
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("TargetFunction")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("holder", &self.holder)
            .field("range", &self.range)
            .finish()
    }
}

impl TargetFunction {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        holder: Option<HolderDescriptor>,
        range: Option<(f64, f64)>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Invalid("target dimension must be at least 1".into()));
        }
        if let Some((lo, hi)) = range {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Invalid(format!(
                    "target range must satisfy lo < hi with finite endpoints, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self { name: name.into(), d, f: Arc::new(f), holder, range })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        (self.f)(x)
    }

    /// The target seen through the whole-cube extension's input compression:
    /// g(y) = f(clamp(scale*y - shift)). Smoothness scales by scale^alpha;
    /// the range is unchanged because the clamp keeps the image equal.
    pub fn compressed(&self, scale: f64, shift: f64) -> TargetFunction {
        let inner = self.f.clone();
        let d = self.d;
        let holder = self.holder.map(|h| HolderDescriptor {
            mu: h.mu * scale.powf(h.alpha),
            alpha: h.alpha,
        });
        TargetFunction {
            name: format!("{}~compressed", self.name),
            d,
            f: Arc::new(move |y: &[f64]| {
                let x: Vec<f64> = y.iter().map(|&v| (scale * v - shift).clamp(0.0, 1.0)).collect();
                inner(&x)
            }),
            holder,
            range: self.range,
        }
    }
}

#[derive(Deserialize)]
struct TableDoc {
    resolution: Vec<usize>,
    values: Vec<f64>,
}

fn load_table(path: &Path, d: usize) -> Result<TargetFunction> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read table file {}: {e}", path.display())))?;
    let doc: TableDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("table file {} is not valid: {e}", path.display())))?;
    if doc.resolution.len() != d {
        return Err(Error::Config(format!(
            "table is {}-dimensional but the run is configured for d={d}",
            doc.resolution.len()
        )));
    }
    let mut total = 1usize;
    for &g in &doc.resolution {
        if g < 2 {
            return Err(Error::Config("table needs at least 2 grid points per axis".into()));
        }
        total = total
            .checked_mul(g)
            .ok_or_else(|| Error::Config("table resolution overflows".into()))?;
    }
    if doc.values.len() != total {
        return Err(Error::Config(format!(
            "table declares {total} grid values but carries {}",
            doc.values.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &doc.values {
        if !v.is_finite() {
            return Err(Error::Config(format!("table contains a non-finite value {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // Multilinear interpolation never leaves the hull of the grid values, so
    // this range is exact for the interpolant, not an estimate.
    let range = if lo < hi { Some((lo, hi)) } else { Some((lo, lo + 1.0)) };
    let resolution = doc.resolution;
    let values = doc.values;
    TargetFunction::new(
        format!("table:{}", path.display()),
        d,
        move |x: &[f64]| interpolate(&resolution, &values, x),
        None,
        range,
    )
}

fn interpolate(resolution: &[usize], values: &[f64], x: &[f64]) -> f64 {
    let d = resolution.len();
    let mut base = Vec::with_capacity(d);
    let mut frac = Vec::with_capacity(d);
    for k in 0..d {
        let segs = (resolution[k] - 1) as f64;
        let t = (x[k].clamp(0.0, 1.0)) * segs;
        let i = (t.floor() as usize).min(resolution[k] - 2);
        base.push(i);
        frac.push(t - i as f64);
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = 0usize;
        for k in 0..d {
            let up = (corner >> k) & 1 == 1;
            w *= if up { frac[k] } else { 1.0 - frac[k] };
            idx = idx * resolution[k] + base[k] + usize::from(up);
        }
        acc += w * values[idx];
    }
    acc
}

/// Builds a target from its textual descriptor: one of the builtins
/// (x, norm, sq, cosmix, const:<value>) or table:<path> for external grid
/// data.
pub fn parse_target(spec: &str, d: usize) -> Result<TargetFunction> {
    if d == 0 {
        return Err(Error::Config("target dimension must be at least 1".into()));
    }
    let rd = d as f64;
    match spec {
        "x" => TargetFunction::new(
            "x",
            d,
            |x: &[f64]| x[0],
            Some(HolderDescriptor { mu: 1.0, alpha: 1.0 }),
            Some((0.0, 1.0)),
        ),
        "norm" => TargetFunction::new(
            "norm",
            d,
            move |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt() / rd.sqrt(),
            Some(HolderDescriptor { mu: 1.0 / rd.sqrt(), alpha: 1.0 }),
            Some((0.0, 1.0)),
        ),
        "sq" => TargetFunction::new(
            "sq",
            d,
            |x: &[f64]| x[0] * x[0],
            Some(HolderDescriptor { mu: 2.0, alpha: 1.0 }),
            Some((0.0, 1.0)),
        ),
        "cosmix" => TargetFunction::new(
            "cosmix",
            d,
            move |x: &[f64]| {
                let s: f64 =
                    x.iter().map(|&v| (2.0 * std::f64::consts::PI * v).cos()).sum();
                0.5 + s / (2.0 * rd)
            },
            Some(HolderDescriptor { mu: std::f64::consts::PI / rd.sqrt(), alpha: 1.0 }),
            Some((0.0, 1.0)),
        ),
        other => {
            if let Some(c) = other.strip_prefix("const:") {
                let c: f64 = c
                    .parse()
                    .map_err(|_| Error::Config(format!("const target needs a number, got {c:?}")))?;
                if !c.is_finite() {
                    return Err(Error::Config(format!("const target must be finite, got {c}")));
                }
                return TargetFunction::new(
                    format!("const:{c}"),
                    d,
                    move |_: &[f64]| c,
                    Some(HolderDescriptor { mu: 1.0, alpha: 1.0 }),
                    Some((c, c + 1.0)),
                );
            }
            if let Some(path) = other.strip_prefix("table:") {
                return load_table(Path::new(path), d);
            }
            Err(Error::Config(format!(
                "unknown target {other:?}; expected x, norm, sq, cosmix, const:<value>, or table:<path>"
            )))
        }
    }
}
