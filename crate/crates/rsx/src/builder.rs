//! Constructive synthesis of the approximation networks.
//!
//! Everything here emits explicit weight matrices; nothing is trained. The
//! base construction has six layers: per-coordinate sines whose signs spell
//! out a binary code for the grid cell, ramp pairs that harden those signs
//! into bits, a 2^x unit that turns the bit vector into a single integer
//! exponent, one sine per output digit against a long dyadic payload, ramp
//! pairs that harden the digit sines, and an affine readout that rebuilds
//! the function value from its digits. The digit payloads are engineered
//! so that shifting them by the cell exponent exposes digit after digit in
//! the sign of the sine; the complement is stored so a recovered 1 means
//! the digit is 1.
//!
//! The whole-cube extension wraps the base construction in 3^d shifted
//! copies and reduces them with a median gadget, so that a point falling
//! into an excluded slab of one copy is outvoted by copies that see it
//! cleanly.

use sha2::{Digest, Sha256};
use std::f64::consts::PI;

use crate::dyadic::{encode_bits, threshold_from_bits, DyadicRational};
use crate::error::{Error, Result};
use crate::grid::{code_of_cell, code_to_index, Hyperparams, PNorm, MAX_DIGITS};
use crate::net::{
    Activation, ExtendedLayout, Layer, Network, PayloadDoc, StructureTags, SymbolicLayout,
};
use crate::target::TargetFunction;

/// Largest code width 2^n1d the digit tables will materialize. Beyond this
/// the table alone would hold hundreds of millions of bits per digit.
pub const MAX_TABLE_BITS: u32 = 24;

/// Two-layer gadget clipping a*x + 1/2 into [0, 1], where a = 1/(2t).
/// Saturates at 0 for x <= -t and at 1 for x >= t.
pub fn build_clipped_ramp(threshold: f64) -> Result<Network> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::Invalid(format!(
            "ramp threshold must be positive and finite, got {threshold}"
        )));
    }
    let a = 1.0 / (2.0 * threshold);
    let relu = Layer::new(Activation::Relu, 2, 1, vec![a, a], vec![0.5, -0.5])?;
    let read = Layer::new(Activation::Identity, 1, 2, vec![1.0, -1.0], vec![0.0])?;
    Network::new(1, vec![relu, read], StructureTags::Plain)
}

/// The scalar tile indicator at the coarsest scale: a sine with a small
/// phase lead, hardened by a clipped ramp at the sine of the slab width.
/// It holds the value 1 on even tiles and 0 on odd tiles, with the
/// transitions confined to width-2*delta bands left of the tile boundaries.
pub fn build_phi12(params: &Hyperparams) -> Result<Network> {
    if params.n1() == 0 {
        return Err(Error::Invalid(
            "the tile indicator needs at least two cells per axis".into(),
        ));
    }
    let w = PI * params.n() as f64 * 2f64.powi(-(params.n1() as i32));
    let a = 0.5 / params.delta().sin();
    let sine = Layer::new(Activation::Sine, 1, 1, vec![w], vec![params.delta()])?;
    let relu = Layer::new(Activation::Relu, 2, 1, vec![a, a], vec![0.5, -0.5])?;
    let read = Layer::new(Activation::Identity, 1, 2, vec![1.0, -1.0], vec![0.0])?;
    Network::new(1, vec![sine, relu, read], StructureTags::Plain)
}

fn scale_weight(params: &Hyperparams, n: u32) -> f64 {
    PI * params.n() as f64 * 2f64.powi(n as i32 - params.n1() as i32)
}

/// Depth-3 network mapping x to the binary code of its cell: one sine per
/// coordinate and scale, hardened into bits by ramp pairs. Outside the
/// excluded slabs every output is exactly 0 or 1 up to float dust.
pub fn build_phi1(params: &Hyperparams) -> Result<Network> {
    if params.n1() == 0 {
        return Err(Error::Invalid(
            "cell coding needs at least two cells per axis".into(),
        ));
    }
    let d = params.d();
    let n1 = params.n1() as usize;
    let n1d = params.code_bits() as usize;
    let a = 0.5 / params.delta().sin();

    let mut sines = Layer::zeros(Activation::Sine, n1d, d);
    for i in 0..d {
        for n in 1..=n1 {
            let r = i * n1 + (n - 1);
            sines.set_weight(r, i, scale_weight(params, n as u32));
            sines.set_bias(r, params.delta());
        }
    }
    let mut ramps = Layer::zeros(Activation::Relu, 2 * n1d, n1d);
    for r in 0..n1d {
        ramps.set_weight(2 * r, r, a);
        ramps.set_bias(2 * r, 0.5);
        ramps.set_weight(2 * r + 1, r, a);
        ramps.set_bias(2 * r + 1, -0.5);
    }
    let mut read = Layer::zeros(Activation::Identity, n1d, 2 * n1d);
    for r in 0..n1d {
        read.set_weight(r, 2 * r, 1.0);
        read.set_weight(r, 2 * r + 1, -1.0);
    }
    Network::new(d, vec![sines, ramps, read], StructureTags::Plain)
}

/// Single 2^x layer turning a binary code vector into the power of two
/// whose exponent is the code's little-endian integer value plus one.
pub fn build_phi2(code_bits: u32) -> Result<Network> {
    if code_bits == 0 {
        return Err(Error::Invalid("code must carry at least one bit".into()));
    }
    if code_bits as u64 > crate::grid::MAX_CODE_BITS {
        return Err(Error::Capability(format!(
            "a {code_bits}-bit code overflows the exponent arithmetic"
        )));
    }
    let weights: Vec<f64> = (0..code_bits).map(|j| 2f64.powi(j as i32)).collect();
    let pow = Layer::new(Activation::Pow2, 1, code_bits as usize, weights, vec![1.0])?;
    Network::new(code_bits as usize, vec![pow], StructureTags::Plain)
}

/// Three-layer gadget g with g(2^i) = bits[i-1] for i = 1..=k: a sine
/// against the dyadic encoding of the complemented bit string, hardened by
/// a ramp at threshold sin(2^-k). The complement makes the recovered sign
/// positive exactly when the requested bit is 1.
pub fn build_bit_extractor(bits: &[u8]) -> Result<Network> {
    let k = bits.len();
    if k == 0 {
        return Err(Error::Invalid("cannot extract bits from an empty string".into()));
    }
    if k > (1usize << MAX_TABLE_BITS) {
        return Err(Error::Capability(format!(
            "a {k}-bit payload is beyond desk scale"
        )));
    }
    let complement: Vec<u8> = bits
        .iter()
        .map(|&b| match b {
            0 => Ok(1),
            1 => Ok(0),
            other => Err(Error::Invalid(format!("bit strings are 0/1, got {other}"))),
        })
        .collect::<Result<_>>()?;
    let payload = encode_bits(&complement)?;
    let tau = threshold_from_bits(k as u64);
    let a = 0.5 / tau;

    let w = 2.0 * PI * payload.to_f64();
    let sine = Layer::new(Activation::Sine, 1, 1, vec![w], vec![0.0])?;
    let relu = Layer::new(Activation::Relu, 2, 1, vec![a, a], vec![0.5, -0.5])?;
    let read = Layer::new(Activation::Identity, 1, 2, vec![1.0, -1.0], vec![0.0])?;
    Network::new(
        1,
        vec![sine, relu, read],
        StructureTags::BitExtractor {
            payload: PayloadDoc::from_dyadic(&payload),
            threshold_bits: k as u64,
        },
    )
}

/// The sampled digit table: for each cell code index, the first m binary
/// digits of the normalized target value at the cell's anchor corner.
/// Stored as packed bit columns, one per digit position, because the
/// payload encoding consumes whole columns.
#[derive(Clone, Debug)]
pub struct DigitTable {
    code_space: u64,
    m: u32,
    columns: Vec<Vec<u64>>,
    lo: f64,
    hi: f64,
    estimated: bool,
}

impl DigitTable {
    /// Number of code indexes, i.e. 2^n1d. Indexes for cell codes start at 1.
    pub fn code_space(&self) -> u64 {
        self.code_space
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn range_estimated(&self) -> bool {
        self.estimated
    }

    /// Digit j (1-based) of the row at the given code index (1-based).
    pub fn digit(&self, index: u64, j: u32) -> u8 {
        assert!(index >= 1 && index <= self.code_space, "code index {index} out of range");
        assert!(j >= 1 && j <= self.m, "digit position {j} out of range");
        let pos = index - 1;
        let word = self.columns[(j - 1) as usize][(pos / 64) as usize];
        ((word >> (pos % 64)) & 1) as u8
    }

    fn set_digit(&mut self, index: u64, j: u32) {
        let pos = index - 1;
        self.columns[(j - 1) as usize][(pos / 64) as usize] |= 1 << (pos % 64);
    }

    /// Dyadic payload for digit position j: the encoding of the column read
    /// in index order, complemented so the sine comes out positive exactly
    /// on the indexes whose digit is 1.
    pub fn column_payload(&self, j: u32) -> Result<DyadicRational> {
        let mut bits = Vec::with_capacity(self.code_space as usize);
        for index in 1..=self.code_space {
            bits.push(1 - self.digit(index, j));
        }
        encode_bits(&bits)
    }

    /// Digest of the table contents, range included: two tables agree on
    /// the checksum exactly when they would produce identical networks.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.code_space.to_le_bytes());
        h.update(self.m.to_le_bytes());
        h.update(self.lo.to_bits().to_le_bytes());
        h.update(self.hi.to_bits().to_le_bytes());
        h.update([self.estimated as u8]);
        for col in &self.columns {
            for word in col {
                h.update(word.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Walk all d-dimensional indexes with each coordinate below its bound,
/// first coordinate fastest. Calls back with the current index vector.
fn for_each_index(bounds: &[u64], mut visit: impl FnMut(&[u64]) -> Result<()>) -> Result<()> {
    let d = bounds.len();
    let mut idx = vec![0u64; d];
    loop {
        visit(&idx)?;
        let mut i = 0;
        loop {
            if i == d {
                return Ok(());
            }
            idx[i] += 1;
            if idx[i] < bounds[i] {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Resolve the output range to normalize against: the target's declared
/// range if present, otherwise a padded sampled estimate.
fn resolve_range(f: &TargetFunction, params: &Hyperparams) -> Result<(f64, f64, bool)> {
    if let Some((lo, hi)) = f.range {
        return Ok((lo, hi, false));
    }
    estimate_range(f, params)
}

/// Sample the target on a grid four times finer than the cells, then pad:
/// by the smoothness modulus at the grid pitch when one is declared, else
/// by sqrt(d) times the largest step between grid neighbors. An estimated
/// range is advisory; values outside it saturate the digit table.
pub fn estimate_range(f: &TargetFunction, params: &Hyperparams) -> Result<(f64, f64, bool)> {
    let d = params.d();
    let g = 4 * params.n() + 1;
    let total = (g as f64).powi(d as i32);
    if total > 4e6 {
        return Err(Error::Capability(format!(
            "range estimation over {g}^{d} grid points is beyond desk scale; declare the \
             target's range instead"
        )));
    }
    let step = 1.0 / (g - 1) as f64;
    let mut values = Vec::with_capacity(total as usize);
    let mut x = vec![0.0; d];
    for_each_index(&vec![g; d], |idx| {
        for (xi, &k) in x.iter_mut().zip(idx) {
            *xi = k as f64 * step;
        }
        let v = f.eval(&x);
        if !v.is_finite() {
            return Err(Error::Invalid(format!("target returned {v} at {x:?}")));
        }
        values.push(v);
        Ok(())
    })?;

    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = if let Some(h) = f.holder {
        h.modulus((d as f64).sqrt() * step)
    } else {
        // Largest jump between neighbors along any axis, scaled up by the
        // number of axes a point can differ in.
        let gu = g as usize;
        let mut max_jump = 0.0f64;
        let mut stride = 1usize;
        for _axis in 0..d {
            for (i, &v) in values.iter().enumerate() {
                let col = (i / stride) % gu;
                if col + 1 < gu {
                    max_jump = max_jump.max((values[i + stride] - v).abs());
                }
            }
            stride *= gu;
        }
        (d as f64).sqrt() * max_jump
    };
    let (lo, hi) = (lo - pad, hi + pad);
    if !(lo < hi) {
        return Err(Error::Invalid(
            "sampled range is degenerate; declare the target's range instead".into(),
        ));
    }
    Ok((lo, hi, true))
}

/// Sample the first m binary digits of the normalized target at every cell
/// anchor. Values are clamped into [0, 1 - 2^-(m+1)] before digit
/// extraction so that all-ones rows still reconstruct strictly below the
/// top of the range. Code indexes with no corresponding cell (when the
/// cell count is not a power of two) keep all-zero digits.
pub fn sample_digits(f: &TargetFunction, params: &Hyperparams) -> Result<DigitTable> {
    if f.d() != params.d() {
        return Err(Error::Invalid(format!(
            "target is {}-dimensional, parameters expect {}",
            f.d(),
            params.d()
        )));
    }
    if params.code_bits() > MAX_TABLE_BITS {
        return Err(Error::Capability(format!(
            "a digit table over 2^{} cells is beyond desk scale",
            params.code_bits()
        )));
    }
    let (lo, hi, estimated) = resolve_range(f, params)?;
    let span = hi - lo;
    let m = params.m();
    let code_space = 1u64 << params.code_bits();
    let words = ((code_space + 63) / 64) as usize;
    let mut table = DigitTable {
        code_space,
        m,
        columns: vec![vec![0u64; words]; m as usize],
        lo,
        hi,
        estimated,
    };

    let nf = params.n() as f64;
    let max_scaled = 1.0 - 2f64.powi(-(m as i32 + 1));
    let mut x = vec![0.0; params.d()];
    for_each_index(&vec![params.n(); params.d()], |cell| {
        for (xi, &a) in x.iter_mut().zip(cell) {
            *xi = a as f64 / nf;
        }
        let v = f.eval(&x);
        if !v.is_finite() {
            return Err(Error::Invalid(format!("target returned {v} at cell anchor {x:?}")));
        }
        let scaled = ((v - lo) / span).clamp(0.0, max_scaled);
        let digits = (scaled * 2f64.powi(m as i32)).floor() as u64;
        let index = code_to_index(&code_of_cell(cell, params)?)?;
        for j in 1..=m {
            if (digits >> (m - j)) & 1 == 1 {
                table.set_digit(index, j);
            }
        }
        Ok(())
    })?;
    Ok(table)
}

/// The six base layers plus the layout record that lets the exact path
/// re-run the middle symbolically. Shared by the plain assembly and the
/// whole-cube extension (which replicates these layers per copy).
fn base_layers(table: &DigitTable, params: &Hyperparams) -> Result<(Vec<Layer>, SymbolicLayout)> {
    let d = params.d();
    let n1d = params.code_bits() as usize;
    let m = params.m();
    if table.code_space() != 1u64 << n1d {
        return Err(Error::Invalid(format!(
            "digit table covers {} code indexes, parameters expect {}",
            table.code_space(),
            1u64 << n1d
        )));
    }
    if table.m() != m {
        return Err(Error::Invalid(format!(
            "digit table carries {} digits, parameters expect {m}",
            table.m()
        )));
    }

    let (sines, ramps, pad2) = if n1d > 0 {
        let coding = build_phi1(params)?;
        let mut it = coding.layers.into_iter();
        (it.next().unwrap(), it.next().unwrap(), 0)
    } else {
        // A single cell per axis: nothing to code. Two inert units keep the
        // layer chain well-formed, and the 2^x bias alone sets the exponent.
        (
            Layer::zeros(Activation::Sine, 1, d),
            Layer::zeros(Activation::Relu, 2, 1),
            2,
        )
    };
    let block2 = 2 * n1d + pad2;

    let mut pow = Layer::zeros(Activation::Pow2, 1, block2);
    pow.set_bias(0, 1.0);
    for r in 0..n1d {
        let w = 2f64.powi(r as i32);
        pow.set_weight(0, 2 * r, w);
        pow.set_weight(0, 2 * r + 1, -w);
    }

    let mut payload_docs = Vec::with_capacity(m as usize);
    let mut digit_sines = Layer::zeros(Activation::Sine, m as usize, 1);
    for j in 1..=m {
        let payload = table.column_payload(j)?;
        digit_sines.set_weight((j - 1) as usize, 0, 2.0 * PI * payload.to_f64());
        payload_docs.push(PayloadDoc::from_dyadic(&payload));
    }

    let threshold_bits = table.code_space();
    let a = 0.5 / threshold_from_bits(threshold_bits);
    let mut digit_ramps = Layer::zeros(Activation::Relu, 2 * m as usize, m as usize);
    for j in 0..m as usize {
        digit_ramps.set_weight(2 * j, j, a);
        digit_ramps.set_bias(2 * j, 0.5);
        digit_ramps.set_weight(2 * j + 1, j, a);
        digit_ramps.set_bias(2 * j + 1, -0.5);
    }

    let span = table.hi() - table.lo();
    let mut read = Layer::zeros(Activation::Identity, 1, 2 * m as usize);
    read.set_bias(0, table.lo());
    for j in 1..=m as usize {
        let w = span * 2f64.powi(-(j as i32));
        read.set_weight(0, 2 * (j - 1), w);
        read.set_weight(0, 2 * (j - 1) + 1, -w);
    }

    let layout = SymbolicLayout {
        pow2_layer: 2,
        n1d: n1d as u32,
        m,
        copies: 1,
        pad2,
        pad5: 0,
        threshold_bits,
        payloads: payload_docs,
        range_lo: table.lo(),
        range_hi: table.hi(),
        range_estimated: table.range_estimated(),
        digit_checksum: table.checksum(),
    };
    Ok((vec![sines, ramps, pow, digit_sines, digit_ramps, read], layout))
}

/// Build the six-layer approximation network for a target. The result
/// carries the full symbolic layout, so both evaluation paths apply.
pub fn assemble(f: &TargetFunction, params: &Hyperparams) -> Result<Network> {
    let table = sample_digits(f, params)?;
    let (layers, layout) = base_layers(&table, params)?;
    Network::new(params.d(), layers, StructureTags::Assembled(layout))
}

/// The digit-table checksum a fresh synthesis run would produce for these
/// inputs, without building a network. Comparing it against the checksum
/// stored in a weight file detects target data that drifted since the file
/// was written. The extended construction quantizes a compressed copy of
/// the target on a narrower slab, so it checks differently.
pub fn expected_digit_checksum(
    f: &TargetFunction,
    params: &Hyperparams,
    extended: bool,
) -> Result<String> {
    if extended {
        let scale = 1.0 + 2.0 * params.delta();
        let base_params = params.with_delta(params.delta() / scale)?;
        let g = f.compressed(scale, params.delta());
        Ok(sample_digits(&g, &base_params)?.checksum())
    } else {
        Ok(sample_digits(f, params)?.checksum())
    }
}

/// How an accuracy budget is meant to be met.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetMode {
    /// Pointwise accuracy away from the excluded slabs.
    OffRegion,
    /// Accuracy in an Lp norm over the whole cube, slabs included.
    Lp,
    /// Uniform accuracy over the whole cube, via the median extension.
    Linf,
}

/// An accuracy target for a function of known smoothness: |f(x) - f(y)|
/// is assumed bounded by mu * |x - y|^alpha.
#[derive(Clone, Copy, Debug)]
pub struct HolderBudget {
    pub mu: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub mode: BudgetMode,
}

impl HolderBudget {
    pub fn new(mu: f64, alpha: f64, epsilon: f64, mode: BudgetMode) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Invalid(format!("smoothness constant must be positive, got {mu}")));
        }
        if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Invalid(format!(
                "smoothness exponent must lie in (0, 1], got {alpha}"
            )));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Invalid(format!("accuracy budget must be positive, got {epsilon}")));
        }
        Ok(Self { mu, alpha, epsilon, mode })
    }
}

#[derive(Clone, Debug)]
pub struct SolvedHyperparams {
    pub params: Hyperparams,
    /// True when the budget is looser than the function's own variation,
    /// so the formulas bottom out at their minimum values.
    pub degenerate: bool,
    pub notes: Vec<String>,
}

/// Solve for the grid resolution, digit count, and slab width that meet a
/// budget. Optional overrides: a norm order for the Lp mode (required
/// there, rejected for Linf) and an explicit slab width.
pub fn solve_hyperparams(
    budget: &HolderBudget,
    d: usize,
    p: Option<PNorm>,
    delta: Option<f64>,
) -> Result<SolvedHyperparams> {
    if d == 0 {
        return Err(Error::Invalid("dimension must be at least 1".into()));
    }
    let rd = d as f64;
    let dim_factor = rd.powf(budget.alpha * 0.5);
    let sqrt_d = rd.sqrt();
    let mut notes = Vec::new();
    let degenerate = budget.epsilon >= budget.mu * dim_factor;
    if degenerate {
        notes.push("budget exceeds the target's own variation; sizes bottom out".to_string());
    }

    let (m_real, n_real) = match budget.mode {
        BudgetMode::OffRegion => (
            (budget.mu * dim_factor / budget.epsilon).log2().ceil() + 1.0,
            (sqrt_d * (2.0 * budget.mu / budget.epsilon).powf(1.0 / budget.alpha)).ceil(),
        ),
        BudgetMode::Lp | BudgetMode::Linf => (
            (3.0 * budget.mu * dim_factor / budget.epsilon).log2().ceil(),
            (sqrt_d * (3.0 * budget.mu / budget.epsilon).powf(1.0 / budget.alpha)).ceil(),
        ),
    };
    let m_real = m_real.max(1.0);
    if m_real > MAX_DIGITS as f64 {
        return Err(Error::Capability(format!(
            "the budget asks for {m_real} digits; doubles carry at most {MAX_DIGITS}"
        )));
    }
    let m = m_real as u32;
    let n = n_real.max(1.0) as u64;
    let nf = n as f64;

    let pv = match (budget.mode, p) {
        (BudgetMode::Lp, Some(PNorm::Finite(v))) => Some(v),
        (BudgetMode::Lp, _) => {
            return Err(Error::Config("an lp budget needs a finite norm order".into()))
        }
        (BudgetMode::Linf, Some(PNorm::Finite(_))) => {
            return Err(Error::Config(
                "a uniform budget takes no finite norm order".into(),
            ))
        }
        _ => None,
    };

    let slab = match delta {
        Some(v) => {
            if !(v.is_finite() && v > 0.0 && v * nf < 1.0) {
                return Err(Error::Invalid(format!(
                    "supplied slab width {v} does not fit {n} cells per axis"
                )));
            }
            v
        }
        None => match budget.mode {
            BudgetMode::OffRegion => {
                notes.push("slab width defaulted to a third of the cell pitch".to_string());
                1.0 / (3.0 * nf)
            }
            BudgetMode::Lp => {
                let q = (budget.epsilon / (3.0 * budget.mu * dim_factor)).powf(pv.unwrap());
                if q >= 1.0 {
                    notes.push(
                        "slab mass constraint is slack; width capped at a third of the cell pitch"
                            .to_string(),
                    );
                    1.0 / (3.0 * nf)
                } else {
                    // (1 - (1 - q)^(1/d)) / n, in underflow-safe form.
                    let v = -f64::exp_m1(f64::ln_1p(-q) / rd) / nf;
                    notes.push(format!("slab width solved from the slab mass constraint: {v:e}"));
                    v
                }
            }
            BudgetMode::Linf => {
                let uncapped = (budget.epsilon / (3.0 * budget.mu * rd)).powf(1.0 / budget.alpha);
                let cap = 1.0 / (3.0 * nf);
                if uncapped > cap {
                    notes.push(
                        "slab width capped at a third of the cell pitch for the median extension"
                            .to_string(),
                    );
                }
                uncapped.min(cap)
            }
        },
    };
    if !(slab.is_finite() && slab > 0.0) {
        return Err(Error::Infeasible(format!(
            "solved slab width is {slab}; the slab mass constraint binds too hard at this \
             budget, supply a width explicitly"
        )));
    }

    let params = Hyperparams::new(d, n, m, slab, pv.map(PNorm::Finite).unwrap_or(PNorm::Infinity))?;
    Ok(SolvedHyperparams { params, degenerate, notes })
}

/// An affine functional over some layer's outputs: coefficient per unit
/// plus a constant. The median stages manipulate these instead of emitting
/// identity layers, so folding them into the next relu keeps depth flat.
#[derive(Clone, Debug)]
struct LinComb {
    coeffs: Vec<f64>,
    bias: f64,
}

impl LinComb {
    fn sub(&self, other: &LinComb) -> LinComb {
        LinComb {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
            bias: self.bias - other.bias,
        }
    }

    fn shift(mut self, c: f64) -> LinComb {
        self.bias += c;
        self
    }
}

fn add3(a: &LinComb, b: &LinComb, c: &LinComb, scale_c: f64, bias: f64) -> LinComb {
    LinComb {
        coeffs: a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .zip(&c.coeffs)
            .map(|((x, y), z)| x + y + scale_c * z)
            .collect(),
        bias: a.bias + b.bias + scale_c * c.bias + bias,
    }
}

/// One median-of-three reduction stage. Takes 3g affine values over the
/// previous layer and returns two relu layers plus g affine values over
/// the second, each the median of a consecutive triple. The shift b must
/// dominate every value the functionals can take, so the relu arguments
/// that carry plain sums stay positive and pass through unchanged.
fn median_stage(values: &[LinComb], b: f64) -> Result<(Layer, Layer, Vec<LinComb>)> {
    assert!(values.len() % 3 == 0 && !values.is_empty());
    let groups = values.len() / 3;
    let prev_width = values[0].coeffs.len();

    let mut h1_rows: Vec<LinComb> = Vec::with_capacity(5 * groups);
    for g in 0..groups {
        let (a, m, c) = (&values[3 * g], &values[3 * g + 1], &values[3 * g + 2]);
        h1_rows.push(a.sub(m));
        h1_rows.push(m.sub(a));
        h1_rows.push(m.sub(c).shift(b));
        h1_rows.push(c.sub(m).shift(b));
        h1_rows.push(add3(a, m, c, -1.0, b));
    }
    let mut h1 = Layer::zeros(Activation::Relu, 5 * groups, prev_width);
    for (r, row) in h1_rows.iter().enumerate() {
        for (c, &w) in row.coeffs.iter().enumerate() {
            h1.set_weight(r, c, w);
        }
        h1.set_bias(r, row.bias);
    }

    let mut h2 = Layer::zeros(Activation::Relu, 3 * groups, 5 * groups);
    for g in 0..groups {
        h2.set_weight(3 * g, 5 * g, 1.0);
        h2.set_weight(3 * g, 5 * g + 2, 1.0);
        h2.set_bias(3 * g, -b);
        h2.set_weight(3 * g + 1, 5 * g + 1, 1.0);
        h2.set_weight(3 * g + 1, 5 * g + 3, 1.0);
        h2.set_bias(3 * g + 1, -b);
        h2.set_weight(3 * g + 2, 5 * g + 4, 1.0);
    }

    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut coeffs = vec![0.0; 3 * groups];
        coeffs[3 * g] = -1.0;
        coeffs[3 * g + 1] = 1.0;
        coeffs[3 * g + 2] = 1.0;
        out.push(LinComb { coeffs, bias: -b });
    }
    Ok((h1, h2, out))
}

/// Extend the base construction to hold its accuracy on the whole cube:
/// 3^d copies of the compressed base network, shifted against each other
/// by the slab width per axis, reduced coordinate by coordinate with
/// median-of-three gadgets. Any point lands cleanly in at least two of
/// three shifts per axis, so the median ignores the slab-corrupted copy.
pub fn extend_linf(f: &TargetFunction, params: &Hyperparams) -> Result<Network> {
    let d = params.d();
    if d > 4 {
        return Err(Error::Capability(format!(
            "median selection replicates the network 3^d times; capped at d = 4, got {d}"
        )));
    }
    if params.n() < 2 {
        return Err(Error::Invalid(
            "the whole-cube extension needs at least two cells per axis".into(),
        ));
    }
    let delta = params.delta();
    let nf = params.n() as f64;
    if delta > 1.0 / (3.0 * nf) {
        return Err(Error::Invalid(format!(
            "the whole-cube extension needs a slab width of at most a third of the cell \
             pitch 1/{}, got {delta}",
            params.n()
        )));
    }

    let scale = 1.0 + 2.0 * delta;
    let base_delta = delta / scale;
    let base_params = params.with_delta(base_delta)?;
    let g = f.compressed(scale, delta);
    let table = sample_digits(&g, &base_params)?;
    let (base, base_layout) = base_layers(&table, &base_params)?;

    let copies = 3usize.pow(d as u32);
    let n1d = base_layout.n1d as usize;
    let n1 = base_params.n1() as usize;
    let m = base_layout.m as usize;
    let pad2 = 4usize;
    let pad5 = 4usize;
    let block2 = 2 * n1d + pad2;
    let block5 = 2 * m + pad5;

    let shift_of = |c: usize, axis: usize| (c / 3usize.pow(axis as u32)) % 3;

    let mut sines = Layer::zeros(Activation::Sine, copies * n1d, d);
    for c in 0..copies {
        for i in 0..d {
            let t = shift_of(c, i) as f64;
            for n in 1..=n1 {
                let w = base[0].weight(i * n1 + (n - 1), i);
                let r = c * n1d + i * n1 + (n - 1);
                sines.set_weight(r, i, w / scale);
                sines.set_bias(r, w * t * base_delta + base_delta);
            }
        }
    }

    let a2 = base[1].weight(0, 0);
    let mut ramps = Layer::zeros(Activation::Relu, copies * block2, copies * n1d);
    for c in 0..copies {
        for r in 0..n1d {
            let row = c * block2 + 2 * r;
            ramps.set_weight(row, c * n1d + r, a2);
            ramps.set_bias(row, 0.5);
            ramps.set_weight(row + 1, c * n1d + r, a2);
            ramps.set_bias(row + 1, -0.5);
        }
    }

    let mut pow = Layer::zeros(Activation::Pow2, copies, copies * block2);
    for c in 0..copies {
        pow.set_bias(c, 1.0);
        for r in 0..n1d {
            let w = 2f64.powi(r as i32);
            pow.set_weight(c, c * block2 + 2 * r, w);
            pow.set_weight(c, c * block2 + 2 * r + 1, -w);
        }
    }

    let mut digit_sines = Layer::zeros(Activation::Sine, copies * m, copies);
    for c in 0..copies {
        for j in 0..m {
            digit_sines.set_weight(c * m + j, c, base[3].weight(j, 0));
        }
    }

    let a5 = base[4].weight(0, 0);
    let mut digit_ramps = Layer::zeros(Activation::Relu, copies * block5, copies * m);
    for c in 0..copies {
        for j in 0..m {
            let row = c * block5 + 2 * j;
            digit_ramps.set_weight(row, c * m + j, a5);
            digit_ramps.set_bias(row, 0.5);
            digit_ramps.set_weight(row + 1, c * m + j, a5);
            digit_ramps.set_bias(row + 1, -0.5);
        }
    }

    let (lo, hi) = (base_layout.range_lo, base_layout.range_hi);
    let mut values: Vec<LinComb> = Vec::with_capacity(copies);
    for c in 0..copies {
        let mut coeffs = vec![0.0; copies * block5];
        for j in 1..=m {
            coeffs[c * block5 + 2 * (j - 1)] = base[5].weight(0, 2 * (j - 1));
            coeffs[c * block5 + 2 * (j - 1) + 1] = base[5].weight(0, 2 * (j - 1) + 1);
        }
        values.push(LinComb { coeffs, bias: lo });
    }

    let dominator = 1.0 + 2.0 * (lo.abs() + hi.abs());
    let mut layers = vec![sines, ramps, pow, digit_sines, digit_ramps];
    for _axis in 0..d {
        let (h1, h2, next) = median_stage(&values, dominator)?;
        layers.push(h1);
        layers.push(h2);
        values = next;
    }
    debug_assert_eq!(values.len(), 1);
    let last = values.pop().unwrap();
    let mut read = Layer::zeros(Activation::Identity, 1, last.coeffs.len());
    for (c, &w) in last.coeffs.iter().enumerate() {
        read.set_weight(0, c, w);
    }
    read.set_bias(0, last.bias);
    layers.push(read);

    let layout = SymbolicLayout {
        pow2_layer: 2,
        n1d: n1d as u32,
        m: m as u32,
        copies,
        pad2,
        pad5,
        threshold_bits: base_layout.threshold_bits,
        payloads: base_layout.payloads,
        range_lo: lo,
        range_hi: hi,
        range_estimated: base_layout.range_estimated,
        digit_checksum: base_layout.digit_checksum,
    };
    Network::new(
        d,
        layers,
        StructureTags::Extended(ExtendedLayout {
            layout,
            scale,
            base_delta,
            shift_step: delta,
        }),
    )
}
