//! Cube partition geometry and the cell-to-code map.
//!
//! The unit cube splits, per axis, into N half-open cells [a/N, (a+1)/N). A
//! thin slab of width delta at the top of every cell forms the trifling
//! region; approximation guarantees hold only off that region. Each cell gets
//! a binary code of n1 = ceil(log2 N) bits per coordinate, complemented so
//! that the all-ones code (the largest selectable power of two) belongs to
//! cell 0. The code doubles as an exponent: feeding its index into a 2^x unit
//! yields a distinct power of two per cell, which is what lets one sine layer
//! address every cell's digit table entry at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported code length in bits. Indexes are manipulated as u64
/// exponents, and 2^62 still leaves headroom for the +1 offset.
pub const MAX_CODE_BITS: u64 = 62;

/// Largest supported digit count. Digit payloads are recovered through a
/// comb of spacing 2^-M, and past 52 bits a double cannot even represent the
/// comb teeth distinctly.
pub const MAX_DIGITS: u32 = 52;

/// Which norm a verification budget is stated in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PNorm {
    Finite(f64),
    Infinity,
}

impl PNorm {
    pub fn is_infinity(self) -> bool {
        matches!(self, PNorm::Infinity)
    }
}

impl Serialize for PNorm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PNorm::Finite(p) => s.serialize_f64(*p),
            PNorm::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PNorm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => {
                let p = n.as_f64().ok_or_else(|| DeError::custom("norm order out of range"))?;
                if !(p >= 1.0) {
                    return Err(DeError::custom("norm order must be at least 1"));
                }
                Ok(PNorm::Finite(p))
            }
            serde_json::Value::String(s) if s == "inf" => Ok(PNorm::Infinity),
            other => Err(DeError::custom(format!("expected a number or \"inf\", got {other}"))),
        }
    }
}

#[derive(Deserialize)]
struct HyperparamsDoc {
    d: usize,
    n: u64,
    m: u32,
    delta: f64,
    p: PNorm,
}

impl TryFrom<HyperparamsDoc> for Hyperparams {
    type Error = Error;
    fn try_from(doc: HyperparamsDoc) -> Result<Self> {
        Hyperparams::new(doc.d, doc.n, doc.m, doc.delta, doc.p)
    }
}

/// Validated construction parameters: dimension d, cells per axis N, digit
/// count M, slab width delta, and the norm the error budget refers to.
/// The derived bit count n1 = ceil(log2 N) is computed once and cached.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(try_from = "HyperparamsDoc")]
pub struct Hyperparams {
    d: usize,
    n: u64,
    m: u32,
    delta: f64,
    p: PNorm,
    #[serde(skip)]
    n1: u32,
}

impl Hyperparams {
    pub fn new(d: usize, n: u64, m: u32, delta: f64, p: PNorm) -> Result<Self> {
        if d == 0 {
            return Err(Error::Invalid("dimension must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::Invalid("cell count per axis must be at least 1".into()));
        }
        if m == 0 {
            return Err(Error::Invalid("digit count must be at least 1".into()));
        }
        if m > MAX_DIGITS {
            return Err(Error::Capability(format!(
                "digit count {m} exceeds the supported maximum {MAX_DIGITS}"
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Invalid(format!("slab width must be positive, got {delta}")));
        }
        if delta * n as f64 >= 1.0 {
            return Err(Error::Invalid(format!(
                "slab width {delta} must stay below the cell width 1/{n}"
            )));
        }
        if let PNorm::Finite(q) = p {
            if !(q >= 1.0) || !q.is_finite() {
                return Err(Error::Invalid(format!("norm order must be a finite value >= 1, got {q}")));
            }
        }
        let n1 = if n == 1 { 0 } else { (n - 1).ilog2() + 1 };
        let code_bits = n1 as u64 * d as u64;
        if code_bits > MAX_CODE_BITS {
            return Err(Error::Capability(format!(
                "code length {code_bits} bits exceeds the supported maximum {MAX_CODE_BITS}"
            )));
        }
        Ok(Self { d, n, m, delta, p, n1 })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn p(&self) -> PNorm {
        self.p
    }

    /// Bits per coordinate in the cell code.
    pub fn n1(&self) -> u32 {
        self.n1
    }

    /// Total code length across all coordinates.
    pub fn code_bits(&self) -> u32 {
        self.n1 * self.d as u32
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.d, self.n, self.m, delta, self.p)
    }
}

pub(crate) enum CoordClass {
    Cell(u64),
    Slab,
}

/// Places one coordinate either inside a cell or inside the slab at the
/// cell's top. Cells are closed intervals [a/N, (a+1)/N - delta]; slabs are
/// the open remainders, except that 1.0 itself counts as slab because it is
/// the closed endpoint of no cell. The single shared classifier is what
/// makes cell_of and in_trifling_region exhaustive and mutually exclusive
/// by construction.
pub(crate) fn classify_coord(x: f64, n: u64, delta: f64) -> Result<CoordClass> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutsideDomain { index: 0, value: x });
    }
    if x == 1.0 {
        return Ok(CoordClass::Slab);
    }
    let a = ((x * n as f64).floor() as u64).min(n - 1);
    let upper = (a + 1) as f64 / n as f64;
    if x > upper - delta {
        Ok(CoordClass::Slab)
    } else {
        Ok(CoordClass::Cell(a))
    }
}

fn check_point(x: &[f64], params: &Hyperparams) -> Result<()> {
    if x.len() != params.d {
        return Err(Error::Invalid(format!(
            "point has {} coordinates but the construction is {}-dimensional",
            x.len(),
            params.d
        )));
    }
    for (i, &xi) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::OutsideDomain { index: i, value: xi });
        }
    }
    Ok(())
}

/// True when any coordinate of x falls in a slab.
pub fn in_trifling_region(x: &[f64], params: &Hyperparams) -> Result<bool> {
    check_point(x, params)?;
    for &xi in x {
        if matches!(classify_coord(xi, params.n, params.delta)?, CoordClass::Slab) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Cell indices of x, one per coordinate. Fails with the offending
/// coordinate if x touches the trifling region.
pub fn cell_of(x: &[f64], params: &Hyperparams) -> Result<Vec<u64>> {
    check_point(x, params)?;
    let mut cell = Vec::with_capacity(params.d);
    for (i, &xi) in x.iter().enumerate() {
        match classify_coord(xi, params.n, params.delta)? {
            CoordClass::Cell(a) => cell.push(a),
            CoordClass::Slab => return Err(Error::TriflingRegion { index: i, value: xi }),
        }
    }
    Ok(cell)
}

/// Binary code of a cell: coordinate-major, n1 bits per coordinate from the
/// most significant down, each bit complemented. Cell 0 maps to all ones.
pub fn code_of_cell(cell: &[u64], params: &Hyperparams) -> Result<Vec<u8>> {
    if cell.len() != params.d {
        return Err(Error::Invalid(format!(
            "cell has {} indices but the construction is {}-dimensional",
            cell.len(),
            params.d
        )));
    }
    let n1 = params.n1;
    let mut code = Vec::with_capacity(params.code_bits() as usize);
    for &a in cell {
        if a >= params.n {
            return Err(Error::Invalid(format!(
                "cell index {a} out of range for {} cells per axis",
                params.n
            )));
        }
        for scale in 1..=n1 {
            let bit = (a >> (n1 - scale)) & 1;
            code.push(1 - bit as u8);
        }
    }
    Ok(code)
}

/// Collapses a code to the exponent it selects: one plus the code read as a
/// little-endian integer, so distinct codes always select distinct powers.
pub fn code_to_index(code: &[u8]) -> Result<u64> {
    if code.len() as u64 > MAX_CODE_BITS {
        return Err(Error::Capability(format!(
            "code length {} exceeds the supported maximum {MAX_CODE_BITS}",
            code.len()
        )));
    }
    let mut index: u64 = 1;
    for (j, &b) in code.iter().enumerate() {
        if b > 1 {
            return Err(Error::Invalid(format!("code entry {b} is not a bit")));
        }
        index += (b as u64) << j;
    }
    Ok(index)
}

/// Predicted layer count and widest layer of the two-phase base network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
}

/// Predicted architecture of the base construction for the given
/// parameters: six layers, with the widest layer holding either the
/// bit-recovery pairs or the digit-recovery pairs, whichever family is
/// larger.
pub fn base_architecture(params: &Hyperparams) -> Architecture {
    let bit_units = 2 * params.code_bits() as usize;
    let digit_units = 2 * params.m as usize;
    Architecture { depth: 6, width: bit_units.max(digit_units) }
}

/// Predicted architecture after the whole-cube extension: each dimension
/// adds two median-selection layers, and every parallel copy pays four
/// inert units of padding so the copies stay interchangeable.
pub fn extended_architecture(params: &Hyperparams) -> Architecture {
    let base = base_architecture(params);
    let copies = 3usize.pow(params.d as u32);
    Architecture { depth: base.depth + 2 * params.d, width: copies * (base.width + 4) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(d: usize, n: u64, m: u32, delta: f64) -> Hyperparams {
        Hyperparams::new(d, n, m, delta, PNorm::Infinity).unwrap()
    }

    #[test]
    fn n1_matches_ceil_log2() {
        for (n, expect) in [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (9, 4), (16, 4)] {
            assert_eq!(hp(1, n, 1, 0.01).n1(), expect, "N = {n}");
        }
    }

    #[test]
    fn classification_examples() {
        let p = hp(1, 4, 3, 0.01);
        assert!(in_trifling_region(&[0.245], &p).unwrap());
        assert!(in_trifling_region(&[1.0], &p).unwrap());
        assert!(in_trifling_region(&[0.999], &p).unwrap());
        assert_eq!(cell_of(&[0.19], &p).unwrap(), vec![0]);
        assert_eq!(cell_of(&[0.25], &p).unwrap(), vec![1]);
        assert_eq!(cell_of(&[0.0], &p).unwrap(), vec![0]);
        let p = hp(1, 2, 3, 0.05);
        assert!(in_trifling_region(&[0.49], &p).unwrap());
        assert!(!in_trifling_region(&[0.5], &p).unwrap());
    }

    #[test]
    fn cell_right_endpoint_is_closed() {
        let p = hp(1, 4, 3, 0.0625);
        assert_eq!(cell_of(&[0.1875], &p).unwrap(), vec![0]);
        assert!(in_trifling_region(&[0.1876], &p).unwrap());
        assert_eq!(cell_of(&[0.25], &p).unwrap(), vec![1]);
    }

    #[test]
    fn trifling_reports_offending_coordinate() {
        let p = hp(2, 4, 3, 0.05);
        match cell_of(&[0.1, 0.23], &p) {
            Err(Error::TriflingRegion { index, value }) => {
                assert_eq!(index, 1);
                assert_eq!(value, 0.23);
            }
            other => panic!("expected trifling-region failure, got {other:?}"),
        }
    }

    #[test]
    fn domain_violations_are_rejected() {
        let p = hp(1, 4, 3, 0.05);
        assert!(matches!(cell_of(&[-0.1], &p), Err(Error::OutsideDomain { .. })));
        assert!(matches!(in_trifling_region(&[1.5], &p), Err(Error::OutsideDomain { .. })));
        assert!(matches!(in_trifling_region(&[f64::NAN], &p), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn codes_for_four_cells() {
        let p = hp(1, 4, 3, 0.05);
        let codes: Vec<Vec<u8>> =
            (0..4).map(|a| code_of_cell(&[a], &p).unwrap()).collect();
        assert_eq!(codes, vec![vec![1, 1], vec![1, 0], vec![0, 1], vec![0, 0]]);
        let indexes: Vec<u64> =
            codes.iter().map(|c| code_to_index(c).unwrap()).collect();
        assert_eq!(indexes, vec![4, 2, 3, 1]);
    }

    #[test]
    fn codes_are_coordinate_major() {
        let p = hp(2, 2, 1, 0.05);
        assert_eq!(code_of_cell(&[0, 1], &p).unwrap(), vec![1, 0]);
        assert_eq!(code_of_cell(&[1, 0], &p).unwrap(), vec![0, 1]);
    }

    #[test]
    fn index_is_injective_at_small_sizes() {
        let p = hp(2, 4, 1, 0.01);
        let mut seen = std::collections::HashSet::new();
        for a0 in 0..4 {
            for a1 in 0..4 {
                let code = code_of_cell(&[a0, a1], &p).unwrap();
                let idx = code_to_index(&code).unwrap();
                assert!(seen.insert(idx), "index {idx} repeated at cell ({a0}, {a1})");
            }
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn architecture_formulas() {
        assert_eq!(
            base_architecture(&hp(2, 8, 5, 0.01)),
            Architecture { depth: 6, width: 12 }
        );
        assert_eq!(
            base_architecture(&hp(1, 2, 4, 0.01)),
            Architecture { depth: 6, width: 8 }
        );
        assert_eq!(
            extended_architecture(&hp(2, 8, 5, 0.01)),
            Architecture { depth: 10, width: 144 }
        );
    }

    #[test]
    fn parameter_validation() {
        assert!(Hyperparams::new(0, 4, 3, 0.01, PNorm::Infinity).is_err());
        assert!(Hyperparams::new(1, 4, 0, 0.01, PNorm::Infinity).is_err());
        assert!(Hyperparams::new(1, 4, 3, 0.3, PNorm::Infinity).is_err());
        assert!(Hyperparams::new(1, 4, 3, 0.0, PNorm::Infinity).is_err());
        assert!(matches!(
            Hyperparams::new(1, 4, 60, 0.01, PNorm::Infinity),
            Err(Error::Capability(_))
        ));
        assert!(matches!(
            Hyperparams::new(3, 1 << 21, 3, 1e-9, PNorm::Infinity),
            Err(Error::Capability(_))
        ));
        assert!(Hyperparams::new(1, 4, 3, 0.01, PNorm::Finite(0.5)).is_err());
    }

    #[test]
    fn single_cell_axis_has_empty_code() {
        let p = hp(2, 1, 3, 0.5);
        assert_eq!(p.n1(), 0);
        let code = code_of_cell(&[0, 0], &p).unwrap();
        assert!(code.is_empty());
        assert_eq!(code_to_index(&code).unwrap(), 1);
    }

    #[test]
    fn pnorm_serde_round_trip() {
        let j = serde_json::to_string(&PNorm::Finite(2.0)).unwrap();
        assert_eq!(j, "2.0");
        let back: PNorm = serde_json::from_str(&j).unwrap();
        assert_eq!(back, PNorm::Finite(2.0));
        let j = serde_json::to_string(&PNorm::Infinity).unwrap();
        assert_eq!(j, "\"inf\"");
        let back: PNorm = serde_json::from_str(&j).unwrap();
        assert!(back.is_infinity());
        assert!(serde_json::from_str::<PNorm>("0.5").is_err());
    }
}
