//! Network containers and the structural metadata that travels with them.
//!
//! Weights are plain doubles in row-major matrices. What makes these
//! networks unusual is the metadata: the exact evaluation path cannot be
//! reconstructed from doubles alone, because the digit payloads behind the
//! sine weights carry up to millions of bits and the saturation threshold
//! can be far below the smallest positive double. The structure tags keep
//! the payloads as hex-encoded dyadics and the threshold as a bit count so
//! an evaluator can rebuild the exact pipeline from the weight file alone.

use num_bigint::BigUint;
use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicRational;
use crate::error::{Error, Result};
use crate::grid::Architecture;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sine,
    Pow2,
    Identity,
}

impl Activation {
    /// Note the relu: max(z, 0) collapses NaN to 0, so a blown-up float
    /// evaluation degrades to a bounded value instead of poisoning the
    /// output. The overflow flag on the evaluation result is the signal
    /// that this happened.
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sine => z.sin(),
            Activation::Pow2 => z.exp2(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. The relu derivative
    /// at exactly zero is taken as zero.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine => z.cos(),
            Activation::Pow2 => std::f64::consts::LN_2 * z.exp2(),
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: activation(W x + b) with W stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub activation: Activation,
    pub rows: usize,
    pub cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(
        activation: Activation,
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Structure(format!(
                "layer must have positive dimensions, got {rows} x {cols}"
            )));
        }
        if weights.len() != rows * cols {
            return Err(Error::Structure(format!(
                "layer declared {rows} x {cols} but carries {} weights",
                weights.len()
            )));
        }
        if bias.len() != rows {
            return Err(Error::Structure(format!(
                "layer has {rows} rows but {} bias entries",
                bias.len()
            )));
        }
        for &w in weights.iter().chain(bias.iter()) {
            if w.is_nan() {
                return Err(Error::Structure("layer contains a NaN weight".into()));
            }
        }
        Ok(Self { activation, rows, cols, weights, bias })
    }

    pub fn zeros(activation: Activation, rows: usize, cols: usize) -> Self {
        Self { activation, rows, cols, weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }

    pub fn set_weight(&mut self, r: usize, c: usize, w: f64) {
        self.weights[r * self.cols + c] = w;
    }

    pub fn bias(&self, r: usize) -> f64 {
        self.bias[r]
    }

    pub fn set_bias(&mut self, r: usize, b: f64) {
        self.bias[r] = b;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.bias
    }

    /// Pre-activations W x + b, without the activation applied.
    pub fn affine(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.cols);
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
        out
    }
}

/// An exact dyadic constant in transport form: hex numerator over
/// 2^frac_bits. Doubles cannot carry these, so they ride along as strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadDoc {
    pub num_hex: String,
    pub frac_bits: u64,
}

impl PayloadDoc {
    pub fn from_dyadic(d: &DyadicRational) -> Self {
        Self { num_hex: d.numerator().to_str_radix(16), frac_bits: d.frac_bits() }
    }

    pub fn to_dyadic(&self) -> Result<DyadicRational> {
        let num = BigUint::from_str_radix(&self.num_hex, 16)
            .map_err(|e| Error::Structure(format!("payload is not valid hex: {e}")))?;
        DyadicRational::new(num, self.frac_bits)
    }
}

/// Everything the exact evaluation path needs to re-run the middle of the
/// network symbolically: where the 2^x layer sits, how the bit and digit
/// blocks are laid out per parallel copy, the digit payloads themselves,
/// and the output range used for reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicLayout {
    /// Index of the 2^x layer in the layer list.
    pub pow2_layer: usize,
    /// Code bits recovered per copy (zero when a single cell covers each axis).
    pub n1d: u32,
    /// Digits recovered per copy.
    pub m: u32,
    /// Parallel copies of the base construction.
    pub copies: usize,
    /// Inert units appended per copy after the bit-recovery pairs.
    pub pad2: usize,
    /// Inert units appended per copy after the digit-recovery pairs.
    pub pad5: usize,
    /// Saturation threshold, as a bit count k meaning sin(2^-k).
    pub threshold_bits: u64,
    /// One payload per digit position, each 2^n1d bits plus guard.
    pub payloads: Vec<PayloadDoc>,
    pub range_lo: f64,
    pub range_hi: f64,
    /// Whether the range came from sampling rather than a declared bound.
    pub range_estimated: bool,
    /// Digest of the digit table, for detecting drift against the target.
    pub digit_checksum: String,
}

impl SymbolicLayout {
    /// Bit-recovery block width per copy in the layer after the sines.
    pub fn block2(&self) -> usize {
        2 * self.n1d as usize + self.pad2
    }

    /// Digit-recovery block width per copy.
    pub fn block5(&self) -> usize {
        2 * self.m as usize + self.pad5
    }
}

/// Extra fields the whole-cube extension records beyond the base layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedLayout {
    #[serde(flatten)]
    pub layout: SymbolicLayout,
    /// Input compression factor 1 + 2*shift_step.
    pub scale: f64,
    /// Slab width of the compressed base construction.
    pub base_delta: f64,
    /// Shift between neighboring copies, in original input coordinates.
    pub shift_step: f64,
}

/// Structural classification of a weight file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureTags {
    /// No structure claimed; only the float path applies.
    Plain,
    /// Three-layer gadget that reads bit i of a payload from the input 2^i.
    BitExtractor { payload: PayloadDoc, threshold_bits: u64 },
    /// The six-layer base construction.
    Assembled(SymbolicLayout),
    /// Base construction replicated, shifted, and median-reduced.
    Extended(ExtendedLayout),
}

impl StructureTags {
    pub fn symbolic_layout(&self) -> Option<&SymbolicLayout> {
        match self {
            StructureTags::Assembled(l) => Some(l),
            StructureTags::Extended(e) => Some(&e.layout),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
    pub tags: StructureTags,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>, tags: StructureTags) -> Result<Self> {
        let net = Self { input_dim, layers, tags };
        net.validate()?;
        Ok(net)
    }

    /// Checks the layer chain is dimensionally consistent.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Structure("network input dimension must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Structure("network has no layers".into()));
        }
        let mut dim = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.cols != dim {
                return Err(Error::Structure(format!(
                    "layer {i} expects {} inputs but receives {dim}",
                    layer.cols
                )));
            }
            dim = layer.rows;
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(self.input_dim)
    }

    /// Depth and width as actually realized by the layer list.
    pub fn architecture(&self) -> Architecture {
        Architecture {
            depth: self.layers.len(),
            width: self.layers.iter().map(|l| l.rows).max().unwrap_or(0),
        }
    }
}

/// Measures the realized depth (layer count) and width (widest layer) of a
/// network, for comparison against the predicted formulas.
pub fn audit_architecture(net: &Network) -> Architecture {
    net.architecture()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_semantics() {
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        assert_eq!(Activation::Relu.apply(f64::NAN), 0.0);
        assert_eq!(Activation::Pow2.apply(3.0), 8.0);
        assert_eq!(Activation::Identity.apply(-1.5), -1.5);
        assert!((Activation::Sine.apply(std::f64::consts::FRAC_PI_2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_semantics() {
        assert_eq!(Activation::Relu.derivative(-1.0), 0.0);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(2.0), 1.0);
        assert_eq!(Activation::Identity.derivative(5.0), 1.0);
        let d = Activation::Pow2.derivative(3.0);
        assert!((d - 8.0 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn layer_validation() {
        assert!(Layer::new(Activation::Relu, 2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(Layer::new(Activation::Relu, 2, 2, vec![0.0; 4], vec![0.0; 1]).is_err());
        assert!(Layer::new(Activation::Relu, 2, 2, vec![0.0, f64::NAN, 0.0, 0.0], vec![0.0; 2])
            .is_err());
        assert!(Layer::new(Activation::Relu, 0, 2, vec![], vec![]).is_err());
        let l = Layer::new(Activation::Relu, 1, 2, vec![f64::INFINITY, 0.0], vec![0.0]);
        assert!(l.is_ok(), "infinite slopes are representable");
    }

    #[test]
    fn affine_is_row_major() {
        let mut l = Layer::zeros(Activation::Identity, 2, 3);
        l.set_weight(0, 0, 1.0);
        l.set_weight(0, 2, 2.0);
        l.set_weight(1, 1, -1.0);
        l.set_bias(1, 10.0);
        let out = l.affine(&[1.0, 2.0, 3.0]);
        assert_eq!(out, vec![7.0, 8.0]);
    }

    #[test]
    fn network_chain_validation() {
        let l1 = Layer::zeros(Activation::Sine, 3, 2);
        let l2 = Layer::zeros(Activation::Relu, 1, 3);
        assert!(Network::new(2, vec![l1.clone(), l2.clone()], StructureTags::Plain).is_ok());
        assert!(Network::new(3, vec![l1.clone(), l2.clone()], StructureTags::Plain).is_err());
        let bad = Layer::zeros(Activation::Relu, 1, 4);
        assert!(Network::new(2, vec![l1, bad], StructureTags::Plain).is_err());
    }

    #[test]
    fn measured_architecture() {
        let l1 = Layer::zeros(Activation::Sine, 4, 1);
        let l2 = Layer::zeros(Activation::Relu, 8, 4);
        let l3 = Layer::zeros(Activation::Identity, 1, 8);
        let net = Network::new(1, vec![l1, l2, l3], StructureTags::Plain).unwrap();
        assert_eq!(net.architecture(), Architecture { depth: 3, width: 8 });
        assert_eq!(net.output_dim(), 1);
    }

    #[test]
    fn payload_doc_round_trip() {
        let d = crate::dyadic::encode_bits(&[1, 0, 1, 1]).unwrap();
        let doc = PayloadDoc::from_dyadic(&d);
        assert_eq!(doc.num_hex, "17");
        assert_eq!(doc.frac_bits, 6);
        assert_eq!(doc.to_dyadic().unwrap(), d);
        let bad = PayloadDoc { num_hex: "zz".into(), frac_bits: 4 };
        assert!(bad.to_dyadic().is_err());
        let overflow = PayloadDoc { num_hex: "ff".into(), frac_bits: 4 };
        assert!(overflow.to_dyadic().is_err());
    }

    #[test]
    fn tags_serde_round_trip() {
        let layout = SymbolicLayout {
            pow2_layer: 2,
            n1d: 2,
            m: 2,
            copies: 1,
            pad2: 0,
            pad5: 0,
            threshold_bits: 4,
            payloads: vec![PayloadDoc { num_hex: "17".into(), frac_bits: 6 }],
            range_lo: 0.0,
            range_hi: 1.0,
            range_estimated: false,
            digit_checksum: "00".into(),
        };
        let tags = StructureTags::Assembled(layout.clone());
        let j = serde_json::to_string(&tags).unwrap();
        assert!(j.contains("\"kind\":\"assembled\""));
        let back: StructureTags = serde_json::from_str(&j).unwrap();
        assert_eq!(back, tags);

        let ext = StructureTags::Extended(ExtendedLayout {
            layout,
            scale: 1.1,
            base_delta: 0.05 / 1.1,
            shift_step: 0.05,
        });
        let j = serde_json::to_string(&ext).unwrap();
        assert!(j.contains("\"kind\":\"extended\""));
        assert!(j.contains("\"scale\""));
        let back: StructureTags = serde_json::from_str(&j).unwrap();
        assert_eq!(back, ext);

        let j = serde_json::to_string(&StructureTags::Plain).unwrap();
        assert_eq!(j, "{\"kind\":\"plain\"}");
    }
}
