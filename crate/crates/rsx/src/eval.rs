//! Forward evaluation and differentiation.
//!
//! Two evaluation paths share one weight file. The float path runs the
//! layers literally in doubles and is honest about its failure mode: the
//! 2^x layer overflows once the recovered code index passes the double
//! exponent range, the following sine turns that infinity into NaN, and the
//! relu collapses NaN to zero, so the output degrades toward the low end of
//! the declared range with the overflow flag set. Overflow is data here,
//! not an exception.
//!
//! The exact path never materializes 2^e. It recovers the integer exponent
//! from the stored 2^x layer (exact, because code indices stay far below
//! 2^53), reduces each digit payload modulo one in dyadic arithmetic, and
//! drops back into the float layers only once the recovered digits are
//! safely inside [0, 1].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::str::FromStr;

use num_traits::ToPrimitive;

use crate::dyadic::{fold_quarter, ldexp, reduce_mod_1, threshold_from_bits, DyadicRational};
use crate::error::{Error, Result};
use crate::net::{Activation, Network, StructureTags, SymbolicLayout};

/// Which arithmetic carries the middle of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalPath {
    Float,
    Exact,
}

impl FromStr for EvalPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(EvalPath::Float),
            "exact" => Ok(EvalPath::Exact),
            other => Err(Error::Config(format!(
                "unknown evaluation path {other:?}, expected \"float\" or \"exact\""
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOutput {
    pub value: f64,
    /// True when a double overflowed or went NaN somewhere along the way.
    /// The value is still returned; callers decide whether to trust it.
    pub overflow: bool,
}

fn check_input(net: &Network, x: &[f64]) -> Result<()> {
    if x.len() != net.input_dim {
        return Err(Error::Invalid(format!(
            "network takes {} inputs, got {}",
            net.input_dim,
            x.len()
        )));
    }
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Invalid(format!("input coordinate {i} is {v}")));
        }
    }
    Ok(())
}

/// Evaluate a scalar-output network.
pub fn forward(net: &Network, x: &[f64], path: EvalPath) -> Result<EvalOutput> {
    if net.output_dim() != 1 {
        return Err(Error::Invalid(format!(
            "forward expects a scalar output, network produces {}",
            net.output_dim()
        )));
    }
    let (out, overflow) = forward_vector(net, x, path)?;
    Ok(EvalOutput { value: out[0], overflow })
}

/// Evaluate any network, returning the full output vector.
pub fn forward_vector(net: &Network, x: &[f64], path: EvalPath) -> Result<(Vec<f64>, bool)> {
    check_input(net, x)?;
    match path {
        EvalPath::Float => Ok(forward_float(net, x)),
        EvalPath::Exact => match &net.tags {
            StructureTags::Plain => Err(Error::Capability(
                "exact evaluation needs structure tags; this network has none".into(),
            )),
            StructureTags::BitExtractor { payload, threshold_bits } => {
                let b = payload.to_dyadic()?;
                let v = exact_bit_extractor(&b, *threshold_bits, x[0])?;
                Ok((vec![v], false))
            }
            StructureTags::Assembled(layout) => ExactEvaluator::with_layout(net, layout)?.run(x),
            StructureTags::Extended(ext) => ExactEvaluator::with_layout(net, &ext.layout)?.run(x),
        },
    }
}

fn forward_float(net: &Network, x: &[f64]) -> (Vec<f64>, bool) {
    let mut out = x.to_vec();
    let mut overflow = false;
    for layer in &net.layers {
        let z = layer.affine(&out);
        overflow |= z.iter().any(|v| !v.is_finite());
        out = z.into_iter().map(|v| layer.activation.apply(v)).collect();
        overflow |= out.iter().any(|v| !v.is_finite());
    }
    (out, overflow)
}

/// Bit i of the payload, read off the symbolic pipeline at input 2^i.
fn exact_bit_extractor(payload: &DyadicRational, threshold_bits: u64, x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::Invalid(format!(
            "bit extraction reads the input as a power of two, got {x}"
        )));
    }
    let e = x.log2().round();
    if e < 0.0 || 2f64.powi(e as i32) != x {
        return Err(Error::Invalid(format!(
            "bit extraction reads the input as a power of two, got {x}"
        )));
    }
    Ok(digit_value(payload, e as u64, threshold_bits))
}

/// One recovered digit: ramp(sin(2 pi frac(payload * 2^exponent))), with the
/// sine kept in scaled form so thresholds below the double range still work.
pub(crate) fn digit_value(payload: &DyadicRational, exponent: u64, threshold_bits: u64) -> f64 {
    let t = reduce_mod_1(payload, exponent);
    scaled_ramp(scaled_sine_2pi(&t), threshold_bits)
}

/// A double with a separate power-of-two exponent: value = mant * 2^exp.
/// Keeps sines of magnitude far below the subnormal range representable.
#[derive(Clone, Copy, Debug)]
struct Scaled {
    mant: f64,
    exp: i64,
}

/// sin(2 pi t) in scaled form. After folding into the first quarter period
/// the argument u lies in [0, 1/4]; a u no smaller than 2^-41 is evaluated
/// directly, a smaller one is linearized from its top 53 bits, which is
/// accurate to a relative error below 2^-77.
fn scaled_sine_2pi(t: &DyadicRational) -> Scaled {
    let (sign, u) = fold_quarter(t);
    if u.is_zero() {
        return Scaled { mant: 0.0, exp: 0 };
    }
    let nbits = u.numerator().bits() as i64;
    let fb = u.frac_bits() as i64;
    if nbits - fb >= -41 {
        Scaled { mant: sign as f64 * (2.0 * PI * u.to_f64()).sin(), exp: 0 }
    } else {
        let drop = (nbits - 53).max(0) as u64;
        let top = (u.numerator() >> drop).to_u64().expect("53-bit cap");
        Scaled { mant: sign as f64 * 2.0 * PI * top as f64, exp: drop as i64 - fb }
    }
}

/// Clipped ramp with threshold sin(2^-k), applied to a scaled sine value.
/// A power-of-two threshold folds into the exponent, so the quotient is
/// meaningful even when the threshold itself would round to zero.
fn scaled_ramp(s: Scaled, threshold_bits: u64) -> f64 {
    if s.mant == 0.0 {
        return 0.5;
    }
    let q = if threshold_bits <= 26 {
        ldexp(s.mant / (2.0 * threshold_from_bits(threshold_bits)), s.exp)
    } else {
        ldexp(s.mant, s.exp + threshold_bits as i64 - 1)
    };
    (q + 0.5).clamp(0.0, 1.0)
}

/// Exact-path runner that caches recovered digit vectors per exponent.
/// Verification sweeps hit the same cells over and over; the cache turns
/// each repeat into a table lookup.
pub struct ExactEvaluator<'a> {
    net: &'a Network,
    layout: &'a SymbolicLayout,
    payloads: Vec<DyadicRational>,
    digit_cache: HashMap<u64, Vec<f64>>,
}

impl<'a> ExactEvaluator<'a> {
    pub fn new(net: &'a Network) -> Result<Self> {
        match &net.tags {
            StructureTags::Assembled(layout) => Self::with_layout(net, layout),
            StructureTags::Extended(ext) => Self::with_layout(net, &ext.layout),
            _ => Err(Error::Capability(
                "exact evaluation needs an assembled or extended network".into(),
            )),
        }
    }

    fn with_layout(net: &'a Network, layout: &'a SymbolicLayout) -> Result<Self> {
        validate_layout(net, layout)?;
        let payloads =
            layout.payloads.iter().map(|p| p.to_dyadic()).collect::<Result<Vec<_>>>()?;
        Ok(Self { net, layout, payloads, digit_cache: HashMap::new() })
    }

    pub fn eval(&mut self, x: &[f64]) -> Result<EvalOutput> {
        check_input(self.net, x)?;
        let (out, overflow) = self.run(x)?;
        if out.len() != 1 {
            return Err(Error::Invalid(format!(
                "exact evaluation expects a scalar output, network produces {}",
                out.len()
            )));
        }
        Ok(EvalOutput { value: out[0], overflow })
    }

    fn run(&mut self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let l = self.layout;
        let p2 = l.pow2_layer;
        let mut overflow = false;

        let mut out = x.to_vec();
        for layer in &self.net.layers[..p2] {
            let z = layer.affine(&out);
            overflow |= z.iter().any(|v| !v.is_finite());
            out = z.into_iter().map(|v| layer.activation.apply(v)).collect();
        }

        // The stored 2^x layer gives the exponent per copy; rounding removes
        // the float dust from the bit-recovery ramps. Points inside a slab
        // land between integers and are clamped onto a neighbor, which keeps
        // the output inside the declared range without any bound claim.
        let exponents = self.net.layers[p2].affine(&out);
        let max_e = l.threshold_bits;
        let m = l.m as usize;
        let block5 = l.block5();
        let mut virtual5 = vec![0.0; l.copies * block5];
        for (c, &z) in exponents.iter().enumerate() {
            let e = if z.is_finite() {
                z.round().clamp(1.0, max_e as f64) as u64
            } else {
                overflow = true;
                1
            };
            let digits = self.digit_cache.entry(e).or_insert_with(|| {
                (0..m).map(|j| digit_value(&self.payloads[j], e, l.threshold_bits)).collect()
            });
            for (j, &d) in digits.iter().enumerate() {
                virtual5[c * block5 + 2 * j] = d;
            }
        }

        out = virtual5;
        for layer in &self.net.layers[p2 + 3..] {
            let z = layer.affine(&out);
            overflow |= z.iter().any(|v| !v.is_finite());
            out = z.into_iter().map(|v| layer.activation.apply(v)).collect();
            overflow |= out.iter().any(|v| !v.is_finite());
        }
        Ok((out, overflow))
    }
}

/// Check that the stored layers actually have the shape the layout claims,
/// so the exact path substitutes its virtual digit block at the right spot.
fn validate_layout(net: &Network, l: &SymbolicLayout) -> Result<()> {
    let n = net.layers.len();
    if l.pow2_layer + 4 > n {
        return Err(Error::Structure(format!(
            "layout places the 2^x layer at {} but the network has {n} layers",
            l.pow2_layer
        )));
    }
    if l.copies == 0 || l.m == 0 {
        return Err(Error::Structure("layout needs at least one copy and one digit".into()));
    }
    let p2 = &net.layers[l.pow2_layer];
    if p2.activation != Activation::Pow2 || p2.rows != l.copies || p2.cols != l.copies * l.block2()
    {
        return Err(Error::Structure(format!(
            "2^x layer is {:?} {} x {}, layout expects pow2 {} x {}",
            p2.activation,
            p2.rows,
            p2.cols,
            l.copies,
            l.copies * l.block2()
        )));
    }
    let digit_sines = &net.layers[l.pow2_layer + 1];
    if digit_sines.activation != Activation::Sine
        || digit_sines.rows != l.copies * l.m as usize
        || digit_sines.cols != l.copies
    {
        return Err(Error::Structure("digit sine layer does not match the layout".into()));
    }
    let ramps = &net.layers[l.pow2_layer + 2];
    if ramps.activation != Activation::Relu || ramps.rows != l.copies * l.block5() {
        return Err(Error::Structure("digit ramp layer does not match the layout".into()));
    }
    if l.payloads.len() != l.m as usize {
        return Err(Error::Structure(format!(
            "layout declares {} digits but carries {} payloads",
            l.m,
            l.payloads.len()
        )));
    }
    for p in &l.payloads {
        if p.frac_bits != l.threshold_bits + 2 {
            return Err(Error::Structure(format!(
                "payload has {} fractional bits, expected threshold bits {} plus two",
                p.frac_bits, l.threshold_bits
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

const DIFF_STEP: f64 = 1e-6;

/// Analytic gradient (reverse mode on the float path) checked against a
/// central difference. Refuses points within ten difference steps of a relu
/// kink, where the two sides of the difference straddle different linear
/// pieces and the comparison is meaningless.
pub fn gradient(net: &Network, x: &[f64]) -> Result<GradientReport> {
    check_input(net, x)?;
    if net.output_dim() != 1 {
        return Err(Error::Invalid(format!(
            "gradient expects a scalar output, network produces {}",
            net.output_dim()
        )));
    }
    let margin = kink_margin(net, x)?;
    if margin < 10.0 * DIFF_STEP {
        return Err(Error::KinkProximity { radius: margin });
    }

    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(net.layers.len());
    let mut out = x.to_vec();
    for layer in &net.layers {
        let z = layer.affine(&out);
        out = z.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(z);
    }

    let mut g = vec![1.0];
    for (layer, z) in net.layers.iter().zip(&pre).rev() {
        let g_pre: Vec<f64> =
            g.iter().zip(z).map(|(&gv, &zv)| gv * layer.activation.derivative(zv)).collect();
        let mut g_prev = vec![0.0; layer.cols];
        for r in 0..layer.rows {
            if g_pre[r] == 0.0 {
                continue;
            }
            for (c, slot) in g_prev.iter_mut().enumerate() {
                *slot += g_pre[r] * layer.weight(r, c);
            }
        }
        g = g_prev;
    }
    let analytic = g;

    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + DIFF_STEP;
        let hi = forward_float(net, &probe).0[0];
        probe[i] = x[i] - DIFF_STEP;
        let lo = forward_float(net, &probe).0[0];
        probe[i] = x[i];
        numeric.push((hi - lo) / (2.0 * DIFF_STEP));
    }

    // Mixed error: relative for large gradients, absolute near zero. A pure
    // relative denominator would report 1.0 on plateaus, where the analytic
    // gradient is exactly zero and the difference quotient carries a single
    // ulp of rounding noise.
    let mut max_rel_err = 0.0f64;
    for (&a, &nv) in analytic.iter().zip(&numeric) {
        let denom = a.abs().max(nv.abs()).max(1.0);
        max_rel_err = max_rel_err.max((a - nv).abs() / denom);
    }
    Ok(GradientReport { analytic, numeric, max_rel_err })
}

/// Distance (in input space, first order) from x to the nearest relu kink.
/// Propagates input-direction tangents forward and measures each relu
/// pre-activation against the norm of its own tangent row.
pub fn kink_margin(net: &Network, x: &[f64]) -> Result<f64> {
    check_input(net, x)?;
    let d = x.len();
    let mut out = x.to_vec();
    let mut jac: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut row = vec![0.0; d];
            row[i] = 1.0;
            row
        })
        .collect();
    let mut margin = f64::INFINITY;
    for layer in &net.layers {
        let z = layer.affine(&out);
        let mut jz: Vec<Vec<f64>> = Vec::with_capacity(layer.rows);
        for r in 0..layer.rows {
            let mut row = vec![0.0; d];
            for c in 0..layer.cols {
                let w = layer.weight(r, c);
                if w == 0.0 {
                    continue;
                }
                for k in 0..d {
                    row[k] += w * jac[c][k];
                }
            }
            jz.push(row);
        }
        if layer.activation == Activation::Relu {
            for (r, zv) in z.iter().enumerate() {
                let norm = jz[r].iter().map(|v| v * v).sum::<f64>().sqrt();
                margin = margin.min(zv.abs() / norm.max(1.0));
            }
        }
        out = z.iter().map(|&v| layer.activation.apply(v)).collect();
        for (r, zv) in z.iter().enumerate() {
            let dv = layer.activation.derivative(*zv);
            for v in jz[r].iter_mut() {
                *v *= dv;
            }
        }
        jac = jz;
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::encode_bits;
    use crate::net::{Layer, PayloadDoc};

    fn ramp_net(threshold: f64) -> Network {
        let a = 1.0 / (2.0 * threshold);
        let relu =
            Layer::new(Activation::Relu, 2, 1, vec![a, a], vec![0.5, -0.5]).unwrap();
        let read = Layer::new(Activation::Identity, 1, 2, vec![1.0, -1.0], vec![0.0]).unwrap();
        Network::new(1, vec![relu, read], StructureTags::Plain).unwrap()
    }

    #[test]
    fn float_ramp_values() {
        let net = ramp_net(0.5);
        let mid = forward(&net, &[0.0], EvalPath::Float).unwrap();
        assert_eq!(mid.value, 0.5);
        assert!(!mid.overflow);
        assert_eq!(forward(&net, &[0.5], EvalPath::Float).unwrap().value, 1.0);
        assert_eq!(forward(&net, &[2.0], EvalPath::Float).unwrap().value, 1.0);
        assert_eq!(forward(&net, &[-0.7], EvalPath::Float).unwrap().value, 0.0);
    }

    #[test]
    fn overflow_collapses_not_poisons() {
        let pow = Layer::new(Activation::Pow2, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let sine = Layer::new(Activation::Sine, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let relu = Layer::new(Activation::Relu, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let read = Layer::new(Activation::Identity, 1, 1, vec![1.0], vec![7.0]).unwrap();
        let net = Network::new(1, vec![pow, sine, relu, read], StructureTags::Plain).unwrap();

        let ok = forward(&net, &[3.0], EvalPath::Float).unwrap();
        assert!(!ok.overflow);
        assert!((ok.value - (8f64.sin().max(0.0) + 7.0)).abs() < 1e-12);

        let blown = forward(&net, &[1100.0], EvalPath::Float).unwrap();
        assert!(blown.overflow);
        assert_eq!(blown.value, 7.0);
    }

    #[test]
    fn exact_path_requires_tags() {
        let net = ramp_net(0.5);
        assert!(matches!(
            forward(&net, &[0.0], EvalPath::Exact),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn bit_extractor_exact_and_float_agree() {
        // bits (1, 0): the payload encodes the complement (0, 1).
        let payload = encode_bits(&[0, 1]).unwrap();
        let tau = threshold_from_bits(2);
        let w = 2.0 * PI * payload.to_f64();
        let sine = Layer::new(Activation::Sine, 1, 1, vec![w], vec![0.0]).unwrap();
        let a = 0.5 / tau;
        let relu = Layer::new(Activation::Relu, 2, 1, vec![a, a], vec![0.5, -0.5]).unwrap();
        let read = Layer::new(Activation::Identity, 1, 2, vec![1.0, -1.0], vec![0.0]).unwrap();
        let net = Network::new(
            1,
            vec![sine, relu, read],
            StructureTags::BitExtractor {
                payload: PayloadDoc::from_dyadic(&payload),
                threshold_bits: 2,
            },
        )
        .unwrap();

        assert_eq!(forward(&net, &[2.0], EvalPath::Exact).unwrap().value, 1.0);
        assert_eq!(forward(&net, &[4.0], EvalPath::Exact).unwrap().value, 0.0);
        for x in [2.0, 4.0] {
            let f = forward(&net, &[x], EvalPath::Float).unwrap().value;
            let e = forward(&net, &[x], EvalPath::Exact).unwrap().value;
            assert!((f - e).abs() < 1e-9, "x={x}: float {f} vs exact {e}");
        }
        assert!(matches!(
            forward(&net, &[3.0], EvalPath::Exact),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn scaled_sine_linearizes_tiny_arguments() {
        // u = 2^-100, far below where sin(2 pi u) is representable relative
        // to a threshold at 2^-102.
        let u = DyadicRational::new(1u32.into(), 100).unwrap();
        let s = scaled_sine_2pi(&u);
        assert_eq!(s.mant, 2.0 * PI);
        assert_eq!(s.exp, -100);
        let d = scaled_ramp(s, 102);
        assert_eq!(d, 1.0, "2 pi * 2^-100 over 2 * 2^-102 saturates the ramp");
        let d_low = scaled_ramp(Scaled { mant: -s.mant, exp: s.exp }, 102);
        assert_eq!(d_low, 0.0);
    }

    #[test]
    fn scaled_ramp_zero_sits_on_the_fence() {
        assert_eq!(scaled_ramp(Scaled { mant: 0.0, exp: 0 }, 5), 0.5);
    }

    #[test]
    fn gradient_matches_on_smooth_net() {
        let sine = Layer::new(Activation::Sine, 1, 1, vec![2.0], vec![0.3]).unwrap();
        let read = Layer::new(Activation::Identity, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let net = Network::new(1, vec![sine, read], StructureTags::Plain).unwrap();
        let rep = gradient(&net, &[0.4]).unwrap();
        assert!((rep.analytic[0] - 2.0 * (1.1f64).cos()).abs() < 1e-12);
        assert!(rep.max_rel_err < 1e-8, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn gradient_is_clean_on_assembled_plateaus() {
        // Inside an excluded slab the digit extractors saturate, so the
        // analytic gradient cancels to exactly zero while the saturated
        // float sum still wobbles by an ulp between the two difference
        // probes. The mixed error must stay small there.
        let params =
            crate::grid::Hyperparams::new(1, 4, 4, 0.05, crate::grid::PNorm::Infinity).unwrap();
        let f = crate::target::parse_target("sq", 1).unwrap();
        let net = crate::builder::assemble(&f, &params).unwrap();
        let mut plateaus = 0;
        for k in 0..30 {
            let x = 0.47 + 0.001 * k as f64;
            let Ok(rep) = gradient(&net, &[x]) else { continue };
            if rep.analytic[0] == 0.0 {
                plateaus += 1;
                assert!(
                    rep.max_rel_err <= 1e-5,
                    "x={x}: numeric {} gives rel err {}",
                    rep.numeric[0],
                    rep.max_rel_err
                );
            }
        }
        assert!(plateaus > 0, "no plateau point found in the slab");
    }

    #[test]
    fn gradient_refuses_kinks() {
        let net = ramp_net(0.5);
        // The lower relu unit has its kink at x = 0.5.
        assert!(matches!(
            gradient(&net, &[0.5]),
            Err(Error::KinkProximity { .. })
        ));
        assert!(matches!(
            gradient(&net, &[0.5 + 1e-9]),
            Err(Error::KinkProximity { .. })
        ));
        let rep = gradient(&net, &[0.0]).unwrap();
        assert!((rep.analytic[0] - 1.0).abs() < 1e-12);
        assert!(rep.max_rel_err < 1e-9);
    }

    #[test]
    fn kink_margin_scales_with_distance() {
        let net = ramp_net(0.5);
        let near = kink_margin(&net, &[0.49]).unwrap();
        let far = kink_margin(&net, &[0.0]).unwrap();
        assert!((near - 0.01).abs() < 1e-12);
        assert!((far - 0.5).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let net = ramp_net(0.5);
        assert!(forward(&net, &[0.1, 0.2], EvalPath::Float).is_err());
        assert!(forward(&net, &[f64::NAN], EvalPath::Float).is_err());
    }
}
