//! Weight files: a JSON format that round-trips every network bit for bit.
//!
//! Weights are written as strings rather than JSON numbers for two reasons.
//! The ramp slopes can be infinite (a saturation threshold below the
//! smallest subnormal double inverts to infinity), and JSON has no literal
//! for that; and shortest-round-trip decimal strings guarantee that what
//! is read back is the exact double that was written, independent of any
//! consumer's number parsing. The payload dyadics ride along inside the
//! structure tags as hex.
//!
//! A digest over the network body is stored in the manifest and recomputed
//! on load, so a file whose weights were edited by hand is rejected rather
//! than silently evaluated.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Hyperparams;
use crate::net::{audit_architecture, Activation, Layer, Network, StructureTags};

pub const FORMAT_VERSION: u32 = 1;

fn weight_to_string(v: f64) -> Result<String> {
    if v.is_nan() {
        return Err(Error::Structure("cannot serialize a NaN weight".into()));
    }
    if v == f64::INFINITY {
        return Ok("inf".into());
    }
    if v == f64::NEG_INFINITY {
        return Ok("-inf".into());
    }
    Ok(serde_json::Number::from_f64(v).expect("finite").to_string())
}

fn weight_from_string(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => {
            let v: f64 = s
                .parse()
                .map_err(|e| Error::Structure(format!("weight {s:?} is not a number: {e}")))?;
            if v.is_nan() {
                return Err(Error::Structure(format!("weight {s:?} parses to NaN")));
            }
            Ok(v)
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct LayerDoc {
    pub activation: Activation,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<String>,
    pub bias: Vec<String>,
}

impl LayerDoc {
    fn from_layer(l: &Layer) -> Result<Self> {
        Ok(Self {
            activation: l.activation,
            rows: l.rows,
            cols: l.cols,
            weights: l.weights().iter().map(|&w| weight_to_string(w)).collect::<Result<_>>()?,
            bias: l.biases().iter().map(|&b| weight_to_string(b)).collect::<Result<_>>()?,
        })
    }

    fn to_layer(&self) -> Result<Layer> {
        Layer::new(
            self.activation,
            self.rows,
            self.cols,
            self.weights.iter().map(|s| weight_from_string(s)).collect::<Result<_>>()?,
            self.bias.iter().map(|s| weight_from_string(s)).collect::<Result<_>>()?,
        )
    }
}

/// Provenance and audit data carried alongside the weights. Everything in
/// here is redundant with the body or with the synthesis inputs; it exists
/// so a reader can check claims without rebuilding anything.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hyperparams: Option<Hyperparams>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub digit_checksum: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub range_estimated: Option<bool>,
    pub depth: usize,
    pub width: usize,
    pub network_checksum: String,
}

#[derive(Serialize, Deserialize)]
pub struct NetworkDoc {
    pub format_version: u32,
    pub input_dim: usize,
    pub layers: Vec<LayerDoc>,
    pub structure_tags: StructureTags,
    pub manifest: Manifest,
}

#[derive(Serialize)]
struct ChecksumBody<'a> {
    input_dim: usize,
    layers: &'a [LayerDoc],
    structure_tags: &'a StructureTags,
}

fn body_checksum(input_dim: usize, layers: &[LayerDoc], tags: &StructureTags) -> Result<String> {
    let body = ChecksumBody { input_dim, layers, structure_tags: tags };
    let bytes = serde_json::to_vec(&body)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Extra synthesis context recorded in the manifest.
#[derive(Clone, Debug, Default)]
pub struct BuildMeta {
    pub hyperparams: Option<Hyperparams>,
    pub target: Option<String>,
}

pub fn network_to_doc(net: &Network, meta: &BuildMeta) -> Result<NetworkDoc> {
    let layers: Vec<LayerDoc> = net.layers.iter().map(LayerDoc::from_layer).collect::<Result<_>>()?;
    let checksum = body_checksum(net.input_dim, &layers, &net.tags)?;
    let arch = audit_architecture(net);
    let layout = net.tags.symbolic_layout();
    Ok(NetworkDoc {
        format_version: FORMAT_VERSION,
        input_dim: net.input_dim,
        layers,
        structure_tags: net.tags.clone(),
        manifest: Manifest {
            hyperparams: meta.hyperparams.clone(),
            target: meta.target.clone(),
            digit_checksum: layout.map(|l| l.digit_checksum.clone()),
            range_estimated: layout.map(|l| l.range_estimated),
            depth: arch.depth,
            width: arch.width,
            network_checksum: checksum,
        },
    })
}

/// Rebuild the network from a parsed document, verifying the body digest
/// before anything else is trusted.
pub fn doc_to_network(doc: &NetworkDoc) -> Result<Network> {
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Structure(format!(
            "weight file format {} is not supported (expected {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    let expect = body_checksum(doc.input_dim, &doc.layers, &doc.structure_tags)?;
    if expect != doc.manifest.network_checksum {
        return Err(Error::Checksum(format!(
            "weight file digest {} does not match its manifest ({})",
            expect, doc.manifest.network_checksum
        )));
    }
    let layers: Vec<Layer> = doc.layers.iter().map(|l| l.to_layer()).collect::<Result<_>>()?;
    Network::new(doc.input_dim, layers, doc.structure_tags.clone())
}

/// Write a weight file. Output is deterministic: the same network and
/// metadata produce identical bytes.
pub fn save_network(net: &Network, meta: &BuildMeta, path: &Path) -> Result<()> {
    let doc = network_to_doc(net, meta)?;
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Network, Manifest)> {
    let text = std::fs::read_to_string(path)?;
    let doc: NetworkDoc = serde_json::from_str(&text)?;
    let net = doc_to_network(&doc)?;
    Ok((net, doc.manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::assemble;
    use crate::grid::PNorm;
    use crate::target::parse_target;

    fn sample_net() -> (Network, BuildMeta) {
        let f = parse_target("sq", 1).unwrap();
        let p = Hyperparams::new(1, 4, 3, 0.02, PNorm::Infinity).unwrap();
        let net = assemble(&f, &p).unwrap();
        let meta = BuildMeta { hyperparams: Some(p), target: Some("sq".into()) };
        (net, meta)
    }

    #[test]
    fn weight_strings_round_trip() {
        for v in [0.0, -0.0, 1.5, std::f64::consts::PI, 2f64.powi(-1040), f64::MAX, 1e-300] {
            let s = weight_to_string(v).unwrap();
            assert_eq!(weight_from_string(&s).unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(weight_to_string(f64::INFINITY).unwrap(), "inf");
        assert_eq!(weight_from_string("-inf").unwrap(), f64::NEG_INFINITY);
        assert!(weight_to_string(f64::NAN).is_err());
        assert!(weight_from_string("nan").is_err());
        assert!(weight_from_string("1.2.3").is_err());
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let (net, meta) = sample_net();
        let dir = std::env::temp_dir().join("rsx-serial-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        save_network(&net, &meta, &path).unwrap();
        let (back, manifest) = load_network(&path).unwrap();

        assert_eq!(back.input_dim, net.input_dim);
        assert_eq!(back.layers.len(), net.layers.len());
        for (a, b) in net.layers.iter().zip(&back.layers) {
            assert_eq!(a.activation, b.activation);
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            for (x, y) in a.weights().iter().zip(b.weights()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.biases().iter().zip(b.biases()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.tags, net.tags);
        assert_eq!(manifest.depth, 6);
        assert_eq!(manifest.target.as_deref(), Some("sq"));
        assert_eq!(manifest.hyperparams.as_ref().unwrap().n(), 4);
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let (net, meta) = sample_net();
        let dir = std::env::temp_dir().join("rsx-serial-test");
        std::fs::create_dir_all(&dir).unwrap();
        let (p1, p2) = (dir.join("det-a.json"), dir.join("det-b.json"));
        save_network(&net, &meta, &p1).unwrap();
        save_network(&net, &meta, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn tampered_weights_are_rejected() {
        let (net, meta) = sample_net();
        let dir = std::env::temp_dir().join("rsx-serial-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tamper.json");
        save_network(&net, &meta, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let probe = "\"0.5\"";
        assert!(text.contains(probe), "expected a 0.5 bias string in the file");
        let tampered = text.replacen(probe, "\"0.50000001\"", 1);
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(load_network(&path), Err(Error::Checksum(_))));
    }

    #[test]
    fn infinite_slopes_survive_the_file() {
        let huge = Layer::new(Activation::Relu, 1, 1, vec![f64::INFINITY], vec![0.0]).unwrap();
        let read = Layer::new(Activation::Identity, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let net = Network::new(1, vec![huge, read], StructureTags::Plain).unwrap();
        let dir = std::env::temp_dir().join("rsx-serial-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("inf.json");
        save_network(&net, &BuildMeta::default(), &path).unwrap();
        let (back, _) = load_network(&path).unwrap();
        assert_eq!(back.layers[0].weight(0, 0), f64::INFINITY);
    }

    #[test]
    fn format_version_is_enforced() {
        let (net, meta) = sample_net();
        let mut doc = network_to_doc(&net, &meta).unwrap();
        doc.format_version = 99;
        assert!(matches!(doc_to_network(&doc), Err(Error::Structure(_))));
    }
}
