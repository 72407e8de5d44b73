//! The `.aqm` model container: a magic and version, then tagged sections in a
//! fixed order, each with a `u64` length and a CRC-32 over tag and payload.
//! Numbers are little-endian; matrices are `u32 rows, u32 cols` followed by
//! row-major `f64` values.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::agrvq::{AgrvqQuantizer, AgrvqStage};
use crate::codec::{CodecConfig, CodecModel, FeatureEncoder};
use crate::decoder::DecoderWeights;
use crate::error::{Error, Result};
use crate::semantic::SemanticCodebook;

pub const MODEL_MAGIC: [u8; 4] = *b"AQM1";
pub const MODEL_VERSION: u8 = 1;

pub const TAG_CONFIG: [u8; 4] = *b"CONF";
pub const TAG_ENCODER: [u8; 4] = *b"ENCD";
pub const TAG_SEMANTIC: [u8; 4] = *b"SEMC";
pub const TAG_AGRVQ: [u8; 4] = *b"AGRV";
pub const TAG_DECODER: [u8; 4] = *b"DECW";

/// Sections in file order; all but the decoder are required.
pub const SECTION_ORDER: [[u8; 4]; 5] = [TAG_CONFIG, TAG_ENCODER, TAG_SEMANTIC, TAG_AGRVQ, TAG_DECODER];

/// A checksum-verified section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub tag: [u8; 4],
    pub payload: Vec<u8>,
}

impl Section {
    pub fn tag_str(&self) -> String {
        String::from_utf8_lossy(&self.tag).into_owned()
    }

    pub fn crc(&self) -> u32 {
        section_crc(&self.tag, &self.payload)
    }
}

fn section_crc(tag: &[u8; 4], payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(tag);
    h.update(payload);
    h.finalize()
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vector(&mut self, v: &Array1<f64>) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &Array2<f64>) {
        self.u32(m.nrows());
        self.u32(m.ncols());
        m.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], section: &'static str) -> Self {
        Self { bytes, pos: 0, section }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::MalformedHeader(format!(
                "section {} ends after {} bytes, needed {} more",
                self.section,
                self.bytes.len(),
                n
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::MalformedHeader("matrix too large".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn vector(&mut self) -> Result<Array1<f64>> {
        let n = self.u32()?;
        Ok(Array1::from(self.values(n)?))
    }
    fn matrix(&mut self) -> Result<Array2<f64>> {
        let (r, c) = (self.u32()?, self.u32()?);
        let n = r.checked_mul(c).ok_or_else(|| Error::MalformedHeader("matrix too large".into()))?;
        Ok(Array2::from_shape_vec((r, c), self.values(n)?).expect("length checked"))
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::MalformedHeader(format!(
                "section {} has {} unread bytes",
                self.section,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn config_payload(c: &CodecConfig) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(c.k_sem);
    w.u8(c.num_stages as u8);
    w.u32(c.latent_dim);
    w.u32(c.reduced_dim);
    w.u32(c.kmeans_iters);
    w.f64(c.ridge_lambda);
    w.u32(c.gl_iters);
    w.u64(c.seed);
    w.0
}

fn encoder_payload(e: &FeatureEncoder) -> Vec<u8> {
    let mut w = Writer::default();
    w.vector(&e.mean);
    w.matrix(&e.projection);
    w.0
}

fn semantic_payload(s: &SemanticCodebook) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(s.trained_on.len());
    w.0.extend_from_slice(s.trained_on.as_bytes());
    w.matrix(&s.centroids);
    w.0
}

fn agrvq_payload(q: &AgrvqQuantizer) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(q.num_stages() as u8);
    for stage in &q.stages {
        for m in stage.matrices() {
            w.matrix(m);
        }
    }
    w.0
}

fn decoder_payload(d: &BTreeMap<usize, DecoderWeights>) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(d.len() as u8);
    for (&s, weights) in d {
        w.u8(s as u8);
        w.u8(weights.context() as u8);
        w.f64(weights.ridge_lambda());
        w.matrix(weights.weights());
    }
    w.0
}

/// Sections of a model in file order.
pub fn model_sections(model: &CodecModel) -> Vec<Section> {
    let mut out = vec![
        Section {
            tag: TAG_CONFIG,
            payload: config_payload(&model.config),
        },
        Section {
            tag: TAG_ENCODER,
            payload: encoder_payload(&model.encoder),
        },
        Section {
            tag: TAG_SEMANTIC,
            payload: semantic_payload(&model.semantic),
        },
        Section {
            tag: TAG_AGRVQ,
            payload: agrvq_payload(&model.quantizer),
        },
    ];
    if !model.decoders.is_empty() {
        out.push(Section {
            tag: TAG_DECODER,
            payload: decoder_payload(&model.decoders),
        });
    }
    out
}

pub fn save_model(model: &CodecModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(MODEL_VERSION);
    for s in model_sections(model) {
        out.extend_from_slice(&s.tag);
        out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&s.payload);
        out.extend_from_slice(&s.crc().to_le_bytes());
    }
    out
}

/// Split a container into checksum-verified sections, enforcing order.
pub fn read_sections(bytes: &[u8]) -> Result<Vec<Section>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected_bits: 40,
            actual_bits: bytes.len() as u64 * 8,
        });
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found: bytes[..4].try_into().expect("4 bytes"),
        });
    }
    let version = *bytes.get(4).ok_or(Error::Truncated {
        expected_bits: 40,
        actual_bits: 32,
    })?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let mut pos = 5;
    let mut sections: Vec<Section> = Vec::new();
    while pos < bytes.len() {
        let remaining = (bytes.len() - pos) as u64;
        if remaining < 12 {
            return Err(Error::Truncated {
                expected_bits: 96,
                actual_bits: remaining * 8,
            });
        }
        let tag: [u8; 4] = bytes[pos..pos + 4].try_into().expect("4 bytes");
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().expect("8 bytes"));
        let rank = SECTION_ORDER
            .iter()
            .position(|t| *t == tag)
            .ok_or_else(|| Error::UnknownSection(String::from_utf8_lossy(&tag).into_owned()))?;
        let need = len.saturating_add(16);
        if remaining < need {
            return Err(Error::Truncated {
                expected_bits: need.saturating_mul(8),
                actual_bits: remaining * 8,
            });
        }
        let start = pos + 12;
        let end = start + len as usize;
        let payload = bytes[start..end].to_vec();
        let stored = u32::from_le_bytes(bytes[end..end + 4].try_into().expect("4 bytes"));
        let computed = section_crc(&tag, &payload);
        if stored != computed {
            return Err(Error::Checksum {
                tag: String::from_utf8_lossy(&tag).into_owned(),
                stored,
                computed,
            });
        }
        if rank != sections.len() {
            return Err(Error::SectionOrder(format!(
                "{} at position {}",
                String::from_utf8_lossy(&tag),
                sections.len()
            )));
        }
        sections.push(Section { tag, payload });
        pos = end + 4;
    }
    if sections.len() < 4 {
        let missing = ["CONF", "ENCD", "SEMC", "AGRV"][sections.len()];
        return Err(Error::MissingSection(missing));
    }
    Ok(sections)
}

fn parse_config(bytes: &[u8]) -> Result<CodecConfig> {
    let mut r = Reader::new(bytes, "CONF");
    let c = CodecConfig {
        k_sem: r.u32()?,
        num_stages: r.u8()? as usize,
        latent_dim: r.u32()?,
        reduced_dim: r.u32()?,
        kmeans_iters: r.u32()?,
        ridge_lambda: r.f64()?,
        gl_iters: r.u32()?,
        seed: r.u64()?,
    };
    r.done()?;
    c.validate().map_err(|e| Error::MalformedHeader(format!("CONF: {e}")))?;
    Ok(c)
}

fn parse_encoder(bytes: &[u8]) -> Result<FeatureEncoder> {
    let mut r = Reader::new(bytes, "ENCD");
    let mean = r.vector()?;
    let projection = r.matrix()?;
    r.done()?;
    FeatureEncoder::new(mean, projection).map_err(|e| Error::MalformedHeader(format!("ENCD: {e}")))
}

fn parse_semantic(bytes: &[u8]) -> Result<SemanticCodebook> {
    let mut r = Reader::new(bytes, "SEMC");
    let n = r.u32()?;
    let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::MalformedHeader("SEMC: fingerprint is not UTF-8".into()))?;
    let centroids = r.matrix()?;
    r.done()?;
    SemanticCodebook::new(centroids, name).map_err(|e| Error::MalformedHeader(format!("SEMC: {e}")))
}

fn parse_agrvq(bytes: &[u8]) -> Result<AgrvqQuantizer> {
    let mut r = Reader::new(bytes, "AGRV");
    let n = r.u8()?;
    let mut stages = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let m: Vec<Array2<f64>> = (0..6).map(|_| r.matrix()).collect::<Result<_>>()?;
        let [pa, pb, la, lb, ca, cb]: [Array2<f64>; 6] = m.try_into().expect("six matrices");
        stages.push(AgrvqStage::new(pa, pb, la, lb, ca, cb).map_err(|e| Error::MalformedHeader(format!("AGRV: {e}")))?);
    }
    r.done()?;
    AgrvqQuantizer::new(stages).map_err(|e| Error::MalformedHeader(format!("AGRV: {e}")))
}

fn parse_decoders(bytes: &[u8]) -> Result<BTreeMap<usize, DecoderWeights>> {
    let mut r = Reader::new(bytes, "DECW");
    let n = r.u8()?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let s = r.u8()? as usize;
        let context = r.u8()? as usize;
        let lambda = r.f64()?;
        let w = DecoderWeights::new(r.matrix()?, context, lambda).map_err(|e| Error::MalformedHeader(format!("DECW: {e}")))?;
        if out.insert(s, w).is_some() {
            return Err(Error::MalformedHeader(format!("DECW: duplicate decoder for {s} stages")));
        }
    }
    r.done()?;
    Ok(out)
}

pub fn load_model(bytes: &[u8]) -> Result<CodecModel> {
    let sections = read_sections(bytes)?;
    let config = parse_config(&sections[0].payload)?;
    let encoder = parse_encoder(&sections[1].payload)?;
    let semantic = parse_semantic(&sections[2].payload)?;
    let quantizer = parse_agrvq(&sections[3].payload)?;
    let decoders = match sections.get(4) {
        Some(s) => parse_decoders(&s.payload)?,
        None => BTreeMap::new(),
    };
    CodecModel::from_parts(config, encoder, semantic, quantizer, decoders).map_err(|e| Error::MalformedHeader(format!("inconsistent model: {e}")))
}

pub fn write_model(path: impl AsRef<Path>, model: &CodecModel) -> Result<()> {
    std::fs::write(path, save_model(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<CodecModel> {
    load_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agrvq::GROUP_SIZE;
    use crate::decoder::MEL_BLOCK;

    fn toy_model(with_decoder: bool) -> CodecModel {
        let (dim, d) = (6, 2);
        let config = CodecConfig {
            k_sem: 4,
            num_stages: 2,
            latent_dim: dim,
            reduced_dim: d,
            seed: 77,
            ..CodecConfig::default()
        };
        let f = |r: usize, c: usize, k: f64| Array2::from_shape_fn((r, c), |(i, j)| (i as f64 * 0.37 + j as f64 * 1.1 + k).sin());
        let encoder = FeatureEncoder::new(Array1::linspace(-1.0, 1.0, 480), f(480, dim, 0.1)).unwrap();
        let semantic = SemanticCodebook::new(f(4, dim, 0.2), "n4d6-test").unwrap();
        let stages = (0..2)
            .map(|s| {
                let k = s as f64;
                AgrvqStage::new(f(dim, d, k), f(dim, d, k + 0.3), f(d, dim, k + 0.5), f(d, dim, k + 0.7), f(GROUP_SIZE, d, k + 0.9), f(GROUP_SIZE, d, k + 1.1)).unwrap()
            })
            .collect();
        let mut decoders = BTreeMap::new();
        if with_decoder {
            for s in 1..=2 {
                decoders.insert(s, DecoderWeights::new(f(2 * dim * 7 + 1, MEL_BLOCK, s as f64), 3, 1e-3).unwrap());
            }
        }
        CodecModel::from_parts(config, encoder, semantic, AgrvqQuantizer::new(stages).unwrap(), decoders).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        for dec in [true, false] {
            let m = toy_model(dec);
            let bytes = save_model(&m);
            let back = load_model(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(save_model(&back), bytes);
        }
    }

    #[test]
    fn layout_prefix() {
        let bytes = save_model(&toy_model(false));
        assert_eq!(&bytes[..5], b"AQM1\x01");
        assert_eq!(&bytes[5..9], b"CONF");
        let len = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        assert_eq!(len, 4 + 1 + 4 + 4 + 4 + 8 + 4 + 8);
        let tags: Vec<_> = read_sections(&bytes).unwrap().iter().map(|s| s.tag_str()).collect();
        assert_eq!(tags, ["CONF", "ENCD", "SEMC", "AGRV"]);
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let bytes = save_model(&toy_model(true));
        for pos in [20, 400, bytes.len() / 2, bytes.len() - 10] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            let err = load_model(&bad).unwrap_err();
            assert!(err.is_format_error(), "{pos}: {err}");
        }
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(matches!(load_model(&bad), Err(Error::Checksum { .. })));
    }

    #[test]
    fn structural_errors() {
        let bytes = save_model(&toy_model(true));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(load_model(&bad), Err(Error::Version { expected: 1, found: 9 })));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(load_model(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(load_model(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(load_model(&bytes[..5]), Err(Error::MissingSection("CONF"))));

        // Unknown tag: rename CONF and fix up its checksum.
        let sections = read_sections(&bytes).unwrap();
        let rebuild = |secs: &[Section]| {
            let mut out = b"AQM1\x01".to_vec();
            for s in secs {
                out.extend_from_slice(&s.tag);
                out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
                out.extend_from_slice(&s.payload);
                out.extend_from_slice(&s.crc().to_le_bytes());
            }
            out
        };
        let mut renamed = sections.clone();
        renamed[0].tag = *b"XXXX";
        assert!(matches!(load_model(&rebuild(&renamed)), Err(Error::UnknownSection(t)) if t == "XXXX"));
        let mut swapped = sections.clone();
        swapped.swap(1, 2);
        assert!(matches!(load_model(&rebuild(&swapped)), Err(Error::SectionOrder(_))));
        assert!(matches!(load_model(&rebuild(&sections[..3])), Err(Error::MissingSection("AGRV"))));
        let mut dup = sections.clone();
        dup.push(sections[4].clone());
        assert!(matches!(load_model(&rebuild(&dup)), Err(Error::SectionOrder(_))));
    }
}
