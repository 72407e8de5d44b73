//! The `.aqc` token stream: a fixed 20-byte little-endian header followed by
//! an MSB-first bit buffer holding, per frame, the semantic index and then one
//! 13-bit combined index per acoustic stage.

use std::io::{Read, Write};
use std::path::Path;

use crate::agrvq::{CombinedIndex, COMBINED_SIZE};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"AQC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
/// 60 ms token frames.
pub const FRAME_LEN_US: u32 = 60_000;
/// Bits per acoustic stage; 8100 symbols fit in 13 bits.
pub const ACOUSTIC_BITS: u8 = 13;
pub const MAX_ACOUSTIC_STAGES: u8 = 3;

/// Codes for one 60 ms frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenFrame {
    pub semantic: u32,
    pub acoustic: Vec<CombinedIndex>,
}

impl TokenFrame {
    pub fn new(semantic: u32, acoustic: Vec<CombinedIndex>) -> Self {
        Self { semantic, acoustic }
    }

    pub fn num_acoustic(&self) -> usize {
        self.acoustic.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub sample_rate: u32,
    pub frame_len_us: u32,
    pub sem_bits: u8,
    pub num_acoustic: u8,
    pub ac_bits: u8,
    pub num_frames: u32,
}

impl BitstreamHeader {
    pub fn new(sample_rate: u32, sem_bits: u8, num_acoustic: u8, num_frames: u32) -> Self {
        Self {
            sample_rate,
            frame_len_us: FRAME_LEN_US,
            sem_bits,
            num_acoustic,
            ac_bits: ACOUSTIC_BITS,
            num_frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::MalformedHeader("sample rate is zero".into()));
        }
        if self.frame_len_us == 0 {
            return Err(Error::MalformedHeader("frame length is zero".into()));
        }
        if self.sem_bits == 0 || self.sem_bits > 32 {
            return Err(Error::MalformedHeader(format!("semantic width {} outside 1..=32", self.sem_bits)));
        }
        if self.ac_bits != ACOUSTIC_BITS {
            return Err(Error::MalformedHeader(format!(
                "acoustic width {} (expected {ACOUSTIC_BITS})",
                self.ac_bits
            )));
        }
        if self.num_acoustic > MAX_ACOUSTIC_STAGES {
            return Err(Error::MalformedHeader(format!(
                "{} acoustic stages (at most {MAX_ACOUSTIC_STAGES})",
                self.num_acoustic
            )));
        }
        Ok(())
    }

    pub fn bits_per_frame(&self) -> u64 {
        self.sem_bits as u64 + self.num_acoustic as u64 * self.ac_bits as u64
    }

    pub fn payload_bits(&self) -> u64 {
        self.bits_per_frame() * self.num_frames as u64
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits().div_ceil(8) as usize
    }

    pub fn frame_rate_hz(&self) -> f64 {
        1e6 / self.frame_len_us as f64
    }

    pub fn duration_secs(&self) -> f64 {
        self.num_frames as f64 * self.frame_len_us as f64 / 1e6
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4] = VERSION;
        out[5..9].copy_from_slice(&self.sample_rate.to_le_bytes());
        out[9..13].copy_from_slice(&self.frame_len_us.to_le_bytes());
        out[13] = self.sem_bits;
        out[14] = self.num_acoustic;
        out[15] = self.ac_bits;
        out[16..20].copy_from_slice(&self.num_frames.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && bytes[0..4] != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: bytes[0..4].try_into().expect("4 bytes"),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected_bits: HEADER_LEN as u64 * 8,
                actual_bits: bytes.len() as u64 * 8,
            });
        }
        if bytes[4] != VERSION {
            return Err(Error::Version {
                expected: VERSION,
                found: bytes[4],
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let header = Self {
            sample_rate: u32_at(5),
            frame_len_us: u32_at(9),
            sem_bits: bytes[13],
            num_acoustic: bytes[14],
            ac_bits: bytes[15],
            num_frames: u32_at(16),
        };
        header.validate()?;
        Ok(header)
    }
}

/// Bits per second implied by the header.
pub fn bitrate_bps(header: &BitstreamHeader) -> f64 {
    header.bits_per_frame() as f64 * header.frame_rate_hz()
}

/// Bitrate in kbps rounded to two decimals.
pub fn bitrate_kbps(header: &BitstreamHeader) -> f64 {
    (bitrate_bps(header) / 10.0).round() / 100.0
}

/// Payload bits actually stored per second of audio, padding included.
pub fn measured_bitrate_bps(header: &BitstreamHeader) -> f64 {
    let secs = header.duration_secs();
    if secs == 0.0 {
        return 0.0;
    }
    (header.payload_bytes() * 8) as f64 / secs
}

struct BitWriter {
    bytes: Vec<u8>,
    filled: u32,
}

impl BitWriter {
    fn with_capacity(bytes: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bytes),
            filled: 8,
        }
    }

    fn put(&mut self, value: u32, width: u8) {
        for i in (0..width).rev() {
            if self.filled == 8 {
                self.bytes.push(0);
                self.filled = 0;
            }
            let bit = ((value >> i) & 1) as u8;
            *self.bytes.last_mut().expect("pushed") |= bit << (7 - self.filled);
            self.filled += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl BitReader<'_> {
    fn get(&mut self, width: u8) -> u32 {
        let mut v = 0u32;
        for _ in 0..width {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        v
    }
}

/// Serialize a header and its frames. `header.num_frames` must equal
/// `frames.len()` and every frame must carry `header.num_acoustic` stages.
pub fn pack(header: &BitstreamHeader, frames: &[TokenFrame]) -> Result<Vec<u8>> {
    header.validate()?;
    if header.num_frames as usize != frames.len() {
        return Err(Error::InvalidParameter(format!(
            "header declares {} frames, {} supplied",
            header.num_frames,
            frames.len()
        )));
    }
    let sem_limit = 1u64 << header.sem_bits;
    let mut w = BitWriter::with_capacity(header.payload_bytes());
    for f in frames {
        if f.acoustic.len() != header.num_acoustic as usize {
            return Err(Error::DimensionMismatch {
                expected: header.num_acoustic as usize,
                actual: f.acoustic.len(),
            });
        }
        if f.semantic as u64 >= sem_limit {
            return Err(Error::IndexOutOfRange {
                what: "semantic bit width",
                index: f.semantic as usize,
                size: sem_limit as usize,
            });
        }
        w.put(f.semantic, header.sem_bits);
        for c in &f.acoustic {
            w.put(c.value() as u32, header.ac_bits);
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + w.bytes.len());
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&w.bytes);
    Ok(out)
}

/// Parse a complete stream; nothing is returned unless every check passes.
pub fn unpack(bytes: &[u8]) -> Result<(BitstreamHeader, Vec<TokenFrame>)> {
    let header = BitstreamHeader::from_bytes(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let need = header.payload_bits();
    let have = payload.len() as u64 * 8;
    if have < need {
        return Err(Error::Truncated {
            expected_bits: need,
            actual_bits: have,
        });
    }
    let used = header.payload_bytes();
    if payload.len() > used {
        return Err(Error::TrailingBytes(payload.len() - used));
    }
    let pad = (used as u64 * 8 - need) as u32;
    if pad > 0 && payload[used - 1] & ((1u8 << pad) - 1) != 0 {
        return Err(Error::NonZeroPadding);
    }
    let mut r = BitReader { bytes: payload, pos: 0 };
    let mut frames = Vec::with_capacity(header.num_frames as usize);
    for _ in 0..header.num_frames {
        let semantic = r.get(header.sem_bits);
        let acoustic = (0..header.num_acoustic)
            .map(|_| CombinedIndex::new(r.get(header.ac_bits) as usize))
            .collect::<Result<Vec<_>>>()?;
        frames.push(TokenFrame { semantic, acoustic });
    }
    Ok((header, frames))
}

pub fn write_aqc_to<W: Write>(mut w: W, header: &BitstreamHeader, frames: &[TokenFrame]) -> Result<()> {
    w.write_all(&pack(header, frames)?)?;
    Ok(())
}

pub fn read_aqc_from<R: Read>(mut r: R) -> Result<(BitstreamHeader, Vec<TokenFrame>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    unpack(&bytes)
}

pub fn write_aqc(path: impl AsRef<Path>, header: &BitstreamHeader, frames: &[TokenFrame]) -> Result<()> {
    std::fs::write(path, pack(header, frames)?)?;
    Ok(())
}

pub fn read_aqc(path: impl AsRef<Path>) -> Result<(BitstreamHeader, Vec<TokenFrame>)> {
    unpack(&std::fs::read(path)?)
}

const _: () = assert!(COMBINED_SIZE <= 1 << ACOUSTIC_BITS);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ci(v: usize) -> CombinedIndex {
        CombinedIndex::new(v).unwrap()
    }

    #[test]
    fn empty_stream_is_header_only() {
        let h = BitstreamHeader::new(16_000, 13, 3, 0);
        let bytes = pack(&h, &[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(unpack(&bytes).unwrap(), (h, vec![]));
    }

    #[test]
    fn hand_layout_single_semantic() {
        let h = BitstreamHeader::new(16_000, 13, 0, 1);
        let bytes = pack(&h, &[TokenFrame::new(8191, vec![])]).unwrap();
        assert_eq!(&bytes[HEADER_LEN..], &[0xFF, 0xF8]);
    }

    #[test]
    fn hand_layout_with_acoustic() {
        // semantic 1 in 13 bits, acoustic 8099 = 1111110100011
        let h = BitstreamHeader::new(16_000, 13, 1, 1);
        let bytes = pack(&h, &[TokenFrame::new(1, vec![ci(8099)])]).unwrap();
        // 0000000000001 1111110100011 + 6 pad bits
        assert_eq!(&bytes[HEADER_LEN..], &[0x00, 0x0F, 0xE8, 0xC0]);
    }

    #[test]
    fn header_layout() {
        let h = BitstreamHeader::new(24_000, 8, 2, 0x0102_0304);
        let b = h.to_bytes();
        assert_eq!(&b[..5], b"AQC1\x01");
        assert_eq!(&b[5..9], &24_000u32.to_le_bytes());
        assert_eq!(&b[9..13], &60_000u32.to_le_bytes());
        assert_eq!(b[13..16], [8, 2, 13]);
        assert_eq!(b[16..20], [4, 3, 2, 1]);
    }

    #[test]
    fn bitrates() {
        let kbps = |s| bitrate_kbps(&BitstreamHeader::new(16_000, 13, s, 0));
        assert_eq!(kbps(1), 0.43);
        assert_eq!(kbps(2), 0.65);
        assert_eq!(kbps(3), 0.87);
        let h = BitstreamHeader::new(16_000, 13, 2, 0);
        assert!((bitrate_bps(&h) - 650.0).abs() < 1e-9);
        assert!((h.frame_rate_hz() - 16.666_666_666).abs() < 1e-6);
    }

    #[test]
    fn corruption_is_typed() {
        let h = BitstreamHeader::new(16_000, 13, 1, 3);
        let frames: Vec<_> = (0..3).map(|i| TokenFrame::new(i, vec![ci(i as usize * 7)])).collect();
        let good = pack(&h, &frames).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(unpack(&bad), Err(Error::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(unpack(&bad), Err(Error::Version { expected: 1, found: 2 })));
        assert!(matches!(
            unpack(&good[..good.len() - 1]),
            Err(Error::Truncated { expected_bits: 78, actual_bits: 72 })
        ));
        assert!(matches!(unpack(&good[..10]), Err(Error::Truncated { .. })));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(unpack(&bad), Err(Error::TrailingBytes(1))));
        let mut bad = good.clone();
        *bad.last_mut().unwrap() |= 1;
        assert!(matches!(unpack(&bad), Err(Error::NonZeroPadding)));
        let mut bad = good.clone();
        bad[15] = 12;
        assert!(matches!(unpack(&bad), Err(Error::MalformedHeader(_))));
        // First acoustic index forced to all ones (8191).
        let h1 = BitstreamHeader::new(16_000, 3, 1, 1);
        let mut bad = pack(&h1, &[TokenFrame::new(0, vec![ci(0)])]).unwrap();
        bad[HEADER_LEN] = 0b0001_1111;
        bad[HEADER_LEN + 1] = 0xFF;
        assert!(matches!(unpack(&bad), Err(Error::IndexOutOfRange { index: 8191, .. })));
    }

    #[test]
    fn pack_rejects_invalid_frames() {
        let h = BitstreamHeader::new(16_000, 8, 1, 1);
        assert!(matches!(pack(&h, &[TokenFrame::new(256, vec![ci(0)])]), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(pack(&h, &[TokenFrame::new(0, vec![])]), Err(Error::DimensionMismatch { .. })));
        assert!(pack(&h, &[]).is_err());
    }

    prop_compose! {
        fn stream()(sem_bits in 1u8..=16, s in 0u8..=3, n in 0usize..40)
            (frames in prop::collection::vec(
                (0u32..(1u32 << sem_bits), prop::collection::vec(0usize..COMBINED_SIZE, s as usize)), n),
             sem_bits in Just(sem_bits), s in Just(s)) -> (BitstreamHeader, Vec<TokenFrame>) {
            let frames: Vec<TokenFrame> = frames
                .into_iter()
                .map(|(sem, ac)| TokenFrame::new(sem, ac.into_iter().map(ci).collect()))
                .collect();
            (BitstreamHeader::new(16_000, sem_bits, s, frames.len() as u32), frames)
        }
    }

    proptest! {
        #[test]
        fn roundtrip((h, frames) in stream()) {
            let bytes = pack(&h, &frames).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + h.payload_bytes());
            let (h2, f2) = unpack(&bytes).unwrap();
            prop_assert_eq!(h2, h);
            prop_assert_eq!(f2, frames);
        }

        #[test]
        fn measured_rate_within_one_byte(s in 0u8..=3, n in 1u32..500) {
            let h = BitstreamHeader::new(16_000, 13, s, n);
            let diff = measured_bitrate_bps(&h) - bitrate_bps(&h);
            prop_assert!(diff >= -1e-9 && diff < 8.0 / h.duration_secs() + 1e-9);
        }
    }
}
