//! Packed binary codes and Hamming-space primitives.
//!
//! A code is `L` bits, stored in `ceil(L/64)` little-endian `u64` words,
//! item-major. Bit `b` of an item lives in word `b / 64` at position
//! `b % 64`, with `+1 -> 1` and `-1 -> 0`; unused high bits of the last word
//! are always zero. Hamming distance is then a word-wise XOR plus popcount.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::wire::{self, CountingReader};

pub const CODE_MAGIC: &[u8; 4] = b"DSMB";
pub const CODE_VERSION: u32 = 1;

/// Pairwise label relation: `Similar` when two items share at least one
/// class, `Dissimilar` otherwise. Enters the losses as +1 / -1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Similarity {
    Similar,
    Dissimilar,
}

impl Similarity {
    pub fn value(self) -> f64 {
        match self {
            Similarity::Similar => 1.0,
            Similarity::Dissimilar => -1.0,
        }
    }

    /// `(s + 1) / 2`, the {0, 1} form used inside the hinge and contrastive
    /// gradients.
    pub fn indicator(self) -> f64 {
        match self {
            Similarity::Similar => 1.0,
            Similarity::Dissimilar => 0.0,
        }
    }
}

/// Similarity of two 0/1 label vectors: similar iff their inner product is
/// positive, i.e. they share at least one class.
pub fn label_similarity(gi: &[f64], gj: &[f64]) -> Result<Similarity> {
    if gi.len() != gj.len() {
        return Err(Error::Shape(format!(
            "label vectors of length {} and {} cannot be compared",
            gi.len(),
            gj.len()
        )));
    }
    let dot: f64 = gi.iter().zip(gj).map(|(&a, &b)| a * b).sum();
    if dot > 0.0 {
        Ok(Similarity::Similar)
    } else {
        Ok(Similarity::Dissimilar)
    }
}

/// Packed binary codes for a set of items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodes {
    bits: usize,
    len: usize,
    words: Vec<u64>,
}

impl BinaryCodes {
    /// Quantizes a matrix of relaxed codes (one item per column, one bit per
    /// row) with `sign`, mapping `0.0` to `+1`. Entries must be finite.
    pub fn quantize(z: &Matrix) -> BinaryCodes {
        assert!(z.all_finite(), "relaxed codes contain non-finite entries");
        assert!(z.rows() >= 1, "cannot quantize zero-length codes");
        let bits = z.rows();
        let len = z.cols();
        let wpc = bits.div_ceil(64);
        let mut words = vec![0u64; len * wpc];
        for item in 0..len {
            for b in 0..bits {
                if z.get(b, item) >= 0.0 {
                    words[item * wpc + b / 64] |= 1u64 << (b % 64);
                }
            }
        }
        BinaryCodes { bits, len, words }
    }

    /// Builds codes from already-packed words, validating the layout:
    /// `words.len() == len * ceil(bits/64)` and all unused high bits zero.
    pub fn from_words(bits: usize, len: usize, words: Vec<u64>) -> Result<BinaryCodes> {
        if bits == 0 {
            return Err(Error::Config("code length must be at least 1".to_string()));
        }
        let wpc = bits.div_ceil(64);
        if words.len() != len * wpc {
            return Err(Error::Shape(format!(
                "{} words do not hold {len} codes of {bits} bits ({} expected)",
                words.len(),
                len * wpc
            )));
        }
        if !bits.is_multiple_of(64) {
            let mask = !((1u64 << (bits % 64)) - 1);
            for item in 0..len {
                if words[item * wpc + wpc - 1] & mask != 0 {
                    return Err(Error::Format {
                        offset: 0,
                        message: format!("item {item} has nonzero bits past position {bits}"),
                    });
                }
            }
        }
        Ok(BinaryCodes { bits, len, words })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words_per_code(&self) -> usize {
        self.bits.div_ceil(64)
    }

    /// The packed words, item-major.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, item: usize) -> &[u64] {
        assert!(item < self.len, "item {item} out of bounds for {} codes", self.len);
        let wpc = self.words_per_code();
        &self.words[item * wpc..(item + 1) * wpc]
    }

    pub fn bit(&self, item: usize, b: usize) -> bool {
        assert!(b < self.bits, "bit {b} out of bounds for {}-bit codes", self.bits);
        self.code(item)[b / 64] >> (b % 64) & 1 == 1
    }

    /// Unpacks one code to a dense ±1 vector.
    pub fn unpack(&self, item: usize) -> Vec<f64> {
        (0..self.bits)
            .map(|b| if self.bit(item, b) { 1.0 } else { -1.0 })
            .collect()
    }

    /// Hamming distance between code `i` of `self` and code `j` of `other`.
    pub fn hamming(&self, i: usize, other: &BinaryCodes, j: usize) -> Result<u32> {
        if self.bits != other.bits {
            return Err(Error::Shape(format!(
                "cannot compare {}-bit and {}-bit codes",
                self.bits, other.bits
            )));
        }
        Ok(self
            .code(i)
            .iter()
            .zip(other.code(j))
            .map(|(&a, &b)| (a ^ b).count_ones())
            .sum())
    }

    /// Normalized inner product of two ±1 codes, `(L - 2 * hamming) / L`,
    /// always in `[-1, 1]`.
    pub fn inner_product_sim(&self, i: usize, other: &BinaryCodes, j: usize) -> Result<f64> {
        let ham = self.hamming(i, other, j)?;
        let l = self.bits as f64;
        Ok((l - 2.0 * ham as f64) / l)
    }

    /// Serializes to the code file layout: magic `DSMB`, version, `L` (u32),
    /// `n` (u64), then the packed words item-major, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + self.words.len() * 8);
        buf.extend_from_slice(CODE_MAGIC);
        wire::push_u32(&mut buf, CODE_VERSION);
        wire::push_u32(&mut buf, self.bits as u32);
        wire::push_u64(&mut buf, self.len as u64);
        for &w in &self.words {
            wire::push_u64(&mut buf, w);
        }
        buf
    }

    /// Writes the code file atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        wire::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<BinaryCodes> {
        let file = File::open(path)?;
        let mut r = CountingReader::new(BufReader::new(file));
        r.read_magic(CODE_MAGIC)?;
        let version = r.read_u32()?;
        if version != CODE_VERSION {
            return Err(r.bad(format!("unsupported code file version {version}")));
        }
        let bits = r.read_u32()? as usize;
        if bits == 0 {
            return Err(r.bad("code length must be at least 1"));
        }
        let len = r.read_u64()? as usize;
        let wpc = bits.div_ceil(64);
        let mut words = Vec::with_capacity(len * wpc);
        for _ in 0..len * wpc {
            words.push(r.read_u64()?);
        }
        r.expect_eof()?;
        BinaryCodes::from_words(bits, len, words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sign_matrix(bits: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(bits, n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
    }

    /// Dense oracle: Hamming distance as direct disagreement count over ±1
    /// vectors.
    fn hamming_dense(a: &[f64], b: &[f64]) -> u32 {
        a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
    }

    #[test]
    fn pack_unpack_roundtrip_across_code_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for &bits in &[1, 7, 16, 63, 64, 65, 128, 130] {
            let z = random_sign_matrix(bits, 9, &mut rng);
            let codes = BinaryCodes::quantize(&z);
            assert_eq!(codes.bits(), bits);
            assert_eq!(codes.len(), 9);
            for item in 0..9 {
                assert_eq!(codes.unpack(item), z.col_to_vec(item));
            }
        }
    }

    #[test]
    fn sign_of_zero_is_positive() {
        let z = Matrix::from_vec(3, 1, vec![0.0, -0.5, 0.5]).unwrap();
        let codes = BinaryCodes::quantize(&z);
        assert_eq!(codes.unpack(0), vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn unused_high_bits_are_zero_after_packing() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let z = random_sign_matrix(70, 5, &mut rng);
        let codes = BinaryCodes::quantize(&z);
        let mask = !((1u64 << (70 % 64)) - 1);
        for item in 0..5 {
            assert_eq!(codes.code(item)[1] & mask, 0);
        }
    }

    #[test]
    fn from_words_rejects_dirty_high_bits() {
        let err = BinaryCodes::from_words(4, 1, vec![0xFF]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(BinaryCodes::from_words(4, 1, vec![0x0F]).is_ok());
    }

    #[test]
    fn hamming_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for &bits in &[8, 48, 64, 100, 128] {
            let za = random_sign_matrix(bits, 6, &mut rng);
            let zb = random_sign_matrix(bits, 6, &mut rng);
            let a = BinaryCodes::quantize(&za);
            let b = BinaryCodes::quantize(&zb);
            for i in 0..6 {
                for j in 0..6 {
                    assert_eq!(
                        a.hamming(i, &b, j).unwrap(),
                        hamming_dense(&a.unpack(i), &b.unpack(j))
                    );
                }
            }
        }
    }

    #[test]
    fn hamming_identities_hold_exactly() {
        // For ±1 codes, dot = L - 2*ham and the normalized inner product is
        // (L - 2*ham)/L.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let bits = 48;
        let za = random_sign_matrix(bits, 10, &mut rng);
        let zb = random_sign_matrix(bits, 10, &mut rng);
        let a = BinaryCodes::quantize(&za);
        let b = BinaryCodes::quantize(&zb);
        for i in 0..10 {
            for j in 0..10 {
                let dot: f64 = a.unpack(i).iter().zip(b.unpack(j)).map(|(x, y)| x * y).sum();
                let ham = a.hamming(i, &b, j).unwrap() as f64;
                assert_eq!(dot, bits as f64 - 2.0 * ham);
                assert_eq!(a.inner_product_sim(i, &b, j).unwrap(), dot / bits as f64);
            }
        }
    }

    #[test]
    fn hamming_of_identical_and_antipodal_codes() {
        let z = Matrix::from_vec(4, 1, vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let a = BinaryCodes::quantize(&z);
        let anti = BinaryCodes::quantize(&z.scale(-1.0));
        assert_eq!(a.hamming(0, &a, 0).unwrap(), 0);
        assert_eq!(a.inner_product_sim(0, &a, 0).unwrap(), 1.0);
        assert_eq!(a.hamming(0, &anti, 0).unwrap(), 4);
        assert_eq!(a.inner_product_sim(0, &anti, 0).unwrap(), -1.0);
    }

    #[test]
    fn mismatched_code_lengths_are_a_shape_error() {
        let a = BinaryCodes::from_words(4, 1, vec![0x0F]).unwrap();
        let b = BinaryCodes::from_words(8, 1, vec![0xFF]).unwrap();
        assert!(matches!(a.hamming(0, &b, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn save_load_roundtrip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let codes = BinaryCodes::quantize(&random_sign_matrix(37, 12, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.dsmb");
        codes.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = BinaryCodes::load(&path).unwrap();
        assert_eq!(loaded, codes);
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn load_rejects_bad_magic_naming_expected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.dsmb");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        let err = BinaryCodes::load(&path).unwrap_err();
        assert!(err.to_string().contains("DSMB"), "{err}");
    }

    #[test]
    fn load_reports_truncation_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let codes = BinaryCodes::quantize(&random_sign_matrix(16, 3, &mut rng));
        let mut bytes = codes.to_bytes();
        bytes.truncate(bytes.len() - 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.dsmb");
        std::fs::write(&path, &bytes).unwrap();
        // 20-byte header + two complete words; the third word starts at 36.
        match BinaryCodes::load(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 36),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn label_similarity_follows_shared_classes() {
        assert_eq!(
            label_similarity(&[1.0, 0.0, 1.0], &[0.0, 0.0, 1.0]).unwrap(),
            Similarity::Similar
        );
        assert_eq!(
            label_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]).unwrap(),
            Similarity::Dissimilar
        );
        assert_eq!(
            label_similarity(&[0.0, 1.0], &[0.0, 1.0]).unwrap(),
            Similarity::Similar
        );
        assert!(label_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn similarity_values_are_signed_units() {
        assert_eq!(Similarity::Similar.value(), 1.0);
        assert_eq!(Similarity::Dissimilar.value(), -1.0);
        assert_eq!(Similarity::Similar.indicator(), 1.0);
        assert_eq!(Similarity::Dissimilar.indicator(), 0.0);
    }
}
