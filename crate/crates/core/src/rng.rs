//! Counter-based, splittable innovation streams.
//!
//! A [`RngStream`] is identified by a [`StreamKey`] and a draw counter. The
//! k-th 64-bit word of a stream is a keyed hash of `k`, so any stream can be
//! derived in O(1) from its key and replayed from any position. Streams are
//! never split by consuming a parent: two keys that differ in any field give
//! unrelated sequences regardless of the order in which they were created.
//!
//! Every scalar variate consumes a fixed number of words except Gamma draws
//! with a shape other than one. Normals are produced by inversion so a
//! Gaussian vector of length `n` is always the first `n` normals from the
//! current position (the prefix property the level coupling relies on).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bumped whenever the mapping from keys to output words changes.
pub const KEY_SCHEMA_VERSION: u32 = 1;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamPurpose {
    /// Innovations shared by the fine/coarse pair of level `l >= 1`.
    LevelPair,
    /// The single chain estimating the level-0 term.
    Level0,
    /// Single-level baseline chain at the level given in the key.
    SingleLevel,
    /// Source of per-replicate seeds.
    ReplicateRoot,
    /// Exact posterior draws and other reference computations.
    Oracle,
    /// Synthetic data generation.
    Data,
    /// Random states and innovations for assumption probes.
    Probe,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::LevelPair => 0x4C50,
            StreamPurpose::Level0 => 0x4C30,
            StreamPurpose::SingleLevel => 0x534C,
            StreamPurpose::ReplicateRoot => 0x5252,
            StreamPurpose::Oracle => 0x4F52,
            StreamPurpose::Data => 0x4441,
            StreamPurpose::Probe => 0x5052,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub purpose: StreamPurpose,
    pub level: u64,
    pub replicate: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, purpose: StreamPurpose, level: usize, replicate: u64) -> Self {
        Self {
            master_seed,
            purpose,
            level: level as u64,
            replicate,
        }
    }

    fn hash_words(&self) -> (u64, u64) {
        let mut acc = mix64(self.master_seed ^ 0x243F_6A88_85A3_08D3);
        acc = mix64(acc ^ self.purpose.tag().wrapping_mul(0xA076_1D64_78BD_642F));
        acc = mix64(acc ^ self.level.wrapping_add(1).wrapping_mul(0xE703_7ED1_A0B4_28DB));
        acc = mix64(acc ^ self.replicate.wrapping_add(1).wrapping_mul(0x8EBC_6AF0_9C88_C6E3));
        let second = mix64(acc ^ 0xD1B5_4A32_D192_ED03);
        (acc, second)
    }
}

/// A deterministic stream of innovations.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: StreamKey,
    offset: u64,
    whitener: u64,
    position: u64,
}

/// Derive the stream owned by `(purpose, level, replicate)` under `master_seed`.
pub fn derive_stream(
    master_seed: u64,
    purpose: StreamPurpose,
    level: usize,
    replicate: u64,
) -> RngStream {
    RngStream::new(StreamKey::new(master_seed, purpose, level, replicate))
}

impl RngStream {
    pub fn new(key: StreamKey) -> Self {
        Self::at_position(key, 0)
    }

    /// Reconstruct a stream as it was after `position` words were consumed.
    pub fn at_position(key: StreamKey, position: u64) -> Self {
        let (offset, whitener) = key.hash_words();
        Self {
            key,
            offset,
            whitener,
            position,
        }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Number of 64-bit words consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let word = mix64(
            self.whitener ^ mix64(self.offset.wrapping_add(self.position.wrapping_mul(GOLDEN))),
        );
        self.position += 1;
        word
    }

    /// Uniform on the open interval (0, 1); one word.
    #[inline]
    pub fn draw_uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    /// Standard normal by inversion; one word.
    #[inline]
    pub fn draw_gaussian(&mut self) -> f64 {
        standard_normal_quantile(self.draw_uniform())
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for slot in out.iter_mut() {
            *slot = self.draw_gaussian();
        }
    }

    /// `n` independent standard normals drawn in index order. `n = 0`
    /// returns an empty vector without consuming anything.
    pub fn draw_gaussian_vector(&mut self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.fill_gaussian(&mut out);
        out
    }

    /// Gamma(shape, rate 1).
    ///
    /// Shape one is the exponential inverse CDF `-ln(u)` and uses exactly one
    /// word. Other shapes use the Marsaglia-Tsang squeeze, with the usual
    /// `u^(1/shape)` boost below one, and consume a data-dependent number of
    /// words.
    pub fn draw_gamma(&mut self, shape: f64) -> Result<f64> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::Domain(format!(
                "gamma shape must be positive and finite, got {shape}"
            )));
        }
        if shape == 1.0 {
            return Ok(-self.draw_uniform().ln());
        }
        if shape < 1.0 {
            let boosted = self.marsaglia_tsang(shape + 1.0);
            let u = self.draw_uniform();
            return Ok(boosted * u.powf(1.0 / shape));
        }
        Ok(self.marsaglia_tsang(shape))
    }

    fn marsaglia_tsang(&mut self, shape: f64) -> f64 {
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.draw_gaussian();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.draw_uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16), accurate
/// to about 1e-16 relative on (0, 1).
pub fn standard_normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}
