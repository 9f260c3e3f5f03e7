//! Versioned binary parameter file.
//!
//! Everything is little-endian. The file is a fixed header, a payload whose
//! size follows from the header, a constants block and a CRC-32 footer over
//! all preceding bytes. Traces are not stored; an imported network starts
//! from independence priors if it is trained further.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BCPN"
//! 4       4     version (1)
//! 8       8     total file length in bytes
//! 16      1     precision tag (0 fp32, 1 fp16, 2 mixed Q3.12)
//! 17      1     strictness tag (0 strict, 1 storage-only)
//! 18      2     reserved, zero
//! 20      4x11  n_input_hcu, input_mcu_per_hcu, n_hidden_hcu,
//!               hidden_mcu_per_hcu, n_classes, n_act, n_sil,
//!               epochs_unsup, epochs_sup, rewire_period (0 = auto), n_replace
//! 64      8     seed
//! 72      8     init_sample_mix (f64)
//! 80      8     homeostasis (f64)
//! 88      ...   payload:
//!               per hidden HCU: n_act active then n_sil silent indices (u32)
//!               input->hidden weights, one per stored pair
//!               input->hidden biases
//!               hidden->output weights
//!               hidden->output biases
//!               (elements are f32, binary16 bits, or Q3.12 raw i16)
//! ...     32    constants: tau_p, alpha, beta, eps (f64)
//! end-4   4     CRC-32 (IEEE) of every preceding byte
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::learning::EPS;
use crate::network::{build_network, NetworkState, SparseConnectivity};
use crate::precision::{cast_model, Fixed16, Half, Precision, PrecisionMode, Strictness};

pub const MAGIC: [u8; 4] = *b"BCPN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 88;
const CONSTANTS_LEN: usize = 32;
const FOOTER_LEN: usize = 4;

/// Header fields plus the constants block.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamHeader {
    pub version: u32,
    pub file_len: u64,
    pub mode: PrecisionMode,
    pub config: NetworkConfig,
    pub tau_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub crc: u32,
}

impl fmt::Display for ParamHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version {}", self.version)?;
        writeln!(f, "file_len {}", self.file_len)?;
        writeln!(f, "precision {}", self.mode)?;
        for (k, v) in self.config.entries() {
            if k != "precision" {
                writeln!(f, "{k} {v}")?;
            }
        }
        writeln!(f, "alpha {}", self.alpha)?;
        writeln!(f, "eps {}", self.eps)?;
        write!(f, "crc32 {:#010x}", self.crc)
    }
}

/// Number of weight and bias elements in the payload.
fn element_counts(c: &NetworkConfig) -> [usize; 4] {
    let ih = c.n_hidden_hcu * c.n_slots() * c.input_mcu_per_hcu * c.hidden_mcu_per_hcu;
    [ih, c.n_hidden_mcu(), c.n_hidden_mcu() * c.n_classes, c.n_classes]
}

/// Exact file size for a configuration and precision.
pub fn file_len(config: &NetworkConfig, precision: Precision) -> usize {
    let elems: usize = element_counts(config).iter().sum();
    HEADER_LEN
        + 4 * config.n_hidden_hcu * config.n_slots()
        + elems * precision.element_bytes()
        + CONSTANTS_LEN
        + FOOTER_LEN
}

fn u32_field(v: usize, name: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::MalformedModel(format!("{name} {v} does not fit in 32 bits")))
}

/// Serializes `net` with parameters on the storage grid of `mode`.
pub fn encode_params(net: &NetworkState, mode: PrecisionMode) -> Result<Vec<u8>> {
    let c = &net.config;
    let (q, _) = cast_model(net, mode);
    let total = file_len(c, mode.precision);
    let mut b = Vec::with_capacity(total);
    b.extend_from_slice(&MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(total as u64).to_le_bytes());
    b.push(mode.precision.tag());
    b.push(mode.strictness.tag());
    b.extend_from_slice(&[0, 0]);
    for (name, v) in [
        ("n_input_hcu", c.n_input_hcu),
        ("input_mcu_per_hcu", c.input_mcu_per_hcu),
        ("n_hidden_hcu", c.n_hidden_hcu),
        ("hidden_mcu_per_hcu", c.hidden_mcu_per_hcu),
        ("n_classes", c.n_classes),
        ("n_act", c.n_act),
        ("n_sil", c.n_sil),
        ("epochs_unsup", c.epochs_unsup),
        ("epochs_sup", c.epochs_sup),
        ("rewire_period", c.rewire_period.unwrap_or(0)),
        ("n_replace", c.n_replace),
    ] {
        b.extend_from_slice(&u32_field(v, name)?.to_le_bytes());
    }
    b.extend_from_slice(&c.seed.to_le_bytes());
    b.extend_from_slice(&c.init_sample_mix.to_le_bytes());
    b.extend_from_slice(&c.homeostasis.to_le_bytes());
    debug_assert_eq!(b.len(), HEADER_LEN);

    for &i in q.input_hidden.connectivity.indices() {
        b.extend_from_slice(&i.to_le_bytes());
    }
    for values in [
        &q.input_hidden.weights,
        &q.input_hidden.biases,
        &q.hidden_output.weights,
        &q.hidden_output.biases,
    ] {
        for &v in values.iter() {
            match mode.precision {
                Precision::Fp32 => b.extend_from_slice(&v.to_le_bytes()),
                Precision::Fp16 => b.extend_from_slice(&Half::from_f64(v as f64).to_bits().to_le_bytes()),
                Precision::MixedQ312 => b.extend_from_slice(&Fixed16::from_f64(v as f64).raw().to_le_bytes()),
            }
        }
    }
    for k in [c.tau_p, net.alpha, c.beta, EPS] {
        b.extend_from_slice(&k.to_le_bytes());
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(b.len(), total);
    Ok(b)
}

/// Writes the parameter file atomically: a temporary file in the target
/// directory is filled, synced and renamed over `path`.
pub fn export_params(net: &NetworkState, mode: PrecisionMode, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_params(net, mode)?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(Error::TruncatedModel {
                found: self.bytes.len(),
                needed: end,
            });
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Validates framing and CRC, then decodes the header fields.
fn parse_header(bytes: &[u8]) -> Result<ParamHeader> {
    if bytes.len() < 16 {
        return Err(Error::TruncatedModel {
            found: bytes.len(),
            needed: HEADER_LEN + CONSTANTS_LEN + FOOTER_LEN,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadModelMagic { found: magic });
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let declared = r.u64()?;
    if (bytes.len() as u64) < declared {
        return Err(Error::TruncatedModel {
            found: bytes.len(),
            needed: declared as usize,
        });
    }
    if bytes.len() as u64 != declared || declared < (HEADER_LEN + CONSTANTS_LEN + FOOTER_LEN) as u64 {
        return Err(Error::MalformedModel(format!(
            "file is {} bytes but declares {declared}",
            bytes.len()
        )));
    }
    let body = &bytes[..bytes.len() - FOOTER_LEN];
    let stored = u32::from_le_bytes(bytes[bytes.len() - FOOTER_LEN..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let ptag = r.take(1)?[0];
    let precision = Precision::from_tag(ptag).ok_or(Error::UnknownPrecisionTag(ptag))?;
    let stag = r.take(1)?[0];
    let strictness = Strictness::from_tag(stag)
        .ok_or_else(|| Error::MalformedModel(format!("unknown strictness tag {stag}")))?;
    r.take(2)?;
    let mut f = [0usize; 11];
    for v in f.iter_mut() {
        *v = r.u32()? as usize;
    }
    let mode = PrecisionMode::new(precision, strictness);
    let mut config = NetworkConfig {
        n_input_hcu: f[0],
        input_mcu_per_hcu: f[1],
        n_hidden_hcu: f[2],
        hidden_mcu_per_hcu: f[3],
        n_classes: f[4],
        n_act: f[5],
        n_sil: f[6],
        epochs_unsup: f[7],
        epochs_sup: f[8],
        rewire_period: (f[9] != 0).then_some(f[9]),
        n_replace: f[10],
        seed: r.u64()?,
        init_sample_mix: r.f64()?,
        homeostasis: r.f64()?,
        precision: mode,
        ..NetworkConfig::mnist()
    };
    let mut k = Reader {
        bytes,
        at: bytes.len() - FOOTER_LEN - CONSTANTS_LEN,
    };
    let tau_p = k.f64()?;
    let alpha = k.f64()?;
    let beta = k.f64()?;
    let eps = k.f64()?;
    config.tau_p = tau_p;
    config.beta = beta;
    config.validate().map_err(|e| Error::MalformedModel(e.to_string()))?;
    let need = file_len(&config, precision) as u64;
    if need != declared {
        return Err(Error::MalformedModel(format!(
            "configuration implies {need} bytes, file declares {declared}"
        )));
    }
    Ok(ParamHeader {
        version,
        file_len: declared,
        mode,
        config,
        tau_p,
        alpha,
        beta,
        eps,
        crc: stored,
    })
}

/// Reads and validates only the header of a parameter file.
pub fn read_header(path: impl AsRef<Path>) -> Result<ParamHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_header(&bytes)
}

/// Decodes a parameter file held in memory.
pub fn decode_params(bytes: &[u8]) -> Result<NetworkState> {
    let h = parse_header(bytes)?;
    let c = &h.config;
    let mut net = build_network(c)?;
    let mut r = Reader {
        bytes,
        at: HEADER_LEN,
    };
    let n_idx = c.n_hidden_hcu * c.n_slots();
    let mut indices = Vec::with_capacity(n_idx);
    for _ in 0..n_idx {
        indices.push(r.u32()?);
    }
    net.input_hidden.connectivity = SparseConnectivity::from_indices(c.n_input_hcu, c.n_act, c.n_sil, indices)?;

    let precision = h.mode.precision;
    let mut read_values = |out: &mut Vec<f32>| -> Result<()> {
        let w = precision.element_bytes();
        let raw = r.take(out.len() * w)?;
        for (o, b) in out.iter_mut().zip(raw.chunks_exact(w)) {
            *o = match precision {
                Precision::Fp32 => f32::from_le_bytes(b.try_into().unwrap()),
                Precision::Fp16 => Half::from_bits(u16::from_le_bytes(b.try_into().unwrap())).to_f32(),
                Precision::MixedQ312 => Fixed16::from_raw(i16::from_le_bytes(b.try_into().unwrap())).to_f32(),
            };
        }
        Ok(())
    };
    read_values(&mut net.input_hidden.weights)?;
    read_values(&mut net.input_hidden.biases)?;
    read_values(&mut net.hidden_output.weights)?;
    read_values(&mut net.hidden_output.biases)?;
    net.stored_precision = precision;
    net.alpha = h.alpha;
    Ok(net)
}

/// Loads an inference-ready network. The CRC is checked before any field is
/// used; traces come back as independence priors.
pub fn import_params(path: impl AsRef<Path>) -> Result<NetworkState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small() -> NetworkConfig {
        NetworkConfig {
            n_input_hcu: 16,
            n_hidden_hcu: 3,
            hidden_mcu_per_hcu: 5,
            n_classes: 4,
            n_act: 4,
            n_sil: 3,
            n_replace: 1,
            ..NetworkConfig::mnist()
        }
    }

    fn randomized(cfg: &NetworkConfig) -> NetworkState {
        let mut net = build_network(cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for p in [&mut net.input_hidden, &mut net.hidden_output] {
            for w in p.weights.iter_mut().chain(p.biases.iter_mut()) {
                *w = rng.gen_range(-12.0..3.0);
            }
        }
        net.alpha = 1e-3;
        net
    }

    #[test]
    fn fresh_fp32_file() {
        let net = build_network(&small()).unwrap();
        let b = encode_params(&net, PrecisionMode::FP32).unwrap();
        assert_eq!(&b[..4], b"BCPN");
        assert_eq!(b.len(), file_len(&net.config, Precision::Fp32));
        let back = decode_params(&b).unwrap();
        assert!(back.input_hidden.weights.iter().all(|&w| w == 0.0));
        assert_eq!(back.input_hidden.connectivity, net.input_hidden.connectivity);
    }

    #[test]
    fn fp32_round_trip_is_bit_identical() {
        let net = randomized(&small());
        let back = decode_params(&encode_params(&net, PrecisionMode::FP32).unwrap()).unwrap();
        for (a, b) in [
            (&net.input_hidden.weights, &back.input_hidden.weights),
            (&net.input_hidden.biases, &back.input_hidden.biases),
            (&net.hidden_output.weights, &back.hidden_output.weights),
            (&net.hidden_output.biases, &back.hidden_output.biases),
        ] {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.config, net.config);
        assert_eq!(back.alpha, net.alpha);
    }

    #[test]
    fn reduced_files_hold_16_bit_elements() {
        let net = randomized(&small());
        for (mode, tag) in [(PrecisionMode::FP16, 1u8), (PrecisionMode::MIXED, 2)] {
            let b = encode_params(&net, mode).unwrap();
            assert_eq!(b[16], tag);
            let elems: usize = element_counts(&net.config).iter().sum();
            assert_eq!(b.len(), HEADER_LEN + 4 * 3 * 7 + 2 * elems + 36);
            let back = decode_params(&b).unwrap();
            let (cast, _) = cast_model(&net, mode);
            assert_eq!(back.input_hidden.weights, cast.input_hidden.weights);
            assert_eq!(back.hidden_output.biases, cast.hidden_output.biases);
            assert_eq!(back.stored_precision, mode.precision);
        }
    }

    #[test]
    fn mnist_fp16_size() {
        let c = NetworkConfig::mnist();
        let elems = 32 * 128 * 2 * 128 + 32 * 128 + 32 * 128 * 10 + 10;
        assert_eq!(file_len(&c, Precision::Fp16), 88 + 4 * 32 * 128 + 2 * elems + 32 + 4);
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let net = randomized(&small());
        let b = encode_params(&net, PrecisionMode::FP16).unwrap();
        for byte in 0..b.len() {
            for bit in 0..8 {
                let mut c = b.clone();
                c[byte] ^= 1 << bit;
                assert!(decode_params(&c).is_err(), "flip at {byte}:{bit} undetected");
            }
        }
    }

    #[test]
    fn distinct_errors() {
        let net = randomized(&small());
        let b = encode_params(&net, PrecisionMode::FP32).unwrap();
        assert!(matches!(decode_params(&b[..3]), Err(Error::TruncatedModel { .. })));
        assert!(matches!(
            decode_params(&b[..b.len() - 10]),
            Err(Error::TruncatedModel { .. })
        ));
        let mut c = b.clone();
        c[0] = b'X';
        assert!(matches!(decode_params(&c), Err(Error::BadModelMagic { .. })));
        let mut c = b.clone();
        c[4] = 2;
        assert!(matches!(decode_params(&c), Err(Error::UnsupportedVersion(2))));
        let mut c = b.clone();
        c[200] ^= 4;
        assert!(matches!(decode_params(&c), Err(Error::CrcMismatch { .. })));
        let mut c = b.clone();
        c[16] = 9;
        let n = c.len();
        let crc = crc32fast::hash(&c[..n - 4]);
        c[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_params(&c), Err(Error::UnknownPrecisionTag(9))));
    }

    #[test]
    fn atomic_export_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let net = randomized(&small());
        let (a, b) = (dir.path().join("a.bcpn"), dir.path().join("b.bcpn"));
        export_params(&net, PrecisionMode::MIXED, &a).unwrap();
        export_params(&net, PrecisionMode::MIXED, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        export_params(&net, PrecisionMode::MIXED, &a).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
        let h = read_header(&a).unwrap();
        assert_eq!(h.mode, PrecisionMode::MIXED);
        assert_eq!(h.eps, EPS);
        assert!(h.to_string().contains("n_hidden_hcu 3"));
        assert!(matches!(import_params(dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
