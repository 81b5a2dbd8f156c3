//! The RGF1 rollout container.
//!
//! Layout:
//!
//! ```text
//! "RGF1" | header length (u64, little endian) | JSON header | payload
//! ```
//!
//! The payload is little-endian IEEE-754 `f32` in `(time, variable, lat, lon)`
//! row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, DEFAULT_EARTH_RADIUS_KM};
use super::series::RolloutSeries;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RGF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub time: usize,
    pub variable: usize,
    pub lat: usize,
    pub lon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgfHeader {
    pub dims: Dims,
    pub variables: Vec<String>,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    #[serde(default = "default_radius")]
    pub earth_radius_km: f64,
    pub start_time: String,
    pub step_seconds: i64,
    #[serde(default)]
    pub fill_value: Option<f32>,
    /// free-form record of how the file was produced; ignored by readers
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

fn default_radius() -> f64 {
    DEFAULT_EARTH_RADIUS_KM
}

impl RgfHeader {
    pub fn of(r: &RolloutSeries) -> Self {
        let (time, variable, lat, lon) = r.data().dim();
        RgfHeader {
            dims: Dims {
                time,
                variable,
                lat,
                lon,
            },
            variables: r.variables().to_vec(),
            lats: r.grid().lats().to_vec(),
            lons: r.grid().lons().to_vec(),
            earth_radius_km: r.grid().earth_radius_km(),
            start_time: r.start_time().to_rfc3339_opts(SecondsFormat::Secs, true),
            step_seconds: r.step_seconds(),
            fill_value: r.fill_value(),
            provenance: None,
        }
    }

    fn payload_values(&self) -> u64 {
        (self.dims.time * self.dims.variable * self.dims.lat * self.dims.lon) as u64
    }

    fn check_dims(&self) -> Result<()> {
        let d = &self.dims;
        let mut problems = Vec::new();
        if d.variable != self.variables.len() {
            problems.push(format!(
                "dims.variable={} but {} names",
                d.variable,
                self.variables.len()
            ));
        }
        if d.lat != self.lats.len() {
            problems.push(format!("dims.lat={} but {} latitudes", d.lat, self.lats.len()));
        }
        if d.lon != self.lons.len() {
            problems.push(format!("dims.lon={} but {} longitudes", d.lon, self.lons.len()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::HeaderMismatch(problems.join("; ")))
        }
    }
}

pub fn write_rollout(r: &RolloutSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_rollout_to(r, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Like [`write_rollout`], recording `provenance` in the header.
pub fn write_rollout_with_provenance(
    r: &RolloutSeries,
    provenance: &serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut header = RgfHeader::of(r);
    header.provenance = Some(provenance.clone());
    let mut w = BufWriter::new(File::create(path)?);
    write_with_header(r, &header, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_rollout_to<W: Write>(r: &RolloutSeries, w: &mut W) -> Result<()> {
    write_with_header(r, &RgfHeader::of(r), w)
}

fn write_with_header<W: Write>(r: &RolloutSeries, header: &RgfHeader, w: &mut W) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(1 << 16);
    for chunk in r.data().as_slice().expect("standard layout").chunks(1 << 14) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_rollout(path: impl AsRef<Path>) -> Result<RolloutSeries> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    read_rollout_from(BufReader::new(file), Some(len))
}

/// Read only the header, leaving the payload untouched.
pub fn read_header(path: impl AsRef<Path>) -> Result<RgfHeader> {
    let mut r = BufReader::new(File::open(path)?);
    read_header_from(&mut r).map(|(h, _)| h)
}

fn read_header_from<R: Read>(r: &mut R) -> Result<(RgfHeader, u64)> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, 4)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut len_bytes = [0u8; 8];
    read_exact_or_truncated(r, &mut len_bytes, 12)?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > 1 << 32 {
        return Err(Error::HeaderMismatch(format!("implausible header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    read_exact_or_truncated(r, &mut header_bytes, 12 + header_len)?;
    let header: RgfHeader = serde_json::from_slice(&header_bytes)?;
    header.check_dims()?;
    Ok((header, 12 + header_len))
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], expected_total: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated {
            expected: expected_total,
            found: expected_total - buf.len() as u64,
        },
        _ => Error::Io(e),
    })
}

/// Parse a complete RGF1 stream. `total_len`, when known, lets size errors
/// be reported before any payload is allocated.
pub fn read_rollout_from<R: Read>(mut r: R, total_len: Option<u64>) -> Result<RolloutSeries> {
    let (header, offset) = read_header_from(&mut r)?;
    let n = header.payload_values();
    let expected = offset + 4 * n;
    if let Some(total) = total_len {
        if total < expected {
            return Err(Error::Truncated { expected, found: total });
        }
        if total > expected {
            return Err(Error::TrailingBytes(total - expected));
        }
    }
    let mut values = Vec::with_capacity(n as usize);
    let mut buf = vec![0u8; 1 << 16];
    let mut remaining = 4 * n;
    while remaining > 0 {
        let take = remaining.min(buf.len() as u64) as usize;
        let got = read_fully(&mut r, &mut buf[..take])?;
        if got < take {
            return Err(Error::Truncated {
                expected,
                found: expected - remaining + got as u64,
            });
        }
        values.extend(
            buf[..take]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        remaining -= take as u64;
    }
    if total_len.is_none() {
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? > 0 {
            let mut rest = Vec::new();
            r.read_to_end(&mut rest)?;
            return Err(Error::TrailingBytes(1 + rest.len() as u64));
        }
    }

    let d = &header.dims;
    let data = Array4::from_shape_vec((d.time, d.variable, d.lat, d.lon), values)
        .map_err(|e| Error::HeaderMismatch(e.to_string()))?;
    let grid = GridSpec::new(header.lats, header.lons)?.with_earth_radius(header.earth_radius_km)?;
    let start = DateTime::parse_from_rfc3339(&header.start_time)
        .map_err(|e| Error::HeaderMismatch(format!("start_time `{}`: {e}", header.start_time)))?
        .with_timezone(&Utc);
    RolloutSeries::with_fill_value(
        grid,
        header.variables,
        start,
        header.step_seconds,
        header.fill_value,
        data,
    )
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn sample(nt: usize, seed: u64) -> RolloutSeries {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::regular(5, 8).unwrap();
        let data = Array4::from_shape_fn((nt, 2, 5, 8), |_| rng.random::<f32>() * 100.0 - 50.0);
        RolloutSeries::new(
            grid,
            vec!["T2m".into(), "Z500".into()],
            Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            21_600,
            data,
        )
        .unwrap()
    }

    fn encode(r: &RolloutSeries) -> Vec<u8> {
        let mut v = Vec::new();
        write_rollout_to(r, &mut v).unwrap();
        v
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..1000, nt in 1usize..6) {
            let r = sample(nt, seed);
            let bytes = encode(&r);
            let back = read_rollout_from(&bytes[..], Some(bytes.len() as u64)).unwrap();
            prop_assert_eq!(RgfHeader::of(&back), RgfHeader::of(&r));
            let a: Vec<u32> = r.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn file_round_trip_with_fill_value() {
        let r = sample(3, 1);
        let r = RolloutSeries::with_fill_value(
            r.grid().clone(),
            r.variables().to_vec(),
            r.start_time(),
            r.step_seconds(),
            Some(-9999.0),
            r.data().clone(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.rgf");
        write_rollout(&r, &p).unwrap();
        assert_eq!(read_rollout(&p).unwrap(), r);
        assert_eq!(read_header(&p).unwrap().fill_value, Some(-9999.0));
    }

    #[test]
    fn missing_timestep_is_truncation() {
        // header claims 10 steps, payload holds 9
        let r = sample(10, 2);
        let bytes = encode(&r);
        let cut = bytes.len() - 2 * 5 * 8 * 4;
        let err = read_rollout_from(&bytes[..cut], Some(cut as u64)).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
        let err = read_rollout_from(&bytes[..cut], None).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn unknown_magic() {
        let mut bytes = encode(&sample(1, 3));
        bytes[..4].copy_from_slice(b"NETC");
        assert!(matches!(
            read_rollout_from(&bytes[..], None),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn header_dims_disagreeing_with_axes() {
        let r = sample(1, 4);
        let mut h = RgfHeader::of(&r);
        h.dims.lat = 6;
        let hb = serde_json::to_vec(&h).unwrap();
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(hb.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&hb);
        bytes.extend(std::iter::repeat_n(0u8, 4 * 2 * 6 * 8));
        assert!(matches!(
            read_rollout_from(&bytes[..], None),
            Err(Error::HeaderMismatch(_))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample(1, 5));
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        let n = bytes.len() as u64;
        assert!(matches!(
            read_rollout_from(&bytes[..], Some(n)),
            Err(Error::TrailingBytes(4))
        ));
        assert!(matches!(
            read_rollout_from(&bytes[..], None),
            Err(Error::TrailingBytes(4))
        ));
    }
}
