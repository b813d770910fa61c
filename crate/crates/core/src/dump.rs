//! Fixed-width little-endian binary dumps.
//!
//! - pulse record, 19 bytes: index u64, basis u8 (0 rectilinear, 1 diagonal),
//!   bit u8, photon count u8 (saturating), emit time i64 ps
//! - time tag, 9 bytes: detector u8 (0 H, 1 V, 2 D, 3 A), time i64 ps

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::receiver::TimeTag;
use crate::source::{Basis, Polarization, PulseRecord};

pub const PULSE_RECORD_LEN: usize = 19;
pub const TAG_RECORD_LEN: usize = 9;

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn write_pulses<W: Write>(mut w: W, pulses: impl IntoIterator<Item = PulseRecord>) -> io::Result<()> {
    for p in pulses {
        w.write_all(&p.index.to_le_bytes())?;
        w.write_all(&[p.basis.as_bit() as u8, p.bit, p.photon_count.min(255) as u8])?;
        w.write_all(&p.emit_time_ps.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_pulses<R: Read>(mut r: R) -> io::Result<Vec<PulseRecord>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % PULSE_RECORD_LEN != 0 {
        return Err(invalid(format!("pulse dump length {} not a multiple of {PULSE_RECORD_LEN}", bytes.len())));
    }
    bytes
        .chunks_exact(PULSE_RECORD_LEN)
        .map(|c| {
            let basis = match c[8] {
                0 => Basis::Rectilinear,
                1 => Basis::Diagonal,
                b => return Err(invalid(format!("bad basis byte {b}"))),
            };
            if c[9] > 1 {
                return Err(invalid(format!("bad bit byte {}", c[9])));
            }
            Ok(PulseRecord {
                index: u64::from_le_bytes(c[0..8].try_into().unwrap()),
                basis,
                bit: c[9],
                photon_count: c[10] as u32,
                emit_time_ps: i64::from_le_bytes(c[11..19].try_into().unwrap()),
            })
        })
        .collect()
}

pub fn write_tags<W: Write>(mut w: W, tags: &[TimeTag]) -> io::Result<()> {
    for t in tags {
        w.write_all(&[t.detector.index() as u8])?;
        w.write_all(&t.time_ps.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_tags<R: Read>(mut r: R) -> io::Result<Vec<TimeTag>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % TAG_RECORD_LEN != 0 {
        return Err(invalid(format!("tag dump length {} not a multiple of {TAG_RECORD_LEN}", bytes.len())));
    }
    bytes
        .chunks_exact(TAG_RECORD_LEN)
        .map(|c| {
            let detector = Polarization::from_index(c[0]).ok_or_else(|| invalid(format!("bad detector byte {}", c[0])))?;
            Ok(TimeTag { detector, time_ps: i64::from_le_bytes(c[1..9].try_into().unwrap()) })
        })
        .collect()
}

pub fn write_tags_file(path: &Path, tags: &[TimeTag]) -> io::Result<()> {
    write_tags(BufWriter::new(std::fs::File::create(path)?), tags)
}

pub fn read_tags_file(path: &Path) -> io::Result<Vec<TimeTag>> {
    read_tags(BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{build_pulse_train, SourceConfig};

    #[test]
    fn pulse_round_trip() {
        let pulses = build_pulse_train(&SourceConfig::default(), 500).unwrap();
        let mut buf = Vec::new();
        write_pulses(&mut buf, pulses.iter().copied()).unwrap();
        assert_eq!(buf.len(), 500 * PULSE_RECORD_LEN);
        assert_eq!(read_pulses(&buf[..]).unwrap(), pulses);
    }

    #[test]
    fn tag_round_trip_and_rejects() {
        let tags: Vec<TimeTag> = (0..40)
            .map(|i| TimeTag { detector: Polarization::from_index((i % 4) as u8).unwrap(), time_ps: i * 7919 - 100 })
            .collect();
        let mut buf = Vec::new();
        write_tags(&mut buf, &tags).unwrap();
        assert_eq!(read_tags(&buf[..]).unwrap(), tags);
        assert!(read_tags(&buf[..buf.len() - 1]).is_err());
        buf[0] = 9;
        assert!(read_tags(&buf[..]).is_err());
    }
}
