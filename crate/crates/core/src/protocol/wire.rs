//! Framed binary messages for the classical channel.
//!
//! ```text
//! +--------+---------+------+------------+---------+-----------+
//! | "QKD1" | version | type | length u32 | payload | CRC32 u32 |
//! +--------+---------+------+------------+---------+-----------+
//! ```
//!
//! All integers are little-endian. The CRC (IEEE) covers header and
//! payload. Index lists are u64 arrays; bit sequences are a u64 bit count
//! followed by the bits packed LSB-first, with padding bits required to be
//! zero.

use thiserror::Error;

use crate::source::Basis;

pub const MAGIC: [u8; 4] = *b"QKD1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;
pub const MAX_PAYLOAD: u32 = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("need at least {needed} bytes to continue decoding")]
    NeedMoreBytes { needed: usize },
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds limit")]
    Oversized(u32),
    #[error("corrupt frame: checksum 0x{actual:08x}, expected 0x{expected:08x}")]
    Corrupt { expected: u32, actual: u32 },
    #[error("malformed {kind} payload: {reason}")]
    Malformed { kind: &'static str, reason: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    SessionParams = 0x02,
    DetectionReport = 0x10,
    MatchMask = 0x11,
    SampleIndices = 0x20,
    SampleBits = 0x21,
    QberResult = 0x22,
    Abort = 0x30,
    Done = 0x31,
}

impl MessageType {
    pub fn from_u8(b: u8) -> Option<Self> {
        use MessageType::*;
        Some(match b {
            0x01 => Hello,
            0x02 => SessionParams,
            0x10 => DetectionReport,
            0x11 => MatchMask,
            0x20 => SampleIndices,
            0x21 => SampleBits,
            0x22 => QberResult,
            0x30 => Abort,
            0x31 => Done,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Alice,
    Bob,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub role: Role,
    pub session_id: u64,
    pub scenario_hash: [u8; 32],
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum SampleFraction {
    /// Benchmark mode: disclose the whole sifted key.
    All,
    Fraction(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionParams {
    pub session_id: u64,
    pub n_pulses: u64,
    pub qber_abort_threshold: f64,
    pub sample_fraction: SampleFraction,
    pub rng_seed: u64,
}

/// Bob's detected pulses with his measurement basis; never the bit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DetectionReport {
    pub entries: Vec<(u64, Basis)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchMask {
    pub keep: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QberReport {
    pub disclosed_count: u64,
    pub error_count: u64,
    pub qber: f64,
    pub threshold: f64,
    pub abort: bool,
}

impl QberReport {
    pub fn new(disclosed_count: u64, error_count: u64, threshold: f64) -> Self {
        let qber = if disclosed_count == 0 { 0.0 } else { error_count as f64 / disclosed_count as f64 };
        Self { disclosed_count, error_count, qber, threshold, abort: qber > threshold }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    ParameterMismatch = 1,
    ProtocolViolation = 2,
    QberAboveThreshold = 3,
    SyncFailure = 4,
    Inconclusive = 5,
    PeerError = 6,
}

impl AbortReason {
    fn from_u8(b: u8) -> Option<Self> {
        use AbortReason::*;
        Some(match b {
            1 => ParameterMismatch,
            2 => ProtocolViolation,
            3 => QberAboveThreshold,
            4 => SyncFailure,
            5 => Inconclusive,
            6 => PeerError,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Handshake = 1,
    Params = 2,
    QuantumPhase = 3,
    DetectionReport = 4,
    MatchMask = 5,
    QberExchange = 6,
    Finish = 7,
}

impl SessionPhase {
    fn from_u8(b: u8) -> Option<Self> {
        use SessionPhase::*;
        Some(match b {
            1 => Handshake,
            2 => Params,
            3 => QuantumPhase,
            4 => DetectionReport,
            5 => MatchMask,
            6 => QberExchange,
            7 => Finish,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbortNotice {
    pub reason: AbortReason,
    pub phase: SessionPhase,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello(Hello),
    SessionParams(SessionParams),
    DetectionReport(DetectionReport),
    MatchMask(MatchMask),
    SampleIndices(Vec<u64>),
    SampleBits(Vec<bool>),
    QberResult(QberReport),
    Abort(AbortNotice),
    Done { sifted_len: u64 },
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::Hello(_) => MessageType::Hello,
            Message::SessionParams(_) => MessageType::SessionParams,
            Message::DetectionReport(_) => MessageType::DetectionReport,
            Message::MatchMask(_) => MessageType::MatchMask,
            Message::SampleIndices(_) => MessageType::SampleIndices,
            Message::SampleBits(_) => MessageType::SampleBits,
            Message::QberResult(_) => MessageType::QberResult,
            Message::Abort(_) => MessageType::Abort,
            Message::Done { .. } => MessageType::Done,
        }
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bits(out: &mut Vec<u8>, bits: impl ExactSizeIterator<Item = bool>) {
    put_u64(out, bits.len() as u64);
    let start = out.len();
    out.resize(start + bits.len().div_ceil(8), 0);
    for (i, b) in bits.enumerate() {
        if b {
            out[start + i / 8] |= 1 << (i % 8);
        }
    }
}

fn encode_payload(msg: &Message, out: &mut Vec<u8>) {
    match msg {
        Message::Hello(h) => {
            out.push(match h.role {
                Role::Alice => 0,
                Role::Bob => 1,
            });
            put_u64(out, h.session_id);
            out.extend_from_slice(&h.scenario_hash);
        }
        Message::SessionParams(p) => {
            put_u64(out, p.session_id);
            put_u64(out, p.n_pulses);
            out.extend_from_slice(&p.qber_abort_threshold.to_le_bytes());
            match p.sample_fraction {
                SampleFraction::All => {
                    out.push(0);
                    out.extend_from_slice(&1.0f64.to_le_bytes());
                }
                SampleFraction::Fraction(f) => {
                    out.push(1);
                    out.extend_from_slice(&f.to_le_bytes());
                }
            }
            put_u64(out, p.rng_seed);
        }
        Message::DetectionReport(r) => {
            put_u64(out, r.entries.len() as u64);
            for (idx, _) in &r.entries {
                put_u64(out, *idx);
            }
            put_bits(out, r.entries.iter().map(|(_, b)| b.as_bit()));
        }
        Message::MatchMask(m) => put_bits(out, m.keep.iter().copied()),
        Message::SampleIndices(v) => {
            put_u64(out, v.len() as u64);
            for i in v {
                put_u64(out, *i);
            }
        }
        Message::SampleBits(b) => put_bits(out, b.iter().copied()),
        Message::QberResult(q) => {
            put_u64(out, q.disclosed_count);
            put_u64(out, q.error_count);
            out.extend_from_slice(&q.threshold.to_le_bytes());
            out.push(q.abort as u8);
        }
        Message::Abort(a) => {
            out.push(a.reason as u8);
            out.push(a.phase as u8);
            out.extend_from_slice(&(a.detail.len() as u32).to_le_bytes());
            out.extend_from_slice(a.detail.as_bytes());
        }
        Message::Done { sifted_len } => put_u64(out, *sifted_len),
    }
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.message_type() as u8);
    out.extend_from_slice(&[0; 4]);
    encode_payload(msg, &mut out);
    let len = (out.len() - HEADER_LEN) as u32;
    out[6..10].copy_from_slice(&len.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: &'static str) -> FrameError {
        FrameError::Malformed { kind: self.kind, reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.buf.len() < n {
            return Err(self.err("truncated payload"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FrameError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self, elem_size: usize) -> Result<usize, FrameError> {
        let n = self.u64()?;
        if n > (self.buf.len() as u64).saturating_mul(8) / elem_size.max(1) as u64 + 1 {
            return Err(self.err("count exceeds payload"));
        }
        Ok(n as usize)
    }

    fn u64s(&mut self) -> Result<Vec<u64>, FrameError> {
        let n = self.count(64)?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("count overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn bits(&mut self) -> Result<Vec<bool>, FrameError> {
        let n = self.count(1)?;
        let raw = self.take(n.div_ceil(8))?;
        if n % 8 != 0 && raw[raw.len() - 1] >> (n % 8) != 0 {
            return Err(self.err("nonzero padding bits"));
        }
        Ok((0..n).map(|i| raw[i / 8] >> (i % 8) & 1 == 1).collect())
    }

    fn finish(&self) -> Result<(), FrameError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.err("trailing bytes"))
        }
    }
}

fn decode_payload(ty: MessageType, payload: &[u8]) -> Result<Message, FrameError> {
    let kind = match ty {
        MessageType::Hello => "HELLO",
        MessageType::SessionParams => "SESSION_PARAMS",
        MessageType::DetectionReport => "DETECTION_REPORT",
        MessageType::MatchMask => "MATCH_MASK",
        MessageType::SampleIndices => "SAMPLE_INDICES",
        MessageType::SampleBits => "SAMPLE_BITS",
        MessageType::QberResult => "QBER_RESULT",
        MessageType::Abort => "ABORT",
        MessageType::Done => "DONE",
    };
    let mut c = Cursor { buf: payload, kind };
    let msg = match ty {
        MessageType::Hello => {
            let role = match c.u8()? {
                0 => Role::Alice,
                1 => Role::Bob,
                _ => return Err(c.err("bad role")),
            };
            let session_id = c.u64()?;
            let scenario_hash = c.take(32)?.try_into().unwrap();
            Message::Hello(Hello { role, session_id, scenario_hash })
        }
        MessageType::SessionParams => {
            let session_id = c.u64()?;
            let n_pulses = c.u64()?;
            let qber_abort_threshold = c.f64()?;
            let mode = c.u8()?;
            let f = c.f64()?;
            let sample_fraction = match mode {
                0 if f == 1.0 => SampleFraction::All,
                1 => SampleFraction::Fraction(f),
                _ => return Err(c.err("bad sample mode")),
            };
            let rng_seed = c.u64()?;
            Message::SessionParams(SessionParams { session_id, n_pulses, qber_abort_threshold, sample_fraction, rng_seed })
        }
        MessageType::DetectionReport => {
            let indices = c.u64s()?;
            let bases = c.bits()?;
            if bases.len() != indices.len() {
                return Err(c.err("basis count differs from index count"));
            }
            Message::DetectionReport(DetectionReport {
                entries: indices.into_iter().zip(bases.into_iter().map(Basis::from_bit)).collect(),
            })
        }
        MessageType::MatchMask => Message::MatchMask(MatchMask { keep: c.bits()? }),
        MessageType::SampleIndices => Message::SampleIndices(c.u64s()?),
        MessageType::SampleBits => Message::SampleBits(c.bits()?),
        MessageType::QberResult => {
            let disclosed = c.u64()?;
            let errors = c.u64()?;
            let threshold = c.f64()?;
            let abort = match c.u8()? {
                0 => false,
                1 => true,
                _ => return Err(c.err("bad abort flag")),
            };
            if errors > disclosed {
                return Err(c.err("more errors than disclosed bits"));
            }
            let mut q = QberReport::new(disclosed, errors, threshold);
            q.abort = abort;
            Message::QberResult(q)
        }
        MessageType::Abort => {
            let reason = AbortReason::from_u8(c.u8()?).ok_or_else(|| c.err("bad reason"))?;
            let phase = SessionPhase::from_u8(c.u8()?).ok_or_else(|| c.err("bad phase"))?;
            let len = u32::from_le_bytes(c.take(4)?.try_into().unwrap()) as usize;
            let detail = std::str::from_utf8(c.take(len)?).map_err(|_| c.err("detail not UTF-8"))?.to_string();
            Message::Abort(AbortNotice { reason, phase, detail })
        }
        MessageType::Done => Message::Done { sifted_len: c.u64()? },
    };
    c.finish()?;
    Ok(msg)
}

/// Decodes one frame from the front of `buf`, returning the message and
/// the number of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    let check_prefix = buf.len().min(4);
    if buf[..check_prefix] != MAGIC[..check_prefix] {
        return Err(FrameError::BadMagic);
    }
    if buf.len() < HEADER_LEN {
        return Err(FrameError::NeedMoreBytes { needed: HEADER_LEN });
    }
    if buf[4] != VERSION {
        return Err(FrameError::UnsupportedVersion(buf[4]));
    }
    let ty = MessageType::from_u8(buf[5]).ok_or(FrameError::UnknownType(buf[5]))?;
    let len = u32::from_le_bytes(buf[6..10].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(FrameError::Oversized(len));
    }
    let total = HEADER_LEN + len as usize + TRAILER_LEN;
    if buf.len() < total {
        return Err(FrameError::NeedMoreBytes { needed: total });
    }
    let body_end = HEADER_LEN + len as usize;
    let expected = u32::from_le_bytes(buf[body_end..total].try_into().unwrap());
    let actual = crc32fast::hash(&buf[..body_end]);
    if expected != actual {
        return Err(FrameError::Corrupt { expected, actual });
    }
    Ok((decode_payload(ty, &buf[HEADER_LEN..body_end])?, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_round_trip() {
        let m = Message::DetectionReport(DetectionReport::default());
        let f = encode_frame(&m);
        assert_eq!(decode_frame(&f).unwrap(), (m, f.len()));
    }

    #[test]
    fn mask_frame_size() {
        let keep: Vec<bool> = (0..1_000_000).map(|i| i % 3 == 0).collect();
        let m = Message::MatchMask(MatchMask { keep });
        let f = encode_frame(&m);
        // frame header + bit count + packed bits + CRC
        assert_eq!(f.len(), HEADER_LEN + 8 + 125_000 + TRAILER_LEN);
        assert_eq!(decode_frame(&f).unwrap().0, m);
    }

    #[test]
    fn truncation_asks_for_more() {
        let f = encode_frame(&Message::Done { sifted_len: 9 });
        for cut in 0..f.len() {
            assert!(matches!(decode_frame(&f[..cut]), Err(FrameError::NeedMoreBytes { .. })), "cut {cut}");
        }
    }

    #[test]
    fn checksum_detects_flip() {
        let mut f = encode_frame(&Message::Done { sifted_len: 9 });
        f[12] ^= 0x40;
        assert!(matches!(decode_frame(&f), Err(FrameError::Corrupt { .. })));
    }

    #[test]
    fn header_errors() {
        let mut f = encode_frame(&Message::Done { sifted_len: 1 });
        f[0] = b'X';
        assert_eq!(decode_frame(&f), Err(FrameError::BadMagic));
        let mut f = encode_frame(&Message::Done { sifted_len: 1 });
        f[4] = 9;
        assert_eq!(decode_frame(&f), Err(FrameError::UnsupportedVersion(9)));
        let mut f = encode_frame(&Message::Done { sifted_len: 1 });
        f[5] = 0x7f;
        assert_eq!(decode_frame(&f), Err(FrameError::UnknownType(0x7f)));
        let mut f = encode_frame(&Message::Done { sifted_len: 1 });
        f[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(decode_frame(&f), Err(FrameError::Oversized(u32::MAX)));
    }
}
