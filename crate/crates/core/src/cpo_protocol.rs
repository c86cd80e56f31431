//! Wire codec for Control Packet Objects and clock-sync messages.
//!
//! ```text
//! CPO  (little-endian, 64-byte fixed header)
//!  0  magic "CPO1"      4
//!  4  version u16 = 1   2
//!  6  flags u16         2   bit 0 = PARAM_CHANGE
//!  8  sequence u64      8
//! 16  cycle_start i64   8   server ns since session epoch
//! 24  frc f64           8
//! 32  tv f64            8
//! 40  pr f64            8
//! 48  rate f64          8
//! 56  n_cp u16, n_f u16, n_t u16, pad u16 = 0
//! 64  cp[n_cp] f64, f[n_f] f64, t[n_t] f64
//!  .. crc32 u32 over every preceding byte
//!
//! SYNC (36 bytes)
//!  0  magic "SYN1" | version u16 | kind u8 | pad u8 | t0 i64 | t1 i64 | t2 i64 | crc32 u32
//! ```

use thiserror::Error;

use crate::lung_model::PvParams;

pub const CPO_MAGIC: [u8; 4] = *b"CPO1";
pub const SYNC_MAGIC: [u8; 4] = *b"SYN1";
pub const VERSION: u16 = 1;
pub const CPO_HEADER_LEN: usize = 64;
pub const CRC_LEN: usize = 4;
pub const SYNC_LEN: usize = 36;
pub const MAX_VECTOR_LEN: usize = u16::MAX as usize;

pub const FLAG_PARAM_CHANGE: u16 = 1;
const KNOWN_FLAGS: u16 = FLAG_PARAM_CHANGE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("length mismatch: expected {expected} bytes, have {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("field {0} is not finite")]
    NonFiniteField(&'static str),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("vector {name} has {len} entries (max {MAX_VECTOR_LEN})")]
    VectorTooLong { name: &'static str, len: usize },
    #[error("unknown sync message kind {0}")]
    UnknownKind(u8),
}

/// Per-cycle parameter bundle broadcast by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPacketObject {
    pub sequence: u64,
    pub cycle_start_ns: i64,
    pub flags: u16,
    pub frc: f64,
    pub tv: f64,
    pub pr: f64,
    pub rate: f64,
    pub cp: Vec<f64>,
    pub f: Vec<f64>,
    pub t: Vec<f64>,
}

impl ControlPacketObject {
    pub fn from_params(sequence: u64, cycle_start_ns: i64, params: &PvParams, f: Vec<f64>, t: Vec<f64>) -> Self {
        Self {
            sequence,
            cycle_start_ns,
            flags: 0,
            frc: params.frc,
            tv: params.tv,
            pr: params.pr,
            rate: params.rate,
            cp: params.cp.clone(),
            f,
            t,
        }
    }

    pub fn params(&self) -> PvParams {
        PvParams { frc: self.frc, tv: self.tv, pr: self.pr, rate: self.rate, cp: self.cp.clone() }
    }

    pub fn is_param_change(&self) -> bool {
        self.flags & FLAG_PARAM_CHANGE != 0
    }

    pub fn encoded_len(&self) -> usize {
        cpo_len(self.cp.len(), self.f.len(), self.t.len())
    }

    fn check(&self) -> Result<(), ProtocolError> {
        for (name, v) in [("frc", self.frc), ("tv", self.tv), ("pr", self.pr), ("rate", self.rate)] {
            if !v.is_finite() {
                return Err(ProtocolError::NonFiniteField(name));
            }
            if v <= 0.0 {
                return Err(ProtocolError::InvariantViolation(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("cp", &self.cp), ("f", &self.f), ("t", &self.t)] {
            if v.len() > MAX_VECTOR_LEN {
                return Err(ProtocolError::VectorTooLong { name, len: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ProtocolError::NonFiniteField(name));
            }
        }
        if self.cp.is_empty() {
            return Err(ProtocolError::InvariantViolation("cp must not be empty".into()));
        }
        if self.flags & !KNOWN_FLAGS != 0 {
            return Err(ProtocolError::InvariantViolation(format!("unknown flag bits {:#06x}", self.flags)));
        }
        Ok(())
    }
}

/// Encoded size of a CPO with the given vector lengths.
pub const fn cpo_len(n_cp: usize, n_f: usize, n_t: usize) -> usize {
    CPO_HEADER_LEN + 8 * (n_cp + n_f + n_t) + CRC_LEN
}

pub fn encode_cpo(cpo: &ControlPacketObject) -> Result<Vec<u8>, ProtocolError> {
    cpo.check()?;
    let mut out = Vec::with_capacity(cpo.encoded_len());
    out.extend_from_slice(&CPO_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&cpo.flags.to_le_bytes());
    out.extend_from_slice(&cpo.sequence.to_le_bytes());
    out.extend_from_slice(&cpo.cycle_start_ns.to_le_bytes());
    for v in [cpo.frc, cpo.tv, cpo.pr, cpo.rate] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for n in [cpo.cp.len(), cpo.f.len(), cpo.t.len(), 0] {
        out.extend_from_slice(&(n as u16).to_le_bytes());
    }
    for v in cpo.cp.iter().chain(&cpo.f).chain(&cpo.t) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.buf[self.pos..self.pos + N].try_into().expect("length checked by caller");
        self.pos += N;
        out
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn i64(&mut self) -> i64 {
        i64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn f64s(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn need(bytes: &[u8], needed: usize) -> Result<(), ProtocolError> {
    if bytes.len() < needed {
        Err(ProtocolError::Truncated { needed, got: bytes.len() })
    } else {
        Ok(())
    }
}

fn check_preamble(bytes: &[u8], magic: [u8; 4]) -> Result<(), ProtocolError> {
    need(bytes, 4)?;
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(ProtocolError::BadMagic(found));
    }
    need(bytes, 6)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ProtocolError::UnsupportedVersion(version));
    }
    Ok(())
}

fn check_length_and_crc(bytes: &[u8], expected: usize) -> Result<(), ProtocolError> {
    need(bytes, expected)?;
    if bytes.len() != expected {
        return Err(ProtocolError::LengthMismatch { expected, got: bytes.len() });
    }
    let body = &bytes[..expected - CRC_LEN];
    let stored = u32::from_le_bytes(bytes[expected - CRC_LEN..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ProtocolError::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

pub fn decode_cpo(bytes: &[u8]) -> Result<ControlPacketObject, ProtocolError> {
    check_preamble(bytes, CPO_MAGIC)?;
    need(bytes, CPO_HEADER_LEN)?;
    let count = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
    let (n_cp, n_f, n_t) = (count(56), count(58), count(60));
    check_length_and_crc(bytes, cpo_len(n_cp, n_f, n_t))?;

    let mut r = Reader { buf: bytes, pos: 6 };
    let flags = r.u16();
    let sequence = r.u64();
    let cycle_start_ns = r.i64();
    let (frc, tv, pr, rate) = (r.f64(), r.f64(), r.f64(), r.f64());
    r.pos += 6;
    let pad = r.u16();
    if pad != 0 {
        return Err(ProtocolError::InvariantViolation(format!("header pad is {pad:#06x}")));
    }
    let cp = r.f64s(n_cp);
    let f = r.f64s(n_f);
    let t = r.f64s(n_t);
    let cpo = ControlPacketObject { sequence, cycle_start_ns, flags, frc, tv, pr, rate, cp, f, t };
    cpo.check()?;
    Ok(cpo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyncKind {
    Ping = 1,
    Pong = 2,
}

/// Four-timestamp exchange carrier. A PING carries only `t0` (client send
/// time); the PONG echoes it with the server receive (`t1`) and send (`t2`)
/// times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncMessage {
    pub kind: SyncKind,
    pub t0: i64,
    pub t1: i64,
    pub t2: i64,
}

impl SyncMessage {
    pub fn ping(t0: i64) -> Self {
        Self { kind: SyncKind::Ping, t0, t1: 0, t2: 0 }
    }

    pub fn pong(t0: i64, t1: i64, t2: i64) -> Self {
        Self { kind: SyncKind::Pong, t0, t1, t2 }
    }

    fn check(&self) -> Result<(), ProtocolError> {
        if self.t0 < 0 || self.t1 < 0 || self.t2 < 0 {
            return Err(ProtocolError::InvariantViolation("timestamps must be non-negative".into()));
        }
        if self.kind == SyncKind::Ping && (self.t1 != 0 || self.t2 != 0) {
            return Err(ProtocolError::InvariantViolation("PING must carry t1 = t2 = 0".into()));
        }
        Ok(())
    }
}

pub fn encode_sync(msg: &SyncMessage) -> Result<Vec<u8>, ProtocolError> {
    msg.check()?;
    let mut out = Vec::with_capacity(SYNC_LEN);
    out.extend_from_slice(&SYNC_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(msg.kind as u8);
    out.push(0);
    for t in [msg.t0, msg.t1, msg.t2] {
        out.extend_from_slice(&t.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_sync(bytes: &[u8]) -> Result<SyncMessage, ProtocolError> {
    check_preamble(bytes, SYNC_MAGIC)?;
    check_length_and_crc(bytes, SYNC_LEN)?;
    let kind = match bytes[6] {
        1 => SyncKind::Ping,
        2 => SyncKind::Pong,
        k => return Err(ProtocolError::UnknownKind(k)),
    };
    if bytes[7] != 0 {
        return Err(ProtocolError::InvariantViolation(format!("sync pad is {:#04x}", bytes[7])));
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let msg = SyncMessage { kind, t0: r.i64(), t1: r.i64(), t2: r.i64() };
    msg.check()?;
    Ok(msg)
}

/// Any datagram on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Cpo(ControlPacketObject),
    Sync(SyncMessage),
}

impl Message {
    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        match self {
            Message::Cpo(c) => encode_cpo(c),
            Message::Sync(s) => encode_sync(s),
        }
    }
}

/// Dispatches on the magic.
pub fn decode_message(bytes: &[u8]) -> Result<Message, ProtocolError> {
    need(bytes, 4)?;
    match &bytes[..4] {
        m if m == SYNC_MAGIC => decode_sync(bytes).map(Message::Sync),
        _ => decode_cpo(bytes).map(Message::Cpo),
    }
}

/// Lowercase hex, 16 bytes per line.
pub fn to_hex(bytes: &[u8]) -> String {
    bytes
        .chunks(16)
        .map(|line| line.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses hex with arbitrary whitespace; `#` starts a comment.
pub fn from_hex(text: &str) -> Option<Vec<u8>> {
    let digits: String = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.chars().filter(|c| !c.is_whitespace()))
        .collect();
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    (0..digits.len()).step_by(2).map(|i| u8::from_str_radix(&digits[i..i + 2], 16).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ControlPacketObject {
        ControlPacketObject {
            sequence: 7,
            cycle_start_ns: 35_000_000_000,
            flags: 0,
            frc: 2.5,
            tv: 0.5,
            pr: 10.0,
            rate: 12.0,
            cp: vec![0.0, 0.15, 0.85, 1.0],
            f: vec![1.7, 0.5, -0.25, 0.0],
            t: vec![0.01, 0.0025, 0.0025, 0.0025],
        }
    }

    #[test]
    fn crc_is_ieee() {
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn header_bytes_by_hand() {
        let cpo = ControlPacketObject { cp: vec![1.0], f: vec![], t: vec![], ..sample() };
        let bytes = encode_cpo(&cpo).unwrap();
        assert_eq!(bytes.len(), 64 + 8 + 4);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"CPO1");
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.extend_from_slice(&35_000_000_000i64.to_le_bytes());
        for v in [2.5f64, 0.5, 10.0, 12.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        // n_cp = 1, n_f = 0, n_t = 0, pad
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        let crc = crc32fast::hash(&expected);
        expected.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_and_flag() {
        let mut cpo = sample();
        cpo.flags = FLAG_PARAM_CHANGE;
        let back = decode_cpo(&encode_cpo(&cpo).unwrap()).unwrap();
        assert_eq!(back, cpo);
        assert!(back.is_param_change());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let nan = ControlPacketObject { frc: f64::NAN, ..sample() };
        assert_eq!(encode_cpo(&nan), Err(ProtocolError::NonFiniteField("frc")));
        let long = ControlPacketObject { f: vec![0.0; MAX_VECTOR_LEN + 1], ..sample() };
        assert!(matches!(encode_cpo(&long), Err(ProtocolError::VectorTooLong { name: "f", .. })));
        let inf = ControlPacketObject { t: vec![f64::INFINITY], ..sample() };
        assert_eq!(encode_cpo(&inf), Err(ProtocolError::NonFiniteField("t")));
        let empty = ControlPacketObject { cp: vec![], ..sample() };
        assert!(matches!(encode_cpo(&empty), Err(ProtocolError::InvariantViolation(_))));
    }

    #[test]
    fn decode_error_taxonomy() {
        let good = encode_cpo(&sample()).unwrap();
        assert!(matches!(decode_cpo(&good[..10]), Err(ProtocolError::Truncated { .. })));
        let mut flipped = good.clone();
        flipped[70] ^= 0x01;
        assert!(matches!(decode_cpo(&flipped), Err(ProtocolError::ChecksumMismatch { .. })));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_cpo(&magic), Err(ProtocolError::BadMagic(_))));
        let mut version = good.clone();
        version[4] = 2;
        assert_eq!(decode_cpo(&version), Err(ProtocolError::UnsupportedVersion(2)));
        let mut longer = good.clone();
        longer.push(0);
        assert!(matches!(decode_cpo(&longer), Err(ProtocolError::LengthMismatch { .. })));
    }

    fn reseal(mut bytes: Vec<u8>) -> Vec<u8> {
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        bytes
    }

    #[test]
    fn decode_checks_values_after_crc() {
        let good = encode_cpo(&sample()).unwrap();
        let mut nan = good.clone();
        nan[24..32].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(decode_cpo(&reseal(nan)), Err(ProtocolError::NonFiniteField("frc")));
        let mut neg = good.clone();
        neg[32..40].copy_from_slice(&(-0.5f64).to_le_bytes());
        assert!(matches!(decode_cpo(&reseal(neg)), Err(ProtocolError::InvariantViolation(_))));
        let mut pad = good;
        pad[62] = 1;
        assert!(matches!(decode_cpo(&reseal(pad)), Err(ProtocolError::InvariantViolation(_))));
    }

    #[test]
    fn sync_examples() {
        let pong = SyncMessage::pong(10, 60_000_000, 61_000_000);
        assert_eq!(decode_sync(&encode_sync(&pong).unwrap()).unwrap(), pong);
        let ping = encode_sync(&SyncMessage::ping(5)).unwrap();
        assert_eq!(ping.len(), SYNC_LEN);
        assert_eq!(&ping[8..16], &5i64.to_le_bytes());
        assert!(ping[16..32].iter().all(|&b| b == 0));
        let mut bad_kind = ping.clone();
        bad_kind[6] = 7;
        assert_eq!(decode_sync(&reseal(bad_kind)), Err(ProtocolError::UnknownKind(7)));
        assert!(encode_sync(&SyncMessage { kind: SyncKind::Ping, t0: 1, t1: 2, t2: 0 }).is_err());
        assert!(encode_sync(&SyncMessage::ping(-1)).is_err());
    }

    #[test]
    fn dispatch() {
        let cpo = encode_cpo(&sample()).unwrap();
        let sync = encode_sync(&SyncMessage::ping(1)).unwrap();
        assert!(matches!(decode_message(&cpo), Ok(Message::Cpo(_))));
        assert!(matches!(decode_message(&sync), Ok(Message::Sync(_))));
        assert!(decode_message(&[]).is_err());
    }

    #[test]
    fn hex_round_trip() {
        let bytes = encode_cpo(&sample()).unwrap();
        assert_eq!(from_hex(&to_hex(&bytes)).unwrap(), bytes);
        assert!(from_hex("abc").is_none());
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e6f64..1e6
    }

    fn positive() -> impl Strategy<Value = f64> {
        1e-6f64..1e4
    }

    prop_compose! {
        fn arb_cpo()(
            sequence in any::<u64>(),
            cycle_start_ns in any::<i64>(),
            change in any::<bool>(),
            frc in positive(), tv in positive(), pr in positive(), rate in positive(),
            cp in prop::collection::vec(finite(), 1..12),
            f in prop::collection::vec(finite(), 0..40),
            t in prop::collection::vec(finite(), 0..40),
        ) -> ControlPacketObject {
            ControlPacketObject { sequence, cycle_start_ns, flags: change as u16, frc, tv, pr, rate, cp, f, t }
        }
    }

    proptest! {
        #[test]
        fn prop_round_trip(cpo in arb_cpo()) {
            let bytes = encode_cpo(&cpo).unwrap();
            prop_assert_eq!(bytes.len(), cpo_len(cpo.cp.len(), cpo.f.len(), cpo.t.len()));
            prop_assert_eq!(decode_cpo(&bytes).unwrap(), cpo);
        }

        #[test]
        fn prop_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
            let _ = decode_message(&bytes);
            let _ = decode_cpo(&bytes);
            let _ = decode_sync(&bytes);
        }

        #[test]
        fn prop_mutations_are_rejected(cpo in arb_cpo(), at in any::<prop::sample::Index>(), bit in 0u8..8) {
            let mut bytes = encode_cpo(&cpo).unwrap();
            let i = at.index(bytes.len());
            bytes[i] ^= 1 << bit;
            prop_assert!(decode_cpo(&bytes).is_err());
        }
    }
}
