//! 12-byte node -> gateway frame.
//!
//! ```text
//! offset  size  field
//!      0     1  sync, always 0xA5
//!      1     1  node_id
//!      2     1  sensor_kind
//!      3     2  seq, big-endian
//!      5     4  value, IEEE-754 binary32 big-endian, engineering units
//!      9     1  flags
//!     10     2  CRC-16/CCITT-FALSE over bytes 1..=9, big-endian
//! ```
//!
//! Flags: bit0 standby active, bit1 test error, bit2 needs replacement,
//! bit3 a self-test ran since the node's previous frame. Bits 4..7 are zero.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sensor::SensorKind;

pub const SYNC: u8 = 0xA5;
pub const FRAME_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame length {0}, expected 12")]
    Length(usize),
    #[error("bad sync byte {0:#04x}")]
    Sync(u8),
    #[error("crc mismatch: computed {computed:#06x}, carried {carried:#06x}")]
    Crc { computed: u16, carried: u16 },
}

const fn crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u16; 256] = crc_table();

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    data.iter()
        .fold(0xFFFF, |crc, &b| (crc << 8) ^ CRC_TABLE[(((crc >> 8) as u8) ^ b) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Flags(pub u8);

impl Flags {
    pub const STANDBY: u8 = 0x01;
    pub const TEST_ERROR: u8 = 0x02;
    pub const NEEDS_REPLACEMENT: u8 = 0x04;
    pub const TEST_FRESH: u8 = 0x08;

    pub fn standby(self) -> bool {
        self.0 & Self::STANDBY != 0
    }

    pub fn test_error(self) -> bool {
        self.0 & Self::TEST_ERROR != 0
    }

    pub fn needs_replacement(self) -> bool {
        self.0 & Self::NEEDS_REPLACEMENT != 0
    }

    pub fn test_fresh(self) -> bool {
        self.0 & Self::TEST_FRESH != 0
    }

    pub fn with(self, bit: u8, on: bool) -> Flags {
        if on {
            Flags(self.0 | bit)
        } else {
            Flags(self.0 & !bit)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub node_id: u8,
    /// Raw kind code; see [`SensorKind::code`].
    pub sensor_kind: u8,
    pub seq: u16,
    pub value: f32,
    pub flags: Flags,
}

impl Frame {
    pub fn kind(&self) -> Option<SensorKind> {
        SensorKind::from_code(self.sensor_kind)
    }

    pub fn encode(&self) -> [u8; FRAME_LEN] {
        let mut out = [0u8; FRAME_LEN];
        out[0] = SYNC;
        out[1] = self.node_id;
        out[2] = self.sensor_kind;
        out[3..5].copy_from_slice(&self.seq.to_be_bytes());
        out[5..9].copy_from_slice(&self.value.to_be_bytes());
        out[9] = self.flags.0;
        let crc = crc16_ccitt_false(&out[1..10]);
        out[10..12].copy_from_slice(&crc.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() != FRAME_LEN {
            return Err(FrameError::Length(bytes.len()));
        }
        if bytes[0] != SYNC {
            return Err(FrameError::Sync(bytes[0]));
        }
        let computed = crc16_ccitt_false(&bytes[1..10]);
        let carried = u16::from_be_bytes([bytes[10], bytes[11]]);
        if computed != carried {
            return Err(FrameError::Crc { computed, carried });
        }
        Ok(Frame {
            node_id: bytes[1],
            sensor_kind: bytes[2],
            seq: u16::from_be_bytes([bytes[3], bytes[4]]),
            value: f32::from_be_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]),
            flags: Flags(bytes[9]),
        })
    }

    /// Bitwise equality; distinguishes NaN payloads.
    pub fn same_bits(&self, other: &Frame) -> bool {
        self.encode() == other.encode()
    }
}

/// Hex dump plus decoded fields, as printed by the frame-dump tool.
pub struct FrameDump<'a>(pub &'a [u8]);

impl fmt::Display for FrameDump<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: Vec<String> = self.0.iter().map(|b| format!("{b:02x}")).collect();
        writeln!(f, "bytes      {}", hex.join(" "))?;
        match Frame::decode(self.0) {
            Ok(frame) => {
                let kind = frame.kind().map(|k| k.as_str()).unwrap_or("unknown");
                writeln!(f, "node_id    {}", frame.node_id)?;
                writeln!(f, "kind       {} ({})", frame.sensor_kind, kind)?;
                writeln!(f, "seq        {}", frame.seq)?;
                writeln!(f, "value      {}", frame.value)?;
                write!(
                    f,
                    "flags      {:#04x} standby={} test_error={} needs_replacement={} test_fresh={}",
                    frame.flags.0,
                    frame.flags.standby(),
                    frame.flags.test_error(),
                    frame.flags.needs_replacement(),
                    frame.flags.test_fresh()
                )
            }
            Err(e) => write!(f, "invalid    {e}"),
        }
    }
}
