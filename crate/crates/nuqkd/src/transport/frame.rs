//! Length-prefixed message framing for the two-terminal protocol.
//!
//! Frame layout: 4-byte big-endian payload length, 1-byte message type,
//! payload. Bit payloads carry a 4-byte big-endian bit count followed by the
//! bits packed MSB-first with zero padding in the final byte.

use std::io::{Read, Write};

use crate::bb84::PhotonRecord;
use crate::bits::BitString;
use crate::config::SimConfig;
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u8 = 1;
/// Upper bound on a single frame payload; a 16 MiB frame holds over 67
/// million photons, far beyond any sane configuration.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0,
    Config = 1,
    Photons = 2,
    BobBases = 3,
    AliceBases = 4,
    SharedBits = 5,
    QberReport = 6,
    Decision = 7,
    UsableKey = 8,
    IterDone = 9,
    End = 10,
    Error = 11,
}

impl MsgType {
    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => MsgType::Hello,
            1 => MsgType::Config,
            2 => MsgType::Photons,
            3 => MsgType::BobBases,
            4 => MsgType::AliceBases,
            5 => MsgType::SharedBits,
            6 => MsgType::QberReport,
            7 => MsgType::Decision,
            8 => MsgType::UsableKey,
            9 => MsgType::IterDone,
            10 => MsgType::End,
            11 => MsgType::Error,
            _ => return Err(Error::Protocol(format!("unknown message type code {code}"))),
        })
    }

    pub fn name(self) -> &'static str {
        use MsgType::*;
        match self {
            Hello => "HELLO",
            Config => "CONFIG",
            Photons => "PHOTONS",
            BobBases => "BOB_BASES",
            AliceBases => "ALICE_BASES",
            SharedBits => "SHARED_BITS",
            QberReport => "QBER_REPORT",
            Decision => "DECISION",
            UsableKey => "USABLE_KEY",
            IterDone => "ITER_DONE",
            End => "END",
            Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

/// Decision payload codes; `NO_DECISION` covers the degenerate case of an
/// empty sifted key, where no estimate exists.
const DECISION_CLEAN: u8 = 0;
const DECISION_ATTACKED: u8 = 1;
const DECISION_NONE: u8 = 2;

impl WireMessage {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Result<Self> {
        if payload.len() > MAX_PAYLOAD {
            return Err(Error::Protocol(format!(
                "payload of {} bytes exceeds the {} byte frame limit",
                payload.len(),
                MAX_PAYLOAD
            )));
        }
        Ok(WireMessage { msg_type, payload })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 5];
        r.read_exact(&mut head)?;
        let len = u32::from_be_bytes([head[0], head[1], head[2], head[3]]) as usize;
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!(
                "incoming payload of {len} bytes exceeds the {MAX_PAYLOAD} byte frame limit"
            )));
        }
        let msg_type = MsgType::from_code(head[4])?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(WireMessage { msg_type, payload })
    }

    pub fn hello() -> Self {
        WireMessage {
            msg_type: MsgType::Hello,
            payload: vec![PROTOCOL_VERSION],
        }
    }

    pub fn decode_hello(&self) -> Result<u8> {
        self.expect(MsgType::Hello)?;
        match self.payload.as_slice() {
            [version] => Ok(*version),
            _ => Err(Error::Protocol("malformed HELLO payload".into())),
        }
    }

    pub fn config(config: &SimConfig) -> Result<Self> {
        WireMessage::new(MsgType::Config, config.to_kv_text().into_bytes())
    }

    pub fn decode_config(&self) -> Result<SimConfig> {
        self.expect(MsgType::Config)?;
        let text = std::str::from_utf8(&self.payload)
            .map_err(|_| Error::Protocol("CONFIG payload is not UTF-8".into()))?;
        SimConfig::from_kv_text(text)
    }

    pub fn bits(msg_type: MsgType, bits: &BitString) -> Result<Self> {
        let mut payload = Vec::with_capacity(4 + (bits.len() + 7) / 8);
        payload.extend_from_slice(&(bits.len() as u32).to_be_bytes());
        payload.extend_from_slice(bits.as_bytes());
        WireMessage::new(msg_type, payload)
    }

    pub fn decode_bits(&self, expected: MsgType) -> Result<BitString> {
        self.expect(expected)?;
        if self.payload.len() < 4 {
            return Err(Error::Protocol(format!(
                "{} payload shorter than its bit-count header",
                self.msg_type.name()
            )));
        }
        let count =
            u32::from_be_bytes([self.payload[0], self.payload[1], self.payload[2], self.payload[3]])
                as usize;
        BitString::from_packed(&self.payload[4..], count).map_err(|e| {
            Error::Protocol(format!("{} payload: {e}", self.msg_type.name()))
        })
    }

    /// Photon payload: bit count header holds the photon count; each photon
    /// contributes two bits, data bit then basis bit.
    pub fn photons(photons: &[PhotonRecord]) -> Result<Self> {
        let bits: BitString = photons
            .iter()
            .flat_map(|p| [p.bit, p.basis])
            .collect();
        let mut payload = Vec::with_capacity(4 + (bits.len() + 7) / 8);
        payload.extend_from_slice(&(photons.len() as u32).to_be_bytes());
        payload.extend_from_slice(bits.as_bytes());
        WireMessage::new(MsgType::Photons, payload)
    }

    pub fn decode_photons(&self) -> Result<Vec<PhotonRecord>> {
        self.expect(MsgType::Photons)?;
        if self.payload.len() < 4 {
            return Err(Error::Protocol(
                "PHOTONS payload shorter than its count header".into(),
            ));
        }
        let count =
            u32::from_be_bytes([self.payload[0], self.payload[1], self.payload[2], self.payload[3]])
                as usize;
        let bits = BitString::from_packed(&self.payload[4..], 2 * count)
            .map_err(|e| Error::Protocol(format!("PHOTONS payload: {e}")))?;
        Ok((0..count)
            .map(|i| PhotonRecord {
                bit: bits.get(2 * i).unwrap(),
                basis: bits.get(2 * i + 1).unwrap(),
            })
            .collect())
    }

    pub fn qber_report(mismatches: u32, shared_count: u32) -> Self {
        let mut payload = Vec::with_capacity(8);
        payload.extend_from_slice(&mismatches.to_be_bytes());
        payload.extend_from_slice(&shared_count.to_be_bytes());
        WireMessage {
            msg_type: MsgType::QberReport,
            payload,
        }
    }

    pub fn decode_qber_report(&self) -> Result<(u32, u32)> {
        self.expect(MsgType::QberReport)?;
        if self.payload.len() != 8 {
            return Err(Error::Protocol("malformed QBER_REPORT payload".into()));
        }
        let mismatches =
            u32::from_be_bytes([self.payload[0], self.payload[1], self.payload[2], self.payload[3]]);
        let shared =
            u32::from_be_bytes([self.payload[4], self.payload[5], self.payload[6], self.payload[7]]);
        Ok((mismatches, shared))
    }

    pub fn decision(decided: Option<bool>) -> Self {
        let code = match decided {
            Some(false) => DECISION_CLEAN,
            Some(true) => DECISION_ATTACKED,
            None => DECISION_NONE,
        };
        WireMessage {
            msg_type: MsgType::Decision,
            payload: vec![code],
        }
    }

    pub fn decode_decision(&self) -> Result<Option<bool>> {
        self.expect(MsgType::Decision)?;
        match self.payload.as_slice() {
            [DECISION_CLEAN] => Ok(Some(false)),
            [DECISION_ATTACKED] => Ok(Some(true)),
            [DECISION_NONE] => Ok(None),
            _ => Err(Error::Protocol("malformed DECISION payload".into())),
        }
    }

    pub fn iter_done(iteration: u32) -> Self {
        WireMessage {
            msg_type: MsgType::IterDone,
            payload: iteration.to_be_bytes().to_vec(),
        }
    }

    pub fn decode_iter_done(&self) -> Result<u32> {
        self.expect(MsgType::IterDone)?;
        match self.payload.as_slice() {
            [a, b, c, d] => Ok(u32::from_be_bytes([*a, *b, *c, *d])),
            _ => Err(Error::Protocol("malformed ITER_DONE payload".into())),
        }
    }

    pub fn end() -> Self {
        WireMessage {
            msg_type: MsgType::End,
            payload: Vec::new(),
        }
    }

    pub fn error(message: &str) -> Self {
        WireMessage {
            msg_type: MsgType::Error,
            payload: message.as_bytes().to_vec(),
        }
    }

    pub fn error_text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    fn expect(&self, expected: MsgType) -> Result<()> {
        if self.msg_type != expected {
            return Err(Error::Protocol(format!(
                "expected {} frame, got {}",
                expected.name(),
                self.msg_type.name()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(msg: &WireMessage) -> WireMessage {
        let bytes = msg.encode();
        WireMessage::read_from(&mut bytes.as_slice()).unwrap()
    }

    #[test]
    fn frame_roundtrip_preserves_type_and_payload() {
        for msg in [
            WireMessage::hello(),
            WireMessage::end(),
            WireMessage::error("boom"),
            WireMessage::qber_report(3, 17),
            WireMessage::iter_done(42),
            WireMessage::decision(Some(true)),
            WireMessage::decision(None),
        ] {
            assert_eq!(roundtrip(&msg), msg);
        }
    }

    #[test]
    fn hello_carries_protocol_version() {
        assert_eq!(roundtrip(&WireMessage::hello()).decode_hello().unwrap(), 1);
    }

    #[test]
    fn bits_roundtrip_including_empty_and_unaligned() {
        for pattern in ["", "1", "10110", "110100111010001"] {
            let bits: BitString = pattern.parse().unwrap();
            let msg = WireMessage::bits(MsgType::BobBases, &bits).unwrap();
            assert_eq!(roundtrip(&msg).decode_bits(MsgType::BobBases).unwrap(), bits);
        }
    }

    #[test]
    fn bits_with_nonzero_padding_rejected() {
        // 3 declared bits but a set bit in the padding region.
        let msg = WireMessage::new(MsgType::BobBases, vec![0, 0, 0, 3, 0b1011_0001]).unwrap();
        assert!(msg.decode_bits(MsgType::BobBases).is_err());
    }

    #[test]
    fn photons_roundtrip() {
        let photons = vec![
            PhotonRecord { bit: true, basis: false },
            PhotonRecord { bit: false, basis: false },
            PhotonRecord { bit: true, basis: true },
        ];
        let msg = WireMessage::photons(&photons).unwrap();
        assert_eq!(roundtrip(&msg).decode_photons().unwrap(), photons);
        assert_eq!(
            WireMessage::photons(&[]).unwrap().decode_photons().unwrap(),
            vec![]
        );
    }

    #[test]
    fn qber_report_roundtrip() {
        let msg = WireMessage::qber_report(125, 5000);
        assert_eq!(roundtrip(&msg).decode_qber_report().unwrap(), (125, 5000));
    }

    #[test]
    fn config_roundtrip() {
        let config = SimConfig {
            photons: 777,
            eve_enabled: true,
            epsilon: 0.25,
            ..SimConfig::default()
        };
        let msg = WireMessage::config(&config).unwrap();
        assert_eq!(roundtrip(&msg).decode_config().unwrap(), config);
    }

    #[test]
    fn oversized_declared_length_rejected() {
        let mut bytes = ((MAX_PAYLOAD + 1) as u32).to_be_bytes().to_vec();
        bytes.push(MsgType::End as u8);
        assert!(WireMessage::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn unknown_type_code_rejected() {
        let bytes = [0, 0, 0, 0, 200u8];
        assert!(WireMessage::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn truncated_stream_rejected() {
        let full = WireMessage::qber_report(1, 2).encode();
        for cut in 0..full.len() {
            assert!(WireMessage::read_from(&mut &full[..cut]).is_err());
        }
    }

    #[test]
    fn type_mismatch_is_a_protocol_error() {
        let msg = WireMessage::end();
        assert!(matches!(
            msg.decode_decision(),
            Err(Error::Protocol(_))
        ));
    }
}
