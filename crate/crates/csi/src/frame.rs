//! Nexmon CSI UDP payload codec for 80 MHz captures.

use num_complex::Complex32;

/// Tone count of an 80 MHz VHT channel.
pub const SUBCARRIERS: usize = 256;
pub const PAYLOAD_MAGIC: u16 = 0x1111;
pub const HEADER_LEN: usize = 18;
pub const PAYLOAD_LEN: usize = HEADER_LEN + SUBCARRIERS * 4;
/// UDP port the extractor sends to.
pub const CSI_PORT: u16 = 5500;

/// One decoded CSI report.
///
/// `csi` is stored fft-shifted: tone -128 at index 0, DC at index 128.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiFrame {
    pub timestamp_us: u64,
    pub source: [u8; 6],
    pub sequence: u16,
    pub rssi: i8,
    pub frame_control: u8,
    pub core_stream: u16,
    pub chanspec: u16,
    pub chip: u16,
    pub csi: Vec<Complex32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadError {
    Truncated { len: usize },
    BadMagic { magic: u16 },
}

/// Index in extractor (FFT) order that lands at shifted position `row`.
pub fn raw_index(row: usize) -> usize {
    (row + SUBCARRIERS / 2) % SUBCARRIERS
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

/// Decodes a UDP payload. Bytes past the CSI block are ignored.
pub fn decode_payload(payload: &[u8], timestamp_us: u64) -> Result<CsiFrame, PayloadError> {
    if payload.len() < 2 {
        return Err(PayloadError::Truncated { len: payload.len() });
    }
    let magic = u16_at(payload, 0);
    if magic != PAYLOAD_MAGIC {
        return Err(PayloadError::BadMagic { magic });
    }
    if payload.len() < PAYLOAD_LEN {
        return Err(PayloadError::Truncated { len: payload.len() });
    }
    let mut source = [0u8; 6];
    source.copy_from_slice(&payload[4..10]);
    let body = &payload[HEADER_LEN..PAYLOAD_LEN];
    let csi = (0..SUBCARRIERS)
        .map(|row| {
            let at = raw_index(row) * 4;
            let re = i16::from_le_bytes([body[at], body[at + 1]]);
            let im = i16::from_le_bytes([body[at + 2], body[at + 3]]);
            Complex32::new(re as f32, im as f32)
        })
        .collect();
    Ok(CsiFrame {
        timestamp_us,
        source,
        sequence: u16_at(payload, 10),
        rssi: payload[2] as i8,
        frame_control: payload[3],
        core_stream: u16_at(payload, 12),
        chanspec: u16_at(payload, 14),
        chip: u16_at(payload, 16),
        csi,
    })
}

/// Inverse of [`decode_payload`]; CSI components are rounded and saturated to i16.
pub fn encode_payload(frame: &CsiFrame) -> Vec<u8> {
    assert_eq!(frame.csi.len(), SUBCARRIERS, "frame must carry {SUBCARRIERS} tones");
    let mut out = Vec::with_capacity(PAYLOAD_LEN);
    out.extend_from_slice(&PAYLOAD_MAGIC.to_le_bytes());
    out.push(frame.rssi as u8);
    out.push(frame.frame_control);
    out.extend_from_slice(&frame.source);
    out.extend_from_slice(&frame.sequence.to_le_bytes());
    out.extend_from_slice(&frame.core_stream.to_le_bytes());
    out.extend_from_slice(&frame.chanspec.to_le_bytes());
    out.extend_from_slice(&frame.chip.to_le_bytes());
    let q = |v: f32| v.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
    for raw in 0..SUBCARRIERS {
        // the shift by half the band is its own inverse
        let c = frame.csi[raw_index(raw)];
        out.extend_from_slice(&q(c.re).to_le_bytes());
        out.extend_from_slice(&q(c.im).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> CsiFrame {
        CsiFrame {
            timestamp_us: 42,
            source: [1, 2, 3, 4, 5, 6],
            sequence: 0xbeef,
            rssi: -57,
            frame_control: 0x08,
            core_stream: 0x0100,
            chanspec: 0xe02a,
            chip: 0x4345,
            csi: (0..SUBCARRIERS)
                .map(|i| Complex32::new(i as f32 - 100.0, -(i as f32) * 2.0))
                .collect(),
        }
    }

    #[test]
    fn payload_round_trips() {
        let f = frame();
        let bytes = encode_payload(&f);
        assert_eq!(bytes.len(), PAYLOAD_LEN);
        assert_eq!(decode_payload(&bytes, 42).unwrap(), f);
    }

    #[test]
    fn header_fields_sit_at_fixed_offsets() {
        let bytes = encode_payload(&frame());
        assert_eq!(&bytes[0..2], &[0x11, 0x11]);
        assert_eq!(bytes[2] as i8, -57);
        assert_eq!(&bytes[4..10], &[1, 2, 3, 4, 5, 6]);
        assert_eq!(u16_at(&bytes, 10), 0xbeef);
        assert_eq!(u16_at(&bytes, 14), 0xe02a);
        assert_eq!(u16_at(&bytes, 16), 0x4345);
    }

    #[test]
    fn dc_tone_lands_in_the_middle_row() {
        let mut bytes = encode_payload(&frame());
        // raw tone 0 is DC
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&[3, 0, 4, 0]);
        let f = decode_payload(&bytes, 0).unwrap();
        assert_eq!(f.csi[128], Complex32::new(3.0, 4.0));
        assert_eq!(f.csi[128].norm(), 5.0);
    }

    #[test]
    fn rejects_bad_magic_and_short_payloads() {
        let mut bytes = encode_payload(&frame());
        assert_eq!(
            decode_payload(&bytes[..100], 0),
            Err(PayloadError::Truncated { len: 100 })
        );
        bytes[0] = 0x22;
        assert!(matches!(decode_payload(&bytes, 0), Err(PayloadError::BadMagic { .. })));
        assert!(matches!(decode_payload(&[], 0), Err(PayloadError::Truncated { len: 0 })));
    }
}
