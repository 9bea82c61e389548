//! Streaming CSI extraction from classic pcap captures, plus a writer for
//! producing captures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Chain, Cursor, Read, Write};
use std::path::Path;

use etherparse::err::packet::SliceError;
use etherparse::{PacketBuilder, SlicedPacket, TransportSlice};
use pcap_parser::traits::PcapReaderIterator;
use serde::{Deserialize, Serialize};
use pcap_parser::{LegacyPcapReader, Linktype, PcapBlockOwned, PcapError};

use crate::error::{CsiError, Result};
use crate::frame::{decode_payload, encode_payload, CsiFrame, PayloadError, CSI_PORT};

const GLOBAL_HEADER_LEN: usize = 24;
const BUFFER_CAPACITY: usize = 1 << 18;

/// Counters accumulated while walking a capture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub packets: u64,
    pub frames: u64,
    /// Packets that are not UDP to the capture port.
    pub non_csi: u64,
    /// Records cut short by the snap length, a short payload, or end of file.
    pub truncated: u64,
    pub bad_magic: u64,
}

impl ParseStats {
    /// Corrupted CSI packets that were dropped.
    pub fn skipped(&self) -> u64 {
        self.truncated + self.bad_magic
    }
}

type Source<R> = Chain<Cursor<[u8; GLOBAL_HEADER_LEN]>, R>;

/// Iterator over the CSI frames of a capture, in capture order.
///
/// Malformed packets are counted in [`ParseStats`] and skipped. The only
/// items that are errors are read failures of the underlying source.
pub struct PcapFrames<R: Read> {
    reader: LegacyPcapReader<Source<R>>,
    port: Option<u16>,
    nanos: bool,
    stats: ParseStats,
    done: bool,
}

/// Opens `path` and yields frames sent to `port` (any UDP port if `None`).
pub fn parse_pcap(path: &Path, port: Option<u16>) -> Result<PcapFrames<BufReader<File>>> {
    let file = File::open(path).map_err(|e| CsiError::io(path, e))?;
    parse_pcap_reader(BufReader::new(file), port)
}

pub fn parse_pcap_reader<R: Read>(mut reader: R, port: Option<u16>) -> Result<PcapFrames<R>> {
    let mut header = [0u8; GLOBAL_HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| CsiError::Format("truncated pcap global header".into()))?;
    // one read call hands the parser the whole global header
    let source = Cursor::new(header).chain(reader);
    let mut reader = LegacyPcapReader::new(BUFFER_CAPACITY, source).map_err(|e| match e {
        PcapError::HeaderNotRecognized | PcapError::NomError(..) | PcapError::OwnedNomError(..) => {
            CsiError::Format(format!(
                "bad pcap magic 0x{:08x}",
                u32::from_le_bytes([header[0], header[1], header[2], header[3]])
            ))
        }
        other => CsiError::Format(format!("unreadable pcap header: {other}")),
    })?;
    let (nanos, offset) = match reader.next() {
        Ok((offset, PcapBlockOwned::LegacyHeader(h))) => {
            if h.network != Linktype::ETHERNET {
                return Err(CsiError::Format(format!(
                    "unsupported link type {}, expected Ethernet",
                    h.network.0
                )));
            }
            (h.is_nanosecond_precision(), offset)
        }
        _ => return Err(CsiError::Format("pcap global header not found".into())),
    };
    reader.consume(offset);
    Ok(PcapFrames {
        reader,
        port,
        nanos,
        stats: ParseStats::default(),
        done: false,
    })
}

impl<R: Read> PcapFrames<R> {
    pub fn stats(&self) -> ParseStats {
        self.stats
    }

    /// Drains the remaining frames, failing only on read errors.
    pub fn collect_frames(mut self) -> Result<(Vec<CsiFrame>, ParseStats)> {
        let mut out = Vec::new();
        for f in self.by_ref() {
            out.push(f?);
        }
        Ok((out, self.stats))
    }

    fn classify(&mut self, data: &[u8], complete: bool, timestamp_us: u64) -> Option<CsiFrame> {
        self.stats.packets += 1;
        let packet = match SlicedPacket::from_ethernet(data) {
            Ok(p) => p,
            Err(SliceError::Len(_)) if !complete => {
                self.stats.truncated += 1;
                return None;
            }
            Err(_) => {
                self.stats.non_csi += 1;
                return None;
            }
        };
        let udp = match packet.transport {
            Some(TransportSlice::Udp(u)) if self.port.map_or(true, |p| u.destination_port() == p) => u,
            _ => {
                self.stats.non_csi += 1;
                return None;
            }
        };
        match decode_payload(udp.payload(), timestamp_us) {
            Ok(f) => {
                self.stats.frames += 1;
                Some(f)
            }
            Err(PayloadError::Truncated { len }) => {
                log::warn!("skipping truncated CSI payload of {len} bytes");
                self.stats.truncated += 1;
                None
            }
            Err(PayloadError::BadMagic { magic }) => {
                log::warn!("skipping payload with magic 0x{magic:04x}");
                self.stats.bad_magic += 1;
                None
            }
        }
    }
}

impl<R: Read> Iterator for PcapFrames<R> {
    type Item = Result<CsiFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let step = match self.reader.next() {
                Ok((offset, PcapBlockOwned::Legacy(b))) => {
                    let frac = if self.nanos { b.ts_usec as u64 / 1000 } else { b.ts_usec as u64 };
                    let ts = b.ts_sec as u64 * 1_000_000 + frac;
                    let complete = b.caplen >= b.origlen;
                    let data = b.data.to_vec();
                    Ok((offset, Some((data, complete, ts))))
                }
                Ok((offset, _)) => Ok((offset, None)),
                Err(PcapError::Eof) => Err(None),
                Err(PcapError::Incomplete(_)) => match self.reader.refill() {
                    Ok(()) => continue,
                    Err(_) => Err(Some(CsiError::Format("read failure while refilling".into()))),
                },
                Err(PcapError::ReadError) => Err(Some(CsiError::Format("read failure".into()))),
                Err(e) => {
                    log::warn!("capture ends with an unreadable record: {e}");
                    self.stats.packets += 1;
                    self.stats.truncated += 1;
                    Err(None)
                }
            };
            match step {
                Ok((offset, block)) => {
                    self.reader.consume(offset);
                    if let Some((data, complete, ts)) = block {
                        if let Some(frame) = self.classify(&data, complete, ts) {
                            return Some(Ok(frame));
                        }
                    }
                }
                Err(err) => {
                    self.done = true;
                    return err.map(Err);
                }
            }
        }
        None
    }
}

/// Wraps a CSI payload in Ethernet/IPv4/UDP headers addressed to `port`.
pub fn udp_packet(payload: &[u8], port: u16) -> Vec<u8> {
    let builder = PacketBuilder::ethernet2([0x02, 0, 0, 0, 0, 0x01], [0xff; 6])
        .ipv4([10, 10, 10, 10], [255, 255, 255, 255], 1)
        .udp(port, port);
    let mut out = Vec::with_capacity(builder.size(payload.len()));
    builder
        .write(&mut out, payload)
        .expect("payload fits in one UDP datagram");
    out
}

/// Little-endian, microsecond, Ethernet pcap writer.
pub struct PcapWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        let mut h = Vec::with_capacity(GLOBAL_HEADER_LEN);
        h.extend_from_slice(&0xa1b2_c3d4u32.to_le_bytes());
        h.extend_from_slice(&2u16.to_le_bytes());
        h.extend_from_slice(&4u16.to_le_bytes());
        h.extend_from_slice(&0i32.to_le_bytes());
        h.extend_from_slice(&0u32.to_le_bytes());
        h.extend_from_slice(&65535u32.to_le_bytes());
        h.extend_from_slice(&(Linktype::ETHERNET.0 as u32).to_le_bytes());
        out.write_all(&h)?;
        Ok(PcapWriter { out })
    }

    pub fn write_packet(&mut self, timestamp_us: u64, data: &[u8]) -> std::io::Result<()> {
        self.write_record(timestamp_us, data, data.len())
    }

    /// Writes a record whose original length may exceed the captured bytes.
    pub fn write_record(&mut self, timestamp_us: u64, data: &[u8], origlen: usize) -> std::io::Result<()> {
        let mut rec = Vec::with_capacity(16);
        rec.extend_from_slice(&((timestamp_us / 1_000_000) as u32).to_le_bytes());
        rec.extend_from_slice(&((timestamp_us % 1_000_000) as u32).to_le_bytes());
        rec.extend_from_slice(&(data.len() as u32).to_le_bytes());
        rec.extend_from_slice(&(origlen as u32).to_le_bytes());
        self.out.write_all(&rec)?;
        self.out.write_all(data)
    }

    pub fn write_frame(&mut self, frame: &CsiFrame) -> std::io::Result<()> {
        self.write_packet(frame.timestamp_us, &udp_packet(&encode_payload(frame), CSI_PORT))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Writes `frames` to a new capture file at `path`.
pub fn write_capture(path: &Path, frames: &[CsiFrame]) -> Result<()> {
    let file = File::create(path).map_err(|e| CsiError::io(path, e))?;
    let mut w = PcapWriter::new(BufWriter::new(file)).map_err(|e| CsiError::io(path, e))?;
    for f in frames {
        w.write_frame(f).map_err(|e| CsiError::io(path, e))?;
    }
    w.into_inner().flush().map_err(|e| CsiError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::SUBCARRIERS;
    use num_complex::Complex32;

    fn frame(seq: u16) -> CsiFrame {
        CsiFrame {
            timestamp_us: 1_000_000 + seq as u64 * 1000,
            source: [0xaa, 0xbb, 0xcc, 0, 0, seq as u8],
            sequence: seq,
            rssi: -40,
            frame_control: 0x08,
            core_stream: 0,
            chanspec: 0xe02a,
            chip: 0x4345,
            csi: (0..SUBCARRIERS).map(|i| Complex32::new(i as f32, seq as f32)).collect(),
        }
    }

    fn capture(frames: &[CsiFrame]) -> Vec<u8> {
        let mut w = PcapWriter::new(Vec::new()).unwrap();
        for f in frames {
            w.write_frame(f).unwrap();
        }
        w.into_inner()
    }

    #[test]
    fn written_capture_reads_back() {
        let frames: Vec<_> = (0..5).map(frame).collect();
        let bytes = capture(&frames);
        let (got, stats) = parse_pcap_reader(&bytes[..], Some(CSI_PORT)).unwrap().collect_frames().unwrap();
        assert_eq!(got, frames);
        assert_eq!(stats.frames, 5);
        assert_eq!(stats.skipped(), 0);
    }

    #[test]
    fn other_ports_are_not_csi() {
        let mut w = PcapWriter::new(Vec::new()).unwrap();
        w.write_packet(0, &udp_packet(&encode_payload(&frame(1)), 53)).unwrap();
        w.write_frame(&frame(2)).unwrap();
        let bytes = w.into_inner();
        let (got, stats) = parse_pcap_reader(&bytes[..], Some(CSI_PORT)).unwrap().collect_frames().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(stats.non_csi, 1);
        let (any, _) = parse_pcap_reader(&bytes[..], None).unwrap().collect_frames().unwrap();
        assert_eq!(any.len(), 2);
    }

    #[test]
    fn snapped_record_counts_as_truncated() {
        let mut w = PcapWriter::new(Vec::new()).unwrap();
        let pkt = udp_packet(&encode_payload(&frame(1)), CSI_PORT);
        w.write_record(0, &pkt[..200], pkt.len()).unwrap();
        w.write_frame(&frame(2)).unwrap();
        let bytes = w.into_inner();
        let (got, stats) = parse_pcap_reader(&bytes[..], None).unwrap().collect_frames().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(stats.truncated, 1);
    }

    #[test]
    fn cut_off_final_record_is_counted() {
        let bytes = capture(&[frame(0), frame(1)]);
        let cut = &bytes[..bytes.len() - 10];
        let (got, stats) = parse_pcap_reader(cut, None).unwrap().collect_frames().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(stats.truncated, 1);
    }

    #[test]
    fn big_endian_captures_are_accepted() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0xa1b2_c3d4u32.to_be_bytes());
        bytes.extend_from_slice(&2u16.to_be_bytes());
        bytes.extend_from_slice(&4u16.to_be_bytes());
        bytes.extend_from_slice(&[0; 8]);
        bytes.extend_from_slice(&65535u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        let pkt = udp_packet(&encode_payload(&frame(3)), CSI_PORT);
        for v in [7u32, 9, pkt.len() as u32, pkt.len() as u32] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&pkt);
        let (got, _) = parse_pcap_reader(&bytes[..], None).unwrap().collect_frames().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].timestamp_us, 7_000_009);
        assert_eq!(got[0].sequence, 3);
    }

    #[test]
    fn bad_magic_and_short_header_are_format_errors() {
        let mut bytes = capture(&[]);
        assert!(matches!(parse_pcap_reader(&bytes[..10], None), Err(CsiError::Format(_))));
        bytes[0] = 0;
        match parse_pcap_reader(&bytes[..], None) {
            Err(CsiError::Format(m)) => assert!(m.contains("magic"), "{m}"),
            _ => panic!("expected format error"),
        }
    }

    #[test]
    fn non_ethernet_link_type_is_rejected() {
        let mut bytes = capture(&[]);
        bytes[20] = 101;
        assert!(matches!(parse_pcap_reader(&bytes[..], None), Err(CsiError::Format(_))));
    }
}
