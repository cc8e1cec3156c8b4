//! Transport-stream packetization of embeddings and the lossy downlink.
//!
//! Embeddings are serialized as little-endian f32, split into 188-byte packets
//! (4-byte header, 184-byte payload), and pushed through an independent
//! Bernoulli packet-drop channel. The receiver reassembles by sequence id and
//! zero-fills lost payloads; the decoder downstream, not the transport, is
//! responsible for compensating the loss.
//!
//! Header layout (4 bytes): sync byte 0x47, then a 13-bit sequence id in the
//! top bits of the next 24, low bits reserved zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compressor::Embedding;
use crate::{Error, Result};

pub const PACKET_LEN: usize = 188;
pub const HEADER_LEN: usize = 4;
pub const PAYLOAD_LEN: usize = PACKET_LEN - HEADER_LEN;
pub const SYNC_BYTE: u8 = 0x47;
/// Floats carried per payload; 184 / 4 divides exactly, so no element ever
/// straddles a packet boundary.
pub const FLOATS_PER_PACKET: usize = PAYLOAD_LEN / 4;
const MAX_SEQ: usize = 1 << 13;

/// One fixed-size transport packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsPacket {
    pub header: [u8; HEADER_LEN],
    pub payload: [u8; PAYLOAD_LEN],
}

impl TsPacket {
    fn new(seq: usize, payload: [u8; PAYLOAD_LEN]) -> Self {
        assert!(seq < MAX_SEQ, "sequence id {seq} exceeds 13 bits");
        let seq = seq as u32;
        TsPacket {
            header: [
                SYNC_BYTE,
                (seq >> 5) as u8,
                ((seq & 0x1f) << 3) as u8,
                0,
            ],
            payload,
        }
    }

    pub fn sequence_id(&self) -> usize {
        (((self.header[1] as usize) << 5) | ((self.header[2] as usize) >> 3)) & (MAX_SEQ - 1)
    }

    pub fn bytes(&self) -> [u8; PACKET_LEN] {
        let mut out = [0u8; PACKET_LEN];
        out[..HEADER_LEN].copy_from_slice(&self.header);
        out[HEADER_LEN..].copy_from_slice(&self.payload);
        out
    }
}

/// Ordered packets for one embedding, with per-packet loss flags.
#[derive(Debug, Clone)]
pub struct PacketStream {
    pub packets: Vec<TsPacket>,
    pub dropped: Vec<bool>,
    /// Byte count of the serialized embedding before padding.
    pub payload_len: usize,
}

impl PacketStream {
    pub fn num_dropped(&self) -> usize {
        self.dropped.iter().filter(|&&d| d).count()
    }
}

/// Bernoulli packet-drop channel configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossChannelConfig {
    pub rate: f64,
    pub seed: u64,
}

impl LossChannelConfig {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "loss rate {rate} outside [0, 1]"
            )));
        }
        Ok(LossChannelConfig { rate, seed })
    }
}

/// Serializes a clean embedding into consecutive transport packets. The last
/// payload is zero-padded to the fixed packet size.
pub fn packetize(z: &Embedding) -> Result<PacketStream> {
    if z.corrupted {
        return Err(Error::InvalidArgument(
            "refusing to packetize an already corrupted embedding".into(),
        ));
    }
    let mut bytes = Vec::with_capacity(z.values.len() * 4);
    for v in &z.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let payload_len = bytes.len();
    let count = payload_len.div_ceil(PAYLOAD_LEN).max(1);
    let mut packets = Vec::with_capacity(count);
    for seq in 0..count {
        let mut payload = [0u8; PAYLOAD_LEN];
        let start = seq * PAYLOAD_LEN;
        let end = (start + PAYLOAD_LEN).min(payload_len);
        if start < payload_len {
            payload[..end - start].copy_from_slice(&bytes[start..end]);
        }
        packets.push(TsPacket::new(seq, payload));
    }
    Ok(PacketStream {
        dropped: vec![false; packets.len()],
        packets,
        payload_len,
    })
}

/// Marks each packet dropped independently with probability `cfg.rate` and
/// erases the payload of dropped packets.
pub fn drop_packets(s: &PacketStream, cfg: &LossChannelConfig) -> Result<PacketStream> {
    if s.dropped.iter().any(|&d| d) {
        return Err(Error::InvalidArgument(
            "stream already went through a loss channel".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = s.clone();
    for (pkt, flag) in out.packets.iter_mut().zip(out.dropped.iter_mut()) {
        if rng.gen::<f64>() < cfg.rate {
            *flag = true;
            pkt.payload = [0u8; PAYLOAD_LEN];
        }
    }
    Ok(out)
}

/// Reassembles an embedding of length `m` from surviving payloads. Bytes under
/// dropped packets decode to zero; `loss_mask` marks every element that
/// overlaps a dropped payload byte.
pub fn depacketize(s: &PacketStream, m: usize) -> Result<Embedding> {
    if s.packets.len() != s.dropped.len() {
        return Err(Error::CorruptStream(
            "flag count does not match packet count".into(),
        ));
    }
    if 4 * m > s.packets.len() * PAYLOAD_LEN {
        return Err(Error::CorruptStream(format!(
            "{} packets cannot carry {m} floats",
            s.packets.len()
        )));
    }
    for (idx, pkt) in s.packets.iter().enumerate() {
        if pkt.header[0] != SYNC_BYTE {
            return Err(Error::CorruptStream(format!(
                "packet {idx}: bad sync byte {:#04x}",
                pkt.header[0]
            )));
        }
        if pkt.sequence_id() != idx % MAX_SEQ {
            return Err(Error::CorruptStream(format!(
                "packet {idx}: sequence id {} out of order",
                pkt.sequence_id()
            )));
        }
    }

    let mut values = Vec::with_capacity(m);
    let mut loss_mask = Vec::with_capacity(m);
    for i in 0..m {
        let byte_start = 4 * i;
        let pkt_idx = byte_start / PAYLOAD_LEN;
        let off = byte_start % PAYLOAD_LEN;
        let payload = &s.packets[pkt_idx].payload;
        let v = f32::from_le_bytes([
            payload[off],
            payload[off + 1],
            payload[off + 2],
            payload[off + 3],
        ]);
        values.push(v);
        loss_mask.push(s.dropped[pkt_idx]);
    }
    let corrupted = loss_mask.iter().any(|&b| b);
    Ok(Embedding {
        values,
        corrupted,
        loss_mask,
    })
}

/// packetize -> drop -> depacketize in one call; the corruption operator used
/// by training and evaluation.
pub fn corrupt_embedding(z: &Embedding, rate: f64, seed: u64) -> Result<Embedding> {
    let cfg = LossChannelConfig::new(rate, seed)?;
    let stream = packetize(z)?;
    let lossy = drop_packets(&stream, &cfg)?;
    depacketize(&lossy, z.values.len())
}

/// f64 adapter around [`corrupt_embedding`] matching the compressor's
/// corruption-operator signature. Kept elements pick up the f32 transport
/// quantization, exactly as they would over the real link.
pub fn corrupt_values(z: &[f64], rate: f64, seed: u64) -> Result<(Vec<f64>, Vec<bool>)> {
    let emb = Embedding::clean(z.iter().map(|&v| v as f32).collect());
    let corrupted = corrupt_embedding(&emb, rate, seed)?;
    Ok((corrupted.as_f64(), corrupted.loss_mask))
}

/// Hex dump of a stream, one packet per line, for the debug CLI.
pub fn dump_hex(s: &PacketStream) -> String {
    let mut out = String::new();
    for (idx, pkt) in s.packets.iter().enumerate() {
        let status = if s.dropped[idx] { "DROP" } else { "  ok" };
        out.push_str(&format!("packet {idx:4} [{status}] "));
        for b in pkt.bytes() {
            out.push_str(&format!("{b:02x}"));
        }
        out.push('\n');
    }
    out
}
