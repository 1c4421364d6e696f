//! Configuration snapshots: block-density CSV and packed-bit binary files.
//!
//! Binary layout, little endian: 8-byte magic `VSIMSNP1`, u32 dimension,
//! u32 torus side, u64 time in micro-units, 8 reserved zero bytes, then the
//! packed configuration bits (site s is bit s % 8 of byte s / 8).

use std::io::{Read, Write};

use votersim_core::engine::{Configuration, Torus};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"VSIMSNP1";
pub const HEADER_LEN: usize = 32;

pub fn micro_units(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

pub fn write_binary(w: &mut impl Write, t: f64, cfg: &Configuration) -> std::io::Result<()> {
    let torus = cfg.torus();
    let mut head = [0u8; HEADER_LEN];
    head[..8].copy_from_slice(MAGIC);
    head[8..12].copy_from_slice(&(torus.dim() as u32).to_le_bytes());
    head[12..16].copy_from_slice(&(torus.side() as u32).to_le_bytes());
    head[16..24].copy_from_slice(&micro_units(t).to_le_bytes());
    w.write_all(&head)?;
    w.write_all(&cfg.to_bytes())
}

pub fn read_binary(r: &mut impl Read) -> Result<(f64, Configuration)> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|e| HarnessError::Snapshot(e.to_string()))?;
    if &head[..8] != MAGIC {
        return Err(HarnessError::Snapshot("bad magic".into()));
    }
    let word = |a: usize| u32::from_le_bytes(head[a..a + 4].try_into().unwrap()) as usize;
    let (d, side) = (word(8), word(12));
    let t = u64::from_le_bytes(head[16..24].try_into().unwrap()) as f64 / 1e6;
    if d == 0 || side == 0 || side.checked_pow(d as u32).is_none_or(|n| n > 1 << 27) {
        return Err(HarnessError::Snapshot(format!("implausible torus {side}^{d}")));
    }
    let torus = Torus::new(d, side);
    let mut bits = Vec::new();
    r.read_to_end(&mut bits).map_err(|e| HarnessError::Snapshot(e.to_string()))?;
    if bits.len() != torus.sites().div_ceil(8) {
        return Err(HarnessError::Snapshot(format!("expected {} data bytes, found {}", torus.sites().div_ceil(8), bits.len())));
    }
    Ok((t, Configuration::from_bytes(&torus, &bits)))
}

/// Rows (t, block_x1..block_xd, density) for one snapshot.
pub fn write_block_csv<W: Write>(w: &mut csv::Writer<W>, t: f64, cfg: &Configuration, block: usize, header: bool) -> Result<()> {
    let torus = cfg.torus();
    let d = torus.dim();
    let dens = cfg.coarse_density(block)?;
    let per = torus.side() / block;
    let map = |e: csv::Error| HarnessError::Snapshot(e.to_string());
    if header {
        let mut h = vec!["t".to_string()];
        h.extend((1..=d).map(|i| format!("block_x{i}")));
        h.push("density".into());
        w.write_record(&h).map_err(map)?;
    }
    for (b, v) in dens.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        let mut rest = b;
        for _ in 0..d {
            rec.push((rest % per).to_string());
            rest /= per;
        }
        rec.push(v.to_string());
        w.write_record(&rec).map_err(map)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let torus = Torus::new(3, 6);
        let cfg = Configuration::bernoulli(&torus, 0.4, 3);
        let mut buf = Vec::new();
        write_binary(&mut buf, 1.25, &cfg).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 27);
        assert_eq!(&buf[..8], MAGIC);
        let (t, back) = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(t, 1.25);
        assert_eq!(back, cfg);
        buf[0] = b'X';
        assert!(read_binary(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let torus = Torus::new(2, 8);
        let mut buf = Vec::new();
        write_binary(&mut buf, 0.0, &Configuration::ones(&torus)).unwrap();
        buf.pop();
        assert!(read_binary(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn block_csv_layout() {
        let torus = Torus::new(2, 4);
        let cfg = Configuration::ones(&torus);
        let mut w = csv::Writer::from_writer(Vec::new());
        write_block_csv(&mut w, 0.5, &cfg, 2, true).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,block_x1,block_x2,density");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "0.5,1,0,1");
    }
}
