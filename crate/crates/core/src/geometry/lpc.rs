//! `.lpc` point-cloud files: the ASCII magic `LPC1`, a little-endian `u32`
//! point count, then `x y z` triples as little-endian `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LPC1";

pub fn encode(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PointCloud> {
    let bad = |reason: String| Error::Format { kind: "lpc", reason };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing LPC1 header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != count * 12 {
        return Err(bad(format!(
            "header declares {count} points but payload holds {} bytes",
            body.len()
        )));
    }
    let points = body
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[k * 4..k * 4 + 4].try_into().unwrap()) as f64;
            [f(0), f(1), f(2)]
        })
        .collect();
    PointCloud::new(points).map_err(|e| bad(e.to_string()))
}

pub fn write<W: Write>(mut w: W, cloud: &PointCloud) -> std::io::Result<()> {
    w.write_all(&encode(cloud))
}

pub fn read<R: Read>(mut r: R) -> Result<PointCloud> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("<reader>", e))?;
    decode(&buf)
}

pub fn save(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(cloud)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let cloud = PointCloud::new(vec![[1.0, -2.0, 0.5]]).unwrap();
        let bytes = encode(&cloud);
        assert_eq!(&bytes[..4], b"LPC1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &(-2.0f32).to_le_bytes());
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 20);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let bytes = encode(&cloud);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong).is_err());
    }

    proptest! {
        #[test]
        fn f32_clouds_round_trip(pts in proptest::collection::vec(
            (-100.0f32..100.0, -100.0f32..100.0, -100.0f32..100.0), 1..64)) {
            let cloud = PointCloud::new(
                pts.iter().map(|&(x, y, z)| [x as f64, y as f64, z as f64]).collect()
            ).unwrap();
            prop_assert_eq!(decode(&encode(&cloud)).unwrap(), cloud);
        }
    }
}
