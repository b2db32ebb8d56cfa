//! Binary little-endian PLY with a single `vertex` element of `float x, y, z`.

use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::PointCloud;
use crate::error::{Error, Result};

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    let mut out = Vec::with_capacity(header.len() + cloud.len() * 12);
    out.extend_from_slice(header.as_bytes());
    for p in cloud {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

/// Parses the exact layout written by [`encode_ply`]. `origin` only labels errors.
pub fn decode_ply(bytes: &[u8], origin: &Path) -> Result<PointCloud> {
    let bad = |msg: &str| Error::parse(origin, msg);
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(|s| s.trim_end_matches('\r'))
            .map_err(|_| bad("header is not utf-8"))
    };

    if next_line()? != "ply" {
        return Err(bad("missing ply magic"));
    }
    if next_line()? != "format binary_little_endian 1.0" {
        return Err(bad("only binary_little_endian 1.0 is supported"));
    }
    let mut line = next_line()?;
    while line.starts_with("comment") {
        line = next_line()?;
    }
    let count: usize = line
        .strip_prefix("element vertex ")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| bad("expected `element vertex <count>`"))?;
    for axis in ["x", "y", "z"] {
        if next_line()? != format!("property float {axis}") {
            return Err(bad("expected float x, y, z vertex properties"));
        }
    }
    if next_line()? != "end_header" {
        return Err(bad("unexpected header content; only a vertex element is allowed"));
    }

    let body = &bytes[pos..];
    if body.len() != count * 12 {
        return Err(bad(&format!("expected {} payload bytes, found {}", count * 12, body.len())));
    }
    let coord = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    let points = body
        .chunks_exact(12)
        .map(|v| Point3::new(coord(&v[0..4]), coord(&v[4..8]), coord(&v[8..12])))
        .collect();
    PointCloud::new(points).map_err(|e| bad(&e.to_string()))
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_ply(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_exact() {
        let cloud = PointCloud::from_xyz(&[[1.0, 2.0, 3.0]]).unwrap();
        let bytes = encode_ply(&cloud);
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 12]);
        assert_eq!(
            text,
            "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
        );
        assert_eq!(&bytes[bytes.len() - 12..bytes.len() - 8], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_truncation_and_extra_elements() {
        let cloud = PointCloud::from_xyz(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let bytes = encode_ply(&cloud);
        assert!(decode_ply(&bytes[..bytes.len() - 1], Path::new("t.ply")).is_err());
        let extra = String::from_utf8(bytes[..bytes.len() - 24].to_vec())
            .unwrap()
            .replace("end_header\n", "element face 0\nend_header\n");
        assert!(decode_ply(extra.as_bytes(), Path::new("t.ply")).is_err());
        assert!(decode_ply(b"ply\nformat ascii 1.0\n", Path::new("t.ply")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_f32_exact(pts in prop::collection::vec(prop::array::uniform3(-1e3f32..1e3f32), 0..40)) {
            let cloud = PointCloud::from_xyz(
                &pts.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect::<Vec<_>>(),
            ).unwrap();
            let back = decode_ply(&encode_ply(&cloud), Path::new("mem")).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
