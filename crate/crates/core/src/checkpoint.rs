//! Versioned flat-file container for trained weights: a magic line, one
//! line of JSON header, then every tensor as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::Mat;

const MAGIC: &str = "RICSIM-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<H> {
    kind: String,
    header: H,
    tensors: Vec<TensorInfo>,
}

pub fn write<H: Serialize>(path: &Path, kind: &str, header: &H, tensors: &[(&str, &Mat)]) -> Result<()> {
    let env = Envelope {
        kind: kind.to_string(),
        header,
        tensors: tensors.iter().map(|(n, m)| TensorInfo { name: n.to_string(), rows: m.rows, cols: m.cols }).collect(),
    };
    let mut buf = format!("{MAGIC} {FORMAT_VERSION}\n").into_bytes();
    serde_json::to_writer(&mut buf, &env)?;
    buf.push(b'\n');
    for (_, m) in tensors {
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<Mat>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = std::str::from_utf8(lines.next().unwrap_or_default()).unwrap_or_default();
    if magic != format!("{MAGIC} {FORMAT_VERSION}") {
        return Err(Error::Checkpoint(format!("{} is not a version {FORMAT_VERSION} checkpoint", path.display())));
    }
    let env: Envelope<H> = serde_json::from_slice(lines.next().unwrap_or_default())?;
    if env.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", env.kind)));
    }
    let blob = lines.next().unwrap_or_default();
    let need: usize = env.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if blob.len() != need {
        return Err(Error::Checkpoint(format!("payload is {} bytes, header describes {need}", blob.len())));
    }
    let mut at = 0;
    let mut out = Vec::with_capacity(env.tensors.len());
    for t in &env.tensors {
        let n = t.rows * t.cols;
        let data = blob[at..at + n * 8].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        at += n * 8;
        out.push(Mat::from_vec(t.rows, t.cols, data));
    }
    Ok((env.header, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let a = Mat::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0]);
        let b = Mat::from_vec(1, 3, vec![1e300, 2.0, 3.0]);
        write(&p, "demo", &vec![1u8, 2], &[("a", &a), ("b", &b)]).unwrap();
        let (h, t): (Vec<u8>, _) = read(&p, "demo").unwrap();
        assert_eq!(h, vec![1, 2]);
        assert_eq!(t[0].data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(t[1], b);
        assert!(read::<Vec<u8>>(&p, "other").is_err());
    }

    #[test]
    fn missing_file_is_named() {
        match read::<()>(Path::new("/nonexistent/ckpt"), "x") {
            Err(Error::MissingArtifact(p)) => assert!(p.ends_with("ckpt")),
            other => panic!("{other:?}"),
        }
    }
}
