//! `MWT1` weight checkpoints.
//!
//! ```text
//! MWT1
//! variable: PSEA
//! base_channels: 32
//! depth: 3
//! convs_per_stage: 2
//! input_channels: 2
//! output_channels: 1
//! seed: 7
//! tensor_count: 38
//! tensor: enc0.conv0.weight 32x2x3x3 0
//! tensor: enc0.conv0.bias 32 576
//! ...
//!
//! <f32 little-endian payload; offsets are in elements>
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::network::{tensor_layout, NetworkConfig, NetworkWeights, Tensor};
use crate::error::{Error, Result};
use crate::grid::VariableKind;

pub const MAGIC: &str = "MWT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variable: VariableKind,
    pub weights: NetworkWeights<f32>,
}

pub fn write_checkpoint<W: Write>(mut out: W, ckpt: &Checkpoint) -> std::io::Result<()> {
    let cfg = &ckpt.weights.config;
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("variable: {}\n", ckpt.variable));
    header.push_str(&format!("base_channels: {}\n", cfg.base_channels));
    header.push_str(&format!("depth: {}\n", cfg.depth));
    header.push_str(&format!("convs_per_stage: {}\n", cfg.convs_per_stage));
    header.push_str(&format!("input_channels: {}\n", cfg.input_channels));
    header.push_str(&format!("output_channels: {}\n", cfg.output_channels));
    header.push_str(&format!("seed: {}\n", cfg.seed));
    header.push_str(&format!("tensor_count: {}\n", ckpt.weights.tensors.len()));
    let mut offset = 0usize;
    for t in &ckpt.weights.tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("tensor: {} {} {}\n", t.name, dims.join("x"), offset));
        offset += t.data.len();
    }
    header.push('\n');
    out.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(offset * 4);
    for t in &ckpt.weights.tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), ckpt).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), path)
}

/// Parses a checkpoint; `origin` only labels error messages.
pub fn read_checkpoint<R: BufRead>(mut input: R, origin: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::format(origin, msg);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = input.read_line(&mut line).map_err(|e| Error::io(origin, e))?;
        if n == 0 {
            return Err(bad("header is not terminated by a blank line".into()));
        }
        let line = line.trim_end_matches(['\n', '\r']).to_string();
        if line.is_empty() {
            break;
        }
        lines.push(line);
        if lines.len() > 100_000 {
            return Err(bad("header too long".into()));
        }
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad(format!("missing {MAGIC} magic")));
    }

    let mut kv = std::collections::BTreeMap::new();
    let mut dir: Vec<(String, Vec<usize>, usize)> = Vec::new();
    for (lineno, line) in lines.iter().enumerate().skip(1) {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| bad(format!("line {}: expected 'key: value'", lineno + 1)))?;
        let value = value.trim();
        if key == "tensor" {
            let parts: Vec<&str> = value.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(format!("line {}: malformed tensor entry", lineno + 1)));
            }
            let shape = parts[1]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("line {}: bad shape '{}'", lineno + 1, parts[1])))?;
            let offset = parts[2]
                .parse::<usize>()
                .map_err(|_| bad(format!("line {}: bad offset", lineno + 1)))?;
            dir.push((parts[0].to_string(), shape, offset));
        } else {
            kv.insert(key.trim().to_string(), value.to_string());
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing header key '{k}'")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| bad(format!("header key '{k}' is not an integer")))
    };
    let variable: VariableKind = get("variable")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    let config = NetworkConfig {
        base_channels: num("base_channels")?,
        depth: num("depth")?,
        convs_per_stage: num("convs_per_stage")?,
        input_channels: num("input_channels")?,
        output_channels: num("output_channels")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| bad("header key 'seed' is not an integer".into()))?,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;
    let count = num("tensor_count")?;
    let layout = tensor_layout(&config);
    if count != dir.len() || count != layout.len() {
        return Err(bad(format!(
            "tensor count {count} (directory {}) does not match configuration ({})",
            dir.len(),
            layout.len()
        )));
    }

    let total: usize = layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let mut payload = Vec::new();
    input
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(origin, e))?;
    if payload.len() != total * 4 {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            total * 4
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut tensors = Vec::with_capacity(count);
    for ((name, shape, offset), (want_name, want_shape)) in dir.into_iter().zip(layout) {
        if name != want_name || shape != want_shape {
            return Err(bad(format!(
                "tensor {name} {shape:?} does not match expected {want_name} {want_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let data = values
            .get(offset..offset + n)
            .ok_or_else(|| bad(format!("tensor {name} offset out of range")))?
            .to_vec();
        tensors.push(Tensor { name, shape, data });
    }
    let weights = NetworkWeights { config, tensors };
    weights.validate().map_err(|e| bad(e.to_string()))?;
    Ok(Checkpoint { variable, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::network::init_network;

    fn ckpt() -> Checkpoint {
        let cfg = NetworkConfig {
            base_channels: 4,
            depth: 2,
            seed: 3,
            ..NetworkConfig::default()
        };
        Checkpoint {
            variable: VariableKind::U10,
            weights: init_network(&cfg).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ckpt();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        let back = read_checkpoint(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, c);
        let text = String::from_utf8_lossy(&buf[..200]);
        assert!(text.starts_with("MWT1\nvariable: U10\n"));
    }

    #[test]
    fn rejects_corruption() {
        let c = ckpt();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[3] = b'9';
        assert!(matches!(
            read_checkpoint(&bad_magic[..], Path::new("m")),
            Err(Error::Format { .. })
        ));

        let truncated = &buf[..buf.len() - 4];
        assert!(read_checkpoint(truncated, Path::new("m")).is_err());

        let text =
            String::from_utf8_lossy(&buf).replace("enc0.conv0.weight 4x2x3x3", "enc0.conv0.weight 4x3x3x3");
        assert!(read_checkpoint(text.as_bytes(), Path::new("m")).is_err());
    }
}
