//! Checkpoint files: a short text header followed by raw little-endian
//! 64-bit floats for the live parameters, the EMA shadow, and the optimizer
//! velocities, in declaration order. Round-trips are bit-exact.
//!
//! ```text
//! ssl-batchlab-ckpt v1
//! layer_dims: 2 64 64 2
//! head_slices: 0-2
//! step: 1234
//! samples_seen: 49360
//! <binary floats>
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nnet::{self, GradBuffer, MlpParams};

const MAGIC: &str = "ssl-batchlab-ckpt v1";

/// Everything needed to continue (or warm-start from) a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub ema: MlpParams,
    pub velocity: GradBuffer,
    pub step: u64,
    pub samples_seen: u64,
}

pub fn save(
    path: &Path,
    params: &MlpParams,
    ema: &MlpParams,
    velocity: &GradBuffer,
    step: u64,
    samples_seen: u64,
) -> Result<()> {
    let dims = params
        .layer_dims
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    let heads = params
        .head_slices
        .iter()
        .map(|r| format!("{}-{}", r.start, r.end))
        .collect::<Vec<_>>()
        .join(" ");
    let header = format!(
        "{MAGIC}\nlayer_dims: {dims}\nhead_slices: {heads}\nstep: {step}\nsamples_seen: {samples_seen}\n"
    );
    let mut floats = Vec::with_capacity(3 * params.num_params());
    params.write_flat(&mut floats);
    ema.write_flat(&mut floats);
    velocity.write_flat(&mut floats);

    let mut bytes = header.into_bytes();
    bytes.reserve(floats.len() * 8);
    for v in floats {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let display = path.display().to_string();
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;

    // The header is exactly five newline-terminated lines; binary floats
    // follow immediately after the fifth newline.
    let mut newlines = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n');
    let body_start = match newlines.nth(4) {
        Some((pos, _)) => pos + 1,
        None => return Err(Error::format(&display, "missing checkpoint header")),
    };
    let header = std::str::from_utf8(&bytes[..body_start])
        .map_err(|_| Error::format(&display, "header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::format(&display, format!("expected `{MAGIC}` header")));
    }
    let layer_dims = parse_list::<usize>(lines.next(), "layer_dims: ", &display)?;
    let head_fields = parse_fields(lines.next(), "head_slices: ", &display)?;
    let mut num_classes = Vec::with_capacity(head_fields.len());
    for f in &head_fields {
        let (start, end) = f
            .split_once('-')
            .ok_or_else(|| Error::format(&display, format!("bad head slice `{f}`")))?;
        let (start, end): (usize, usize) = (
            start
                .parse()
                .map_err(|_| Error::format(&display, format!("bad head slice `{f}`")))?,
            end.parse()
                .map_err(|_| Error::format(&display, format!("bad head slice `{f}`")))?,
        );
        if end <= start {
            return Err(Error::format(&display, format!("bad head slice `{f}`")));
        }
        num_classes.push(end - start);
    }
    let step = parse_list::<u64>(lines.next(), "step: ", &display)?
        .first()
        .copied()
        .ok_or_else(|| Error::format(&display, "missing step"))?;
    let samples_seen = parse_list::<u64>(lines.next(), "samples_seen: ", &display)?
        .first()
        .copied()
        .ok_or_else(|| Error::format(&display, "missing samples_seen"))?;

    // Zero-valued scaffolding with the right shapes, filled from the blob.
    let mut params = nnet::init(&layer_dims, &num_classes, 0)?;
    let n = params.num_params();
    let body = &bytes[body_start..];
    if body.len() != 3 * n * 8 {
        return Err(Error::format(
            &display,
            format!("expected {} bytes of floats, found {}", 3 * n * 8, body.len()),
        ));
    }
    let floats: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    params.read_flat(&floats[..n])?;
    let mut ema = params.clone();
    ema.read_flat(&floats[n..2 * n])?;
    let mut velocity = GradBuffer::zeros_like(&params);
    velocity.read_flat(&floats[2 * n..])?;
    Ok(Checkpoint {
        params,
        ema,
        velocity,
        step,
        samples_seen,
    })
}

fn parse_fields(line: Option<&str>, prefix: &str, path: &str) -> Result<Vec<String>> {
    let line = line.ok_or_else(|| Error::format(path, "truncated header"))?;
    let rest = line
        .strip_prefix(prefix)
        .ok_or_else(|| Error::format(path, format!("expected `{prefix}` line")))?;
    Ok(rest.split_whitespace().map(str::to_string).collect())
}

fn parse_list<T: std::str::FromStr>(line: Option<&str>, prefix: &str, path: &str) -> Result<Vec<T>> {
    parse_fields(line, prefix, path)?
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| Error::format(path, format!("bad value `{f}` in `{prefix}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_state() -> (MlpParams, MlpParams, GradBuffer) {
        let params = nnet::init(&[2, 5, 4], &[2, 2], 31).unwrap();
        let ema = nnet::init(&[2, 5, 4], &[2, 2], 32).unwrap();
        let mut velocity = GradBuffer::zeros_like(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut flat = Vec::new();
        params.write_flat(&mut flat);
        let noise: Vec<f64> = flat.iter().map(|_| rng.gen_range(-0.1..0.1)).collect();
        velocity.read_flat(&noise).unwrap();
        (params, ema, velocity)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (params, ema, velocity) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        save(&path, &params, &ema, &velocity, 9876, 39504).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.ema, ema);
        assert_eq!(back.velocity, velocity);
        assert_eq!(back.step, 9876);
        assert_eq!(back.samples_seen, 39504);
    }

    #[test]
    fn wrong_magic_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        std::fs::write(&path, "ssl-batchlab-ckpt v9\nx\nx\nx\nx\n").unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("ssl-batchlab-ckpt v1"));
    }

    #[test]
    fn truncated_files_are_rejected() {
        let (params, ema, velocity) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        save(&path, &params, &ema, &velocity, 1, 2).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Format { .. })));
    }
}
