use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_err, CorpusError};

/// File-name prefix marking generated samples in a corpus tree.
pub const SYNTHETIC_PREFIX: &str = "syn-";

/// The eight mutually distinguishable types of the toy corpus.
pub const TOY_LABELS: [&str; 8] = ["csv", "json", "pebin", "png", "shell", "txt", "unknown", "xml"];

const MIN_LEN: usize = 16;

fn check_range(min_len: usize, max_len: usize) -> Result<(), CorpusError> {
    if min_len < MIN_LEN || min_len > max_len {
        return Err(CorpusError::BadRange { min: min_len, max: max_len });
    }
    Ok(())
}

/// Length drawn log-uniformly from `[min_len, max_len]`.
fn log_uniform_len(rng: &mut dyn RngCore, min_len: usize, max_len: usize) -> usize {
    let (lo, hi) = ((min_len as f64).ln(), ((max_len + 1) as f64).ln());
    let len = rng.random_range(lo..=hi).exp().floor() as usize;
    len.clamp(min_len, max_len)
}

/// Uniform random bytes of log-uniform length.
pub fn gen_synthetic_unknown(
    rng: &mut dyn RngCore,
    min_len: usize,
    max_len: usize,
) -> Result<Vec<u8>, CorpusError> {
    check_range(min_len, max_len)?;
    let mut data = vec![0u8; log_uniform_len(rng, min_len, max_len)];
    rng.fill_bytes(&mut data);
    Ok(data)
}

/// Random printable-ASCII words (1 to 12 characters) in lines of at most 100
/// characters.
pub fn gen_synthetic_txt(
    rng: &mut dyn RngCore,
    min_len: usize,
    max_len: usize,
) -> Result<Vec<u8>, CorpusError> {
    check_range(min_len, max_len)?;
    let len = log_uniform_len(rng, min_len, max_len);
    let mut out = Vec::with_capacity(len);
    let mut line = 0usize;
    while out.len() < len {
        let word = rng.random_range(1..=12usize);
        if line > 0 && line + 1 + word > 100 {
            out.push(b'\n');
            line = 0;
        } else if line > 0 {
            out.push(b' ');
            line += 1;
        }
        for _ in 0..word {
            out.push(rng.random_range(0x21..=0x7Eu8));
        }
        line += word;
    }
    out.truncate(len);
    // the cut may leave a trailing separator; keep the byte set intact
    if let Some(last) = out.last_mut() {
        if *last == b' ' || *last == b'\n' {
            *last = b'.';
        }
    }
    Ok(out)
}

const WORDS: [&str; 24] = [
    "alpha", "beta", "gamma", "delta", "value", "name", "count", "total", "item", "user", "path",
    "status", "level", "index", "color", "price", "score", "node", "queue", "token", "state",
    "owner", "group", "label",
];

fn word(rng: &mut dyn RngCore) -> &'static str {
    WORDS.choose(rng).expect("non-empty")
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(s.as_bytes());
}

fn json_value(rng: &mut dyn RngCore, depth: usize, out: &mut Vec<u8>) {
    match rng.random_range(0..if depth > 2 { 4 } else { 6 }) {
        0 => push_str(out, &rng.random_range(-1000..100_000).to_string()),
        1 => push_str(out, &format!("\"{}_{}\"", word(rng), rng.random_range(0..100))),
        2 => push_str(out, ["true", "false", "null"].choose(rng).unwrap()),
        3 => push_str(out, &format!("{:.3}", rng.random_range(-10.0..10.0f64))),
        4 => {
            out.push(b'[');
            for i in 0..rng.random_range(1..5) {
                if i > 0 {
                    push_str(out, ", ");
                }
                json_value(rng, depth + 1, out);
            }
            out.push(b']');
        }
        _ => json_object(rng, depth + 1, out),
    }
}

fn json_object(rng: &mut dyn RngCore, depth: usize, out: &mut Vec<u8>) {
    let indent = "  ".repeat(depth + 1);
    push_str(out, "{\n");
    for i in 0..rng.random_range(1..6) {
        if i > 0 {
            push_str(out, ",\n");
        }
        push_str(out, &format!("{indent}\"{}\": ", word(rng)));
        json_value(rng, depth, out);
    }
    push_str(out, &format!("\n{}}}", "  ".repeat(depth)));
}

fn gen_json(rng: &mut dyn RngCore, target: usize) -> Vec<u8> {
    let mut out = Vec::new();
    push_str(&mut out, "[\n");
    let mut first = true;
    while out.len() < target {
        if !first {
            push_str(&mut out, ",\n");
        }
        first = false;
        json_object(rng, 0, &mut out);
    }
    push_str(&mut out, "\n]\n");
    out
}

fn gen_shell(rng: &mut dyn RngCore, target: usize) -> Vec<u8> {
    let mut out = Vec::new();
    if rng.random_bool(0.7) {
        push_str(&mut out, ["#!/bin/sh\n", "#!/bin/bash\n", "#!/usr/bin/env bash\n"].choose(rng).unwrap());
    }
    push_str(&mut out, "set -euo pipefail\n");
    while out.len() < target {
        let (a, b) = (word(rng), word(rng));
        let line = match rng.random_range(0..8) {
            0 => format!("export {}=\"${{{}:-/usr/local/{}}}\"\n", a.to_uppercase(), b.to_uppercase(), a),
            1 => format!("if [ -f \"${}\" ]; then\n  echo \"found {}\"\nfi\n", a.to_uppercase(), b),
            2 => format!("for f in /var/{}/*.log; do\n  grep -q {} \"$f\" && rm -f \"$f\"\ndone\n", a, b),
            3 => format!("# {} the {} directory\n", a, b),
            4 => format!("mkdir -p \"$HOME/.{}/{}\" && cd \"$HOME/.{}\"\n", a, b, a),
            5 => format!("{}() {{\n  local {}=\"$1\"\n  echo \"${{{}}}\" | tr a-z A-Z\n}}\n", a, b, b),
            6 => format!("case \"$1\" in\n  {}) {} ;;\n  *) exit 1 ;;\nesac\n", a, b),
            _ => format!("{}=$(ls -1 /etc/{} | wc -l)\n", a, b),
        };
        push_str(&mut out, &line);
    }
    out
}

fn gen_xml(rng: &mut dyn RngCore, target: usize) -> Vec<u8> {
    let mut out = Vec::new();
    push_str(&mut out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let root = word(rng);
    push_str(&mut out, &format!("<{root}s>\n"));
    while out.len() < target {
        let tag = word(rng);
        push_str(&mut out, &format!("  <{tag} id=\"{}\" {}=\"{}\">\n", rng.random_range(0..9999), word(rng), word(rng)));
        for _ in 0..rng.random_range(1..4) {
            let child = word(rng);
            push_str(&mut out, &format!("    <{child}>{} {}</{child}>\n", word(rng), rng.random_range(0..500)));
        }
        push_str(&mut out, &format!("  </{tag}>\n"));
    }
    push_str(&mut out, &format!("</{root}s>\n"));
    out
}

fn gen_csv(rng: &mut dyn RngCore, target: usize) -> Vec<u8> {
    let cols = rng.random_range(3..8);
    let header: Vec<&str> = (0..cols).map(|_| word(rng)).collect();
    let mut out = Vec::new();
    push_str(&mut out, &header.join(","));
    out.push(b'\n');
    while out.len() < target {
        let row: Vec<String> = (0..cols)
            .map(|c| match (c + rng.random_range(0..3)) % 3 {
                0 => rng.random_range(0..100_000).to_string(),
                1 => format!("{:.2}", rng.random_range(0.0..1000.0f64)),
                _ => word(rng).to_owned(),
            })
            .collect();
        push_str(&mut out, &row.join(","));
        out.push(b'\n');
    }
    out
}

fn gen_pebin(rng: &mut dyn RngCore, target: usize) -> Vec<u8> {
    let mut out = vec![0u8; 0x80];
    out[..2].copy_from_slice(b"MZ");
    out[2] = 0x90;
    out[0x3C] = 0x80;
    let stub = b"This program cannot be run in DOS mode.\r\r\n$";
    out[0x4E..0x4E + stub.len()].copy_from_slice(stub);
    push_str(&mut out, "PE\0\0");
    out.extend_from_slice(&[0x64, 0x86, 0x06, 0x00]);
    for name in [".text\0\0\0", ".rdata\0\0", ".data\0\0\0", ".reloc\0\0"] {
        push_str(&mut out, name);
        let mut hdr = [0u8; 32];
        rng.fill_bytes(&mut hdr[..8]);
        out.extend_from_slice(&hdr);
    }
    while out.len() < target {
        // code-like runs interleaved with zero padding
        let mut run = vec![0u8; rng.random_range(16..256)];
        rng.fill_bytes(&mut run);
        out.extend_from_slice(&run);
        out.extend(std::iter::repeat_n(0u8, rng.random_range(0..64)));
    }
    out
}

fn gen_png(rng: &mut dyn RngCore, target: usize) -> Vec<u8> {
    let mut out = b"\x89PNG\r\n\x1a\n".to_vec();
    let chunk = |out: &mut Vec<u8>, kind: &[u8], body: &[u8], rng: &mut dyn RngCore| {
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(kind);
        out.extend_from_slice(body);
        out.extend_from_slice(&rng.next_u32().to_be_bytes());
    };
    let mut ihdr = Vec::new();
    ihdr.extend_from_slice(&rng.random_range(1..4096u32).to_be_bytes());
    ihdr.extend_from_slice(&rng.random_range(1..4096u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, 6, 0, 0, 0]);
    chunk(&mut out, b"IHDR", &ihdr, rng);
    let body_len = target.saturating_sub(out.len() + 24).max(16);
    let mut idat = vec![0u8; body_len];
    rng.fill_bytes(&mut idat);
    idat[..2].copy_from_slice(&[0x78, 0x9C]);
    chunk(&mut out, b"IDAT", &idat, rng);
    chunk(&mut out, b"IEND", &[], rng);
    out
}

/// One toy sample of `label` (one of [`TOY_LABELS`]).
pub fn gen_toy_sample(label: &str, rng: &mut dyn RngCore) -> Result<Vec<u8>, CorpusError> {
    let target = log_uniform_len(rng, 64, 8192);
    Ok(match label {
        "csv" => gen_csv(rng, target),
        "json" => gen_json(rng, target),
        "pebin" => gen_pebin(rng, target),
        "png" => gen_png(rng, target),
        "shell" => gen_shell(rng, target),
        "txt" => gen_synthetic_txt(rng, 64, 8192)?,
        "unknown" => gen_synthetic_unknown(rng, 64, 8192)?,
        "xml" => gen_xml(rng, target),
        other => return Err(CorpusError::NoGenerator(other.to_owned())),
    })
}

/// Writes `per_type` toy samples of every [`TOY_LABELS`] type under
/// `root/<label>/`, deterministically for a given seed.
pub fn write_toy_corpus(root: &Path, per_type: usize, seed: u64) -> Result<(), CorpusError> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    for label in TOY_LABELS {
        let dir = root.join(label);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for i in 0..per_type {
            let data = gen_toy_sample(label, rng)?;
            let path = dir.join(format!("{SYNTHETIC_PREFIX}{i:05}.bin"));
            std::fs::write(&path, data).map_err(io_err(&path))?;
        }
    }
    Ok(())
}
