//! Shared test helpers: reference readers written from the format
//! description alone (no crate code), and an in-process command runner.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clap::Parser;
use spinodal_cli::{run, Cli, CliError};

/// Tensor as seen by the reference reader.
#[derive(Debug, Clone, PartialEq)]
pub struct RefTensor {
    pub dtype: u32,
    pub dims: Vec<u64>,
    pub values: Vec<f64>,
}

/// Reference PFDS reader.
pub fn read_pfds(b: &[u8]) -> Result<RefTensor, String> {
    let word = |o: usize| -> Result<u32, String> {
        let s = b.get(o..o + 4).ok_or("truncated header")?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };
    if b.get(0..4) != Some(b"PFDS".as_slice()) {
        return Err("bad magic".into());
    }
    if word(4)? != 1 {
        return Err("bad version".into());
    }
    let dtype = word(8)?;
    let width = match dtype {
        1 => 4,
        2 => 8,
        _ => return Err("bad dtype".into()),
    };
    let rank = word(12)? as usize;
    let mut dims = Vec::new();
    for i in 0..rank {
        let s = b.get(16 + 8 * i..24 + 8 * i).ok_or("truncated dims")?;
        dims.push(u64::from_le_bytes(s.try_into().unwrap()));
    }
    let payload = &b[16 + 8 * rank..];
    let count: u64 = dims.iter().product();
    if payload.len() as u64 != count * width as u64 {
        return Err("payload length does not match dims".into());
    }
    let values = payload
        .chunks_exact(width)
        .map(|c| match width {
            4 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            _ => f64::from_le_bytes(c.try_into().unwrap()),
        })
        .collect();
    Ok(RefTensor { dtype, dims, values })
}

/// Netpbm image as seen by the reference reader.
#[derive(Debug, Clone, PartialEq)]
pub struct RefImage {
    pub magic: String,
    pub width: usize,
    pub height: usize,
    pub maxval: usize,
    pub pixels: Vec<u8>,
}

/// Reference reader for binary PGM (P5) and PPM (P6): four whitespace
/// separated header tokens, one whitespace byte, then the raster.
pub fn read_pnm(b: &[u8]) -> Result<RefImage, String> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < b.len() && !b[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        tokens.push(String::from_utf8_lossy(&b[start..i]).into_owned());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad number '{s}'"));
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(format!("unsupported magic {m}")),
    };
    let pixels = b.get(i + 1..).ok_or("missing raster")?.to_vec();
    if pixels.len() != width * height * channels || maxval != 255 {
        return Err("raster size or maxval mismatch".into());
    }
    Ok(RefImage {
        magic: tokens[0].clone(),
        width,
        height,
        maxval,
        pixels,
    })
}

/// Runs the command line `spinodal <args>` in-process.
pub fn cli(args: &[&str]) -> Result<(), CliError> {
    let argv = std::iter::once("spinodal").chain(args.iter().copied());
    run(Cli::try_parse_from(argv).expect("valid command line"))
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every regular file below `dir`, sorted, as paths relative to `dir`.
pub fn files_below(dir: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

/// Files that differ between two directory trees, or exist in only one.
pub fn tree_differences(a: &Path, b: &Path) -> Vec<PathBuf> {
    let fa = files_below(a);
    let fb = files_below(b);
    let mut diff: Vec<PathBuf> = fa
        .iter()
        .filter(|f| !fb.contains(f))
        .chain(fb.iter().filter(|f| !fa.contains(f)))
        .cloned()
        .collect();
    for f in fa.iter().filter(|f| fb.contains(f)) {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
            diff.push(f.clone());
        }
    }
    diff
}
