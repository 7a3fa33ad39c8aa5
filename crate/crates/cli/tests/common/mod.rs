//! Fixture writers and helpers shared by the integration test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rbmgradlab"))
}

/// Runs the binary, returning its output; panics if it cannot start.
pub fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env_remove("RBMGRADLAB_JOBS")
        .output()
        .expect("binary starts")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Deterministic byte generator for synthetic pixel data.
pub struct Bytes(u64);

impl Bytes {
    pub fn new(seed: u64) -> Self {
        Bytes(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next(&mut self) -> u8 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 24) as u8
    }
}

/// IDX image and label files holding `per_digit` examples of every digit,
/// interleaved 0, 1, …, 9, 0, 1, ….
pub fn write_mnist(dir: &Path, per_digit: usize, seed: u64) -> (PathBuf, PathBuf) {
    let n = per_digit * 10;
    let mut images = Vec::with_capacity(16 + n * 784);
    images.extend_from_slice(&0x0803u32.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&0x0801u32.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    let mut g = Bytes::new(seed);
    for i in 0..n {
        labels.push((i % 10) as u8);
        images.extend((0..784).map(|_| g.next()));
    }
    let (ip, lp) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
    fs::write(&ip, images).unwrap();
    fs::write(&lp, labels).unwrap();
    (ip, lp)
}

/// One CIFAR-10 binary batch with `n` records.
pub fn write_cifar(path: &Path, n: usize, seed: u64) {
    let mut g = Bytes::new(seed);
    let mut out = Vec::with_capacity(n * 3073);
    for i in 0..n {
        out.push((i % 10) as u8);
        out.extend((0..3072).map(|_| g.next()));
    }
    fs::write(path, out).unwrap();
}

/// A silhouettes CSV with `n` rows of 256 binary values.
pub fn write_silhouettes(path: &Path, n: usize, seed: u64) {
    let mut g = Bytes::new(seed);
    let mut text = String::with_capacity(n * 512);
    for _ in 0..n {
        let row: Vec<&str> = (0..256)
            .map(|_| if g.next() & 1 == 1 { "1" } else { "0" })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}
