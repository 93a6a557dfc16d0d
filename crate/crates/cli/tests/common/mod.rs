#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stylenet::data::idx::{write_idx_images, write_idx_labels};
use stylenet::data::{DatasetKind, Split};

/// A 28x28 image of class `c`: a bright bar whose row and thickness depend on
/// the class, plus a sample-dependent horizontal offset.
fn glyph(class: usize, sample: usize) -> Vec<u8> {
    let mut px = vec![0u8; 784];
    let row = 3 + (class * 2) % 22;
    let start = 2 + sample % 6;
    for r in row..row + 2 + class % 3 {
        for c in start..start + 14 + class % 5 {
            px[r * 28 + c] = 200 + (sample % 50) as u8;
        }
    }
    px
}

fn write_split(dir: &Path, kind: DatasetKind, split: Split, n: usize, offset: usize) {
    let classes = kind.num_classes();
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i * 7 + offset) % classes;
        pixels.extend(glyph(class, i + offset));
        labels.push(match kind {
            DatasetKind::Mnist => class as u8,
            DatasetKind::EmnistLetters => class as u8 + 1,
        });
    }
    let (img, lbl) = kind.file_names(split);
    fs::write(dir.join(img), write_idx_images(n as u32, 28, 28, &pixels)).unwrap();
    fs::write(dir.join(lbl), write_idx_labels(&labels)).unwrap();
}

/// Writes small synthetic MNIST-named (and optionally EMNIST-named) files.
pub fn synthetic_data(dir: &Path, with_letters: bool) {
    write_split(dir, DatasetKind::Mnist, Split::Train, 300, 0);
    write_split(dir, DatasetKind::Mnist, Split::Test, 120, 3);
    if with_letters {
        write_split(dir, DatasetKind::EmnistLetters, Split::Train, 260, 0);
        write_split(dir, DatasetKind::EmnistLetters, Split::Test, 110, 1);
    }
}

pub fn stylenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylenet"))
        .args(args)
        .output()
        .expect("spawn stylenet")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = stylenet(args);
    assert!(
        out.status.success(),
        "stylenet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// All regular files below `dir`, sorted, with their contents.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
