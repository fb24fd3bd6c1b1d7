#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddimm::partition::write_long_csv;
use ddimm::simstudy::{generate, Family, SimDesign};

pub fn ddimm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddimm"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn design(n: usize, m: usize, seed: u64) -> SimDesign {
    SimDesign {
        family: Family::GlobalAr1,
        n,
        m,
        theta0: vec![0.3, 0.6],
        sigma: 2.0,
        rho: 0.6,
        seed,
        ..SimDesign::default()
    }
}

/// Writes a simulated long-format CSV with columns intercept and x_1.
pub fn write_data(dir: &Path, n: usize, m: usize, seed: u64) -> PathBuf {
    let data = generate(&design(n, m, seed), seed).unwrap();
    let path = dir.join("data.csv");
    write_long_csv(&data, &path).unwrap();
    path
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// `parameter -> estimate` column of an estimates.csv.
pub fn estimates(path: &Path) -> Vec<(String, f64)> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| {
            // names such as "sigma2[j=1,k=1]" are quoted
            let (name, rest) = match l.strip_prefix('"') {
                Some(q) => q.split_once("\",").unwrap(),
                None => l.split_once(',').unwrap(),
            };
            (name.to_string(), rest.split(',').next().unwrap().parse().unwrap())
        })
        .collect()
}
