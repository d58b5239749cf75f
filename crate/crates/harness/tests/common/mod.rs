#![allow(dead_code)]

use std::path::Path;

use fetrpo::ExperimentConfig;

pub const TINY: &str = "\
num_users = 2
episode_len = 10
batch_size = 40
iterations = 4
policy_hidden = 8
value_hidden = 8
eval_episodes = 2
";

pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(TINY).unwrap();
    cfg.seeds = vec![0, 1, 2];
    cfg.output_dir = out.to_path_buf();
    cfg
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

pub fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}
