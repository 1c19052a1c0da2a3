//! On-disk layout of a synthetic dataset: observations CSV, ground-truth CSV and
//! a flat `key=value` config file, all inside one directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{GenerativeConfig, SyntheticDataset};
use crate::error::{LstdError, Result};

pub const DATA_FILE: &str = "data.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// 17 significant digits: enough for an exact `f64` round trip.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn export_dataset(ds: &SyntheticDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if ds.is_empty() {
        return Err(LstdError::Config("refusing to export an empty dataset (T = 0)".into()));
    }
    fs::create_dir_all(dir).map_err(|e| LstdError::io(dir, e))?;

    let mut data = String::new();
    data.push('t');
    for d in 0..ds.x.ncols() {
        write!(data, ",x{d}").unwrap();
    }
    data.push('\n');
    for (t, row) in ds.x.rows().into_iter().enumerate() {
        write!(data, "{t}").unwrap();
        for v in row {
            write!(data, ",{}", num(*v)).unwrap();
        }
        data.push('\n');
    }

    let mut truth = String::new();
    truth.push('t');
    for i in 0..ds.z_s.ncols() {
        write!(truth, ",zs{i}").unwrap();
    }
    for j in 0..ds.z_d.ncols() {
        write!(truth, ",zd{j}").unwrap();
    }
    truth.push_str(",mask\n");
    for t in 0..ds.len() {
        write!(truth, "{t}").unwrap();
        for v in ds.z_s.row(t).iter().chain(ds.z_d.row(t)) {
            write!(truth, ",{}", num(*v)).unwrap();
        }
        writeln!(truth, ",{}", u8::from(ds.mask[t])).unwrap();
    }

    write_file(&dir.join(DATA_FILE), &data)?;
    write_file(&dir.join(GROUND_TRUTH_FILE), &truth)?;
    write_file(&dir.join(CONFIG_FILE), &config_to_text(&ds.config))?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LstdError::io(path, e))
}

pub fn import_dataset(dir: impl AsRef<Path>) -> Result<SyntheticDataset> {
    let dir = dir.as_ref();
    let config = config_from_text(&dir.join(CONFIG_FILE))?;
    let table = crate::io::load_csv(&dir.join(DATA_FILE), &Default::default())?;
    let truth_path = dir.join(GROUND_TRUTH_FILE);
    let truth = fs::read_to_string(&truth_path).map_err(|e| LstdError::io(&truth_path, e))?;

    let (n_s, n_d) = (config.n_s, config.n_d);
    let mut z_s = Vec::new();
    let mut z_d = Vec::new();
    let mut mask = Vec::new();
    for (k, line) in truth.lines().enumerate().skip(1) {
        let parse_err = |msg: String| LstdError::Parse {
            path: truth_path.clone(),
            line: k + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + n_s + n_d {
            return Err(parse_err(format!("expected {} fields, got {}", 2 + n_s + n_d, fields.len())));
        }
        for (i, f) in fields[1..1 + n_s + n_d].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| parse_err(format!("bad number {f:?}")))?;
            if i < n_s {
                z_s.push(v);
            } else {
                z_d.push(v);
            }
        }
        mask.push(match fields[1 + n_s + n_d] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("bad mask value {other:?}"))),
        });
    }
    let t = mask.len();
    if t != table.values.nrows() {
        return Err(LstdError::Shape(format!(
            "ground truth has {t} rows but data has {}",
            table.values.nrows()
        )));
    }
    Ok(SyntheticDataset {
        x: table.values,
        z_s: Array2::from_shape_vec((t, n_s), z_s).expect("row-major shape"),
        z_d: Array2::from_shape_vec((t, n_d), z_d).expect("row-major shape"),
        mask,
        config,
    })
}

fn adjacency_text(adj: &[Vec<bool>]) -> String {
    adj.iter()
        .map(|row| row.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>())
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_adjacency(s: &str) -> Option<Vec<Vec<bool>>> {
    s.split(';')
        .map(|row| {
            row.chars()
                .map(|c| match c {
                    '1' => Some(true),
                    '0' => Some(false),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

pub fn config_to_text(c: &GenerativeConfig) -> String {
    // `{:?}` prints the shortest representation that parses back exactly.
    let lines = [
        format!("n_s={}", c.n_s),
        format!("n_d={}", c.n_d),
        format!("obs_dim={}", c.obs_dim),
        format!("theta={:?}", c.theta),
        format!("lag={}", c.lag),
        format!("T={}", c.length),
        format!("seed={}", c.seed),
        format!("noise_scale_s={:?}", c.noise_scale_s),
        format!("noise_scale_d={:?}", c.noise_scale_d),
        format!("adjacency_s={}", adjacency_text(&c.adjacency_s)),
        format!("adjacency_d={}", adjacency_text(&c.adjacency_d)),
        format!("mixing_layers={}", c.mixing_layers),
        format!("mixing_slope={:?}", c.mixing_slope),
        format!("gain_s={:?}", c.gain_s),
        format!("gain_d={:?}", c.gain_d),
        format!("transition_hidden={}", c.transition_hidden),
    ];
    lines.join("\n") + "\n"
}

pub fn config_from_text(path: &Path) -> Result<GenerativeConfig> {
    let text = fs::read_to_string(path).map_err(|e| LstdError::io(path, e))?;
    let mut c = GenerativeConfig::default();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| LstdError::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
        let bad = || err(format!("bad value for {key}: {value:?}"));
        macro_rules! parse {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "n_s" => c.n_s = parse!(),
            "n_d" => c.n_d = parse!(),
            "obs_dim" => c.obs_dim = parse!(),
            "theta" => c.theta = parse!(),
            "lag" => c.lag = parse!(),
            "T" => c.length = parse!(),
            "seed" => c.seed = parse!(),
            "noise_scale_s" => c.noise_scale_s = parse!(),
            "noise_scale_d" => c.noise_scale_d = parse!(),
            "adjacency_s" => c.adjacency_s = parse_adjacency(value).ok_or_else(bad)?,
            "adjacency_d" => c.adjacency_d = parse_adjacency(value).ok_or_else(bad)?,
            "mixing_layers" => c.mixing_layers = parse!(),
            "mixing_slope" => c.mixing_slope = parse!(),
            "gain_s" => c.gain_s = parse!(),
            "gain_d" => c.gain_d = parse!(),
            "transition_hidden" => c.transition_hidden = parse!(),
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_series;
    use sha2::{Digest, Sha256};

    fn small() -> GenerativeConfig {
        GenerativeConfig {
            length: 250,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn export_import_round_trip() {
        let ds = generate_series(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let back = import_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_dataset_is_rejected_before_writing() {
        let mut ds = generate_series(&small()).unwrap();
        ds.x = Array2::zeros((0, 4));
        ds.z_s = Array2::zeros((0, 2));
        ds.z_d = Array2::zeros((0, 2));
        ds.mask.clear();
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        assert!(export_dataset(&ds, &target).is_err());
        assert!(!target.exists());
    }

    #[test]
    fn export_is_byte_stable() {
        let hash = |dir: &Path| {
            let mut h = Sha256::new();
            for f in [DATA_FILE, GROUND_TRUTH_FILE, CONFIG_FILE] {
                h.update(fs::read(dir.join(f)).unwrap());
            }
            h.finalize()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        export_dataset(&generate_series(&small()).unwrap(), a.path()).unwrap();
        export_dataset(&generate_series(&small()).unwrap(), b.path()).unwrap();
        assert_eq!(hash(a.path()), hash(b.path()));
    }

    #[test]
    fn io_failure_names_the_path() {
        let ds = generate_series(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = export_dataset(&ds, blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
