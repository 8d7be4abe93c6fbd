//! Run configuration: a flat `key=value` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use spreadvote::lattice::MAX_DIM;

/// Flags shared by every subcommand. Any of them may also appear in the
/// `--config` file under the same name without the dashes.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// `key=value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Spread-out range.
    #[arg(long = "R")]
    pub range: Option<u32>,
    /// Comma-separated list of ranges for scans, e.g. `1,4,16`.
    #[arg(long)]
    pub ranges: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Base scale of the renormalization ladder.
    #[arg(long = "L")]
    pub l: Option<u32>,
    /// Depth of the embedded tree.
    #[arg(long = "N")]
    pub n_levels: Option<u32>,
    #[arg(long = "M")]
    pub m: Option<u32>,
    /// Box size for threshold estimates (even).
    #[arg(long = "box")]
    pub box_size: Option<u32>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stopping tolerance of the coalescence runs, or `none`.
    #[arg(long = "eps-stop")]
    pub eps_stop: Option<String>,
    /// Escape tolerance for meeting estimates, or `none` for a plain time cap.
    #[arg(long = "eps-trunc")]
    pub eps_trunc: Option<String>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    #[arg(long = "p-star")]
    pub p_star: Option<f64>,
    /// Radius of the sampled window `B(0, radius)`.
    #[arg(long)]
    pub radius: Option<u32>,
    /// Largest distance in `hscan` and `covariance`.
    #[arg(long = "r-max")]
    pub r_max: Option<u32>,
    /// Number of parameter sets in a `bounds` batch.
    #[arg(long)]
    pub sets: Option<usize>,
    /// `mu`, `bernoulli` or `finite`.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Time for the finite-time sampler and the forward dynamics.
    #[arg(long)]
    pub t: Option<f64>,
    /// Torus side for `crossval`.
    #[arg(long)]
    pub torus: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub range: u32,
    pub ranges: Vec<u32>,
    pub alpha: f64,
    pub l: u32,
    pub n_levels: u32,
    pub m: u32,
    pub box_size: u32,
    pub samples: usize,
    pub seed: u64,
    pub eps_stop: Option<f64>,
    pub eps_trunc: Option<f64>,
    pub t_max: f64,
    pub p_star: f64,
    pub radius: u32,
    pub r_max: u32,
    pub sets: usize,
    pub sampler: String,
    pub t: f64,
    pub torus: u32,
    pub out: PathBuf,
    pub workers: usize,
}

const KEYS: &[&str] = &[
    "d", "R", "ranges", "alpha", "L", "N", "M", "box", "samples", "seed", "eps-stop", "eps-trunc", "t-max", "p-star",
    "radius", "r-max", "sets", "sampler", "t", "torus", "out", "workers",
];

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(format!("config line {}: unknown key `{k}`", i + 1));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn put<T: Display>(map: &mut BTreeMap<String, String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        map.insert(key.to_string(), v.to_string());
    }
}

fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, String> {
    match map.get(key) {
        None => Ok(default),
        Some(s) => s.parse().map_err(|_| format!("`{key}`: cannot parse `{s}`")),
    }
}

fn get_opt(map: &BTreeMap<String, String>, key: &str, default: Option<f64>) -> Result<Option<f64>, String> {
    match map.get(key).map(String::as_str) {
        None => Ok(default),
        Some("none") => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| format!("`{key}`: cannot parse `{s}`")),
    }
}

impl RunConfig {
    /// Merges the config file (if any) with the flags and validates.
    pub fn resolve(flags: &Flags) -> Result<RunConfig, String> {
        let mut map = match &flags.config {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        };
        put(&mut map, "d", &flags.d);
        put(&mut map, "R", &flags.range);
        put(&mut map, "ranges", &flags.ranges);
        put(&mut map, "alpha", &flags.alpha);
        put(&mut map, "L", &flags.l);
        put(&mut map, "N", &flags.n_levels);
        put(&mut map, "M", &flags.m);
        put(&mut map, "box", &flags.box_size);
        put(&mut map, "samples", &flags.samples);
        put(&mut map, "seed", &flags.seed);
        put(&mut map, "eps-stop", &flags.eps_stop);
        put(&mut map, "eps-trunc", &flags.eps_trunc);
        put(&mut map, "t-max", &flags.t_max);
        put(&mut map, "p-star", &flags.p_star);
        put(&mut map, "radius", &flags.radius);
        put(&mut map, "r-max", &flags.r_max);
        put(&mut map, "sets", &flags.sets);
        put(&mut map, "sampler", &flags.sampler);
        put(&mut map, "t", &flags.t);
        put(&mut map, "torus", &flags.torus);
        put(&mut map, "out", &flags.out.as_ref().map(|p| p.display().to_string()));
        put(&mut map, "workers", &flags.workers);
        RunConfig::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<RunConfig, String> {
        let range = get(map, "R", 1u32)?;
        let ranges = match map.get("ranges") {
            None => vec![range],
            Some(s) => s
                .split(',')
                .map(|x| x.trim().parse::<u32>().map_err(|_| format!("`ranges`: cannot parse `{x}`")))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let cfg = RunConfig {
            d: get(map, "d", 3)?,
            range,
            ranges,
            alpha: get(map, "alpha", 0.5)?,
            l: get(map, "L", 2)?,
            n_levels: get(map, "N", 1)?,
            m: get(map, "M", 8)?,
            box_size: get(map, "box", 16)?,
            samples: get(map, "samples", 1000)?,
            seed: get(map, "seed", 1)?,
            eps_stop: get_opt(map, "eps-stop", Some(1e-3))?,
            eps_trunc: get_opt(map, "eps-trunc", None)?,
            t_max: get(map, "t-max", 1000.0)?,
            p_star: get(map, "p-star", 0.5)?,
            radius: get(map, "radius", 4)?,
            r_max: get(map, "r-max", 8)?,
            sets: get(map, "sets", 20)?,
            sampler: get(map, "sampler", "mu".to_string())?,
            t: get(map, "t", 5.0)?,
            torus: get(map, "torus", 32)?,
            out: get(map, "out", PathBuf::from("out"))?,
            workers: get(map, "workers", 1)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(msg.to_string()) };
        check((1..=MAX_DIM).contains(&self.d), "`d` must be between 1 and 8")?;
        check(self.range >= 1, "`R` must be at least 1")?;
        check(!self.ranges.is_empty() && self.ranges.iter().all(|&r| r >= 1), "`ranges` must be positive")?;
        check((0.0..=1.0).contains(&self.alpha), "`alpha` must lie in [0, 1]")?;
        check(self.l >= 1, "`L` must be at least 1")?;
        check(self.m >= 1, "`M` must be at least 1")?;
        check(self.box_size >= 2 && self.box_size % 2 == 0, "`box` must be even and at least 2")?;
        check(self.samples >= 1, "`samples` must be at least 1")?;
        for (k, e) in [("eps-stop", self.eps_stop), ("eps-trunc", self.eps_trunc)] {
            if let Some(e) = e {
                check(e > 0.0 && e < 1.0, &format!("`{k}` must lie in (0, 1)"))?;
            }
        }
        check(self.t_max > 0.0 && self.t_max.is_finite(), "`t-max` must be positive")?;
        check(self.t >= 0.0 && self.t.is_finite(), "`t` must be non-negative")?;
        check(self.p_star > 0.0 && self.p_star < 1.0, "`p-star` must lie in (0, 1)")?;
        check(self.r_max >= 1, "`r-max` must be at least 1")?;
        check(self.sets >= 1, "`sets` must be at least 1")?;
        check(
            ["mu", "bernoulli", "finite"].contains(&self.sampler.as_str()),
            "`sampler` must be mu, bernoulli or finite",
        )?;
        check(self.torus >= 3, "`torus` must be at least 3")?;
        check(self.workers >= 1, "`workers` must be at least 1")?;
        Ok(())
    }

    /// Every setting that affects results, as `key=value` pairs. The output
    /// path and worker count are left out.
    pub fn echo(&self) -> BTreeMap<&'static str, String> {
        let opt = |e: Option<f64>| e.map_or("none".to_string(), |v| v.to_string());
        let ranges = self.ranges.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        BTreeMap::from([
            ("d", self.d.to_string()),
            ("R", self.range.to_string()),
            ("ranges", ranges),
            ("alpha", self.alpha.to_string()),
            ("L", self.l.to_string()),
            ("N", self.n_levels.to_string()),
            ("M", self.m.to_string()),
            ("box", self.box_size.to_string()),
            ("samples", self.samples.to_string()),
            ("seed", self.seed.to_string()),
            ("eps-stop", opt(self.eps_stop)),
            ("eps-trunc", opt(self.eps_trunc)),
            ("t-max", self.t_max.to_string()),
            ("p-star", self.p_star.to_string()),
            ("radius", self.radius.to_string()),
            ("r-max", self.r_max.to_string()),
            ("sets", self.sets.to_string()),
            ("sampler", self.sampler.clone()),
            ("t", self.t.to_string()),
            ("torus", self.torus.to_string()),
        ])
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::to_value(self.echo()).expect("string map")
    }

    /// Single-line echo for CSV headers.
    pub fn echo_line(&self) -> String {
        self.echo().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# base\nalpha = 0.3\nR=4\nsamples=10\n").unwrap();
        let flags = Flags {
            config: Some(path),
            alpha: Some(0.7),
            ..Flags::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.alpha, 0.7);
        assert_eq!(cfg.range, 4);
        assert_eq!(cfg.ranges, vec![4]);
        assert_eq!(cfg.samples, 10);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |k: &str, v: &str| {
            let map = BTreeMap::from([(k.to_string(), v.to_string())]);
            RunConfig::from_map(&map).is_err()
        };
        assert!(bad("alpha", "1.3"));
        assert!(bad("box", "15"));
        assert!(bad("d", "0"));
        assert!(bad("eps-stop", "2"));
        assert!(bad("sampler", "ising"));
        assert!(bad("ranges", "1,x"));
        assert!(parse_config("colour=red").is_err());
        assert!(parse_config("alpha").is_err());
    }

    #[test]
    fn none_disables_tolerances() {
        let map = BTreeMap::from([("eps-stop".to_string(), "none".to_string())]);
        assert_eq!(RunConfig::from_map(&map).unwrap().eps_stop, None);
    }

    #[test]
    fn echo_skips_paths_and_workers() {
        let cfg = RunConfig::from_map(&BTreeMap::new()).unwrap();
        let line = cfg.echo_line();
        assert!(line.contains("seed=1") && !line.contains("out=") && !line.contains("workers="));
    }
}
