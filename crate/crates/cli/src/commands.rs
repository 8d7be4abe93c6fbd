use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use serde_json::json;
use spreadvote::bounds::{check_disjointly, check_exponential_eta, write_batch_csv, BoundsConfig};
use spreadvote::measure::{cross_validate, estimate_covariance, write_estimate_csv};
use spreadvote::renorm::{
    embedding_count, enumerate_embeddings, leaf_boxes_disjoint, pair_sum_constants, random_embedding, sparsity_rows,
    validate_embedding_with, write_sparsity_csv, PairSummer, ENUMERATION_GUARD,
};
use spreadvote::rng::par_replicates;
use spreadvote::threshold::{theorem_trend_report, write_trend_csv};
use spreadvote::walks::estimate_h;
use spreadvote::*;

use crate::config::RunConfig;
use crate::Failure;

const SCHEMA_VERSION: u32 = 1;
const GENERATOR: &str = concat!("spreadvote ", env!("CARGO_PKG_VERSION"));

/// What a command produced: files written, and a failed check if any.
struct Produced {
    files: Vec<PathBuf>,
    check: Option<String>,
}

pub fn run(name: &str, cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.out)?;
    let t0 = Instant::now();
    let produced = match name {
        "sample" => sample(cfg)?,
        "hscan" => hscan(cfg)?,
        "bounds" => bounds(cfg)?,
        "renorm" => renorm(cfg)?,
        "threshold" => threshold(cfg)?,
        "covariance" => covariance(cfg)?,
        "crossval" => crossval(cfg)?,
        other => return Err(Failure::Config(format!("unknown command {other}"))),
    };
    // wall time lives in the sidecar so the outputs stay reproducible
    let meta = json!({
        "schema_version": SCHEMA_VERSION,
        "generator": GENERATOR,
        "command": name,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "config": cfg.echo_json(),
        "wall_time_s": t0.elapsed().as_secs_f64(),
        "outputs": produced.files.iter().map(|p| p.file_name().unwrap().to_string_lossy()).collect::<Vec<_>>(),
        "check": produced.check,
    });
    write_text(&cfg.out.join(format!("{name}.meta.json")), &serde_json::to_string_pretty(&meta).unwrap())?;
    match produced.check {
        Some(msg) => Err(Failure::Check(msg)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Writes a CSV preceded by one `#` comment line echoing the configuration.
fn write_csv(
    cfg: &RunConfig,
    file: &str,
    body: impl FnOnce(&mut Vec<u8>) -> spreadvote::Result<()>,
) -> Result<PathBuf, Failure> {
    let mut buf = format!("# {GENERATOR} {}\n", cfg.echo_line()).into_bytes();
    body(&mut buf)?;
    let path = cfg.out.join(file);
    fs::write(&path, buf).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn write_json(cfg: &RunConfig, file: &str, payload: serde_json::Value) -> Result<PathBuf, Failure> {
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "generator": GENERATOR,
        "config": cfg.echo_json(),
        "result": payload,
    });
    let path = cfg.out.join(file);
    write_text(&path, &serde_json::to_string_pretty(&doc).unwrap())?;
    Ok(path)
}

fn sampler_for(cfg: &RunConfig, range: u32) -> Result<Sampler, Failure> {
    Ok(match cfg.sampler.as_str() {
        "bernoulli" => Sampler::Bernoulli,
        "finite" => Sampler::MuFiniteTime { range, t: cfg.t },
        _ => Sampler::Mu {
            range,
            policy: StopPolicy::new(cfg.eps_stop, Some(cfg.t_max))?,
        },
    })
}

fn truncation_for(cfg: &RunConfig, range: u32) -> Result<TruncationPolicy, Failure> {
    Ok(match cfg.eps_trunc {
        Some(eps) => TruncationPolicy::calibrated(cfg.d, range, eps, cfg.t_max)?,
        None => TruncationPolicy::time_cap(cfg.t_max)?,
    })
}

fn sample(cfg: &RunConfig) -> Result<Produced, Failure> {
    let window = Arc::new(Window::cube(Point::origin(cfg.d), cfg.radius));
    let sampler = sampler_for(cfg, cfg.range)?;
    let seeds = SeedStream::new(cfg.seed);
    let docs = par_replicates(cfg.samples, seeds, |_, rng| -> spreadvote::Result<String> {
        sampler.sample(&window, cfg.alpha, rng, cfg.seed)?.to_json(Some(cfg.echo_json()))
    });
    let mut files = Vec::new();
    for (i, doc) in docs.into_iter().enumerate() {
        let path = cfg.out.join(format!("sample_{i:05}.json"));
        write_text(&path, &doc?)?;
        files.push(path);
    }
    Ok(Produced { files, check: None })
}

#[derive(Serialize)]
struct HRow {
    #[serde(rename = "R")]
    range: u32,
    r: u32,
    h: f64,
    stderr: f64,
    ci_lo: f64,
    ci_hi: f64,
    met: u64,
    n: u64,
    escape_radius: Option<u32>,
    t_max: Option<f64>,
}

fn hscan(cfg: &RunConfig) -> Result<Produced, Failure> {
    let seeds = SeedStream::new(cfg.seed);
    let mut rows = Vec::new();
    for &range in &cfg.ranges {
        let policy = truncation_for(cfg, range)?;
        for r in 1..=cfg.r_max {
            let y = Point::unit(cfg.d, 0) * r as i32;
            let h = estimate_h(Point::origin(cfg.d), y, range, cfg.samples, &policy, seeds.child(range as u64).child(r as u64))?;
            rows.push(HRow {
                range,
                r,
                h: h.value,
                stderr: h.stderr,
                ci_lo: h.ci.ci_lo,
                ci_hi: h.ci.ci_hi,
                met: h.met,
                n: h.n_samples,
                escape_radius: policy.escape_radius,
                t_max: policy.t_max,
            });
        }
    }
    let path = write_csv(cfg, "hscan.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in &rows {
            w.serialize(r).map_err(spreadvote::Error::from)?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Produced {
        files: vec![path],
        check: None,
    })
}

/// Reproducible batch: even ids check the exponential-eta bound on a random
/// small set, odd ids the disjoint-occurrence bound for a random two-site
/// pattern.
fn bounds(cfg: &RunConfig) -> Result<Produced, Failure> {
    let d = cfg.d;
    let bcfg = BoundsConfig {
        eps_stop: cfg.eps_stop,
        ..BoundsConfig::new(cfg.samples, cfg.t_max)
    };
    let seeds = SeedStream::new(cfg.seed);
    let mut rng = seeds.rng(&[u64::MAX]);
    let mut reports = Vec::new();
    for i in 0..cfg.sets {
        let range = cfg.ranges[rng.gen_range(0..cfg.ranges.len())];
        let rep = if i % 2 == 0 {
            let size = rng.gen_range(2..=4);
            let mut set: Vec<Point> = Vec::new();
            while set.len() < size {
                let c: Vec<i32> = (0..d).map(|_| rng.gen_range(-2..=2)).collect();
                let p = Point::from_slice(&c);
                if !set.contains(&p) {
                    set.push(p);
                }
            }
            let beta = [0.3, 0.5, 0.8][rng.gen_range(0..3)];
            check_exponential_eta(&set, range, beta, &bcfg, seeds.child(i as u64))?
        } else {
            let e1 = Point::unit(d, 0);
            let vals = [rng.gen_range(0..=1u8), rng.gen_range(0..=1u8)];
            let event = CylinderEvent::pattern(&[(Point::origin(d), vals[0]), (e1, vals[1])])?;
            let count = rng.gen_range(2..=3);
            let spacing = rng.gen_range(3..=6);
            let translates: Vec<Point> = (0..count).map(|k| e1 * (k * spacing)).collect();
            let alpha = [0.4, 0.6][rng.gen_range(0..2)];
            check_disjointly(&event, &translates, alpha, range, &bcfg, seeds.child(i as u64))?
        };
        reports.push(rep);
    }
    let csv_path = write_csv(cfg, "bounds.csv", |buf| write_batch_csv(buf, &reports))?;
    let json_path = write_json(cfg, "bounds.json", serde_json::to_value(&reports).unwrap())?;
    let fails: Vec<usize> = reports
        .iter()
        .enumerate()
        .filter(|(_, r)| r.verdict == Verdict::Fail)
        .map(|(i, _)| i)
        .collect();
    let check = (!fails.is_empty()).then(|| format!("bound violated for parameter sets {fails:?}"));
    Ok(Produced {
        files: vec![csv_path, json_path],
        check,
    })
}

fn renorm(cfg: &RunConfig) -> Result<Produced, Failure> {
    let (n, d, l) = (cfg.n_levels, cfg.d, cfg.l);
    let count = embedding_count(n, d, EmbeddingRule::Coarse);
    let exhaustive = count.is_some_and(|c| c <= ENUMERATION_GUARD);
    let embeddings: Vec<ProperEmbedding> = if exhaustive {
        enumerate_embeddings(n, d, l)?.collect()
    } else {
        let mut rng = SeedStream::new(cfg.seed).rng(&[0]);
        (0..cfg.samples)
            .map(|_| random_embedding(n, d, l, EmbeddingRule::Coarse, &mut rng))
            .collect::<spreadvote::Result<_>>()?
    };
    match count {
        Some(c) => println!("count {c}"),
        None => println!("count overflow"),
    }
    let mut summer = if d >= 3 { Some(PairSummer::new(d, l)?) } else { None };
    let c_prime = if d >= 3 { Some(pair_sum_constants(d, l)?.c_prime) } else { None };
    let mut rows = Vec::new();
    let (mut invalid, mut overlapping, mut max_ratio) = (0usize, 0usize, 0f64);
    for (id, t) in embeddings.iter().enumerate() {
        if !validate_embedding_with(t, EmbeddingRule::Coarse) {
            invalid += 1;
            continue;
        }
        overlapping += usize::from(!leaf_boxes_disjoint(t));
        if n >= 1 {
            rows.extend(sparsity_rows(t, id as u64, n)?);
        }
        if let (Some(s), Some(cp)) = (summer.as_mut(), c_prime) {
            max_ratio = max_ratio.max(s.leaf_pair_sum(t)? / (cp * 2f64.powi(n as i32)));
        }
    }
    let strict = rows.iter().filter(|r| !r.pass).count();
    let weak = rows.iter().filter(|r| !r.weak_pass).count();
    let csv_path = write_csv(cfg, "renorm_sparsity.csv", |buf| write_sparsity_csv(buf, &rows))?;
    let summary = json!({
        "count": count.map(|c| c.to_string()),
        "exhaustive": exhaustive,
        "audited": embeddings.len(),
        "invalid": invalid,
        "overlapping_leaf_boxes": overlapping,
        "strict_sparsity_violations": strict,
        "weak_sparsity_violations": weak,
        "pair_sum_max_ratio": c_prime.map(|_| max_ratio),
        "c_prime": c_prime,
    });
    println!(
        "audited {} embeddings: {invalid} invalid, {overlapping} with overlapping leaf boxes, \
         {strict} strict and {weak} weak sparsity violations",
        embeddings.len()
    );
    let json_path = write_json(cfg, "renorm_summary.json", summary)?;
    Ok(Produced {
        files: vec![csv_path, json_path],
        check: None,
    })
}

fn threshold(cfg: &RunConfig) -> Result<Produced, Failure> {
    let spec = AnnulusSpec::for_box(cfg.d, cfg.box_size)?;
    let samplers = cfg
        .ranges
        .iter()
        .map(|&r| Ok((r, sampler_for(cfg, r)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let make = |r: u32| samplers.iter().find(|(q, _)| *q == r).map(|(_, s)| s.clone()).unwrap();
    let (pc, rows) = theorem_trend_report(&cfg.ranges, &spec, cfg.p_star, make, &[cfg.samples], SeedStream::new(cfg.seed))?;
    let trend: Vec<_> = rows.iter().map(|(_, r)| r.clone()).collect();
    let csv_path = write_csv(cfg, "threshold_trend.csv", |buf| write_trend_csv(buf, &trend))?;
    let estimates: Vec<_> = rows.iter().map(|(e, _)| e).collect();
    let json_path = write_json(cfg, "threshold.json", json!({ "bernoulli": pc, "mu": estimates }))?;
    Ok(Produced {
        files: vec![csv_path, json_path],
        check: None,
    })
}

fn covariance(cfg: &RunConfig) -> Result<Produced, Failure> {
    let seeds = SeedStream::new(cfg.seed);
    let mut rows = Vec::new();
    for &range in &cfg.ranges {
        let sampler = sampler_for(cfg, range)?;
        for r in 1..=cfg.r_max {
            let y = Point::unit(cfg.d, 0) * r as i32;
            let c = estimate_covariance(
                Point::origin(cfg.d),
                y,
                cfg.alpha,
                &sampler,
                cfg.samples,
                seeds.child(range as u64).child(r as u64),
            )?;
            rows.push((vec![range.to_string(), r.to_string()], c.cov));
        }
    }
    let path = write_csv(cfg, "covariance.csv", |buf| write_estimate_csv(buf, &["R", "r"], &rows))?;
    Ok(Produced {
        files: vec![path],
        check: None,
    })
}

fn crossval(cfg: &RunConfig) -> Result<Produced, Failure> {
    let cv = cross_validate(cfg.d, cfg.torus, cfg.alpha, cfg.range, cfg.t, cfg.samples, SeedStream::new(cfg.seed))?;
    let agrees = cv.agrees(3.0);
    let path = write_json(cfg, "crossval.json", json!({ "agrees_3sigma": agrees, "marginals": cv }))?;
    println!(
        "one-site forward {:.4} dual {:.4}; pair forward {:.4} dual {:.4}; {}",
        cv.forward_one.estimate,
        cv.dual_one.estimate,
        cv.forward_pair.estimate,
        cv.dual_pair.estimate,
        if agrees { "agree" } else { "DISAGREE" }
    );
    Ok(Produced {
        files: vec![path],
        check: (!agrees).then(|| "forward and duality marginals disagree beyond 3 sigma".to_string()),
    })
}
