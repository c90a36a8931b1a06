//! Run artifacts: the chain CSV, the manifest (config echo plus resolved
//! quantities and ledger counts), the deterministic diagnostics report and
//! the quarantined timing JSON, plus readers used by `compare` and `audit`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use damcmc::data::Dataset;
use damcmc::diagnostics::{AlgorithmKind, DiagnosticsReport, EvalModelInputs};
use damcmc::ledger::CostSnapshot;
use damcmc::samplers::{RunConfig, RunOutput};

use crate::CliError;

/// FNV-1a over the dataset bytes; ties runs to the data they were made from.
pub fn dataset_fingerprint(data: &Dataset) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    eat(&(data.n() as u64).to_le_bytes());
    eat(&(data.p() as u64).to_le_bytes());
    for &y in data.responses() {
        eat(&y.to_le_bytes());
    }
    for j in 0..data.p() {
        for i in 0..data.n() {
            eat(&data.covariates()[(i, j)].to_le_bytes());
        }
    }
    hash
}

pub fn algorithm_name(kind: AlgorithmKind) -> &'static str {
    match kind {
        AlgorithmKind::Mh => "mh",
        AlgorithmKind::DaMh => "da-mh",
        AlgorithmKind::Pmmh => "pmmh",
        AlgorithmKind::Bpmmh => "bpmmh",
        AlgorithmKind::DaPmmh => "da-pmmh",
        AlgorithmKind::DaBpmmh => "da-bpmmh",
    }
}

fn parse_algorithm(name: &str) -> Result<AlgorithmKind, CliError> {
    Ok(match name {
        "mh" => AlgorithmKind::Mh,
        "da-mh" => AlgorithmKind::DaMh,
        "pmmh" => AlgorithmKind::Pmmh,
        "bpmmh" => AlgorithmKind::Bpmmh,
        "da-pmmh" => AlgorithmKind::DaPmmh,
        "da-bpmmh" => AlgorithmKind::DaBpmmh,
        other => return Err(CliError::numerical(format!("manifest: unknown algorithm '{other}'"))),
    })
}

/// Write the chain CSV: one row per recorded iteration with the draw, the
/// stage probabilities, flags, the cumulative evaluation count, and the
/// per-iteration sigma_R estimate when the sampler produces one.
pub fn write_chain_csv(path: &Path, out: &RunOutput) -> Result<(), CliError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "iteration")?;
    for j in 0..out.p {
        write!(w, ",theta_{j}")?;
    }
    writeln!(w, ",alpha1,alpha2,stage2_entered,u_refreshed,cum_evals,sigma_r")?;
    for (i, (row, rec)) in out.samples.iter().zip(&out.records).enumerate() {
        write!(w, "{}", i + 1)?;
        for v in row {
            write!(w, ",{v}")?;
        }
        write!(w, ",{}", rec.alpha1)?;
        match rec.alpha2 {
            Some(a2) => write!(w, ",{a2}")?,
            None => write!(w, ",")?,
        }
        write!(
            w,
            ",{},{},{}",
            rec.stage2_entered as u8, rec.u_refreshed as u8, out.cum_evals[i]
        )?;
        match rec.sigma_r {
            Some(sr) => writeln!(w, ",{sr}")?,
            None => writeln!(w, ",")?,
        }
    }
    w.flush()?;
    Ok(())
}

/// A chain CSV read back for auditing and comparison.
pub struct ChainCsv {
    pub samples: Vec<Vec<f64>>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<Option<f64>>,
    pub stage2_entered: Vec<bool>,
    pub cum_evals: Vec<u64>,
    pub sigma_r: Vec<Option<f64>>,
}

pub fn read_chain_csv(path: &Path) -> Result<ChainCsv, CliError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::numerical("empty chain csv"))??;
    let cols: Vec<&str> = header.split(',').collect();
    let p = cols.iter().filter(|c| c.starts_with("theta_")).count();
    if p == 0 {
        return Err(CliError::numerical("chain csv has no theta columns"));
    }
    let mut out = ChainCsv {
        samples: Vec::new(),
        alpha1: Vec::new(),
        alpha2: Vec::new(),
        stage2_entered: Vec::new(),
        cum_evals: Vec::new(),
        sigma_r: Vec::new(),
    };
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 7 {
            return Err(CliError::numerical(format!(
                "chain csv row has {} fields, expected {}",
                fields.len(),
                p + 7
            )));
        }
        let fnum = |s: &str| -> Result<f64, CliError> {
            s.parse::<f64>()
                .map_err(|_| CliError::numerical(format!("bad number '{s}' in chain csv")))
        };
        let mut row = Vec::with_capacity(p);
        for f in &fields[1..=p] {
            row.push(fnum(f)?);
        }
        out.samples.push(row);
        out.alpha1.push(fnum(fields[p + 1])?);
        out.alpha2.push(if fields[p + 2].is_empty() {
            None
        } else {
            Some(fnum(fields[p + 2])?)
        });
        out.stage2_entered.push(fields[p + 3] == "1");
        out.cum_evals.push(
            fields[p + 5]
                .parse::<u64>()
                .map_err(|_| CliError::numerical("bad cum_evals in chain csv"))?,
        );
        out.sigma_r.push(if fields[p + 6].is_empty() {
            None
        } else {
            Some(fnum(fields[p + 6])?)
        });
    }
    Ok(out)
}

fn snapshot_lines(prefix: &str, s: &CostSnapshot, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{prefix}.full_point = {}", s.full_point)?;
    writeln!(w, "{prefix}.subsample_point = {}", s.subsample_point)?;
    writeln!(w, "{prefix}.cluster_dense = {}", s.cluster_dense)?;
    writeln!(w, "{prefix}.cluster_sparse = {}", s.cluster_sparse)?;
    writeln!(w, "{prefix}.positive_point = {}", s.positive_point)?;
    writeln!(w, "{prefix}.surrogate_pred = {}", s.surrogate_pred)?;
    writeln!(w, "{prefix}.setup = {}", s.setup)?;
    writeln!(w, "{prefix}.full_entries = {}", s.full_entries)?;
    writeln!(w, "{prefix}.u_refreshes = {}", s.u_refreshes)?;
    writeln!(w, "{prefix}.iterations = {}", s.iterations)
}

/// Write the manifest: config echo, resolved run quantities and the full
/// ledger breakdown; everything `audit` and `compare` need.
pub fn write_manifest(
    path: &Path,
    label: &str,
    cfg: &RunConfig,
    data_echo: &str,
    fingerprint: u64,
    out: &RunOutput,
) -> Result<(), CliError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "code_version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "label = {label}")?;
    writeln!(w, "algorithm = {}", algorithm_name(cfg.algorithm))?;
    writeln!(w, "data = {data_echo}")?;
    writeln!(w, "dataset_fingerprint = {fingerprint:016x}")?;
    writeln!(w, "seed = {}", cfg.seed)?;
    writeln!(w, "cv_mode = {:?}", cfg.cv_mode)?;
    writeln!(w, "k_fraction = {}", cfg.k_fraction)?;
    writeln!(w, "k1_fraction = {}", cfg.k1_fraction)?;
    match cfg.m_fraction {
        Some(f) => writeln!(w, "m_fraction = {f}")?,
        None => writeln!(w, "m_fraction = auto")?,
    }
    writeln!(w, "g_blocks = {}", cfg.g_blocks)?;
    if let Some(s) = cfg.surrogate_backend {
        writeln!(w, "surrogate = {s:?}")?;
    }
    writeln!(w, "n_iters = {}", cfg.n_iters)?;
    writeln!(w, "n_train = {}", cfg.n_train)?;
    writeln!(w, "burn_in_fraction = {}", cfg.burn_in_fraction)?;
    writeln!(w, "u_refresh_prob = {}", cfg.u_refresh_prob)?;
    writeln!(w, "target_alpha1 = {}", cfg.resolved_target_alpha1())?;
    writeln!(w, "adapt_rate = {}", cfg.adapt_rate)?;
    writeln!(w, "step_scale0 = {}", cfg.step_scale0)?;
    writeln!(w, "prior_variance = {}", cfg.prior_variance)?;
    writeln!(w, "correction = {}", if cfg.correction { "on" } else { "off" })?;
    writeln!(w, "init = {}", if cfg.init_at_mode { "mode" } else { "zeros" })?;
    writeln!(w, "resolved.n = {}", out.eval_inputs.n)?;
    writeln!(w, "resolved.n_scope = {}", out.n_scope)?;
    writeln!(w, "resolved.p = {}", out.p)?;
    writeln!(w, "resolved.m = {}", out.m)?;
    writeln!(w, "resolved.k_dense = {}", out.k_dense)?;
    writeln!(w, "resolved.k_sparse = {}", out.k_sparse)?;
    writeln!(w, "resolved.p_pos = {}", out.eval_inputs.p_pos)?;
    writeln!(w, "resolved.pred_cost = {}", out.eval_inputs.pred_cost)?;
    writeln!(w, "resolved.burn_in = {}", out.burn_in)?;
    writeln!(w, "resolved.final_step_scale = {}", out.final_step_scale)?;
    if let Some(ts) = &out.theta_star {
        let txt: Vec<String> = ts.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "resolved.theta_star = {}", txt.join(","))?;
    }
    writeln!(w, "resolved.full_entries_train = {}", out.eval_inputs.full_entries_train)?;
    writeln!(w, "resolved.full_entries_post = {}", out.eval_inputs.full_entries_post)?;
    writeln!(
        w,
        "resolved.paper_eval_count = {}",
        damcmc::diagnostics::paper_eval_count(&out.eval_inputs)
    )?;
    snapshot_lines("counts", &out.counts_total, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Key-value manifest reader.
pub struct Manifest {
    map: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Manifest { map })
    }

    pub fn get(&self, key: &str) -> Result<&str, CliError> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::numerical(format!("manifest missing '{key}'")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, CliError> {
        self.get(key)?
            .parse::<u64>()
            .map_err(|_| CliError::numerical(format!("manifest: '{key}' is not an integer")))
    }

    pub fn counts(&self) -> Result<CostSnapshot, CliError> {
        Ok(CostSnapshot {
            full_point: self.get_u64("counts.full_point")?,
            subsample_point: self.get_u64("counts.subsample_point")?,
            cluster_dense: self.get_u64("counts.cluster_dense")?,
            cluster_sparse: self.get_u64("counts.cluster_sparse")?,
            positive_point: self.get_u64("counts.positive_point")?,
            surrogate_pred: self.get_u64("counts.surrogate_pred")?,
            setup: self.get_u64("counts.setup")?,
            full_entries: self.get_u64("counts.full_entries")?,
            u_refreshes: self.get_u64("counts.u_refreshes")?,
            iterations: self.get_u64("counts.iterations")?,
        })
    }

    pub fn eval_inputs(&self) -> Result<EvalModelInputs, CliError> {
        Ok(EvalModelInputs {
            algorithm: parse_algorithm(self.get("algorithm")?)?,
            n: self.get_u64("resolved.n")?,
            m: self.get_u64("resolved.m")?,
            k_dense: self.get_u64("resolved.k_dense")?,
            k_sparse: self.get_u64("resolved.k_sparse")?,
            p_pos: self.get_u64("resolved.p_pos")?,
            pred_cost: self.get_u64("resolved.pred_cost")?,
            train_iters: self.get_u64("n_train")?,
            post_iters: self.get_u64("n_iters")?,
            full_entries_train: self.get_u64("resolved.full_entries_train")?,
            full_entries_post: self.get_u64("resolved.full_entries_post")?,
            u_refreshes: self.get_u64("counts.u_refreshes")?,
            setup: self.get_u64("counts.setup")?,
        })
    }
}

pub fn write_report_json(path: &Path, report: &DiagnosticsReport) -> Result<(), CliError> {
    // strip the wall-clock fields; they live in timing.json
    let mut clean = report.clone();
    clean.ed_time = None;
    clean.red_time = None;
    let text = serde_json::to_string_pretty(&clean)
        .map_err(|e| CliError::numerical(format!("report serialization: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<DiagnosticsReport, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::numerical(format!("cannot parse {}: {e}", path.display())))
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct TimingDoc {
    pub ed_time: f64,
    pub red_time: Option<f64>,
    #[serde(flatten)]
    pub extra: serde_json::Value,
}

pub fn write_timing_json(path: &Path, out: &RunOutput) -> Result<(), CliError> {
    let mut value = serde_json::to_value(&out.timing)
        .map_err(|e| CliError::numerical(format!("timing serialization: {e}")))?;
    if let Some(map) = value.as_object_mut() {
        map.insert("red_time".into(), serde_json::Value::Null);
    }
    let text = serde_json::to_string_pretty(&value).unwrap();
    std::fs::write(path, text + "\n")?;
    Ok(())
}
