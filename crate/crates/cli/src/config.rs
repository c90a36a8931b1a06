//! Flat key-value experiment configuration with one `[section]` per run
//! cell. Top-level keys set shared defaults (including the dataset, which is
//! shared by every cell so the cells stay comparable); sections override the
//! sampler settings only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use damcmc::data::{CovariateLaw, SyntheticSpec};
use damcmc::diagnostics::AlgorithmKind;
use damcmc::estimators::CvMode;
use damcmc::samplers::RunConfig;
use damcmc::surrogate::SurrogateBackend;

use crate::CliError;

/// Where the experiment's dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Synthetic(SyntheticSpec),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub data: DataSpec,
    pub output_dir: PathBuf,
    pub cells: Vec<(String, RunConfig)>,
}

type KeyMap = BTreeMap<String, String>;

fn parse_sections(text: &str) -> Result<(KeyMap, Vec<(String, KeyMap)>), CliError> {
    let mut top = KeyMap::new();
    let mut sections: Vec<(String, KeyMap)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| CliError::config(format!("line {}: unclosed section", lineno + 1)))?
                .trim();
            if name.is_empty() {
                return Err(CliError::config(format!("line {}: empty section name", lineno + 1)));
            }
            if sections.iter().any(|(n, _)| n == name) {
                return Err(CliError::config(format!("duplicate section [{name}]")));
            }
            sections.push((name.to_string(), KeyMap::new()));
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
        })?;
        let map = sections.last_mut().map(|(_, m)| m).unwrap_or(&mut top);
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok((top, sections))
}

const DATA_KEYS: &[&str] = &["data", "n", "p", "true_beta", "covariate_law", "data_seed"];

fn parse_f64(map: &KeyMap, key: &str) -> Result<Option<f64>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .map(Some)
            .map_err(|_| CliError::config(format!("{key}: expected a number, got '{v}'"))),
    }
}

fn parse_u64(map: &KeyMap, key: &str) -> Result<Option<u64>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::config(format!("{key}: expected an integer, got '{v}'"))),
    }
}

fn parse_data(top: &KeyMap) -> Result<DataSpec, CliError> {
    match top.get("data").map(String::as_str) {
        None | Some("synthetic") => {
            let n = parse_u64(top, "n")?
                .ok_or_else(|| CliError::config("synthetic data needs 'n'"))? as usize;
            let p = parse_u64(top, "p")?
                .ok_or_else(|| CliError::config("synthetic data needs 'p'"))? as usize;
            let beta_text = top
                .get("true_beta")
                .ok_or_else(|| CliError::config("synthetic data needs 'true_beta'"))?;
            let true_beta: Vec<f64> = beta_text
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::config(format!("true_beta: bad entry '{t}'")))
                })
                .collect::<Result<_, _>>()?;
            let covariate_law = match top.get("covariate_law").map(String::as_str) {
                None | Some("standard-normal") => CovariateLaw::StandardNormal,
                Some("gaussian-mixture") => CovariateLaw::GaussianMixture,
                Some(other) => {
                    return Err(CliError::config(format!("covariate_law: unknown '{other}'")))
                }
            };
            let seed = parse_u64(top, "data_seed")?.unwrap_or(1);
            Ok(DataSpec::Synthetic(SyntheticSpec {
                n,
                p,
                true_beta,
                covariate_law,
                seed,
            }))
        }
        Some(path) => Ok(DataSpec::File(PathBuf::from(path))),
    }
}

fn apply_cell_keys(cfg: &mut RunConfig, map: &KeyMap) -> Result<(), CliError> {
    for key in map.keys() {
        const KNOWN: &[&str] = &[
            "algorithm",
            "cv_mode",
            "k_fraction",
            "k1_fraction",
            "m_fraction",
            "g_blocks",
            "surrogate",
            "n_iters",
            "n_train",
            "burn_in_fraction",
            "u_refresh_prob",
            "target_alpha1",
            "adapt_rate",
            "step_scale0",
            "prior_variance",
            "correction",
            "init",
            "seed",
            "output_dir",
        ];
        if !KNOWN.contains(&key.as_str()) && !DATA_KEYS.contains(&key.as_str()) {
            return Err(CliError::config(format!("unknown key '{key}'")));
        }
    }
    if let Some(v) = map.get("cv_mode") {
        cfg.cv_mode = match v.as_str() {
            "none" => CvMode::None,
            "static" => CvMode::Static,
            "dynamic" => CvMode::Dynamic,
            other => return Err(CliError::config(format!("cv_mode: unknown '{other}'"))),
        };
    }
    if let Some(v) = parse_f64(map, "k_fraction")? {
        cfg.k_fraction = v;
    }
    if let Some(v) = parse_f64(map, "k1_fraction")? {
        cfg.k1_fraction = v;
    }
    if let Some(v) = map.get("m_fraction") {
        cfg.m_fraction = if v == "auto" {
            None
        } else {
            Some(v.parse::<f64>().map_err(|_| {
                CliError::config(format!("m_fraction: expected a number or 'auto', got '{v}'"))
            })?)
        };
    }
    if let Some(v) = parse_u64(map, "g_blocks")? {
        cfg.g_blocks = v as usize;
    }
    if let Some(v) = map.get("surrogate") {
        cfg.surrogate_backend = Some(match v.as_str() {
            "linear" => SurrogateBackend::Linear,
            "gp" => SurrogateBackend::Gp,
            other => return Err(CliError::config(format!("surrogate: unknown '{other}'"))),
        });
    }
    if let Some(v) = parse_u64(map, "n_iters")? {
        cfg.n_iters = v;
    }
    if let Some(v) = parse_u64(map, "n_train")? {
        cfg.n_train = v;
    }
    if let Some(v) = parse_f64(map, "burn_in_fraction")? {
        cfg.burn_in_fraction = v;
    }
    if let Some(v) = parse_f64(map, "u_refresh_prob")? {
        cfg.u_refresh_prob = v;
    }
    if let Some(v) = parse_f64(map, "target_alpha1")? {
        cfg.target_alpha1 = Some(v);
    }
    if let Some(v) = parse_f64(map, "adapt_rate")? {
        cfg.adapt_rate = v;
    }
    if let Some(v) = parse_f64(map, "step_scale0")? {
        cfg.step_scale0 = v;
    }
    if let Some(v) = parse_f64(map, "prior_variance")? {
        cfg.prior_variance = v;
    }
    if let Some(v) = map.get("correction") {
        cfg.correction = match v.as_str() {
            "on" => true,
            "off" => false,
            other => return Err(CliError::config(format!("correction: expected on/off, got '{other}'"))),
        };
    }
    if let Some(v) = map.get("init") {
        cfg.init_at_mode = match v.as_str() {
            "mode" => true,
            "zeros" => false,
            other => return Err(CliError::config(format!("init: expected mode/zeros, got '{other}'"))),
        };
    }
    if let Some(v) = parse_u64(map, "seed")? {
        cfg.seed = v;
    }
    Ok(())
}

fn parse_algorithm(name: &str) -> Result<AlgorithmKind, CliError> {
    Ok(match name {
        "mh" => AlgorithmKind::Mh,
        "da-mh" => AlgorithmKind::DaMh,
        "pmmh" => AlgorithmKind::Pmmh,
        "bpmmh" => AlgorithmKind::Bpmmh,
        "da-pmmh" => AlgorithmKind::DaPmmh,
        "da-bpmmh" => AlgorithmKind::DaBpmmh,
        other => return Err(CliError::config(format!("algorithm: unknown '{other}'"))),
    })
}

/// Parse an experiment file into a plan of run cells.
pub fn parse_experiment(path: &Path) -> Result<ExperimentPlan, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let (top, sections) = parse_sections(&text)?;

    let data = parse_data(&top)?;
    let output_dir = PathBuf::from(top.get("output_dir").cloned().unwrap_or_else(|| "out".into()));

    let build_cell = |label: &str, overrides: Option<&KeyMap>| -> Result<(String, RunConfig), CliError> {
        let algo_name = overrides
            .and_then(|m| m.get("algorithm"))
            .or_else(|| top.get("algorithm"))
            .ok_or_else(|| CliError::config(format!("[{label}]: missing 'algorithm'")))?;
        let mut cfg = RunConfig::new(parse_algorithm(algo_name)?);
        apply_cell_keys(&mut cfg, &top)?;
        if let Some(m) = overrides {
            for key in DATA_KEYS {
                if m.contains_key(*key) {
                    return Err(CliError::config(format!(
                        "[{label}]: dataset keys are top-level only ('{key}')"
                    )));
                }
            }
            apply_cell_keys(&mut cfg, m)?;
        }
        cfg.validate()
            .map_err(|e| CliError::config(format!("[{label}]: {e}")))?;
        Ok((label.to_string(), cfg))
    };

    let cells = if sections.is_empty() {
        vec![build_cell("run", None)?]
    } else {
        sections
            .iter()
            .map(|(name, map)| build_cell(name, Some(map)))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(ExperimentPlan {
        data,
        output_dir,
        cells,
    })
}

/// Parse a standalone synthetic-data spec file (used by `gen-data`).
pub fn parse_data_spec(path: &Path) -> Result<SyntheticSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let (top, sections) = parse_sections(&text)?;
    if !sections.is_empty() {
        return Err(CliError::config("data spec files have no sections"));
    }
    match parse_data(&top)? {
        DataSpec::Synthetic(spec) => Ok(spec),
        DataSpec::File(_) => Err(CliError::config("gen-data needs a synthetic spec, not a file")),
    }
}
