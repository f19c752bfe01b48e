//! Run settings: defaults, overridden by a TOML file, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fcs_core::checker::{CheckConfig, Features};
use fcs_core::coherence::Mutations;
use fcs_core::simnet::{MetricsFormat, NamedConfig};
use fcs_core::trace::{Benchmark, MicrobenchParams};
use serde::{Deserialize, Serialize};

use crate::cli::{CheckArgs, Common};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub bench: Vec<String>,
    pub configs: Vec<String>,
    pub seed: u64,
    pub iterations: u32,
    pub cores_cpu: u16,
    pub cores_gpu: u16,
    pub partition_words: u32,
    pub sparse_ratio: u32,
    pub out: PathBuf,
    pub format: String,
    pub baseline: Option<String>,
    pub dump_selection: bool,
    pub dump_msglog: bool,
    pub check: CheckSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    pub cores: usize,
    pub addresses: usize,
    pub words_per_line: u32,
    /// Any of `baseline`, `fwd`, `pred`; the first is the ratio base.
    pub features: Vec<String>,
    pub ops_per_core: u8,
    pub max_in_flight: usize,
    pub state_budget: usize,
    pub max_forward_retries: u32,
    /// Any of `skip-revoke`, `skip-sharer-invalidate`, `drop-nack-retry`.
    pub mutations: Vec<String>,
    pub depth_first: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let p = MicrobenchParams::default();
        Settings {
            bench: vec![Benchmark::ProdCons.token().into()],
            configs: NamedConfig::ALL.iter().map(|c| c.token().to_string()).collect(),
            seed: p.seed,
            iterations: p.iterations,
            cores_cpu: p.n_cpu_cores,
            cores_gpu: p.n_gpu_cores,
            partition_words: p.partition_words,
            sparse_ratio: p.sparse_ratio,
            out: PathBuf::from("fcssim-out"),
            format: "csv".into(),
            baseline: None,
            dump_selection: false,
            dump_msglog: false,
            check: CheckSettings::default(),
        }
    }
}

impl Default for CheckSettings {
    fn default() -> Self {
        let c = CheckConfig::default();
        CheckSettings {
            cores: c.n_cores,
            addresses: c.n_addresses,
            words_per_line: c.words_per_line,
            features: vec!["baseline".into(), "fwd".into(), "pred".into()],
            ops_per_core: c.ops_per_core,
            max_in_flight: c.max_in_flight,
            state_budget: c.state_budget,
            max_forward_retries: c.max_forward_retries,
            mutations: Vec::new(),
            depth_first: false,
        }
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Settings> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// File (if any) with command-line flags layered on top.
    pub fn resolve(common: &Common, check: Option<&CheckArgs>) -> Result<Settings> {
        let mut s = Settings::load(common.config.as_deref())?;
        if let Some(b) = &common.bench {
            s.bench = split_list(b);
        }
        if let Some(c) = &common.configs {
            s.configs = split_list(c);
        }
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = common.$f.clone() { s.$f = v; })* };
        }
        take!(seed, iterations, cores_cpu, cores_gpu, partition_words, sparse_ratio, out, format);
        if common.baseline.is_some() {
            s.baseline = common.baseline.clone();
        }
        s.dump_selection |= common.dump_selection;
        s.dump_msglog |= common.dump_msglog;
        if let Some(a) = check {
            let c = &mut s.check;
            macro_rules! take_check {
                ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { c.$f = v; })* };
            }
            take_check!(cores, addresses, words_per_line, ops_per_core, max_in_flight, state_budget, max_forward_retries);
            if let Some(f) = &a.features {
                c.features = split_list(f);
            }
            if let Some(m) = &a.mutations {
                c.mutations = split_list(m);
            }
            c.depth_first |= a.depth_first;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmarks()?;
        self.named_configs()?;
        self.metrics_format()?;
        if let Some(b) = &self.baseline {
            b.parse::<NamedConfig>().map_err(anyhow::Error::msg)?;
        }
        self.check.features()?;
        self.check.mutations()?;
        Ok(())
    }

    pub fn benchmarks(&self) -> Result<Vec<Benchmark>> {
        self.bench.iter().map(|b| b.parse::<Benchmark>().map_err(anyhow::Error::msg)).collect()
    }

    pub fn named_configs(&self) -> Result<Vec<NamedConfig>> {
        if self.configs.is_empty() {
            bail!("no configurations given");
        }
        self.configs.iter().map(|c| c.parse::<NamedConfig>().map_err(anyhow::Error::msg)).collect()
    }

    pub fn metrics_format(&self) -> Result<MetricsFormat> {
        self.format.parse::<MetricsFormat>().map_err(anyhow::Error::msg)
    }

    pub fn params(&self) -> MicrobenchParams {
        MicrobenchParams {
            n_cpu_cores: self.cores_cpu,
            n_gpu_cores: self.cores_gpu,
            partition_words: self.partition_words,
            iterations: self.iterations,
            seed: self.seed,
            sparse_ratio: self.sparse_ratio,
            ..MicrobenchParams::default()
        }
    }

    /// The effective settings as a loadable file, followed by the expansion
    /// of every selected named configuration as comments.
    pub fn render(&self) -> Result<String> {
        let mut s = toml::to_string(self)?;
        s.push('\n');
        for c in self.named_configs()? {
            let (cpu, gpu) = c.flavors();
            let p = c.profile();
            s.push_str(&format!(
                "# {c}: cpu={cpu} gpu={gpu} selection={} forwarding={} prediction={}\n",
                if c.is_flexible() { "per-access" } else { "static" },
                p.as_ref().is_some_and(|p| p.supports_wt_forwarding),
                p.as_ref().is_some_and(|p| p.supports_owner_prediction),
            ));
        }
        Ok(s)
    }
}

impl CheckSettings {
    pub fn features(&self) -> Result<Vec<Features>> {
        if self.features.is_empty() {
            bail!("no checker feature sets given");
        }
        self.features
            .iter()
            .map(|f| match f.as_str() {
                "baseline" => Ok(Features::BASELINE),
                "fwd" => Ok(Features::FWD),
                "pred" => Ok(Features::PRED),
                other => bail!("unknown feature set `{other}`; valid: baseline, fwd, pred"),
            })
            .collect()
    }

    pub fn mutations(&self) -> Result<Mutations> {
        let mut m = Mutations::default();
        for name in &self.mutations {
            match name.as_str() {
                "skip-revoke" => m.skip_revoke = true,
                "skip-sharer-invalidate" => m.skip_sharer_invalidate = true,
                "drop-nack-retry" => m.drop_nack_retry = true,
                other => bail!("unknown mutation `{other}`; valid: skip-revoke, skip-sharer-invalidate, drop-nack-retry"),
            }
        }
        Ok(m)
    }

    pub fn base_config(&self) -> Result<CheckConfig> {
        Ok(CheckConfig {
            n_cores: self.cores,
            n_addresses: self.addresses,
            words_per_line: self.words_per_line,
            features: self.features()?[0],
            ops_per_core: self.ops_per_core,
            alphabet: None,
            max_in_flight: self.max_in_flight,
            state_budget: self.state_budget,
            mutations: self.mutations()?,
            max_forward_retries: self.max_forward_retries,
            depth_first: self.depth_first,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_settings_load_back() {
        let mut s = Settings { seed: 9, configs: vec!["SDD".into(), "FCS+pred".into()], ..Default::default() };
        s.check.mutations = vec!["skip-revoke".into()];
        let text = s.render().unwrap();
        assert!(text.contains("# FCS+pred: cpu=Flex"));
        assert_eq!(toml::from_str::<Settings>(&text).unwrap(), s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("seeds = 3").is_err());
    }

    #[test]
    fn bad_names_are_reported() {
        let s = Settings { configs: vec!["FCS+magic".into()], ..Default::default() };
        let e = s.validate().unwrap_err().to_string();
        assert!(e.contains("SMG") && e.contains("FCS+pred"), "{e}");
    }
}
