//! Run configuration: CLI flags layered over an optional JSON config file,
//! with presets for the full study, a desk-scale run, and a smoke run.

use mixselect::dgp::{enumerate_scenarios, CorrScale, Scenario, Snr};
use mixselect::error::{Error, Result};
use mixselect::method::MethodKind;
use mixselect::shapes::{ShapeKind, ShapeParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Desk,
    Smoke,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Preset::Full),
            "desk" => Some(Preset::Desk),
            "smoke" => Some(Preset::Smoke),
            _ => None,
        }
    }
}

/// Sampler-length overrides (presets shorten the chains; the defaults
/// match the documented estimation settings).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub bkmr_iterations: usize,
    pub bkmr_burn_in: usize,
    pub bart_burn_in: usize,
    pub bart_retained: usize,
    pub bart_permutations: usize,
    pub ssgam_chains: usize,
    pub ssgam_burn_in: usize,
    pub ssgam_retained: usize,
    pub lasso_one_se_rule: bool,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            bkmr_iterations: 10_000,
            bkmr_burn_in: 8_000,
            bart_burn_in: 4_000,
            bart_retained: 2_000,
            bart_permutations: 20,
            ssgam_chains: 5,
            ssgam_burn_in: 8_000,
            ssgam_retained: 2_000,
            lasso_one_se_rule: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub n: usize,
    pub reps: usize,
    /// Scenario ids, or the single entry "all".
    pub scenarios: Vec<String>,
    pub methods: Vec<String>,
    /// 0 means one worker per core.
    pub workers: usize,
    pub out: PathBuf,
    pub data: PathBuf,
    pub schema: PathBuf,
    /// Export retained sampler traces alongside the result records.
    pub traces: bool,
    pub shape_params: ShapeParams,
    pub settings: MethodSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: DEFAULT_SEED,
            n: 250,
            reps: 100,
            scenarios: vec!["all".into()],
            methods: MethodKind::ALL.iter().map(|m| m.id().to_string()).collect(),
            workers: 0,
            out: PathBuf::from("out"),
            data: PathBuf::from("data/nhanes_synthetic.csv"),
            schema: PathBuf::from("data/schema.json"),
            traces: false,
            shape_params: ShapeParams::default(),
            settings: MethodSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Full => {
                self.reps = 100;
                self.scenarios = vec!["all".into()];
                self.settings = MethodSettings::default();
            }
            Preset::Desk => {
                // one scenario per shape x SNR at low correlation, J = 12
                self.reps = 10;
                self.scenarios = ShapeKind::ALL
                    .iter()
                    .flat_map(|shape| {
                        Snr::ALL.iter().map(move |snr| {
                            format!("{}-{}-{}-j12", shape.id(), snr.id(), CorrScale::Half.id())
                        })
                    })
                    .collect();
                self.settings.bart_permutations = 10;
            }
            Preset::Smoke => {
                self.reps = 2;
                self.scenarios = vec!["linear-high-snr-lowcorr-j12".into()];
                self.settings = MethodSettings {
                    bkmr_iterations: 300,
                    bkmr_burn_in: 200,
                    bart_burn_in: 300,
                    bart_retained: 200,
                    bart_permutations: 2,
                    ssgam_chains: 2,
                    ssgam_burn_in: 600,
                    ssgam_retained: 400,
                    lasso_one_se_rule: false,
                };
            }
        }
    }

    /// Expand the scenario filter into concrete scenarios (exit-worthy
    /// config error on unknown names).
    pub fn resolve_scenarios(&self) -> Result<Vec<Scenario>> {
        let all = enumerate_scenarios(self.master_seed, self.n, self.reps);
        if self.scenarios.len() == 1 && self.scenarios[0] == "all" {
            return Ok(all);
        }
        let mut out = Vec::new();
        for id in &self.scenarios {
            let parsed = Scenario::parse_id(id, self.master_seed, self.n, self.reps)?;
            out.push(parsed);
        }
        Ok(out)
    }

    pub fn resolve_methods(&self) -> Result<Vec<MethodKind>> {
        let mut out = Vec::new();
        for name in &self.methods {
            let m = MethodKind::parse(name)
                .ok_or_else(|| Error::Config(format!("unknown method '{name}'")))?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Hash of everything that determines task outputs (used by the
    /// resume-skip logic).
    pub fn config_hash(&self, copula_json: Option<&str>) -> String {
        #[derive(Serialize)]
        struct Semantic<'a> {
            master_seed: u64,
            n: usize,
            shape_params: &'a ShapeParams,
            settings: &'a MethodSettings,
            copula: Option<&'a str>,
        }
        let semantic = Semantic {
            master_seed: self.master_seed,
            n: self.n,
            shape_params: &self.shape_params,
            settings: &self.settings,
            copula: copula_json,
        };
        let bytes = serde_json::to_vec(&semantic).expect("config serialises");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        format!("{:x}", hasher.finalize())
    }

    pub fn bkmr_config(
        &self,
        shape: ShapeKind,
        snr: Snr,
    ) -> mixselect::bkmr::BkmrConfig {
        let mut c = mixselect::bkmr::BkmrConfig::tuned_for(shape, snr);
        c.iterations = self.settings.bkmr_iterations;
        c.burn_in = self.settings.bkmr_burn_in;
        c
    }

    pub fn bart_config(&self) -> mixselect::bart::BartConfig {
        let mut c = mixselect::bart::BartConfig::default();
        c.burn_in = self.settings.bart_burn_in;
        c.retained = self.settings.bart_retained;
        c.permutations = self.settings.bart_permutations;
        c
    }

    pub fn ssgam_config(&self) -> mixselect::ssgam::SsgamConfig {
        let mut c = mixselect::ssgam::SsgamConfig::default();
        c.chains = self.settings.ssgam_chains;
        c.burn_in = self.settings.ssgam_burn_in;
        c.retained = self.settings.ssgam_retained;
        c
    }

    pub fn lasso_config(&self) -> mixselect::lasso::LassoConfig {
        mixselect::lasso::LassoConfig {
            one_se_rule: self.settings.lasso_one_se_rule,
        }
    }
}
