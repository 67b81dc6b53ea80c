//! Run configuration: JSON schema, defaults, validation.

use std::collections::BTreeMap;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use equidiv::dynsys::{builtin_system, BuiltinSystem, FlowSystem};
use equidiv::linalg::Mat;
use equidiv::response::{ComparatorSettings, OracleSettings, RunSettings};

/// Run modes, matching the CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum Mode {
    Orbit,
    Lyapunov,
    FramesCheck,
    Response,
    Oracle,
    Comparator,
    Validate,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Orbit => "orbit",
            Mode::Lyapunov => "lyapunov",
            Mode::FramesCheck => "frames-check",
            Mode::Response => "response",
            Mode::Oracle => "oracle",
            Mode::Comparator => "comparator",
            Mode::Validate => "validate",
        }
    }
}

/// The on-disk configuration document. Unknown keys are rejected; absent
/// keys take the documented defaults when [`RunConfig::into_effective`]
/// runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub discard: Option<usize>,
    #[serde(default)]
    pub u: Option<usize>,
    #[serde(default)]
    pub renorm_every: Option<usize>,
    #[serde(default)]
    pub warmup_steps: Option<usize>,
    /// Shadowing forget window in time units; null derives it from the
    /// measured top growth rate.
    #[serde(default)]
    pub forget_window: Option<f64>,
    /// Observable window half-width in time units.
    #[serde(default, rename = "W")]
    pub window_w: Option<f64>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub gamma_step: Option<f64>,
    #[serde(default)]
    pub centered_phi: Option<bool>,
    #[serde(default)]
    pub run_oracle: Option<bool>,
    #[serde(default)]
    pub run_comparator: Option<bool>,
    /// Comparator ensemble size.
    #[serde(default)]
    pub orbit_count: Option<usize>,
    /// Comparator horizon in time units.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Output directory for reports and series.
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Enable the CSV series dump.
    #[serde(default)]
    pub csv: Option<bool>,
}

/// Fully-resolved configuration: every field explicit except the derived
/// forget window. Serializing and re-parsing an effective config is the
/// identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveConfig {
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub mode: Mode,
    pub dt: f64,
    pub n_steps: usize,
    pub discard: usize,
    pub u: usize,
    pub renorm_every: usize,
    pub warmup_steps: usize,
    pub forget_window: Option<f64>,
    #[serde(rename = "W")]
    pub window_w: f64,
    pub seeds: Vec<u64>,
    pub gamma_step: f64,
    pub centered_phi: bool,
    pub run_oracle: bool,
    pub run_comparator: bool,
    pub orbit_count: usize,
    pub horizon: f64,
    pub out_dir: Option<String>,
    pub csv: bool,
}

/// Wrapper overriding the declared unstable dimension of a builtin system.
pub struct DeclaredU {
    pub inner: BuiltinSystem,
    pub u: usize,
}

impl FlowSystem for DeclaredU {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn unstable_dim(&self) -> usize {
        self.u
    }
    fn base_field(&self, x: &[f64], out: &mut [f64]) {
        self.inner.base_field(x, out)
    }
    fn base_jacobian(&self, x: &[f64], out: &mut Mat) {
        self.inner.base_jacobian(x, out)
    }
    fn base_hessian_contract(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        self.inner.base_hessian_contract(x, a, b, out)
    }
    fn perturbation_field(&self, x: &[f64], out: &mut [f64]) {
        self.inner.perturbation_field(x, out)
    }
    fn perturbation_jacobian(&self, x: &[f64], out: &mut Mat) {
        self.inner.perturbation_jacobian(x, out)
    }
    fn observable(&self, x: &[f64]) -> f64 {
        self.inner.observable(x)
    }
    fn observable_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.inner.observable_gradient(x, out)
    }
    fn parametrized_field(&self, x: &[f64], gamma: f64, out: &mut [f64]) {
        self.inner.parametrized_field(x, gamma, out)
    }
}

/// Parse a configuration document; defaults are not yet filled (that needs
/// the system, see [`RunConfig::into_effective`]).
pub fn parse_config(text: &str) -> anyhow::Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).context("config schema violation")?;
    Ok(cfg)
}

impl RunConfig {
    /// Fill defaults and validate ranges. Field names appear in every error.
    pub fn into_effective(self, mode_override: Option<Mode>) -> anyhow::Result<EffectiveConfig> {
        let system = builtin_system(&self.system, &self.params)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let dt = self.dt.unwrap_or(0.01);
        if !(dt > 0.0 && dt.is_finite()) {
            bail!("invalid field `dt`: must be positive and finite");
        }
        let n_steps = self.n_steps.unwrap_or(200_000);
        if n_steps == 0 {
            bail!("invalid field `n_steps`: must be >= 1");
        }
        let discard = self.discard.unwrap_or(n_steps / 10);
        let u = self.u.unwrap_or_else(|| system.unstable_dim());
        if u >= system.dim() {
            bail!("invalid field `u`: must be below the state dimension");
        }
        let renorm_every = self.renorm_every.unwrap_or(10);
        if renorm_every == 0 {
            bail!("invalid field `renorm_every`: must be >= 1");
        }
        let warmup_steps = self.warmup_steps.unwrap_or_else(|| (20.0 / dt).round() as usize);
        let mode = mode_override.or(self.mode).unwrap_or(Mode::Response);
        let window_w = self.window_w.unwrap_or(5.0);
        if !(window_w >= dt) {
            bail!("invalid field `W`: must be at least one step (>= dt)");
        }
        if let Some(fw) = self.forget_window {
            if !(fw > 0.0 && fw.is_finite()) {
                bail!("invalid field `forget_window`: must be positive and finite");
            }
        }
        // the window-fit constraint only binds for modes that average over
        // the windows
        if matches!(mode, Mode::Response | Mode::Validate) {
            let budget = 0.25 * n_steps as f64 * dt;
            let fw = self.forget_window.unwrap_or(0.0);
            if window_w + fw >= budget {
                bail!(
                    "invalid fields `W` + `forget_window`: windows must fit in a quarter \
                     of the orbit ({window_w} + {fw} vs {budget})"
                );
            }
        }
        let seeds = self.seeds.unwrap_or_else(|| vec![0, 1]);
        if seeds.is_empty() {
            bail!("invalid field `seeds`: need at least one seed");
        }
        let gamma_step = self.gamma_step.unwrap_or(0.01);
        if !(gamma_step > 0.0 && gamma_step.is_finite()) {
            bail!("invalid field `gamma_step`: must be positive and finite");
        }
        let orbit_count = self.orbit_count.unwrap_or(2000);
        if orbit_count == 0 {
            bail!("invalid field `orbit_count`: must be >= 1");
        }
        let horizon = self.horizon.unwrap_or(8.0);
        if !(horizon >= dt) {
            bail!("invalid field `horizon`: must be at least one step");
        }
        Ok(EffectiveConfig {
            system: self.system,
            params: self.params,
            mode,
            dt,
            n_steps,
            discard,
            u,
            renorm_every,
            warmup_steps,
            forget_window: self.forget_window,
            window_w,
            seeds,
            gamma_step,
            centered_phi: self.centered_phi.unwrap_or(true),
            run_oracle: self.run_oracle.unwrap_or(false),
            run_comparator: self.run_comparator.unwrap_or(false),
            orbit_count,
            horizon,
            out_dir: self.out_dir,
            csv: self.csv.unwrap_or(false),
        })
    }
}

impl EffectiveConfig {
    pub fn build_system(&self) -> anyhow::Result<DeclaredU> {
        let inner = builtin_system(&self.system, &self.params)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(DeclaredU { inner, u: self.u })
    }

    pub fn default_ic(&self) -> anyhow::Result<Vec<f64>> {
        let inner = builtin_system(&self.system, &self.params)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(inner.default_ic())
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            dt: self.dt,
            n_steps: self.n_steps,
            discard: self.discard,
            renorm_every: self.renorm_every,
            warmup_steps: self.warmup_steps,
            forget_window: self.forget_window,
            window_w: self.window_w,
            seed: self.seeds[0],
            centered_phi: self.centered_phi,
            n_batches: 20,
        }
    }

    pub fn oracle_settings(&self) -> OracleSettings {
        OracleSettings {
            gamma_step: self.gamma_step,
            n_steps: self.n_steps,
            dt: self.dt,
            discard: self.discard,
            seeds: self.seeds.clone(),
            n_batches: 20,
        }
    }

    pub fn comparator_settings(&self) -> ComparatorSettings {
        ComparatorSettings {
            orbit_count: self.orbit_count,
            horizon: self.horizon,
            dt: self.dt,
            sample_every: (0.1 / self.dt).max(1.0) as usize,
            discard: self.discard.min(5_000),
            seed: self.seeds[0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config(r#"{"system": "lorenz63", "mode": "response"}"#).unwrap();
        let eff = cfg.into_effective(None).unwrap();
        assert_eq!(eff.mode, Mode::Response);
        assert_eq!(eff.dt, 0.01);
        assert_eq!(eff.n_steps, 200_000);
        assert_eq!(eff.discard, 20_000);
        assert_eq!(eff.u, 1);
        assert_eq!(eff.warmup_steps, 2000);
        assert_eq!(eff.window_w, 5.0);
        assert_eq!(eff.seeds, vec![0, 1]);
        assert!(eff.centered_phi);
    }

    #[test]
    fn negative_window_is_named_in_error() {
        let cfg = parse_config(r#"{"system": "lorenz63", "W": -1.0}"#).unwrap();
        let err = cfg.into_effective(None).unwrap_err().to_string();
        assert!(err.contains("`W`"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config(r#"{"system": "lorenz63", "frobnicate": 3}"#).unwrap_err();
        assert!(format!("{err:#}").contains("frobnicate"));
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = parse_config(
            r#"{"system": "hopf_cycle", "params": {"mu": 2.0}, "n_steps": 50000, "seeds": [7]}"#,
        )
        .unwrap();
        let eff = cfg.into_effective(Some(Mode::Validate)).unwrap();
        let text = serde_json::to_string_pretty(&eff).unwrap();
        let back: EffectiveConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(eff, back);
    }
}
