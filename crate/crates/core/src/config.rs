//! Run configuration loaded from TOML.
//!
//! Every section is optional and falls back to the defaults below; unknown keys
//! are rejected. The resolved configuration is hashed (SHA-256 of its canonical
//! JSON form) so that every output file can name the exact inputs.
//!
//! ```toml
//! [model]
//! dim = 1
//! masses = [1.0]
//! kinetic = "semi_relativistic"   # or "non_relativistic"
//! m_field = 1.0
//! sigma = 0.5
//!
//! [grid]
//! k_max = 8.0
//! n_k = 161
//!
//! [formfactor]
//! kind = "gaussian"               # gaussian | bump | power | custom
//! amplitude = 0.5
//! cutoff = 2.0
//!
//! [potential]
//! kind = "gaussian_well"          # zero | gaussian_well | harmonic
//! depth = 1.0
//! width = 1.0
//! ```

use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::{IntegrateOptions, Picture};
use crate::correspondence::{test_panel, SweepSettings};
use crate::error::{Error, Result};
use crate::estimates::{PropagationSettings, SuiteSettings};
use crate::model::{Ceilings, ClassicalState, FormFactorShape, KGrid, Kinetic, Model, ModelConfig, Potential};
use crate::quantum::{EvolveOptions, ParticleGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub masses: Vec<f64>,
    pub kinetic: Kinetic,
    pub m_field: f64,
    pub sigma: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelSection {
            dim: d.dim,
            masses: d.masses,
            kinetic: d.kinetic,
            m_field: d.m_field,
            sigma: d.sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialField {
    Zero,
    /// `re_amplitude e^{-k^2/width^2} + i im_amplitude k e^{-k^2/(2 width^2)}`
    Gaussian {
        re_amplitude: f64,
        im_amplitude: f64,
        width: f64,
    },
    /// Values on the grid of the run, as `[re, im]` pairs.
    Custom { values: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub field: InitialField,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            p: vec![0.5],
            q: vec![0.2],
            field: InitialField::Gaussian {
                re_amplitude: 0.05,
                im_amplitude: 0.05,
                width: 1.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalSection {
    pub t_end: f64,
    pub dt: f64,
    pub picture: Picture,
    pub stride: usize,
    /// Random perturbation pairs of the Gronwall check.
    pub gronwall_pairs: usize,
    pub gronwall_t_end: f64,
    pub gronwall_dt: f64,
    /// X^0 size of the random perturbations.
    pub gronwall_perturbation: f64,
}

impl Default for ClassicalSection {
    fn default() -> Self {
        ClassicalSection {
            t_end: 10.0,
            dt: 1e-3,
            picture: Picture::Direct,
            stride: 10,
            gronwall_pairs: 100,
            gronwall_t_end: 5.0,
            gronwall_dt: 1e-2,
            gronwall_perturbation: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumSection {
    pub n_x: usize,
    pub length: f64,
    /// Field modes of the quantum runs: a coarse grid on `[-k_max, k_max]`.
    pub k_max: f64,
    pub n_k: usize,
    pub n_max: usize,
    /// Multiplies the form factor in every quantum run.
    pub coupling_scale: f64,
    pub hbar: f64,
    pub t_end: f64,
    pub dt_out: f64,
    pub evolve: EvolveOptions,
}

impl Default for QuantumSection {
    fn default() -> Self {
        QuantumSection {
            n_x: 128,
            length: 6.4,
            k_max: 1.0,
            n_k: 3,
            n_max: 8,
            coupling_scale: 0.1,
            hbar: 0.1,
            t_end: 2.0,
            dt_out: 0.1,
            evolve: EvolveOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrespondenceSection {
    pub hbar_list: Vec<f64>,
    pub times: Vec<f64>,
    pub panel_seed: u64,
    pub panel_random: usize,
    pub classical_dt: f64,
    /// Relative slack of the monotonicity check.
    pub slack: f64,
    pub residual_samples: usize,
    pub cloud_width_particle: f64,
    pub cloud_width_field: f64,
    pub residual_t: f64,
    pub residual_dt: f64,
}

impl Default for CorrespondenceSection {
    fn default() -> Self {
        CorrespondenceSection {
            hbar_list: vec![0.4, 0.2, 0.1, 0.05],
            times: vec![0.5, 1.0],
            panel_seed: 7,
            panel_random: 8,
            classical_dt: 1e-3,
            slack: 0.1,
            residual_samples: 512,
            cloud_width_particle: 0.1,
            cloud_width_field: 0.02,
            residual_t: 1.0,
            residual_dt: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub hbar_list: Vec<f64>,
    pub samples: usize,
    pub sandwich_samples: usize,
    pub momentum_window: f64,
    pub propagation_t_end: f64,
    pub propagation_steps: usize,
    pub envelope_safety: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            hbar_list: vec![0.4, 0.2, 0.1, 0.05],
            samples: 1000,
            sandwich_samples: 200,
            momentum_window: 3.0,
            propagation_t_end: 2.0,
            propagation_steps: 20,
            envelope_safety: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub grid: KGrid,
    pub formfactor: FormFactorShape,
    pub potential: Potential,
    pub ceilings: Ceilings,
    pub initial: InitialSection,
    pub classical: ClassicalSection,
    pub quantum: QuantumSection,
    pub correspondence: CorrespondenceSection,
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = ModelConfig::default();
        RunConfig {
            seed: 1,
            model: ModelSection::default(),
            grid: d.grid,
            formfactor: d.form_factor,
            potential: d.potential,
            ceilings: Ceilings::default(),
            initial: InitialSection::default(),
            classical: ClassicalSection::default(),
            quantum: QuantumSection::default(),
            correspondence: CorrespondenceSection::default(),
            verify: VerifySection::default(),
        }
    }
}

impl RunConfig {
    /// Parse TOML; errors carry the line, column and offending key.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes to JSON");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.model.dim,
            masses: self.model.masses.clone(),
            kinetic: self.model.kinetic,
            m_field: self.model.m_field,
            sigma: self.model.sigma,
            grid: self.grid.clone(),
            form_factor: self.formfactor.clone(),
            potential: self.potential.clone(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.model_config())
    }

    /// Model on the coarse quantum mode grid with the scaled form factor.
    pub fn quantum_model(&self) -> Result<Model> {
        let mut cfg = self.model_config();
        cfg.grid = KGrid::new(self.quantum.k_max, self.quantum.n_k)?;
        if let FormFactorShape::Custom { .. } = cfg.form_factor {
            return Err(Error::config(
                "formfactor.kind = \"custom\" is tied to [grid] and cannot be used for quantum runs",
            ));
        }
        Ok(Model::new(cfg)?.with_coupling_scaled(self.quantum.coupling_scale))
    }

    /// `[initial]` sampled on the grid of `model`.
    pub fn initial_state(&self, model: &Model) -> Result<ClassicalState> {
        let n = model.n_particles();
        let init = &self.initial;
        if init.p.len() != n || init.q.len() != n {
            return Err(Error::config(format!(
                "initial.p and initial.q need {n} entries (one per particle), got {} and {}",
                init.p.len(),
                init.q.len()
            )));
        }
        let mut u = model.zero_state();
        u.p.clone_from(&init.p);
        u.q.clone_from(&init.q);
        match &init.field {
            InitialField::Zero => {}
            InitialField::Gaussian {
                re_amplitude,
                im_amplitude,
                width,
            } => {
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::config("initial.field.width must be positive"));
                }
                for (a, &k) in u.alpha.iter_mut().zip(&model.k) {
                    let s = k * k / (width * width);
                    *a = C64::new(re_amplitude * (-s).exp(), im_amplitude * k * (-0.5 * s).exp());
                }
            }
            InitialField::Custom { values } => {
                if values.len() != model.n_modes() {
                    return Err(Error::config(format!(
                        "initial.field.values needs {} entries, got {}",
                        model.n_modes(),
                        values.len()
                    )));
                }
                for (a, v) in u.alpha.iter_mut().zip(values) {
                    *a = C64::new(v[0], v[1]);
                }
            }
        }
        if !u.is_finite() {
            return Err(Error::config("initial state has non-finite entries"));
        }
        Ok(u)
    }

    pub fn integrate_options(&self) -> IntegrateOptions {
        IntegrateOptions {
            dt: self.classical.dt,
            picture: self.classical.picture,
            stride: self.classical.stride.max(1),
        }
    }

    pub fn particle_grid(&self) -> Result<ParticleGrid> {
        ParticleGrid::new(self.quantum.n_x, self.quantum.length)
    }

    pub fn sweep_settings(&self, n_modes: usize) -> Result<SweepSettings> {
        let c = &self.correspondence;
        Ok(SweepSettings {
            hbar_list: c.hbar_list.clone(),
            times: c.times.clone(),
            grid: self.particle_grid()?,
            n_max: self.quantum.n_max,
            classical_dt: c.classical_dt,
            panel: test_panel(n_modes, c.panel_random, c.panel_seed),
            evolve: self.quantum.evolve,
        })
    }

    pub fn suite_settings(&self, model: &Model) -> Result<SuiteSettings> {
        let v = &self.verify;
        let propagation = if v.propagation_steps > 0 {
            Some(PropagationSettings {
                u0: self.initial_state(model)?,
                t_end: v.propagation_t_end,
                steps: v.propagation_steps,
                safety: v.envelope_safety,
            })
        } else {
            None
        };
        Ok(SuiteSettings {
            hbar_list: v.hbar_list.clone(),
            samples: v.samples,
            sandwich_samples: v.sandwich_samples,
            seed: self.seed,
            grid: self.particle_grid()?,
            n_max: self.quantum.n_max,
            momentum_window: v.momentum_window,
            propagation,
            evolve: self.quantum.evolve,
        })
    }
}
