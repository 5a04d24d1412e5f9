//! Model parameters: the observation domain, the birth and death rate
//! fields with certified sup bounds, and the initial age density.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("domain requires horizon > 0 and max_age > 0, got horizon={horizon}, max_age={max_age}")]
    InvalidDomain { horizon: f64, max_age: f64 },
    #[error("invalid rate parameters: {0}")]
    InvalidRate(String),
    #[error("invalid initial density: {0}")]
    InvalidInitial(String),
    #[error("certified bound {bound} for {which} rate is below its supremum {sup}")]
    BoundTooSmall { which: &'static str, bound: f64, sup: f64 },
    #[error("config error: {0}")]
    Config(String),
}

/// Observation window `[0, horizon] x [0, max_age]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub horizon: f64,
    pub max_age: f64,
}

impl Domain {
    pub fn new(horizon: f64, max_age: f64) -> Result<Self, ModelError> {
        if !(horizon > 0.0 && horizon.is_finite() && max_age > 0.0 && max_age.is_finite()) {
            return Err(ModelError::InvalidDomain { horizon, max_age });
        }
        Ok(Domain { horizon, max_age })
    }

    pub fn contains(&self, t: f64, a: f64) -> bool {
        (0.0..=self.horizon).contains(&t) && (0.0..=self.max_age).contains(&a)
    }
}

/// Parametric rate families used for birth and death intensities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rate {
    Constant {
        value: f64,
    },
    /// `value` on the closed age window `[lo, hi]`, zero elsewhere.
    AgeWindow {
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// `scale * exp(age_rate * a) * exp(time_rate * t)`.
    Gompertz {
        scale: f64,
        age_rate: f64,
        time_rate: f64,
    },
}

impl Rate {
    pub fn zero() -> Self {
        Rate::Constant { value: 0.0 }
    }

    #[inline]
    pub fn eval(&self, t: f64, a: f64) -> f64 {
        match *self {
            Rate::Constant { value } => value,
            Rate::AgeWindow { value, lo, hi } => {
                if a >= lo && a <= hi {
                    value
                } else {
                    0.0
                }
            }
            Rate::Gompertz {
                scale,
                age_rate,
                time_rate,
            } => scale * (age_rate * a).exp() * (time_rate * t).exp(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidRate(msg));
        match *self {
            Rate::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                bad(format!("constant rate must be finite and >= 0, got {value}"))
            }
            Rate::AgeWindow { value, lo, hi }
                if !(value >= 0.0 && value.is_finite() && lo <= hi) =>
            {
                bad(format!("age window needs value >= 0 and lo <= hi, got value={value}, [{lo}, {hi}]"))
            }
            Rate::Gompertz {
                scale,
                age_rate,
                time_rate,
            } if !(scale >= 0.0 && scale.is_finite() && age_rate.is_finite() && time_rate.is_finite()) => {
                bad(format!("gompertz needs finite parameters and scale >= 0, got scale={scale}"))
            }
            _ => Ok(()),
        }
    }

    /// Ages at which the rate jumps.
    pub fn age_breaks(&self) -> Vec<f64> {
        match *self {
            Rate::AgeWindow { lo, hi, .. } => vec![lo, hi],
            _ => Vec::new(),
        }
    }

    /// Supremum of the rate over the domain, evaluated with the same
    /// floating-point expression as [`Rate::eval`] so the bound is certified.
    pub fn sup_on(&self, domain: &Domain) -> f64 {
        match *self {
            Rate::Constant { value } => value,
            Rate::AgeWindow { value, .. } => value,
            Rate::Gompertz {
                age_rate,
                time_rate,
                ..
            } => {
                let a = if age_rate > 0.0 { domain.max_age } else { 0.0 };
                let t = if time_rate > 0.0 { domain.horizon } else { 0.0 };
                self.eval(t, a)
            }
        }
    }
}

/// Birth rate `b(t,a)` and death rate `mu(t,a)` with certified bounds.
///
/// Ages above `max_age` are evaluated at `max_age`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateField {
    birth: Rate,
    death: Rate,
    birth_sup: f64,
    death_sup: f64,
    max_age: f64,
}

impl RateField {
    /// Builds the field with bounds equal to the exact suprema on `domain`.
    pub fn new(birth: Rate, death: Rate, domain: &Domain) -> Result<Self, ModelError> {
        birth.validate()?;
        death.validate()?;
        let birth_sup = birth.sup_on(domain);
        let death_sup = death.sup_on(domain);
        Ok(RateField {
            birth,
            death,
            birth_sup,
            death_sup,
            max_age: domain.max_age,
        })
    }

    /// Builds the field with caller-supplied bounds. The bounds are trusted:
    /// the simulator checks every evaluation against them and fails if one is
    /// exceeded.
    pub fn with_bounds(
        birth: Rate,
        death: Rate,
        birth_sup: f64,
        death_sup: f64,
        domain: &Domain,
    ) -> Result<Self, ModelError> {
        birth.validate()?;
        death.validate()?;
        if !(birth_sup >= 0.0 && birth_sup.is_finite() && death_sup >= 0.0 && death_sup.is_finite()) {
            return Err(ModelError::InvalidRate(format!(
                "bounds must be finite and >= 0, got birth_sup={birth_sup}, death_sup={death_sup}"
            )));
        }
        Ok(RateField {
            birth,
            death,
            birth_sup,
            death_sup,
            max_age: domain.max_age,
        })
    }

    #[inline]
    pub fn birth(&self, t: f64, a: f64) -> f64 {
        self.birth.eval(t, a.min(self.max_age))
    }

    #[inline]
    pub fn death(&self, t: f64, a: f64) -> f64 {
        self.death.eval(t, a.min(self.max_age))
    }

    pub fn birth_sup(&self) -> f64 {
        self.birth_sup
    }

    pub fn death_sup(&self) -> f64 {
        self.death_sup
    }

    pub fn birth_rate(&self) -> &Rate {
        &self.birth
    }

    pub fn death_rate(&self) -> &Rate {
        &self.death
    }

    pub fn max_age(&self) -> f64 {
        self.max_age
    }

    /// Birth rate at `a` as seen by a quadrature node: when `a` lies within
    /// `tol` of an age break, the mean of the one-sided limits for an interior
    /// node (`side == 0`), the limit from above (`side > 0`) or from below
    /// (`side < 0`) for an endpoint.
    pub fn birth_at_node(&self, t: f64, a: f64, tol: f64, side: i8) -> f64 {
        match self.birth.age_breaks().into_iter().find(|&x| (a - x).abs() <= tol) {
            Some(x) => {
                let (below, above) = (self.birth(t, x - 2.0 * tol), self.birth(t, x + 2.0 * tol));
                match side {
                    0 => 0.5 * (below + above),
                    s if s > 0 => above,
                    _ => below,
                }
            }
            None => self.birth(t, a),
        }
    }
}

/// Shape of the initial age distribution, before scaling by the total mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialShape {
    /// Gaussian conditioned on `[lo, hi]`.
    TruncatedGaussian {
        mean: f64,
        variance: f64,
        lo: f64,
        hi: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

/// Number of cells of the inverse-CDF sampling table.
pub const SAMPLER_RESOLUTION: usize = 4096;

/// How initial ages are drawn: the exact CDF is tabulated at
/// `resolution + 1` equispaced nodes of the support and inverted by linear
/// interpolation inside the bracketing cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerSpec {
    pub resolution: usize,
}

impl fmt::Display for SamplerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "inverse-CDF, exact CDF tabulated on {} equispaced cells, linear inversion within a cell",
            self.resolution
        )
    }
}

/// Initial age density `g0` with its mass and sup norm.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialDensity {
    shape: InitialShape,
    total_mass: f64,
    /// Probability mass of the untruncated law inside the support.
    normalizer: f64,
    sup_norm: f64,
    cdf_table: Vec<f64>,
}

fn std_normal_cdf_diff(z_lo: f64, z_hi: f64) -> f64 {
    // P(z_lo <= Z <= z_hi) using the tail that avoids cancellation.
    let s = std::f64::consts::SQRT_2;
    if z_lo >= 0.0 {
        0.5 * (erfc(z_lo / s) - erfc(z_hi / s))
    } else if z_hi <= 0.0 {
        0.5 * (erfc(-z_hi / s) - erfc(-z_lo / s))
    } else {
        1.0 - 0.5 * (erfc(-z_lo / s) + erfc(z_hi / s))
    }
}

impl InitialDensity {
    pub fn new(shape: InitialShape, total_mass: f64) -> Result<Self, ModelError> {
        if !(total_mass > 0.0 && total_mass.is_finite()) {
            return Err(ModelError::InvalidInitial(format!(
                "total mass must be positive, got {total_mass}"
            )));
        }
        let (lo, hi) = match shape {
            InitialShape::TruncatedGaussian {
                mean,
                variance,
                lo,
                hi,
            } => {
                if !(variance > 0.0 && variance.is_finite()) {
                    return Err(ModelError::InvalidInitial(format!(
                        "variance must be positive, got {variance}"
                    )));
                }
                if !mean.is_finite() {
                    return Err(ModelError::InvalidInitial("mean must be finite".into()));
                }
                (lo, hi)
            }
            InitialShape::Uniform { lo, hi } => (lo, hi),
        };
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(ModelError::InvalidInitial(format!(
                "support must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
            )));
        }
        let normalizer = match shape {
            InitialShape::TruncatedGaussian { mean, variance, .. } => {
                let sd = variance.sqrt();
                std_normal_cdf_diff((lo - mean) / sd, (hi - mean) / sd)
            }
            InitialShape::Uniform { .. } => 1.0,
        };
        if !(normalizer > 0.0) {
            return Err(ModelError::InvalidInitial(
                "support carries no probability mass".into(),
            ));
        }
        let mut density = InitialDensity {
            shape,
            total_mass,
            normalizer,
            sup_norm: 0.0,
            cdf_table: Vec::new(),
        };
        density.sup_norm = match shape {
            InitialShape::TruncatedGaussian { mean, .. } => density.eval(mean.clamp(lo, hi)),
            InitialShape::Uniform { .. } => total_mass / (hi - lo),
        };
        let h = (hi - lo) / SAMPLER_RESOLUTION as f64;
        density.cdf_table = (0..=SAMPLER_RESOLUTION)
            .map(|i| {
                if i == SAMPLER_RESOLUTION {
                    1.0
                } else {
                    density.cdf(lo + i as f64 * h)
                }
            })
            .collect();
        Ok(density)
    }

    pub fn truncated_gaussian(mean: f64, variance: f64, lo: f64, hi: f64) -> Result<Self, ModelError> {
        Self::new(
            InitialShape::TruncatedGaussian {
                mean,
                variance,
                lo,
                hi,
            },
            1.0,
        )
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, ModelError> {
        Self::new(InitialShape::Uniform { lo, hi }, 1.0)
    }

    pub fn shape(&self) -> &InitialShape {
        &self.shape
    }

    pub fn support(&self) -> (f64, f64) {
        match self.shape {
            InitialShape::TruncatedGaussian { lo, hi, .. } | InitialShape::Uniform { lo, hi } => {
                (lo, hi)
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// Mass of the untruncated Gaussian inside the support (1 for uniform).
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn sampler_spec(&self) -> SamplerSpec {
        SamplerSpec {
            resolution: SAMPLER_RESOLUTION,
        }
    }

    /// Density value `g0(a)`, including the total-mass factor.
    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        let (lo, hi) = self.support();
        if a < lo || a > hi {
            return 0.0;
        }
        match self.shape {
            InitialShape::TruncatedGaussian { mean, variance, .. } => {
                let z = (a - mean) * (a - mean) / variance;
                self.total_mass * (-0.5 * z).exp()
                    / ((2.0 * std::f64::consts::PI * variance).sqrt() * self.normalizer)
            }
            InitialShape::Uniform { .. } => self.total_mass / (hi - lo),
        }
    }

    /// Normalized CDF (in `[0, 1]`) of the initial age law.
    pub fn cdf(&self, a: f64) -> f64 {
        let (lo, hi) = self.support();
        if a <= lo {
            return 0.0;
        }
        if a >= hi {
            return 1.0;
        }
        match self.shape {
            InitialShape::TruncatedGaussian { mean, variance, .. } => {
                let sd = variance.sqrt();
                (std_normal_cdf_diff((lo - mean) / sd, (a - mean) / sd) / self.normalizer).min(1.0)
            }
            InitialShape::Uniform { .. } => (a - lo) / (hi - lo),
        }
    }

    /// One draw from the normalized law by table inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let (lo, hi) = self.support();
        let table = &self.cdf_table;
        // First node with cdf > u; the cell is [idx - 1, idx].
        let idx = table.partition_point(|&c| c <= u).clamp(1, table.len() - 1);
        let (c0, c1) = (table[idx - 1], table[idx]);
        let h = (hi - lo) / SAMPLER_RESOLUTION as f64;
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        (lo + (idx as f64 - 1.0 + frac) * h).clamp(lo, hi)
    }
}

/// Parameters of the fertility window and demographic constants used by the
/// built-in demography.
pub const SECTION5_HORIZON: f64 = 20.0;
pub const SECTION5_MAX_AGE: f64 = 120.0;
pub const SECTION5_FERTILITY: (f64, f64) = (20.0, 40.0);

/// Complete model: domain, rates and initial density.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub domain: Domain,
    pub rates: RateField,
    pub initial: InitialDensity,
}

impl Model {
    pub fn new(
        domain: Domain,
        birth: Rate,
        death: Rate,
        initial: InitialDensity,
    ) -> Result<Self, ModelError> {
        let rates = RateField::new(birth, death, &domain)?;
        Ok(Model {
            domain,
            rates,
            initial,
        })
    }

    pub fn reference() -> Self {
        let (rates, initial, domain) = builtin_demography();
        Model {
            domain,
            rates,
            initial,
        }
    }
}

pub fn reference_birth() -> Rate {
    Rate::AgeWindow {
        value: 1.0,
        lo: SECTION5_FERTILITY.0,
        hi: SECTION5_FERTILITY.1,
    }
}

pub fn reference_death() -> Rate {
    Rate::Gompertz {
        scale: 4e-2,
        age_rate: 7.4e-3,
        time_rate: -5e-3,
    }
}

pub fn reference_initial_shape() -> InitialShape {
    InitialShape::TruncatedGaussian {
        mean: 40.0,
        variance: 152.0,
        lo: 0.0,
        hi: SECTION5_MAX_AGE,
    }
}

/// The reference demography: horizon 20 years, ages up to 120, Gompertz-type
/// mortality `0.04 exp(0.0074 a) exp(-0.005 t)`, unit fertility on ages
/// `[20, 40]` and a Gaussian(40, 152) initial density conditioned on `[0, 120]`.
pub fn builtin_demography() -> (RateField, InitialDensity, Domain) {
    let domain = Domain {
        horizon: SECTION5_HORIZON,
        max_age: SECTION5_MAX_AGE,
    };
    let rates = RateField::new(reference_birth(), reference_death(), &domain)
        .expect("built-in rates are valid");
    let initial =
        InitialDensity::new(reference_initial_shape(), 1.0).expect("built-in density is valid");
    (rates, initial, domain)
}

pub fn truncated_gaussian_density(
    mean: f64,
    variance: f64,
    lo: f64,
    hi: f64,
) -> Result<InitialDensity, ModelError> {
    InitialDensity::truncated_gaussian(mean, variance, lo, hi)
}

/// Initial density section of a model file; `mass` defaults to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    TruncatedGaussian {
        mean: f64,
        variance: f64,
        lo: f64,
        hi: f64,
        #[serde(default = "one")]
        mass: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
        #[serde(default = "one")]
        mass: f64,
    },
}

impl InitialConfig {
    pub fn build(&self) -> Result<InitialDensity, ModelError> {
        match *self {
            InitialConfig::TruncatedGaussian {
                mean,
                variance,
                lo,
                hi,
                mass,
            } => InitialDensity::new(
                InitialShape::TruncatedGaussian {
                    mean,
                    variance,
                    lo,
                    hi,
                },
                mass,
            ),
            InitialConfig::Uniform { lo, hi, mass } => {
                InitialDensity::new(InitialShape::Uniform { lo, hi }, mass)
            }
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Model section of a configuration file. A `preset` provides defaults that
/// any of the explicit tables override.
///
/// ```toml
/// [model]
/// preset = "reference"
/// [model.birth]
/// kind = "age_window"
/// value = 1.0
/// lo = 20.0
/// hi = 40.0
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Option<String>,
    pub domain: Option<Domain>,
    pub birth: Option<Rate>,
    pub death: Option<Rate>,
    pub initial: Option<InitialConfig>,
}

impl ModelConfig {
    pub fn reference() -> Self {
        ModelConfig {
            preset: Some("reference".into()),
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<Model, ModelError> {
        let base = match self.preset.as_deref() {
            Some("reference") => Some(Model::reference()),
            Some(other) => return Err(ModelError::Config(format!("unknown model preset '{other}'"))),
            None => None,
        };
        let pick = |explicit: Option<Rate>, from_base: Option<Rate>, name: &str| {
            explicit
                .or(from_base)
                .ok_or_else(|| ModelError::Config(format!("model needs a '{name}' table or a preset")))
        };
        let domain = match (self.domain, &base) {
            (Some(d), _) => Domain::new(d.horizon, d.max_age)?,
            (None, Some(m)) => m.domain,
            (None, None) => return Err(ModelError::Config("model needs a 'domain' table or a preset".into())),
        };
        let birth = pick(self.birth.clone(), base.as_ref().map(|m| m.rates.birth_rate().clone()), "birth")?;
        let death = pick(self.death.clone(), base.as_ref().map(|m| m.rates.death_rate().clone()), "death")?;
        let initial = match (&self.initial, &base) {
            (Some(c), _) => c.build()?,
            (None, Some(m)) => m.initial.clone(),
            (None, None) => return Err(ModelError::Config("model needs an 'initial' table or a preset".into())),
        };
        Model::new(domain, birth, death, initial)
    }
}
