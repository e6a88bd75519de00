//! Static market description: network topology, generators, stochastic
//! profiles, clock arithmetic, and deterministic random streams.
//!
//! Everything here is immutable after construction and safe to share
//! read-only across parallel workers. Random streams are derived from a
//! master seed with a counter-based split, so each entity owns its own
//! stream and adding an entity does not perturb the draws of others.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("triangular distribution requires lower <= mode <= upper, got ({0}, {1}, {2})")]
    BadTriangular(f64, f64, f64),
    #[error("generator {id} references bus {bus} but the network has {bus_count} buses")]
    BusOutOfRange { id: usize, bus: usize, bus_count: usize },
    #[error("ptdf must have one row per line ({lines}) and one column per bus ({buses})")]
    PtdfShape { lines: usize, buses: usize },
    #[error("non-finite ptdf entry at line {line}, bus {bus}")]
    PtdfNotFinite { line: usize, bus: usize },
    #[error("line {0} has negative flow limit")]
    NegativeFlowLimit(usize),
    #[error("generator {0}: {1}")]
    BadGenerator(usize, String),
    #[error("profile must have {expected} or {} entries, got {got}", 2 * .expected)]
    ProfileLength { expected: usize, got: usize },
}

/// Triangular distribution with lower limit, upper limit, and mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularDist {
    pub lower: f64,
    pub upper: f64,
    pub mode: f64,
}

impl TriangularDist {
    pub fn new(lower: f64, upper: f64, mode: f64) -> Result<Self, ModelError> {
        if !(lower <= mode && mode <= upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(ModelError::BadTriangular(lower, upper, mode));
        }
        Ok(Self { lower, upper, mode })
    }

    pub fn mean(&self) -> f64 {
        (self.lower + self.upper + self.mode) / 3.0
    }

    /// Analytic CDF, used by tests to check the sampler.
    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b, c) = (self.lower, self.upper, self.mode);
        if x <= a {
            0.0
        } else if x >= b {
            1.0
        } else if x < c {
            (x - a).powi(2) / ((b - a) * (c - a))
        } else {
            1.0 - (b - x).powi(2) / ((b - a) * (b - c))
        }
    }
}

/// Inverse-CDF sample: consumes exactly one uniform draw.
pub fn sample_triangular(dist: &TriangularDist, rng: &mut impl Rng) -> f64 {
    let (a, b, c) = (dist.lower, dist.upper, dist.mode);
    let u: f64 = rng.random();
    if b == a {
        return a;
    }
    let f_mode = (c - a) / (b - a);
    if u < f_mode {
        a + (u * (b - a) * (c - a)).sqrt()
    } else {
        b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Oil,
    Biomass,
    Solar,
    Wind,
}

impl GenKind {
    pub fn is_renewable(self) -> bool {
        matches!(self, GenKind::Solar | GenKind::Wind)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenKind::Oil => "oil",
            GenKind::Biomass => "biomass",
            GenKind::Solar => "solar",
            GenKind::Wind => "wind",
        }
    }
}

impl std::str::FromStr for GenKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oil" => Ok(GenKind::Oil),
            "biomass" => Ok(GenKind::Biomass),
            "solar" => Ok(GenKind::Solar),
            "wind" => Ok(GenKind::Wind),
            other => Err(format!("unknown generator kind '{other}'")),
        }
    }
}

/// One generator: quadratic cost a*p^2 + b*p, capacity bound, and for
/// renewables an hourly capacity-factor profile plus a scaling draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    pub kind: GenKind,
    /// $/MW^2 h
    pub cost_a: f64,
    /// $/MWh
    pub cost_b: f64,
    /// MW
    pub p_max: f64,
    /// Per-hour availability in [0, 1]; empty for non-renewables (treated as 1).
    pub capacity_factor_profile: Vec<f64>,
    /// Multiplicative noise on the capacity factor; renewables only.
    pub capacity_scale: Option<TriangularDist>,
}

impl Generator {
    fn validate(&self, steps_per_day: usize) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::BadGenerator(self.id, msg));
        if self.cost_a < 0.0 || self.cost_b < 0.0 || self.p_max < 0.0 {
            return fail("cost coefficients and capacity must be nonnegative".into());
        }
        if self.kind.is_renewable() {
            if self.cost_a != 0.0 || self.cost_b != 0.0 {
                return fail("renewable generators must have zero cost".into());
            }
            if self.capacity_factor_profile.len() != steps_per_day {
                return fail(format!(
                    "renewable needs a {steps_per_day}-entry capacity-factor profile"
                ));
            }
            if self.capacity_factor_profile.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return fail("capacity factors must lie in [0, 1]".into());
            }
        } else if !self.capacity_factor_profile.is_empty() {
            return fail("non-renewables take no capacity-factor profile".into());
        }
        Ok(())
    }
}

/// Transmission line, identified by its PTDF row and a symmetric flow limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    /// MW, applies in both directions.
    pub flow_limit: f64,
}

/// Static market topology: buses, lines with PTDF rows, generators, and
/// the per-bus generator partition.
#[derive(Debug, Clone)]
pub struct Network {
    pub bus_count: usize,
    pub lines: Vec<Line>,
    /// Row-major, one row per line, one column per bus.
    pub ptdf: Vec<Vec<f64>>,
    pub generators: Vec<Generator>,
    /// bus -> generator indices located there. A partition of 0..generators.len().
    pub bus_generators: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(
        bus_count: usize,
        lines: Vec<Line>,
        ptdf: Vec<Vec<f64>>,
        generators: Vec<Generator>,
        steps_per_day: usize,
    ) -> Result<Self, ModelError> {
        if ptdf.len() != lines.len() || ptdf.iter().any(|row| row.len() != bus_count) {
            return Err(ModelError::PtdfShape { lines: lines.len(), buses: bus_count });
        }
        for (l, row) in ptdf.iter().enumerate() {
            for (m, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ModelError::PtdfNotFinite { line: l, bus: m });
                }
            }
        }
        for line in &lines {
            if line.flow_limit < 0.0 {
                return Err(ModelError::NegativeFlowLimit(line.id));
            }
        }
        let mut bus_generators = vec![Vec::new(); bus_count];
        for (g, gen) in generators.iter().enumerate() {
            gen.validate(steps_per_day)?;
            if gen.bus >= bus_count {
                return Err(ModelError::BusOutOfRange { id: gen.id, bus: gen.bus, bus_count });
            }
            bus_generators[gen.bus].push(g);
        }
        Ok(Self { bus_count, lines, ptdf, generators, bus_generators })
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn generator_count(&self) -> usize {
        self.generators.len()
    }
}

/// Available output of a generator at hour-of-day `h`: nameplate for
/// thermal units, profile- and noise-scaled (then clamped) for renewables.
pub fn effective_capacity(gen: &Generator, h: usize, rng: &mut impl Rng) -> f64 {
    if !gen.kind.is_renewable() {
        return gen.p_max;
    }
    let factor = gen.capacity_factor_profile[h];
    let scale = match &gen.capacity_scale {
        Some(dist) => sample_triangular(dist, rng),
        None => 1.0,
    };
    (gen.p_max * factor * scale).clamp(0.0, gen.p_max)
}

/// Hourly net-demand shape as a fraction of storage capacity, plus a
/// multiplicative triangular scaling applied to every draw. Prosumer
/// entries may be negative (net supply).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemandProfile {
    pub hourly_mean: Vec<f64>,
    pub scale: TriangularDist,
}

impl DemandProfile {
    pub fn new(hourly_mean: Vec<f64>, scale: TriangularDist) -> Self {
        Self { hourly_mean, scale }
    }

    /// Default scaling from the test case: 0.9..1.1, mode 1.
    pub fn default_scale() -> TriangularDist {
        TriangularDist { lower: 0.9, upper: 1.1, mode: 1.0 }
    }

    pub fn steps_per_day(&self) -> usize {
        self.hourly_mean.len()
    }
}

/// One demand draw for hour-of-day `h`, as a fraction of storage capacity.
pub fn sample_demand(profile: &DemandProfile, h: usize, rng: &mut impl Rng) -> f64 {
    profile.hourly_mean[h] * sample_triangular(&profile.scale, rng)
}

/// Maps a flat timestep index to (hour of day, day index).
pub fn clock_indices(t: usize, steps_per_day: usize) -> (usize, usize) {
    (t % steps_per_day, t / steps_per_day)
}

/// Simulation clock: `steps_per_day` market intervals per day.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Clock {
    pub steps_per_day: usize,
}

impl Clock {
    pub fn new(steps_per_day: usize) -> Self {
        assert!(steps_per_day >= 1, "steps_per_day must be positive");
        Self { steps_per_day }
    }

    pub fn hour(&self, t: usize) -> usize {
        t % self.steps_per_day
    }

    pub fn day(&self, t: usize) -> usize {
        t / self.steps_per_day
    }
}

/// Role of a random stream. Each (role, bus, index) triple owns an
/// independent stream under a given master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Prosumer net-demand draws during actual play.
    ProsumerDemand,
    /// Consumer net-demand draws during actual play.
    ConsumerDemand,
    /// Per-prosumer action sampling during actual play.
    Action,
    /// Training-phase exploration and environment noise.
    Learner,
    /// Renewable capacity-factor scaling on the market side.
    Renewable,
    /// Synthetic case generation.
    CaseGen,
}

impl StreamRole {
    fn tag(self) -> u32 {
        match self {
            StreamRole::ProsumerDemand => 1,
            StreamRole::ConsumerDemand => 2,
            StreamRole::Action => 3,
            StreamRole::Learner => 4,
            StreamRole::Renewable => 5,
            StreamRole::CaseGen => 6,
        }
    }
}

/// Deterministic per-entity random stream. Identical (seed, role, bus,
/// index) reproduce identical draw sequences bit-for-bit on every platform.
pub fn stream(master_seed: u64, role: StreamRole, bus: usize, index: usize) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..12].copy_from_slice(&role.tag().to_le_bytes());
    key[12..20].copy_from_slice(&(bus as u64).to_le_bytes());
    key[20..28].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha12Rng::from_seed(key)
}
