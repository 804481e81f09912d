//! Learning-rate schedules and the summability conditions the alternate
//! methods' convergence results ask of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::CycleConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { rate: f64 },
    /// `η_i = a / (1 + i)^p`
    PowerDecay { a: f64, p: f64 },
    /// Starts at `start`; reduced by the plateau callback during training.
    PlateauDriven { start: f64 },
}

impl Schedule {
    pub fn constant(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Schedule::Constant { rate })
    }

    pub fn power_decay(a: f64, p: f64) -> Result<Self> {
        check_rate(a)?;
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidArgument(format!("power decay exponent must be >= 0, got {p}")));
        }
        Ok(Schedule::PowerDecay { a, p })
    }

    pub fn plateau_driven(start: f64) -> Result<Self> {
        check_rate(start)?;
        Ok(Schedule::PlateauDriven { start })
    }

    /// Rate at iteration `i`. A plateau-driven schedule reports its starting rate;
    /// the training loop owns the reduced value.
    pub fn rate(&self, i: u64) -> f64 {
        match *self {
            Schedule::Constant { rate } => rate,
            Schedule::PowerDecay { a, p } => a / (1.0 + i as f64).powf(p),
            Schedule::PlateauDriven { start } => start,
        }
    }

    pub fn is_plateau_driven(&self) -> bool {
        matches!(self, Schedule::PlateauDriven { .. })
    }

    /// Decay exponent when the sequence is a p-series up to a constant.
    fn exponent(&self) -> Option<f64> {
        match *self {
            Schedule::Constant { .. } => Some(0.0),
            Schedule::PowerDecay { p, .. } => Some(p),
            Schedule::PlateauDriven { .. } => None,
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("learning rate must be positive and finite, got {rate}")))
    }
}

/// Separate rate sequences for the shared (`η⁰`) and task-specific (`ηᵗˢ`) updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePair {
    pub shared: Schedule,
    pub task_specific: Schedule,
}

impl SchedulePair {
    pub fn same(schedule: Schedule) -> Self {
        Self {
            shared: schedule,
            task_specific: schedule,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Rates depend on the training trajectory.
    Undecidable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleReport {
    /// Per-iteration alternation: `Σ η_min = ∞` and `Σ η_max² < ∞`.
    pub sat_conditions: Vec<Condition>,
    /// Epoch alternation: divergent sums over each phase's index set,
    /// `Σ η² < ∞`, and divergent sum of per-cycle minima.
    pub ate_conditions: Vec<Condition>,
    /// Both sequences constant: the fixed-rate regime applies instead of the
    /// diminishing-rate conditions.
    pub fixed_rate_regime: bool,
}

impl ScheduleReport {
    pub fn sat_satisfied(&self) -> bool {
        self.sat_conditions.iter().all(|c| c.verdict == Verdict::Pass)
    }

    pub fn ate_satisfied(&self) -> bool {
        self.ate_conditions.iter().all(|c| c.verdict == Verdict::Pass)
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.sat_conditions
            .iter()
            .chain(&self.ate_conditions)
            .find(|c| c.name == name)
            .map(|c| c.verdict)
    }
}

/// Decides the summability conditions from p-series facts: `Σ c/(1+i)^p`
/// diverges iff `p ≤ 1`, and `Σ c²/(1+i)^{2p}` converges iff `p > 1/2`.
///
/// Each phase index set of the epoch-alternating method holds a fixed fraction
/// of every cycle, so restricting a p-series to it preserves divergence.
pub fn validate_schedule(pair: &SchedulePair, cycle: &CycleConfig) -> Result<ScheduleReport> {
    cycle.validate()?;
    let judge = |ok: Option<bool>| match ok {
        Some(true) => Verdict::Pass,
        Some(false) => Verdict::Fail,
        None => Verdict::Undecidable,
    };
    let (p0, pts) = (pair.shared.exponent(), pair.task_specific.exponent());
    let both = p0.zip(pts);
    let diverges = |p: f64| p <= 1.0;
    let squares_converge = |p: f64| p > 0.5;

    // η_min decays like the faster sequence, η_max like the slower one.
    let min_diverges = both.map(|(a, b)| diverges(a.max(b)));
    let max_sq_converges = both.map(|(a, b)| squares_converge(a.min(b)));

    let sat_conditions = vec![
        Condition {
            name: "sum_eta_min_diverges",
            verdict: judge(min_diverges),
        },
        Condition {
            name: "sum_eta_max_squared_converges",
            verdict: judge(max_sq_converges),
        },
    ];
    let ate_conditions = vec![
        Condition {
            name: "sum_over_shared_phase_diverges",
            verdict: judge(p0.map(diverges)),
        },
        Condition {
            name: "sum_over_task_phase_diverges",
            verdict: judge(pts.map(diverges)),
        },
        Condition {
            name: "sum_eta_squared_converges",
            verdict: judge(max_sq_converges),
        },
        Condition {
            name: "sum_cycle_min_diverges",
            verdict: judge(min_diverges),
        },
    ];
    let fixed_rate_regime = matches!(
        (pair.shared, pair.task_specific),
        (Schedule::Constant { .. }, Schedule::Constant { .. })
    );
    Ok(ScheduleReport {
        sat_conditions,
        ate_conditions,
        fixed_rate_regime,
    })
}
