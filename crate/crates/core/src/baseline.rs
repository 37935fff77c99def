//! Immediate and average-rate charging baselines and their cost accounting.
//!
//! Both policies run open-loop: no V2G, no reserves, no awareness of
//! multiplexing limits. The simulator reports converter-count conflicts for
//! baselines (through the embedding audit) but does not enforce them, since
//! these chargers act without an EMS.

use thiserror::Error;

use crate::domain::{EvSession, ScenarioSnapshot};
use crate::formulation::{Schedule, VariableCatalog};
use crate::milp::{audit, AuditReport, MilpError, MilpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyTag {
    Immediate,
    AverageRate,
}

impl PolicyTag {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyTag::Immediate => "IMM",
            PolicyTag::AverageRate => "AR",
        }
    }
}

/// Per-step, per-EV charging powers for one baseline policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProfile {
    pub policy: PolicyTag,
    pub ev_ids: Vec<String>,
    /// `[step][ev]` over the full horizon.
    pub charge_kw: Vec<Vec<f64>>,
    /// EVs whose demand could not be delivered before departure.
    pub truncated: Vec<String>,
}

impl BaselineProfile {
    /// Combined park charging power at one step.
    pub fn park_power_kw(&self, step: usize) -> f64 {
        self.charge_kw[step].iter().sum()
    }

    /// Highest combined park power over the day.
    pub fn peak_park_power_kw(&self) -> f64 {
        (0..self.charge_kw.len())
            .map(|t| self.park_power_kw(t))
            .fold(0.0, f64::max)
    }

    /// Port-side energy delivered to one EV over the day (kWh).
    pub fn delivered_kwh(&self, ev_index: usize, step_hours: f64) -> f64 {
        self.charge_kw
            .iter()
            .map(|row| row[ev_index] * step_hours)
            .sum()
    }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("profile covers {profile} EVs, snapshot has {snapshot}")]
    FleetMismatch { profile: usize, snapshot: usize },
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// Average-rate policy: constant power demand/(parking time), clipped by the
/// EV limit and the port rating, over the whole stay.
pub fn average_rate(snapshot: &ScenarioSnapshot) -> BaselineProfile {
    let mut charge = vec![vec![0.0; snapshot.fleet.len()]; snapshot.horizon_steps];
    for (v, ev) in snapshot.fleet.iter().enumerate() {
        let rate = ar_rate_kw(ev, snapshot);
        for t in ev.present_steps() {
            charge[t][v] = rate;
        }
    }
    BaselineProfile {
        policy: PolicyTag::AverageRate,
        ev_ids: snapshot.fleet.iter().map(|e| e.id.clone()).collect(),
        charge_kw: charge,
        truncated: Vec::new(),
    }
}

/// The AR charging rate for one EV (kW).
pub fn ar_rate_kw(ev: &EvSession, snapshot: &ScenarioSnapshot) -> f64 {
    let port = snapshot
        .charger(&ev.charger_id)
        .map(|c| c.ev_port_rated_kw)
        .unwrap_or(f64::INFINITY);
    let spread = ev.demand_kwh / (ev.parked_steps() as f64 * snapshot.step_hours);
    spread.min(ev.charge_max_kw).min(port)
}

/// Immediate policy: full port power from arrival until the demand is
/// delivered, with a fractional final step so the delivered energy matches
/// the demand exactly. EVs whose demand does not fit before departure are
/// flagged as truncated.
pub fn immediate(snapshot: &ScenarioSnapshot) -> BaselineProfile {
    let mut charge = vec![vec![0.0; snapshot.fleet.len()]; snapshot.horizon_steps];
    let mut truncated = Vec::new();
    for (v, ev) in snapshot.fleet.iter().enumerate() {
        let port = snapshot
            .charger(&ev.charger_id)
            .map(|c| c.ev_port_rated_kw)
            .unwrap_or(f64::INFINITY);
        let power = ev.charge_max_kw.min(port);
        let mut remaining = ev.demand_kwh;
        for t in ev.present_steps() {
            if remaining <= 0.0 {
                break;
            }
            let full = power * snapshot.step_hours;
            if remaining >= full {
                charge[t][v] = power;
                remaining -= full;
            } else {
                charge[t][v] = remaining / snapshot.step_hours;
                remaining = 0.0;
            }
        }
        if remaining > 1e-9 {
            truncated.push(ev.id.clone());
        }
    }
    BaselineProfile {
        policy: PolicyTag::Immediate,
        ev_ids: snapshot.fleet.iter().map(|e| e.id.clone()).collect(),
        charge_kw: charge,
        truncated,
    }
}

/// Charging cost, PV sales and their net for a baseline day. Both terms
/// carry the squared converter efficiency on the traded energy, and the PV
/// sales assume the full forecast is sold at the sell price less the
/// contractual PV cost.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineCost {
    pub ev_cost_usd: f64,
    pub pv_sales_usd: f64,
    pub net_usd: f64,
}

pub fn baseline_cost(
    profile: &BaselineProfile,
    snapshot: &ScenarioSnapshot,
) -> Result<BaselineCost, BaselineError> {
    if profile.ev_ids.len() != snapshot.fleet.len() {
        return Err(BaselineError::FleetMismatch {
            profile: profile.ev_ids.len(),
            snapshot: snapshot.fleet.len(),
        });
    }
    let dt = snapshot.step_hours;
    let mut cost = BaselineCost::default();
    for (v, ev) in snapshot.fleet.iter().enumerate() {
        let eta2 = {
            let c = snapshot.charger(&ev.charger_id).expect("validated");
            c.eff_conv * c.eff_conv
        };
        for t in 0..snapshot.horizon_steps {
            cost.ev_cost_usd +=
                dt * eta2 * profile.charge_kw[t][v] * snapshot.market.buy_price[t];
        }
    }
    for chg in &snapshot.chargers {
        let eta2 = chg.eff_conv * chg.eff_conv;
        for t in 0..snapshot.horizon_steps {
            cost.pv_sales_usd += dt
                * eta2
                * snapshot.pv_available_kw(chg, t)
                * (snapshot.market.sell_price[t] - snapshot.pv_cost);
        }
    }
    cost.net_usd = cost.ev_cost_usd - cost.pv_sales_usd;
    Ok(cost)
}

/// Percentage cost reduction of `c_other` relative to `c_ar`:
/// 100 · (c_ar − c_other) / c_ar. `None` when the reference is zero.
pub fn percent_reduction(c_ar: f64, c_other: f64) -> Option<f64> {
    if c_ar == 0.0 {
        None
    } else {
        Some(100.0 * (c_ar - c_other) / c_ar)
    }
}

/// Embeds a baseline profile into a full model point: PV at the forecast
/// maximum, charger draw/feed balancing the DC link, site import/export
/// closing the park balance, SOC following the battery recursion, minimal
/// active/mode flags. Auditing the result against the model tells whether
/// the baseline is feasible for the optimizer's constraint set (shared
/// chargers and tight inverters usually are not).
pub fn embed_profile(
    profile: &BaselineProfile,
    snapshot: &ScenarioSnapshot,
    model: &MilpModel,
    catalog: &VariableCatalog,
) -> Result<Vec<f64>, BaselineError> {
    if profile.ev_ids.len() != snapshot.fleet.len() {
        return Err(BaselineError::FleetMismatch {
            profile: profile.ev_ids.len(),
            snapshot: snapshot.fleet.len(),
        });
    }
    let dt = snapshot.step_hours;
    let mut values = vec![0.0; model.num_vars()];
    let mut soc: Vec<f64> = snapshot.fleet.iter().map(|e| e.arrival_soc_kwh).collect();

    for t in 0..snapshot.horizon_steps {
        for (c, chg) in snapshot.chargers.iter().enumerate() {
            let pv = snapshot.pv_available_kw(chg, t);
            values[catalog.pv(t, c).index()] = pv;
            let members: Vec<usize> = snapshot
                .fleet
                .iter()
                .enumerate()
                .filter(|(_, ev)| ev.charger_id == chg.id)
                .map(|(v, _)| v)
                .collect();
            let total_charge: f64 = members.iter().map(|&v| profile.charge_kw[t][v]).sum();
            let eta2 = chg.eff_conv * chg.eff_conv;
            let surplus = eta2 * pv - total_charge;
            if surplus >= 0.0 {
                values[catalog.feed(t, c).index()] = surplus;
                values[catalog.drawfeed(t, c).index()] = 0.0;
            } else {
                values[catalog.draw(t, c).index()] = -surplus / eta2;
                values[catalog.drawfeed(t, c).index()] = 1.0;
            }
        }
        let mut net = 0.0;
        for c in 0..snapshot.chargers.len() {
            net += values[catalog.draw(t, c).index()] - values[catalog.feed(t, c).index()];
        }
        if net >= 0.0 {
            values[catalog.import(t).index()] = net;
        } else {
            values[catalog.export(t).index()] = -net;
        }
        for (v, ev) in snapshot.fleet.iter().enumerate() {
            let x = profile.charge_kw[t][v];
            values[catalog.charge(t, v).index()] = x;
            if ev.is_present(t) {
                values[catalog.soc(t, v).index()] = soc[v];
                soc[v] += dt * x * ev.eff_charge;
                values[catalog.active(t, v).index()] = if x > 0.0 { 1.0 } else { 0.0 };
                values[catalog.chmode(t, v).index()] = 1.0;
            } else if t == ev.departure_step {
                values[catalog.soc(t, v).index()] = soc[v];
            }
        }
    }
    Ok(values)
}

/// Audits a baseline against the optimizer's constraint set.
pub fn baseline_feasibility(
    profile: &BaselineProfile,
    snapshot: &ScenarioSnapshot,
    model: &MilpModel,
    catalog: &VariableCatalog,
    tol: f64,
) -> Result<AuditReport, BaselineError> {
    let values = embed_profile(profile, snapshot, model, catalog)?;
    Ok(audit(model, &values, tol)?)
}

/// Converts a profile into a [`Schedule`] (charging powers and SOC only;
/// charger and site series derived the same way as [`embed_profile`]).
pub fn to_schedule(profile: &BaselineProfile, snapshot: &ScenarioSnapshot) -> Schedule {
    let mut schedule = Schedule::zero(snapshot, 0);
    let dt = snapshot.step_hours;
    let mut soc: Vec<f64> = snapshot.fleet.iter().map(|e| e.arrival_soc_kwh).collect();
    for t in 0..snapshot.horizon_steps {
        for (c, chg) in snapshot.chargers.iter().enumerate() {
            let pv = snapshot.pv_available_kw(chg, t);
            schedule.pv_kw[t][c] = pv;
            let total_charge: f64 = snapshot
                .fleet
                .iter()
                .enumerate()
                .filter(|(_, ev)| ev.charger_id == chg.id)
                .map(|(v, _)| profile.charge_kw[t][v])
                .sum();
            let eta2 = chg.eff_conv * chg.eff_conv;
            let surplus = eta2 * pv - total_charge;
            if surplus >= 0.0 {
                schedule.feed_kw[t][c] = surplus;
            } else {
                schedule.draw_kw[t][c] = -surplus / eta2;
            }
        }
        let net: f64 = (0..snapshot.chargers.len())
            .map(|c| schedule.draw_kw[t][c] - schedule.feed_kw[t][c])
            .sum();
        if net >= 0.0 {
            schedule.import_kw[t] = net;
        } else {
            schedule.export_kw[t] = -net;
        }
        for (v, ev) in snapshot.fleet.iter().enumerate() {
            schedule.charge_kw[t][v] = profile.charge_kw[t][v];
            if ev.is_present(t) || t == ev.departure_step {
                schedule.soc_kwh[t][v] = soc[v];
            }
            if ev.is_present(t) {
                soc[v] += dt * profile.charge_kw[t][v] * ev.eff_charge;
            }
        }
    }
    schedule
}
