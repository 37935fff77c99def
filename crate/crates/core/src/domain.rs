//! Fleet, charger, market and site types plus the admission gate.
//!
//! Everything here is immutable after construction and all operations are
//! pure functions, so values can be shared freely across threads.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// One vehicle's visit: times on the step grid, energy demand, SOC box,
/// power limits, efficiencies, penalty rate and the charger it plugs into.
#[derive(Debug, Clone, PartialEq)]
pub struct EvSession {
    pub id: String,
    /// First step the EV can draw power (inclusive).
    pub arrival_step: usize,
    /// Step at which the EV unplugs; charging happens on steps
    /// `arrival_step..departure_step`, the SOC at `departure_step` is the
    /// departure SOC.
    pub departure_step: usize,
    pub demand_kwh: f64,
    pub arrival_soc_kwh: f64,
    pub soc_min_kwh: f64,
    pub soc_max_kwh: f64,
    /// Maximum charging power (kW, > 0).
    pub charge_max_kw: f64,
    /// Minimum (most negative) discharging power (kW, ≤ 0); 0 disables V2G.
    pub discharge_min_kw: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
    /// Compensation owed per kWh of unmet demand at departure ($/kWh).
    pub penalty_rate: f64,
    pub charger_id: String,
}

impl EvSession {
    /// Steps during which the EV may exchange power.
    pub fn present_steps(&self) -> std::ops::Range<usize> {
        self.arrival_step..self.departure_step
    }

    pub fn is_present(&self, step: usize) -> bool {
        step >= self.arrival_step && step < self.departure_step
    }

    /// Parking duration in steps.
    pub fn parked_steps(&self) -> usize {
        self.departure_step - self.arrival_step
    }
}

/// The SOC the vehicle should reach by departure: arrival SOC plus demand.
pub fn departure_target(ev: &EvSession) -> f64 {
    ev.arrival_soc_kwh + ev.demand_kwh
}

/// One EV-PV charger: a PV port, a grid inverter port and a number of
/// isolated DC/DC EV ports hanging off a shared DC link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargerSpec {
    pub id: String,
    /// Rated power of the attached PV array (kWp); 0 means no PV.
    pub pv_rated_kw: f64,
    /// Rated power of the DC/AC inverter port (kW).
    pub inverter_rated_kw: f64,
    /// Rated power of each EV DC/DC converter (kW).
    pub ev_port_rated_kw: f64,
    /// Number of EV DC/DC converters (how many EVs can exchange power at once).
    pub dc_converter_count: usize,
    /// Number of physical plugs (how many EVs can be connected at once).
    pub connection_count: usize,
    /// Per-stage converter efficiency.
    pub eff_conv: f64,
    /// Scale of this array relative to the normalized forecast array.
    pub pv_scale: f64,
}

/// Per-step market prices, all in $/kWh. Negative prices are allowed;
/// the sell price never exceeds the buy price.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarketSeries {
    pub buy_price: Vec<f64>,
    pub sell_price: Vec<f64>,
    pub regup_price: Vec<f64>,
    pub regdn_price: Vec<f64>,
}

impl MarketSeries {
    pub fn len(&self) -> usize {
        self.buy_price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buy_price.is_empty()
    }
}

/// Normalized PV forecast: kW produced per installed kWp, per step, plus the
/// declared forecast uncertainty band.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PvForecast {
    pub normalized_kw_per_kwp: Vec<f64>,
    /// Fractional uncertainty in [0, 1); reserves are de-rated by (1 − this).
    pub uncertainty: f64,
}

/// Per-step caps on power exchanged with the distribution network (kW ≥ 0).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiteLimits {
    pub import_cap_kw: Vec<f64>,
    pub export_cap_kw: Vec<f64>,
}

/// Whether up and down reserve offers may differ per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReserveMode {
    #[default]
    Asymmetric,
    /// Adds x_up = x_dn per EV and step.
    Symmetric,
}

/// Which power limit caps each reserve product (the printed equations pair
/// discharge+up-reserve with the charge limit and vice versa; `Swapped`
/// pairs them the intuitive way around).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReserveBoundConvention {
    #[default]
    AsPrinted,
    Swapped,
}

/// A full solvable instance: fleet, chargers, market and PV series, network
/// limits, the time grid and the scalar model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSnapshot {
    pub fleet: Vec<EvSession>,
    pub chargers: Vec<ChargerSpec>,
    pub market: MarketSeries,
    pub pv: PvForecast,
    pub limits: SiteLimits,
    /// Step length in hours.
    pub step_hours: f64,
    /// Number of steps covering the day.
    pub horizon_steps: usize,
    /// SOC fraction where the charge-power taper begins.
    pub taper_charge: f64,
    /// SOC fraction where the discharge-power taper ends.
    pub taper_discharge: f64,
    /// Battery wear compensation for V2G energy ($/kWh).
    pub wear_rate: f64,
    /// Contractual cost of PV energy ($/kWh); 0 when the site owns the array.
    pub pv_cost: f64,
    pub reserve_mode: ReserveMode,
    pub reserve_bound_convention: ReserveBoundConvention,
    /// False removes the reserve products from the model entirely.
    pub reserves_enabled: bool,
    /// False forces every EV's discharge limit to zero.
    pub v2g_enabled: bool,
    /// False pins PV extraction to the forecast maximum instead of ≤.
    pub curtailment_enabled: bool,
}

impl ScenarioSnapshot {
    /// Effective discharge limit for an EV under the V2G toggle.
    pub fn discharge_min_kw(&self, ev: &EvSession) -> f64 {
        if self.v2g_enabled {
            ev.discharge_min_kw
        } else {
            0.0
        }
    }

    pub fn charger(&self, id: &str) -> Option<&ChargerSpec> {
        self.chargers.iter().find(|c| c.id == id)
    }

    pub fn charger_index(&self, id: &str) -> Option<usize> {
        self.chargers.iter().position(|c| c.id == id)
    }

    /// Available PV power at charger `c` and step `t` (kW), before curtailment.
    pub fn pv_available_kw(&self, charger: &ChargerSpec, step: usize) -> f64 {
        charger.pv_scale * charger.pv_rated_kw * self.pv.normalized_kw_per_kwp[step]
    }

    /// Structural validation of the snapshot and every member.
    pub fn validate(&self) -> Result<(), DomainError> {
        let t = self.horizon_steps;
        if t == 0 || self.step_hours <= 0.0 {
            return Err(DomainError::BadGrid {
                horizon_steps: t,
                step_hours: self.step_hours,
            });
        }
        for (name, len) in [
            ("buy_price", self.market.buy_price.len()),
            ("sell_price", self.market.sell_price.len()),
            ("regup_price", self.market.regup_price.len()),
            ("regdn_price", self.market.regdn_price.len()),
            ("pv", self.pv.normalized_kw_per_kwp.len()),
            ("import_cap_kw", self.limits.import_cap_kw.len()),
            ("export_cap_kw", self.limits.export_cap_kw.len()),
        ] {
            if len != t {
                return Err(DomainError::SeriesLength {
                    series: name,
                    len,
                    expected: t,
                });
            }
        }
        for step in 0..t {
            if self.market.sell_price[step] > self.market.buy_price[step] + 1e-12 {
                return Err(DomainError::SellAboveBuy { step });
            }
            if self.pv.normalized_kw_per_kwp[step] < 0.0 {
                return Err(DomainError::NegativePv { step });
            }
        }
        if !(0.0..1.0).contains(&self.pv.uncertainty) {
            return Err(DomainError::BadUncertainty(self.pv.uncertainty));
        }
        for c in &self.chargers {
            validate_charger(c)?;
        }
        for ev in &self.fleet {
            validate_session(ev, t)?;
            if self.charger(&ev.charger_id).is_none() {
                return Err(DomainError::UnknownCharger {
                    ev: ev.id.clone(),
                    charger: ev.charger_id.clone(),
                });
            }
        }
        // Physical plugs per charger are limited by the connection count.
        let mut plugged: BTreeMap<&str, usize> = BTreeMap::new();
        for ev in &self.fleet {
            *plugged.entry(ev.charger_id.as_str()).or_insert(0) += 1;
        }
        for c in &self.chargers {
            let n = plugged.get(c.id.as_str()).copied().unwrap_or(0);
            if n > c.connection_count {
                return Err(DomainError::TooManyConnections {
                    charger: c.id.clone(),
                    plugged: n,
                    allowed: c.connection_count,
                });
            }
        }
        Ok(())
    }
}

pub fn validate_session(ev: &EvSession, horizon_steps: usize) -> Result<(), DomainError> {
    let fail = |reason: &str| {
        Err(DomainError::BadSession {
            ev: ev.id.clone(),
            reason: reason.to_string(),
        })
    };
    if ev.arrival_step >= ev.departure_step {
        return fail("arrival must precede departure");
    }
    if ev.departure_step >= horizon_steps {
        // The grid point after the last charging step carries the departure
        // SOC, so the session must end before the day's final step closes.
        return fail("departure must lie before the day's final step");
    }
    if !(0.0 <= ev.soc_min_kwh && ev.soc_min_kwh <= ev.arrival_soc_kwh) {
        return fail("need 0 <= soc_min <= arrival_soc");
    }
    if ev.arrival_soc_kwh > ev.soc_max_kwh {
        return fail("arrival_soc above soc_max");
    }
    if ev.arrival_soc_kwh + ev.demand_kwh > ev.soc_max_kwh + 1e-9 {
        return fail("demand does not fit under soc_max");
    }
    if ev.demand_kwh < 0.0 {
        return fail("negative demand");
    }
    if ev.charge_max_kw <= 0.0 {
        return fail("charge_max_kw must be positive");
    }
    if ev.discharge_min_kw > 0.0 {
        return fail("discharge_min_kw must be <= 0");
    }
    if !(0.0 < ev.eff_charge && ev.eff_charge <= 1.0) || !(0.0 < ev.eff_discharge && ev.eff_discharge <= 1.0)
    {
        return fail("efficiencies must lie in (0, 1]");
    }
    Ok(())
}

pub fn validate_charger(c: &ChargerSpec) -> Result<(), DomainError> {
    let fail = |reason: &str| {
        Err(DomainError::BadCharger {
            charger: c.id.clone(),
            reason: reason.to_string(),
        })
    };
    if c.pv_rated_kw < 0.0 || c.inverter_rated_kw <= 0.0 || c.ev_port_rated_kw <= 0.0 {
        return fail("ratings must be positive (PV may be zero)");
    }
    if c.pv_rated_kw > c.inverter_rated_kw {
        return fail("pv_rated_kw must not exceed inverter_rated_kw");
    }
    if c.dc_converter_count < 1 || c.dc_converter_count > c.connection_count {
        return fail("need 1 <= dc_converter_count <= connection_count");
    }
    if !(0.0 < c.eff_conv && c.eff_conv <= 1.0) {
        return fail("eff_conv must lie in (0, 1]");
    }
    if c.pv_scale < 0.0 {
        return fail("pv_scale must be >= 0");
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid time grid: horizon_steps={horizon_steps}, step_hours={step_hours}")]
    BadGrid { horizon_steps: usize, step_hours: f64 },
    #[error("series {series} has length {len}, expected {expected}")]
    SeriesLength {
        series: &'static str,
        len: usize,
        expected: usize,
    },
    #[error("sell price exceeds buy price at step {step}")]
    SellAboveBuy { step: usize },
    #[error("negative PV forecast at step {step}")]
    NegativePv { step: usize },
    #[error("PV uncertainty {0} outside [0, 1)")]
    BadUncertainty(f64),
    #[error("EV {ev}: {reason}")]
    BadSession { ev: String, reason: String },
    #[error("charger {charger}: {reason}")]
    BadCharger { charger: String, reason: String },
    #[error("EV {ev} references unknown charger {charger}")]
    UnknownCharger { ev: String, charger: String },
    #[error("charger {charger} has {plugged} EVs plugged, allows {allowed}")]
    TooManyConnections {
        charger: String,
        plugged: usize,
        allowed: usize,
    },
    #[error("EV {ev}: departure rounds to step {departure} at or before arrival step {arrival}")]
    EmptyWindow {
        ev: String,
        arrival: usize,
        departure: usize,
    },
}

/// Why an EV was turned away at the gate.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    /// The per-charger power budget cannot cover the combined demand rates.
    ChargerOverload {
        charger: String,
        load_kw: f64,
        cap_kw: f64,
    },
    /// Arrival SOC below the user's minimum SOC.
    ArrivalBelowMinimum { arrival_kwh: f64, min_kwh: f64 },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::ChargerOverload {
                charger,
                load_kw,
                cap_kw,
            } => write!(
                f,
                "charger {charger} demand rate {load_kw:.3} kW exceeds {cap_kw:.3} kW"
            ),
            RejectReason::ArrivalBelowMinimum {
                arrival_kwh,
                min_kwh,
            } => write!(
                f,
                "arrival SOC {arrival_kwh:.3} kWh below minimum {min_kwh:.3} kWh"
            ),
        }
    }
}

/// Admission verdict per EV, in fleet order.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub ev_id: String,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
}

/// Runs the two admission rules over the whole fleet.
///
/// Rule one compares, per charger, the summed average demand rate
/// d_v / (parking time) of its EVs against min(count·port rating, inverter
/// rating). Rule two requires the arrival SOC to be at or above the user's
/// minimum. Overloaded chargers shed their largest contributor first and the
/// rest are re-evaluated, so the result does not depend on fleet order.
pub fn check_acceptance(snapshot: &ScenarioSnapshot) -> Vec<Verdict> {
    let mut verdicts: BTreeMap<usize, Verdict> = BTreeMap::new();

    // Rule two first; those EVs never contribute charger load.
    let mut active: Vec<usize> = Vec::new();
    for (i, ev) in snapshot.fleet.iter().enumerate() {
        if ev.arrival_soc_kwh < ev.soc_min_kwh {
            verdicts.insert(
                i,
                Verdict {
                    ev_id: ev.id.clone(),
                    accepted: false,
                    reason: Some(RejectReason::ArrivalBelowMinimum {
                        arrival_kwh: ev.arrival_soc_kwh,
                        min_kwh: ev.soc_min_kwh,
                    }),
                },
            );
        } else {
            active.push(i);
        }
    }

    for charger in &snapshot.chargers {
        let cap_kw = (charger.dc_converter_count as f64 * charger.ev_port_rated_kw)
            .min(charger.inverter_rated_kw);
        let mut members: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| snapshot.fleet[i].charger_id == charger.id)
            .collect();
        loop {
            let load_kw: f64 = members
                .iter()
                .map(|&i| demand_rate_kw(&snapshot.fleet[i], snapshot.step_hours))
                .sum();
            if load_kw <= cap_kw + 1e-9 || members.is_empty() {
                break;
            }
            // Shed the largest contributor; ties shed the lexicographically
            // larger id so the outcome does not depend on fleet order.
            let &worst = members
                .iter()
                .max_by(|&&a, &&b| {
                    let ra = demand_rate_kw(&snapshot.fleet[a], snapshot.step_hours);
                    let rb = demand_rate_kw(&snapshot.fleet[b], snapshot.step_hours);
                    ra.partial_cmp(&rb)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| snapshot.fleet[a].id.cmp(&snapshot.fleet[b].id))
                })
                .expect("members non-empty");
            members.retain(|&i| i != worst);
            verdicts.insert(
                worst,
                Verdict {
                    ev_id: snapshot.fleet[worst].id.clone(),
                    accepted: false,
                    reason: Some(RejectReason::ChargerOverload {
                        charger: charger.id.clone(),
                        load_kw,
                        cap_kw,
                    }),
                },
            );
        }
    }

    for (i, ev) in snapshot.fleet.iter().enumerate() {
        verdicts.entry(i).or_insert_with(|| Verdict {
            ev_id: ev.id.clone(),
            accepted: true,
            reason: None,
        });
    }
    verdicts.into_values().collect()
}

/// Average power needed to deliver the EV's demand over its parking time (kW).
pub fn demand_rate_kw(ev: &EvSession, step_hours: f64) -> f64 {
    ev.demand_kwh / (ev.parked_steps() as f64 * step_hours)
}

/// Returns the snapshot restricted to the accepted fleet.
pub fn accepted_fleet(snapshot: &ScenarioSnapshot) -> ScenarioSnapshot {
    let verdicts = check_acceptance(snapshot);
    let mut out = snapshot.clone();
    out.fleet = snapshot
        .fleet
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.accepted)
        .map(|(ev, _)| ev.clone())
        .collect();
    out
}

/// Converts a wall-clock time to a step index. Arrivals round up to the next
/// grid point and departures round down, so an EV is never scheduled while
/// absent.
pub fn to_step_grid(hours_since_midnight: f64, step_hours: f64, arrival: bool) -> usize {
    let steps = hours_since_midnight / step_hours;
    if arrival {
        steps.ceil() as usize
    } else {
        steps.floor() as usize
    }
}
