//! Synthetic scenarios: the bundled demo day as in-code fixtures, a small
//! fast instance, and the seeded random instances the oracle check solves.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{
    ChargerSpec, EvSession, MarketSeries, PvForecast, ReserveBoundConvention, ReserveMode,
    ScenarioSnapshot, SiteLimits,
};

/// Scalar defaults shared by the demo scenarios: the minimum SOC, EV power
/// limits, battery and converter efficiencies, penalty and wear rates, grid
/// caps and the 15-minute grid.
pub struct DemoDefaults {
    pub soc_min_kwh: f64,
    pub charge_max_kw: f64,
    pub discharge_min_kw: f64,
    pub eff_battery: f64,
    pub penalty_rate: f64,
    pub wear_rate: f64,
    pub eff_conv: f64,
    pub port_kw: f64,
    pub step_hours: f64,
    pub grid_cap_kw: f64,
}

impl Default for DemoDefaults {
    fn default() -> Self {
        Self {
            soc_min_kwh: 5.0,
            charge_max_kw: 50.0,
            discharge_min_kw: -10.0,
            eff_battery: 0.95,
            penalty_rate: 1.0,
            wear_rate: 0.042,
            eff_conv: 0.96,
            port_kw: 10.0,
            step_hours: 0.25,
            grid_cap_kw: 40.0,
        }
    }
}

fn session(
    id: &str,
    arrive_h: f64,
    depart_h: f64,
    demand: f64,
    arrival_soc: f64,
    soc_max: f64,
    charger: &str,
    d: &DemoDefaults,
) -> EvSession {
    EvSession {
        id: id.into(),
        arrival_step: (arrive_h / d.step_hours).ceil() as usize,
        departure_step: (depart_h / d.step_hours).floor() as usize,
        demand_kwh: demand,
        arrival_soc_kwh: arrival_soc,
        soc_min_kwh: d.soc_min_kwh,
        soc_max_kwh: soc_max,
        charge_max_kw: d.charge_max_kw,
        discharge_min_kw: d.discharge_min_kw,
        eff_charge: d.eff_battery,
        eff_discharge: d.eff_battery,
        penalty_rate: d.penalty_rate,
        charger_id: charger.into(),
    }
}

/// The six-vehicle demo fleet: two pairs sharing a charger plus two solo
/// vehicles, sized like a large sedan, a mid-size and a compact.
pub fn demo_fleet() -> Vec<EvSession> {
    let d = DemoDefaults::default();
    vec![
        session("ev1", 9.0, 17.0, 40.0, 20.0, 85.0, "1", &d),
        session("ev2", 8.5, 16.5, 30.0, 20.0, 60.0, "1", &d),
        session("ev3", 9.5, 17.5, 10.0, 5.0, 24.0, "2", &d),
        session("ev4", 9.0, 17.0, 40.0, 20.0, 85.0, "3", &d),
        session("ev5", 8.5, 16.5, 30.0, 20.0, 60.0, "4", &d),
        session("ev6", 9.5, 17.5, 10.0, 5.0, 24.0, "4", &d),
    ]
}

/// Four demo chargers: 10 kWp PV on 1, 2 and 4; charger 3 has no PV; one
/// DC/DC converter each, two plugs on the shared ones.
pub fn demo_chargers() -> Vec<ChargerSpec> {
    let d = DemoDefaults::default();
    ["1", "2", "3", "4"]
        .iter()
        .map(|&id| ChargerSpec {
            id: id.into(),
            pv_rated_kw: if id == "3" { 0.0 } else { 10.0 },
            inverter_rated_kw: 10.0,
            ev_port_rated_kw: d.port_kw,
            dc_converter_count: 1,
            connection_count: 2,
            eff_conv: d.eff_conv,
            pv_scale: 1.0,
        })
        .collect()
}

/// Hourly buy price in $/kWh: cheap overnight, a mild morning, an afternoon
/// peak and an evening fall-off.
pub fn demo_buy_price(hour: usize) -> f64 {
    match hour {
        0..=5 => 0.028,
        6..=9 => 0.048,
        10..=13 => 0.050,
        14 => 0.060,
        15..=16 => 0.090,
        17..=18 => 0.065,
        19..=21 => 0.042,
        _ => 0.030,
    }
}

fn demo_regup_price(hour: usize) -> f64 {
    match hour {
        15 => 0.030,
        16 => 0.025,
        _ => 0.0125,
    }
}

/// Normalized PV output (kW per kWp) as a smooth daylight bell. The peak is
/// sized so a day integrates to roughly 4.2 kWh per installed kWp.
pub fn demo_pv_normalized(hour_frac: f64) -> f64 {
    let sunrise = 6.5;
    let sunset = 19.5;
    if hour_frac <= sunrise || hour_frac >= sunset {
        return 0.0;
    }
    let x = (hour_frac - sunrise) / (sunset - sunrise) * std::f64::consts::PI;
    0.50 * x.sin().powf(1.5)
}

/// The demo day: the six-vehicle fleet on four chargers over a 96-step,
/// 15-minute grid with shaped prices and a PV bell.
pub fn demo_snapshot() -> ScenarioSnapshot {
    let d = DemoDefaults::default();
    let t = (24.0 / d.step_hours) as usize;
    let mut buy = Vec::with_capacity(t);
    let mut sell = Vec::with_capacity(t);
    let mut regup = Vec::with_capacity(t);
    let mut regdn = Vec::with_capacity(t);
    let mut pv = Vec::with_capacity(t);
    for step in 0..t {
        let hour = (step as f64 * d.step_hours) as usize;
        let b = demo_buy_price(hour);
        buy.push(b);
        sell.push(0.98 * b);
        regup.push(demo_regup_price(hour));
        regdn.push(0.00973);
        pv.push(demo_pv_normalized(step as f64 * d.step_hours));
    }
    ScenarioSnapshot {
        fleet: demo_fleet(),
        chargers: demo_chargers(),
        market: MarketSeries {
            buy_price: buy,
            sell_price: sell,
            regup_price: regup,
            regdn_price: regdn,
        },
        pv: PvForecast {
            normalized_kw_per_kwp: pv,
            uncertainty: 0.10,
        },
        limits: SiteLimits {
            import_cap_kw: vec![d.grid_cap_kw; t],
            export_cap_kw: vec![d.grid_cap_kw; t],
        },
        step_hours: d.step_hours,
        horizon_steps: t,
        taper_charge: 0.9,
        taper_discharge: 0.1,
        wear_rate: d.wear_rate,
        pv_cost: 0.0,
        reserve_mode: ReserveMode::Asymmetric,
        reserve_bound_convention: ReserveBoundConvention::AsPrinted,
        reserves_enabled: true,
        v2g_enabled: true,
        curtailment_enabled: true,
    }
}

/// A deliberately small instance (24 hourly steps, one EV per charger) for
/// fast end-to-end runs. The inverter headroom over the EV port keeps even
/// full-rate charging from the grid feasible.
pub fn mini_snapshot() -> ScenarioSnapshot {
    let t = 24;
    let mut buy = Vec::with_capacity(t);
    let mut pv = Vec::with_capacity(t);
    for hour in 0..t {
        buy.push(match hour {
            0..=6 => 0.020,
            7..=9 => 0.040,
            10..=14 => 0.028,
            15..=17 => 0.075,
            18..=20 => 0.045,
            _ => 0.024,
        });
        pv.push(demo_pv_normalized(hour as f64 + 0.5));
    }
    let sell: Vec<f64> = buy.iter().map(|b| 0.98 * b).collect();
    let chargers = vec![
        ChargerSpec {
            id: "c1".into(),
            pv_rated_kw: 4.0,
            inverter_rated_kw: 12.0,
            ev_port_rated_kw: 10.0,
            dc_converter_count: 1,
            connection_count: 1,
            eff_conv: 0.96,
            pv_scale: 1.0,
        },
        ChargerSpec {
            id: "c2".into(),
            pv_rated_kw: 0.0,
            inverter_rated_kw: 12.0,
            ev_port_rated_kw: 10.0,
            dc_converter_count: 1,
            connection_count: 1,
            eff_conv: 0.96,
            pv_scale: 1.0,
        },
    ];
    let fleet = vec![
        EvSession {
            id: "m1".into(),
            arrival_step: 8,
            departure_step: 16,
            demand_kwh: 16.0,
            arrival_soc_kwh: 10.0,
            soc_min_kwh: 2.0,
            soc_max_kwh: 40.0,
            charge_max_kw: 10.0,
            discharge_min_kw: -5.0,
            eff_charge: 0.95,
            eff_discharge: 0.95,
            penalty_rate: 1.0,
            charger_id: "c1".into(),
        },
        EvSession {
            id: "m2".into(),
            arrival_step: 9,
            departure_step: 15,
            demand_kwh: 6.0,
            arrival_soc_kwh: 6.0,
            soc_min_kwh: 1.0,
            soc_max_kwh: 30.0,
            charge_max_kw: 8.0,
            // nonzero so the printed reserve coupling still allows charging
            discharge_min_kw: -4.0,
            eff_charge: 0.95,
            eff_discharge: 0.95,
            penalty_rate: 1.0,
            charger_id: "c2".into(),
        },
    ];
    ScenarioSnapshot {
        fleet,
        chargers,
        market: MarketSeries {
            buy_price: buy,
            sell_price: sell,
            regup_price: vec![0.0125; t],
            regdn_price: vec![0.00973; t],
        },
        pv: PvForecast {
            normalized_kw_per_kwp: pv,
            uncertainty: 0.10,
        },
        limits: SiteLimits {
            import_cap_kw: vec![30.0; t],
            export_cap_kw: vec![30.0; t],
        },
        step_hours: 1.0,
        horizon_steps: t,
        taper_charge: 0.9,
        taper_discharge: 0.1,
        wear_rate: 0.042,
        pv_cost: 0.0,
        reserve_mode: ReserveMode::Asymmetric,
        reserve_bound_convention: ReserveBoundConvention::AsPrinted,
        reserves_enabled: true,
        v2g_enabled: true,
        curtailment_enabled: true,
    }
}

/// A seeded tiny instance (T ≤ 4, at most two EVs on one charger) whose
/// model keeps few enough free binaries for exhaustive enumeration. Used by
/// the oracle cross-check and the solver property tests.
pub fn random_instance(seed: u64) -> ScenarioSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(2..=4usize);
    let step_hours = [0.25, 0.5, 1.0][rng.gen_range(0..3)];
    let v2g = rng.gen_bool(0.5);
    let reserves = rng.gen_bool(0.7);
    let n_ev = rng.gen_range(1..=2usize);

    let port_kw = [8.0, 10.0][rng.gen_range(0..2)];
    let charger = ChargerSpec {
        id: "c".into(),
        pv_rated_kw: if rng.gen_bool(0.5) { 4.0 } else { 0.0 },
        inverter_rated_kw: 10.0,
        ev_port_rated_kw: port_kw,
        dc_converter_count: rng.gen_range(1..=2usize),
        connection_count: 2,
        eff_conv: 0.96,
        pv_scale: 1.0,
    };

    // Cap the windows so free binaries (2 per present EV-step when V2G is
    // on, 1 otherwise, plus one draw/feed flag per step) stay enumerable.
    let budget = 16usize.saturating_sub(t);
    let per_step = if v2g { 2 } else { 1 };
    let mut presence_left = budget / per_step;

    let mut fleet = Vec::new();
    for k in 0..n_ev {
        let max_len = presence_left.min(t - 1).max(1);
        let len = rng.gen_range(1..=max_len);
        presence_left = presence_left.saturating_sub(len);
        let arrival = rng.gen_range(0..=(t - 1 - len));
        let departure = arrival + len;
        let cap = (charger.dc_converter_count as f64 * port_kw).min(charger.inverter_rated_kw);
        let rate = rng.gen_range(0.2..=0.8) * cap / n_ev as f64;
        let demand = rate * len as f64 * step_hours;
        let arrival_soc = rng.gen_range(2.0..=10.0);
        let soc_min = rng.gen_range(0.0..=arrival_soc);
        let soc_max = arrival_soc + demand + rng.gen_range(1.0..=5.0);
        fleet.push(EvSession {
            id: format!("r{k}"),
            arrival_step: arrival,
            departure_step: departure,
            demand_kwh: demand,
            arrival_soc_kwh: arrival_soc,
            soc_min_kwh: soc_min,
            soc_max_kwh: soc_max,
            charge_max_kw: rng.gen_range(5.0..=12.0),
            discharge_min_kw: if v2g { -rng.gen_range(2.0..=6.0) } else { 0.0 },
            eff_charge: rng.gen_range(0.90..=1.0),
            eff_discharge: rng.gen_range(0.90..=1.0),
            penalty_rate: 1.0,
            charger_id: "c".into(),
        });
    }

    let mut buy: Vec<f64> = Vec::with_capacity(t);
    for _ in 0..t {
        buy.push(rng.gen_range(-0.02..=0.12));
    }
    let sell: Vec<f64> = buy.iter().map(|&b| (0.98 * b).min(b)).collect();
    let regup: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..=0.03)).collect();
    let regdn: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..=0.02)).collect();
    let pv: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let cap = if rng.gen_bool(0.3) { 5.0 } else { 40.0 };

    ScenarioSnapshot {
        fleet,
        chargers: vec![charger],
        market: MarketSeries {
            buy_price: buy,
            sell_price: sell,
            regup_price: regup,
            regdn_price: regdn,
        },
        pv: PvForecast {
            normalized_kw_per_kwp: pv,
            uncertainty: 0.10,
        },
        limits: SiteLimits {
            import_cap_kw: vec![cap; t],
            export_cap_kw: vec![cap; t],
        },
        step_hours,
        horizon_steps: t,
        taper_charge: 0.9,
        taper_discharge: 0.1,
        wear_rate: 0.042,
        pv_cost: 0.0,
        reserve_mode: if reserves && rng.gen_bool(0.25) {
            ReserveMode::Symmetric
        } else {
            ReserveMode::Asymmetric
        },
        reserve_bound_convention: if rng.gen_bool(0.5) {
            ReserveBoundConvention::AsPrinted
        } else {
            ReserveBoundConvention::Swapped
        },
        reserves_enabled: reserves,
        v2g_enabled: v2g,
        curtailment_enabled: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::check_acceptance;

    #[test]
    fn demo_snapshot_is_valid_and_accepted() {
        let snap = demo_snapshot();
        snap.validate().unwrap();
        assert!(check_acceptance(&snap).iter().all(|v| v.accepted));
    }

    #[test]
    fn mini_snapshot_is_valid_and_accepted() {
        let snap = mini_snapshot();
        snap.validate().unwrap();
        assert!(check_acceptance(&snap).iter().all(|v| v.accepted));
    }

    #[test]
    fn random_instances_validate_for_many_seeds() {
        for seed in 0..200 {
            let snap = random_instance(seed);
            snap.validate()
                .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(
                check_acceptance(&snap).iter().all(|v| v.accepted),
                "seed {seed} has rejected EVs"
            );
        }
    }

    #[test]
    fn random_instance_is_deterministic_per_seed() {
        assert_eq!(random_instance(7), random_instance(7));
    }
}
