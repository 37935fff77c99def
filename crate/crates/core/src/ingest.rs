//! CSV loaders: market prices, PV traces, fleet tables, charger specs and
//! site limits, all resampled onto the uniform step grid.
//!
//! Prices are $/kWh internally; ¢/kWh and $/MWh inputs convert on load.
//! Hourly series (market, limits) expand by zero-order hold; the 1-minute
//! PV trace is normalized by the system rating and averaged per step
//! bucket. Timestamps accept `HH:MM[:SS]` or ISO-8601 date-times; only the
//! time of day matters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{NaiveDateTime, NaiveTime, Timelike};
use thiserror::Error;

use crate::domain::{
    ChargerSpec, DomainError, EvSession, MarketSeries, PvForecast, SiteLimits, to_step_grid,
    validate_charger, validate_session,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} is empty")]
    Empty { path: String },
    #[error("{path}:{line}: {msg}")]
    Row {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path}: gap in timestamps after {after} (expected {expected}, found {found})")]
    Gap {
        path: String,
        after: String,
        expected: String,
        found: String,
    },
    #[error("{path}: expected {expected} hourly rows covering the day, found {found}")]
    WrongRowCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("step length {0} h does not divide the 24 h day evenly")]
    BadStep(f64),
    #[error("fleet file {path} has invalid rows:\n{}", rows.join("\n"))]
    FleetRows { path: String, rows: Vec<String> },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Price unit of an input file; everything converts to $/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriceUnit {
    #[default]
    UsdPerKwh,
    CentsPerKwh,
    UsdPerMwh,
}

impl PriceUnit {
    pub fn to_usd_per_kwh(&self) -> f64 {
        match self {
            PriceUnit::UsdPerKwh => 1.0,
            PriceUnit::CentsPerKwh => 0.01,
            PriceUnit::UsdPerMwh => 0.001,
        }
    }

    pub fn parse(s: &str) -> Option<PriceUnit> {
        match s {
            "usd-kwh" => Some(PriceUnit::UsdPerKwh),
            "cents-kwh" => Some(PriceUnit::CentsPerKwh),
            "usd-mwh" => Some(PriceUnit::UsdPerMwh),
            _ => None,
        }
    }
}

/// A loaded value plus any non-fatal warnings the loader emitted.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Steps per day for a given step length, or an error when the grid does
/// not tile 24 hours.
pub fn steps_per_day(step_hours: f64) -> Result<usize, IngestError> {
    if step_hours <= 0.0 {
        return Err(IngestError::BadStep(step_hours));
    }
    let steps = 24.0 / step_hours;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(IngestError::BadStep(step_hours));
    }
    Ok(steps.round() as usize)
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn row_err(path: &Path, line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Row {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Hours since midnight from `HH:MM[:SS]`, an ISO-8601 date-time, or a bare
/// hour count like `900` meaning 09:00 (hours·100 + minutes).
fn parse_clock(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(t) = NaiveTime::parse_from_str(s, "%H:%M:%S") {
        return Some(t.num_seconds_from_midnight() as f64 / 3600.0);
    }
    if let Ok(t) = NaiveTime::parse_from_str(s, "%H:%M") {
        return Some(t.num_seconds_from_midnight() as f64 / 3600.0);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.time().num_seconds_from_midnight() as f64 / 3600.0);
        }
    }
    // military-style clock: 830 -> 8.5 h, 1700 -> 17 h
    if let Ok(n) = s.parse::<u32>() {
        let (h, m) = (n / 100, n % 100);
        if h < 24 && m < 60 {
            return Some(h as f64 + m as f64 / 60.0);
        }
    }
    None
}

struct CsvTable {
    headers: Vec<String>,
    /// (1-based line number, fields)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv(path: &Path) -> Result<CsvTable, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| row_err(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| row_err(path, line, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, record.iter().map(|f| f.to_string()).collect()));
    }
    if rows.is_empty() {
        return Err(IngestError::Empty {
            path: path.display().to_string(),
        });
    }
    Ok(CsvTable { headers, rows })
}

impl CsvTable {
    fn column(&self, path: &Path, name: &str) -> Result<usize, IngestError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                path: path.display().to_string(),
                column: name.to_string(),
            })
    }

    fn optional_column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn field<'a>(
        &'a self,
        path: &Path,
        row: &'a (usize, Vec<String>),
        col: usize,
    ) -> Result<&'a str, IngestError> {
        row.1
            .get(col)
            .map(|s| s.as_str())
            .ok_or_else(|| row_err(path, row.0, format!("missing field {col}")))
    }

    fn number(
        &self,
        path: &Path,
        row: &(usize, Vec<String>),
        col: usize,
    ) -> Result<f64, IngestError> {
        let raw = self.field(path, row, col)?;
        raw.parse::<f64>()
            .map_err(|_| row_err(path, row.0, format!("'{raw}' is not a number")))
    }
}

/// Loads hourly market prices and expands them to the step grid by
/// zero-order hold. A missing `spp_sell` column is filled with
/// `sell_factor · spp_buy`; the sell price is clamped to never exceed the
/// buy price (relevant for negative prices).
pub fn load_market(
    path: &Path,
    step_hours: f64,
    sell_factor: f64,
    unit: PriceUnit,
) -> Result<MarketSeries, IngestError> {
    let steps = steps_per_day(step_hours)?;
    let table = read_csv(path)?;
    let ts = table.column(path, "timestamp")?;
    let buy_col = table.column(path, "spp_buy")?;
    let up_col = table.column(path, "regup")?;
    let dn_col = table.column(path, "regdn")?;
    let sell_col = table.optional_column("spp_sell");
    let scale = unit.to_usd_per_kwh();

    let mut hours: Vec<(f64, f64, f64, f64, Option<f64>)> = Vec::new();
    for row in &table.rows {
        let clock = table.field(path, row, ts)?;
        let hour = parse_clock(clock)
            .ok_or_else(|| row_err(path, row.0, format!("'{clock}' is not a timestamp")))?;
        let buy = table.number(path, row, buy_col)? * scale;
        let up = table.number(path, row, up_col)? * scale;
        let dn = table.number(path, row, dn_col)? * scale;
        let sell = match sell_col {
            Some(c) if !table.field(path, row, c)?.is_empty() => {
                Some(table.number(path, row, c)? * scale)
            }
            _ => None,
        };
        hours.push((hour, buy, up, dn, sell));
    }
    for (i, window) in hours.windows(2).enumerate() {
        let (a, b) = (window[0].0, window[1].0);
        if (b - a - 1.0).abs() > 1e-9 {
            return Err(IngestError::Gap {
                path: path.display().to_string(),
                after: format!("{:02}:00", a as u32),
                expected: format!("{:02}:00", a as u32 + 1),
                found: format!("{b:.2} h (row {})", i + 2),
            });
        }
    }
    if hours[0].0.abs() > 1e-9 {
        return Err(IngestError::Gap {
            path: path.display().to_string(),
            after: "start of day".into(),
            expected: "00:00".into(),
            found: format!("{:.2} h", hours[0].0),
        });
    }
    if hours.len() != 24 {
        return Err(IngestError::WrongRowCount {
            path: path.display().to_string(),
            expected: 24,
            found: hours.len(),
        });
    }

    let per_hour = steps / 24;
    let mut series = MarketSeries::default();
    for &(_, buy, up, dn, sell) in &hours {
        let sell = sell.unwrap_or(sell_factor * buy).min(buy);
        for _ in 0..per_hour {
            series.buy_price.push(buy);
            series.sell_price.push(sell);
            series.regup_price.push(up);
            series.regdn_price.push(dn);
        }
    }
    Ok(series)
}

/// Writes a market series back out as 24 hourly rows (the inverse of
/// [`load_market`] for well-formed input).
pub fn write_market_hourly(series: &MarketSeries, step_hours: f64) -> Result<String, IngestError> {
    let steps = steps_per_day(step_hours)?;
    let per_hour = steps / 24;
    let mut out = String::from("timestamp,spp_buy,regup,regdn,spp_sell\n");
    for h in 0..24 {
        let i = h * per_hour;
        let _ = writeln!(
            out,
            "{:02}:00,{},{},{},{}",
            h,
            series.buy_price[i],
            series.regup_price[i],
            series.regdn_price[i],
            series.sell_price[i]
        );
    }
    Ok(out)
}

/// Loads a 1-minute PV trace for a system of `rated_kwp`, normalizes it to
/// kW per kWp and averages each step bucket. Missing minutes average over
/// the present samples with a warning; negative power is an error.
pub fn load_pv(
    path: &Path,
    rated_kwp: f64,
    step_hours: f64,
    uncertainty: f64,
) -> Result<Loaded<PvForecast>, IngestError> {
    assert!(rated_kwp > 0.0, "rated_kwp must be positive");
    let steps = steps_per_day(step_hours)?;
    let table = read_csv(path)?;
    let ts = table.column(path, "timestamp")?;
    let p_col = table.column(path, "power_kw")?;

    let minutes_per_step = step_hours * 60.0;
    let mut sums = vec![0.0f64; steps];
    let mut counts = vec![0usize; steps];
    let mut last_minute: Option<f64> = None;
    for row in &table.rows {
        let clock = table.field(path, row, ts)?;
        let hour = parse_clock(clock)
            .ok_or_else(|| row_err(path, row.0, format!("'{clock}' is not a timestamp")))?;
        let minute = hour * 60.0;
        if let Some(prev) = last_minute {
            if minute <= prev + 1e-9 {
                return Err(row_err(path, row.0, "timestamps must be strictly increasing"));
            }
        }
        last_minute = Some(minute);
        let power = table.number(path, row, p_col)?;
        if power < 0.0 {
            return Err(row_err(path, row.0, format!("negative PV power {power}")));
        }
        let bucket = ((minute / minutes_per_step).floor() as usize).min(steps - 1);
        sums[bucket] += power / rated_kwp;
        counts[bucket] += 1;
    }

    let expected = minutes_per_step.round() as usize;
    let mut warnings = Vec::new();
    let mut normalized = Vec::with_capacity(steps);
    for (i, (&sum, &count)) in sums.iter().zip(&counts).enumerate() {
        if count == 0 {
            warnings.push(format!("step {i}: no PV samples, assuming 0"));
            normalized.push(0.0);
        } else {
            if count < expected {
                warnings.push(format!(
                    "step {i}: {count}/{expected} PV samples, averaging the present ones"
                ));
            }
            normalized.push(sum / count as f64);
        }
    }
    Ok(Loaded {
        value: PvForecast {
            normalized_kw_per_kwp: normalized,
            uncertainty,
        },
        warnings,
    })
}

/// Loads the fleet table. Times accept `HH:MM` or ISO-8601; arrivals round
/// up to the grid and departures round down. Every invalid row is reported.
pub fn load_fleet(
    path: &Path,
    step_hours: f64,
    horizon_steps: usize,
) -> Result<Vec<EvSession>, IngestError> {
    let table = read_csv(path)?;
    let cols: Vec<usize> = [
        "id",
        "arrival",
        "departure",
        "demand_kwh",
        "arrival_soc_kwh",
        "soc_min_kwh",
        "soc_max_kwh",
        "charge_max_kw",
        "discharge_min_kw",
        "eff_charge",
        "eff_discharge",
        "penalty_rate",
        "charger_id",
    ]
    .iter()
    .map(|name| table.column(path, name))
    .collect::<Result<_, _>>()?;

    let mut fleet = Vec::new();
    let mut bad_rows = Vec::new();
    for row in &table.rows {
        match parse_fleet_row(&table, path, row, &cols, step_hours, horizon_steps) {
            Ok(ev) => fleet.push(ev),
            Err(e) => bad_rows.push(e.to_string()),
        }
    }
    if !bad_rows.is_empty() {
        return Err(IngestError::FleetRows {
            path: path.display().to_string(),
            rows: bad_rows,
        });
    }
    Ok(fleet)
}

fn parse_fleet_row(
    table: &CsvTable,
    path: &Path,
    row: &(usize, Vec<String>),
    cols: &[usize],
    step_hours: f64,
    horizon_steps: usize,
) -> Result<EvSession, IngestError> {
    let clock = |idx: usize| -> Result<f64, IngestError> {
        let raw = table.field(path, row, cols[idx])?;
        parse_clock(raw).ok_or_else(|| row_err(path, row.0, format!("'{raw}' is not a time")))
    };
    let arrival_h = clock(1)?;
    let departure_h = clock(2)?;
    let arrival_step = to_step_grid(arrival_h, step_hours, true);
    let departure_step = to_step_grid(departure_h, step_hours, false);
    if departure_step <= arrival_step {
        return Err(row_err(
            path,
            row.0,
            format!(
                "departure {departure_h} h rounds to step {departure_step}, at or before arrival step {arrival_step}"
            ),
        ));
    }
    let ev = EvSession {
        id: table.field(path, row, cols[0])?.to_string(),
        arrival_step,
        departure_step,
        demand_kwh: table.number(path, row, cols[3])?,
        arrival_soc_kwh: table.number(path, row, cols[4])?,
        soc_min_kwh: table.number(path, row, cols[5])?,
        soc_max_kwh: table.number(path, row, cols[6])?,
        charge_max_kw: table.number(path, row, cols[7])?,
        discharge_min_kw: table.number(path, row, cols[8])?,
        eff_charge: table.number(path, row, cols[9])?,
        eff_discharge: table.number(path, row, cols[10])?,
        penalty_rate: table.number(path, row, cols[11])?,
        charger_id: table.field(path, row, cols[12])?.to_string(),
    };
    validate_session(&ev, horizon_steps).map_err(|e| row_err(path, row.0, e.to_string()))?;
    Ok(ev)
}

/// Loads charger specifications.
pub fn load_chargers(path: &Path) -> Result<Vec<ChargerSpec>, IngestError> {
    let table = read_csv(path)?;
    let cols: Vec<usize> = [
        "id",
        "pv_rated_kw",
        "inverter_rated_kw",
        "ev_port_rated_kw",
        "dc_converter_count",
        "connection_count",
        "eff_conv",
        "pv_scale",
    ]
    .iter()
    .map(|name| table.column(path, name))
    .collect::<Result<_, _>>()?;
    let mut chargers = Vec::new();
    for row in &table.rows {
        let charger = ChargerSpec {
            id: table.field(path, row, cols[0])?.to_string(),
            pv_rated_kw: table.number(path, row, cols[1])?,
            inverter_rated_kw: table.number(path, row, cols[2])?,
            ev_port_rated_kw: table.number(path, row, cols[3])?,
            dc_converter_count: table.number(path, row, cols[4])? as usize,
            connection_count: table.number(path, row, cols[5])? as usize,
            eff_conv: table.number(path, row, cols[6])?,
            pv_scale: table.number(path, row, cols[7])?,
        };
        validate_charger(&charger).map_err(|e| row_err(path, row.0, e.to_string()))?;
        chargers.push(charger);
    }
    Ok(chargers)
}

/// Loads hourly site limits and expands them to the step grid, mirroring
/// the market loader's cadence rules.
pub fn load_limits(path: &Path, step_hours: f64) -> Result<SiteLimits, IngestError> {
    let steps = steps_per_day(step_hours)?;
    let table = read_csv(path)?;
    let ts = table.column(path, "timestamp")?;
    let imp_col = table.column(path, "import_cap_kw")?;
    let exp_col = table.column(path, "export_cap_kw")?;
    let mut hours = Vec::new();
    for row in &table.rows {
        let clock = table.field(path, row, ts)?;
        let hour = parse_clock(clock)
            .ok_or_else(|| row_err(path, row.0, format!("'{clock}' is not a timestamp")))?;
        let imp = table.number(path, row, imp_col)?;
        let exp = table.number(path, row, exp_col)?;
        if imp < 0.0 || exp < 0.0 {
            return Err(row_err(path, row.0, "limits must be nonnegative"));
        }
        hours.push((hour, imp, exp));
    }
    if hours.len() != 24 {
        return Err(IngestError::WrongRowCount {
            path: path.display().to_string(),
            expected: 24,
            found: hours.len(),
        });
    }
    let per_hour = steps / 24;
    let mut limits = SiteLimits::default();
    for &(_, imp, exp) in &hours {
        for _ in 0..per_hour {
            limits.import_cap_kw.push(imp);
            limits.export_cap_kw.push(exp);
        }
    }
    Ok(limits)
}

/// Constant site limits for runs without a limits file.
pub fn constant_limits(import_kw: f64, export_kw: f64, steps: usize) -> SiteLimits {
    SiteLimits {
        import_cap_kw: vec![import_kw; steps],
        export_cap_kw: vec![export_kw; steps],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn temp_csv(content: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn hourly_market(buy: &dyn Fn(usize) -> f64) -> String {
        let mut s = String::from("timestamp,spp_buy,regup,regdn\n");
        for h in 0..24 {
            s.push_str(&format!("{h:02}:00,{},0.0125,0.00973\n", buy(h)));
        }
        s
    }

    #[test]
    fn market_zero_order_hold_expands_each_hour() {
        let f = temp_csv(&hourly_market(&|h| 0.01 + h as f64 * 0.001));
        let series = load_market(f.path(), 0.25, 0.98, PriceUnit::UsdPerKwh).unwrap();
        assert_eq!(series.len(), 96);
        for h in 0..24 {
            let expect = 0.01 + h as f64 * 0.001;
            for s in 0..4 {
                assert_eq!(series.buy_price[h * 4 + s], expect, "hour {h} step {s}");
            }
        }
    }

    #[test]
    fn market_sell_fills_from_factor() {
        let f = temp_csv(&hourly_market(&|_| 0.039));
        let series = load_market(f.path(), 0.25, 0.98, PriceUnit::UsdPerKwh).unwrap();
        assert!((series.sell_price[0] - 0.03822).abs() < 1e-15);
    }

    #[test]
    fn market_sell_never_exceeds_buy_for_negative_prices() {
        let f = temp_csv(&hourly_market(&|h| if h == 3 { -0.01 } else { 0.02 }));
        let series = load_market(f.path(), 1.0, 0.98, PriceUnit::UsdPerKwh).unwrap();
        assert_eq!(series.sell_price[3], -0.01);
        assert!(series.sell_price[3] <= series.buy_price[3]);
    }

    #[test]
    fn market_gap_is_a_hard_error() {
        let mut rows = String::from("timestamp,spp_buy,regup,regdn\n");
        for h in 0..24 {
            if h == 7 {
                continue;
            }
            rows.push_str(&format!("{h:02}:00,0.03,0.01,0.01\n"));
        }
        let f = temp_csv(&rows);
        let err = load_market(f.path(), 0.25, 0.98, PriceUnit::UsdPerKwh).unwrap_err();
        match err {
            IngestError::Gap { after, .. } => assert_eq!(after, "06:00"),
            other => panic!("expected a gap error, got {other}"),
        }
    }

    #[test]
    fn market_malformed_row_reports_the_line() {
        let mut rows = hourly_market(&|_| 0.03);
        rows = rows.replace("05:00,0.03", "05:00,not-a-price");
        let f = temp_csv(&rows);
        let err = load_market(f.path(), 0.25, 0.98, PriceUnit::UsdPerKwh).unwrap_err();
        match err {
            IngestError::Row { line, .. } => assert_eq!(line, 7), // header + 6 rows
            other => panic!("expected a row error, got {other}"),
        }
    }

    #[test]
    fn empty_market_file_errors() {
        let f = temp_csv("timestamp,spp_buy,regup,regdn\n");
        assert!(matches!(
            load_market(f.path(), 0.25, 0.98, PriceUnit::UsdPerKwh),
            Err(IngestError::Empty { .. })
        ));
    }

    #[test]
    fn cents_and_mwh_units_convert() {
        let f = temp_csv(&hourly_market(&|_| 3.9));
        let cents = load_market(f.path(), 1.0, 0.98, PriceUnit::CentsPerKwh).unwrap();
        assert!((cents.buy_price[0] - 0.039).abs() < 1e-15);
        let mwh = load_market(f.path(), 1.0, 0.98, PriceUnit::UsdPerMwh).unwrap();
        assert!((mwh.buy_price[0] - 0.0039).abs() < 1e-15);
    }

    #[test]
    fn market_round_trips_through_serialization() {
        let f = temp_csv(&hourly_market(&|h| 0.0137 + 0.003 * h as f64));
        let series = load_market(f.path(), 0.25, 0.98, PriceUnit::UsdPerKwh).unwrap();
        let text = write_market_hourly(&series, 0.25).unwrap();
        let g = temp_csv(&text);
        let again = load_market(g.path(), 0.25, 0.98, PriceUnit::UsdPerKwh).unwrap();
        assert_eq!(series, again);
    }

    fn minute_pv(rows: &[(String, f64)]) -> String {
        let mut s = String::from("timestamp,power_kw\n");
        for (ts, p) in rows {
            s.push_str(&format!("{ts},{p}\n"));
        }
        s
    }

    #[test]
    fn pv_self_normalizes_to_one() {
        let rows: Vec<(String, f64)> = (0..1440)
            .map(|m| (format!("{:02}:{:02}:00", m / 60, m % 60), 11.1))
            .collect();
        let f = temp_csv(&minute_pv(&rows));
        let pv = load_pv(f.path(), 11.1, 0.25, 0.10).unwrap();
        assert!(pv.warnings.is_empty());
        assert_eq!(pv.value.normalized_kw_per_kwp.len(), 96);
        for (i, v) in pv.value.normalized_kw_per_kwp.iter().enumerate() {
            assert!((v - 1.0).abs() < 1e-12, "step {i}: {v}");
        }
    }

    #[test]
    fn pv_missing_minutes_average_with_warning() {
        // One 15-minute bucket with only 5 of 15 samples present.
        let rows: Vec<(String, f64)> = (0..5)
            .map(|m| (format!("00:{m:02}:00"), 1.0))
            .collect();
        let f = temp_csv(&minute_pv(&rows));
        let pv = load_pv(f.path(), 1.0, 0.25, 0.10).unwrap();
        assert!((pv.value.normalized_kw_per_kwp[0] - 1.0).abs() < 1e-12);
        assert!(pv.warnings.iter().any(|w| w.contains("5/15")));
    }

    #[test]
    fn pv_bucket_mean_of_varying_samples() {
        let samples = [0.8, 1.0, 1.2, 1.0, 0.9, 1.1, 1.05, 0.95, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let rows: Vec<(String, f64)> = samples
            .iter()
            .enumerate()
            .map(|(m, &p)| (format!("00:{m:02}:00"), p))
            .collect();
        let f = temp_csv(&minute_pv(&rows));
        let pv = load_pv(f.path(), 1.0, 0.25, 0.10).unwrap();
        let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((pv.value.normalized_kw_per_kwp[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn pv_negative_power_is_an_error() {
        let f = temp_csv(&minute_pv(&[("00:00:00".into(), -0.5)]));
        assert!(matches!(
            load_pv(f.path(), 1.0, 0.25, 0.10),
            Err(IngestError::Row { .. })
        ));
    }

    #[test]
    fn pv_resampling_conserves_energy() {
        // Full day of varying 1-minute samples: sum(bucket mean * dt) must
        // match sum(power / 60) when no samples are missing.
        let rows: Vec<(String, f64)> = (0..1440)
            .map(|m| {
                let p = (m as f64 / 90.0).sin().abs() * 5.0;
                (format!("{:02}:{:02}:00", m / 60, m % 60), p)
            })
            .collect();
        let total_minute: f64 = rows.iter().map(|(_, p)| p / 60.0).sum();
        let f = temp_csv(&minute_pv(&rows));
        let pv = load_pv(f.path(), 1.0, 0.25, 0.10).unwrap();
        assert!(pv.warnings.is_empty());
        let total_bucket: f64 = pv
            .value
            .normalized_kw_per_kwp
            .iter()
            .map(|v| v * 0.25)
            .sum();
        assert!(
            (total_bucket - total_minute).abs() <= 1e-9 * total_minute.abs().max(1.0),
            "{total_bucket} vs {total_minute}"
        );
    }

    const FLEET_HEADER: &str = "id,arrival,departure,demand_kwh,arrival_soc_kwh,soc_min_kwh,soc_max_kwh,charge_max_kw,discharge_min_kw,eff_charge,eff_discharge,penalty_rate,charger_id\n";

    #[test]
    fn fleet_row_parses_and_grid_aligns() {
        let csv = format!(
            "{FLEET_HEADER}ev1,09:00,17:00,40,20,5,85,50,-10,0.95,0.95,1.0,1\n"
        );
        let f = temp_csv(&csv);
        let fleet = load_fleet(f.path(), 0.25, 96).unwrap();
        assert_eq!(fleet.len(), 1);
        let ev = &fleet[0];
        assert_eq!((ev.arrival_step, ev.departure_step), (36, 68));
        assert_eq!(ev.demand_kwh, 40.0);
        assert_eq!(ev.soc_max_kwh, 85.0);
        assert_eq!(ev.charger_id, "1");
    }

    #[test]
    fn fleet_departure_before_arrival_is_reported_per_row() {
        let csv = format!(
            "{FLEET_HEADER}ok,09:00,17:00,10,20,5,85,50,-10,0.95,0.95,1.0,1\nbad,17:00,09:00,10,20,5,85,50,-10,0.95,0.95,1.0,1\n"
        );
        let f = temp_csv(&csv);
        let err = load_fleet(f.path(), 0.25, 96).unwrap_err();
        match err {
            IngestError::FleetRows { rows, .. } => {
                assert_eq!(rows.len(), 1);
                assert!(rows[0].contains(":3:"), "{rows:?}");
            }
            other => panic!("expected fleet row errors, got {other}"),
        }
    }

    #[test]
    fn chargers_load_and_validate() {
        let csv = "id,pv_rated_kw,inverter_rated_kw,ev_port_rated_kw,dc_converter_count,connection_count,eff_conv,pv_scale\n1,10,10,10,1,2,0.96,1.0\n";
        let f = temp_csv(csv);
        let chargers = load_chargers(f.path()).unwrap();
        assert_eq!(chargers.len(), 1);
        assert_eq!(chargers[0].dc_converter_count, 1);
    }

    #[test]
    fn limits_expand_like_market() {
        let mut rows = String::from("timestamp,import_cap_kw,export_cap_kw\n");
        for h in 0..24 {
            rows.push_str(&format!("{h:02}:00,40,40\n"));
        }
        let f = temp_csv(&rows);
        let limits = load_limits(f.path(), 0.25).unwrap();
        assert_eq!(limits.import_cap_kw.len(), 96);
        assert!(limits.import_cap_kw.iter().all(|&x| x == 40.0));
    }

    #[test]
    fn military_clock_times_parse() {
        assert_eq!(parse_clock("900"), Some(9.0));
        assert_eq!(parse_clock("830"), Some(8.5));
        assert_eq!(parse_clock("1730"), Some(17.5));
        assert_eq!(parse_clock("2014-06-01T08:30:00"), Some(8.5));
    }
}
