//! Batch datasets, CSV ingestion and the loan-pricing preprocessing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Price above which a loan record is treated as an outlier.
pub const PRICE_OUTLIER_THRESHOLD: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// `N` trajectories of `(s, a, r, s')` tuples collected by one behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    trajectories: Vec<Vec<Transition>>,
    state_dim: usize,
    action_dim: usize,
    reward_bound: Option<f64>,
}

impl TransitionDataset {
    pub fn new(
        trajectories: Vec<Vec<Transition>>,
        state_dim: usize,
        action_dim: usize,
        reward_bound: Option<f64>,
    ) -> Result<Self> {
        if trajectories.iter().all(|t| t.is_empty()) {
            return Err(Error::Empty("dataset has no transitions".into()));
        }
        if let Some(b) = reward_bound {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidParameter(format!("reward bound must be positive, got {b}")));
            }
        }
        for (i, traj) in trajectories.iter().enumerate() {
            for (t, tr) in traj.iter().enumerate() {
                check_dim(state_dim, tr.state.len())?;
                check_dim(action_dim, tr.action.len())?;
                check_dim(state_dim, tr.next_state.len())?;
                let finite = tr.state.iter().chain(&tr.action).chain(&tr.next_state).all(|v| v.is_finite())
                    && tr.reward.is_finite();
                if !finite {
                    return Err(Error::NonFinite(format!("trajectory {i}, step {t}")));
                }
                if let Some(b) = reward_bound {
                    if tr.reward.abs() > b {
                        return Err(Error::InvalidParameter(format!(
                            "trajectory {i}, step {t}: |reward| {} exceeds bound {b}",
                            tr.reward
                        )));
                    }
                }
            }
        }
        let trajectories = trajectories.into_iter().filter(|t| !t.is_empty()).collect();
        Ok(Self { trajectories, state_dim, action_dim, reward_bound })
    }

    pub fn trajectories(&self) -> &[Vec<Transition>] {
        &self.trajectories
    }

    /// Transitions in trajectory-major order, the row order of every Gram
    /// matrix built from this dataset.
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    /// Common trajectory length, if all trajectories share one.
    pub fn horizon(&self) -> Option<usize> {
        let t = self.trajectories.first()?.len();
        self.trajectories.iter().all(|tr| tr.len() == t).then_some(t)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Declared bound on `|r|`, or the observed maximum when none was given.
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
            .unwrap_or_else(|| self.transitions().map(|t| t.reward.abs()).fold(0.0, f64::max))
    }

    /// Whether each `s'` equals the next tuple's `s` within every trajectory.
    pub fn is_contiguous(&self) -> bool {
        self.trajectories
            .iter()
            .all(|traj| traj.windows(2).all(|w| w[0].next_state == w[1].state))
    }
}

/// Column roles for trajectory CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub trajectory: String,
    pub step: String,
    pub state: Vec<String>,
    pub action: Vec<String>,
    pub reward: String,
}

impl CsvSchema {
    /// `traj_id, t, s0.., a0.., r`.
    pub fn standard(state_dim: usize, action_dim: usize) -> Self {
        Self {
            trajectory: "traj_id".into(),
            step: "t".into(),
            state: (0..state_dim).map(|i| format!("s{i}")).collect(),
            action: (0..action_dim).map(|i| format!("a{i}")).collect(),
            reward: "r".into(),
        }
    }
}

struct Row {
    step: i64,
    state: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse(format!("missing column '{name}'")))
}

fn parse_field(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse(format!("row {row}: missing field '{name}'")))?;
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}: cannot parse '{raw}' in column '{name}'")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("row {row}: column '{name}' is {raw}")));
    }
    Ok(v)
}

/// Read a trajectory CSV. Rows are grouped by trajectory id and ordered by
/// step; `s'` of each tuple is the next row's state, so the last row of each
/// trajectory only contributes its state.
pub fn load_transitions(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TransitionDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Empty("csv file has no header".into()));
    }
    let traj_col = column(&headers, &schema.trajectory)?;
    let step_col = column(&headers, &schema.step)?;
    let state_cols = schema.state.iter().map(|n| column(&headers, n)).collect::<Result<Vec<_>>>()?;
    let action_cols = schema.action.iter().map(|n| column(&headers, n)).collect::<Result<Vec<_>>>()?;
    let reward_col = column(&headers, &schema.reward)?;

    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let row_no = i + 2;
        let record = record?;
        let id = record
            .get(traj_col)
            .ok_or_else(|| Error::Parse(format!("row {row_no}: missing trajectory id")))?
            .trim()
            .to_string();
        let step_raw = record.get(step_col).unwrap_or("").trim();
        let step: i64 = step_raw
            .parse()
            .map_err(|_| Error::Parse(format!("row {row_no}: cannot parse step '{step_raw}'")))?;
        let state = state_cols
            .iter()
            .zip(&schema.state)
            .map(|(&c, n)| parse_field(&record, c, row_no, n))
            .collect::<Result<Vec<_>>>()?;
        let action = action_cols
            .iter()
            .zip(&schema.action)
            .map(|(&c, n)| parse_field(&record, c, row_no, n))
            .collect::<Result<Vec<_>>>()?;
        let reward = parse_field(&record, reward_col, row_no, &schema.reward)?;
        groups.entry(id).or_default().push(Row { step, state, action, reward });
    }
    if groups.is_empty() {
        return Err(Error::Empty("csv file has no data rows".into()));
    }

    // numeric ids sort numerically, anything else lexicographically
    let mut keyed: Vec<(String, Vec<Row>)> = groups.into_iter().collect();
    if keyed.iter().all(|(k, _)| k.parse::<i64>().is_ok()) {
        keyed.sort_by_key(|(k, _)| k.parse::<i64>().unwrap_or_default());
    }

    let mut trajectories = Vec::with_capacity(keyed.len());
    for (id, mut rows) in keyed {
        rows.sort_by_key(|r| r.step);
        if rows.windows(2).any(|w| w[0].step == w[1].step) {
            return Err(Error::Parse(format!("trajectory {id}: duplicate step")));
        }
        let traj: Vec<Transition> = rows
            .windows(2)
            .map(|w| Transition {
                state: w[0].state.clone(),
                action: w[0].action.clone(),
                reward: w[0].reward,
                next_state: w[1].state.clone(),
            })
            .collect();
        trajectories.push(traj);
    }
    TransitionDataset::new(trajectories, schema.state.len(), schema.action.len(), None)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a contiguous dataset in the layout [`load_transitions`] reads. Each
/// trajectory gets one extra terminal row carrying the final `s'` with zero
/// action and reward.
pub fn write_transitions(dataset: &TransitionDataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    check_dim(dataset.state_dim(), schema.state.len())?;
    check_dim(dataset.action_dim(), schema.action.len())?;
    if !dataset.is_contiguous() {
        return Err(Error::InvalidParameter("only contiguous trajectories can be written".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let mut header = vec![schema.trajectory.clone(), schema.step.clone()];
    header.extend(schema.state.iter().cloned());
    header.extend(schema.action.iter().cloned());
    header.push(schema.reward.clone());
    writeln!(out, "{}", header.join(","))?;
    for (i, traj) in dataset.trajectories().iter().enumerate() {
        for (t, tr) in traj.iter().enumerate() {
            let mut fields = vec![i.to_string(), t.to_string()];
            fields.extend(tr.state.iter().map(|v| fmt17(*v)));
            fields.extend(tr.action.iter().map(|v| fmt17(*v)));
            fields.push(fmt17(tr.reward));
            writeln!(out, "{}", fields.join(","))?;
        }
        if let Some(last) = traj.last() {
            let mut fields = vec![i.to_string(), traj.len().to_string()];
            fields.extend(last.next_state.iter().map(|v| fmt17(*v)));
            fields.extend(std::iter::repeat_n(fmt17(0.0), dataset.action_dim()));
            fields.push(fmt17(0.0));
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditRow {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// Per-feature z-score statistics, kept so a learned policy can be applied to
/// new raw records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Whether a constant 1 is appended after the standardized features.
    pub intercept: bool,
}

impl Standardization {
    /// Population (divide-by-n) statistics per column. Constant columns keep
    /// a unit scale so they map to zero.
    pub fn fit(rows: &[Vec<f64>], intercept: bool) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Empty("no rows to standardize".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            check_dim(d, r.len())?;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 { sd } else { 1.0 }
        });
        Ok(Self { mean, std: std.collect(), intercept })
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.mean.len(), raw.len())?;
        let mut out: Vec<f64> = raw
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        if self.intercept {
            out.push(1.0);
        }
        Ok(out)
    }
}

/// Logged single-step decisions `(s0, a0, r0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditDataset {
    rows: Vec<BanditRow>,
    state_dim: usize,
    action_dim: usize,
}

impl BanditDataset {
    pub fn new(rows: Vec<BanditRow>, state_dim: usize, action_dim: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("bandit dataset has no rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            check_dim(state_dim, r.state.len())?;
            check_dim(action_dim, r.action.len())?;
            if !(r.state.iter().chain(&r.action).all(|v| v.is_finite()) && r.reward.is_finite()) {
                return Err(Error::NonFinite(format!("bandit row {i}")));
            }
        }
        Ok(Self { rows, state_dim, action_dim })
    }

    pub fn rows(&self) -> &[BanditRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// View as one-step trajectories. With a zero discount the successor
    /// state never enters a residual, so it is set to the current state.
    pub fn to_transitions(&self) -> TransitionDataset {
        let trajectories = self
            .rows
            .iter()
            .map(|r| {
                vec![Transition {
                    state: r.state.clone(),
                    action: r.action.clone(),
                    reward: r.reward,
                    next_state: r.state.clone(),
                }]
            })
            .collect();
        TransitionDataset { trajectories, state_dim: self.state_dim, action_dim: self.action_dim, reward_bound: None }
    }

    /// Change the units of actions and rewards.
    pub fn rescaled(&self, action_scale: f64, reward_scale: f64) -> Result<Self> {
        if !(action_scale > 0.0 && reward_scale > 0.0) {
            return Err(Error::InvalidParameter("scales must be positive".into()));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| BanditRow {
                state: r.state.clone(),
                action: r.action.iter().map(|a| a * action_scale).collect(),
                reward: r.reward * reward_scale,
            })
            .collect();
        Self::new(rows, self.state_dim, self.action_dim)
    }

    /// First `n` rows after a seeded shuffle.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.shuffle(&mut crate::rng::seeded(seed));
        idx.truncate(n.min(self.rows.len()));
        let rows = idx.into_iter().map(|i| self.rows[i].clone()).collect();
        Self::new(rows, self.state_dim, self.action_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanRecord {
    pub fico: f64,
    pub loan_amount_approved: f64,
    /// Per-period rate the lender itself pays.
    pub prime_rate: f64,
    pub competitor_rate: f64,
    /// Number of payment periods.
    pub term: u32,
    pub monthly_payment: f64,
    pub accepted: bool,
}

impl LoanRecord {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fico, self.loan_amount_approved, self.prime_rate, self.competitor_rate, self.monthly_payment]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("loan record".into()));
        }
        if self.term < 1 {
            return Err(Error::InvalidParameter("loan term must be at least one period".into()));
        }
        if self.prime_rate <= -1.0 || self.competitor_rate <= -1.0 {
            return Err(Error::InvalidParameter("rates must exceed -1".into()));
        }
        if self.monthly_payment < 0.0 {
            return Err(Error::InvalidParameter("payments must be nonnegative".into()));
        }
        Ok(())
    }

    /// Raw pricing features, in the order fico, amount, prime, competitor, term.
    pub fn features(&self) -> [f64; 5] {
        [self.fico, self.loan_amount_approved, self.prime_rate, self.competitor_rate, self.term as f64]
    }

    pub fn price(&self) -> Result<f64> {
        compute_loan_price(self.monthly_payment, self.term, self.prime_rate, self.loan_amount_approved)
    }
}

pub const LOAN_FEATURES: [&str; 5] = ["fico", "loan_amount_approved", "prime_rate", "competitor_rate", "term"];

/// Net present value of the payment stream, discounted at the prime rate,
/// minus the amount lent.
pub fn compute_loan_price(payment: f64, term: u32, prime_rate: f64, loan_amount: f64) -> Result<f64> {
    if term < 1 {
        return Err(Error::InvalidParameter("loan term must be at least one period".into()));
    }
    if prime_rate <= -1.0 {
        return Err(Error::InvalidParameter(format!("prime rate must exceed -1, got {prime_rate}")));
    }
    let v = 1.0 / (1.0 + prime_rate);
    let mut discount = 0.0;
    let mut factor = 1.0;
    for _ in 0..term {
        factor *= v;
        discount += factor;
    }
    Ok(payment * discount - loan_amount)
}

/// Bandit dataset built from loan records plus its preprocessing metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingDataset {
    pub dataset: BanditDataset,
    pub standardization: Standardization,
    pub total_records: usize,
    pub retained_records: usize,
}

impl PricingDataset {
    pub fn retained_fraction(&self) -> f64 {
        self.retained_records as f64 / self.total_records as f64
    }
}

/// States are the standardized pricing features with an intercept, the
/// action is the price and the reward is the price when the offer was
/// accepted. Records priced above [`PRICE_OUTLIER_THRESHOLD`] are dropped.
pub fn build_pricing_dataset(records: &[LoanRecord]) -> Result<PricingDataset> {
    if records.is_empty() {
        return Err(Error::Empty("no loan records".into()));
    }
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        let price = r.price()?;
        if price <= PRICE_OUTLIER_THRESHOLD {
            kept.push((r, price));
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty("every loan record was filtered as an outlier".into()));
    }
    let raw: Vec<Vec<f64>> = kept.iter().map(|(r, _)| r.features().to_vec()).collect();
    let standardization = Standardization::fit(&raw, true)?;
    let rows = kept
        .iter()
        .zip(&raw)
        .map(|((r, price), x)| {
            Ok(BanditRow {
                state: standardization.apply(x)?,
                action: vec![*price],
                reward: if r.accepted { *price } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = BanditDataset::new(rows, LOAN_FEATURES.len() + 1, 1)?;
    Ok(PricingDataset { dataset, standardization, total_records: records.len(), retained_records: kept.len() })
}

fn parse_bool(raw: &str, row: usize) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::Parse(format!("row {row}: cannot parse '{other}' as accepted flag"))),
    }
}

/// Loan CSV with header
/// `fico,loan_amount_approved,prime_rate,competitor_rate,term,monthly_payment,accepted`.
pub fn load_loan_records(path: impl AsRef<Path>) -> Result<Vec<LoanRecord>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let cols: Vec<usize> = LOAN_FEATURES
        .iter()
        .chain(["monthly_payment", "accepted"].iter())
        .map(|n| column(&headers, n))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let f = |k: usize| parse_field(&rec, cols[k], row, if k < 5 { LOAN_FEATURES[k] } else { "monthly_payment" });
        let term_raw = rec.get(cols[4]).unwrap_or("").trim();
        let term: u32 = term_raw
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: cannot parse term '{term_raw}'")))?;
        let record = LoanRecord {
            fico: f(0)?,
            loan_amount_approved: f(1)?,
            prime_rate: f(2)?,
            competitor_rate: f(3)?,
            term,
            monthly_payment: f(5)?,
            accepted: parse_bool(rec.get(cols[6]).unwrap_or(""), row)?,
        };
        record.validate()?;
        out.push(record);
    }
    if out.is_empty() {
        return Err(Error::Empty("loan file has no rows".into()));
    }
    Ok(out)
}

pub fn write_loan_records(records: &[LoanRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(out, "{},monthly_payment,accepted", LOAN_FEATURES.join(","))?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt17(r.fico),
            fmt17(r.loan_amount_approved),
            fmt17(r.prime_rate),
            fmt17(r.competitor_rate),
            r.term,
            fmt17(r.monthly_payment),
            u8::from(r.accepted)
        )?;
    }
    out.flush()?;
    Ok(())
}
