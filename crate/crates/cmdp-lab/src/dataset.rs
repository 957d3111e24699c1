//! Offline dataset generation: i.i.d. synchronous sampling from a reference
//! distribution and single-trajectory asynchronous sampling from a behavior
//! policy, plus a streaming abstraction so solvers never need the whole
//! dataset in memory.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::ensure_ergodic;
use crate::error::{Error, Result};
use crate::model::{CmdpModel, Policy};
use crate::rng::{sample_index, stream, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Synchronous,
    Asynchronous,
}

/// One transition observation.
///
/// `s0` is the independent initial-state draw consumed by the value-gradient
/// estimator. Synchronous datasets store it for exact replay; asynchronous
/// data leaves it to the consumer (`None` here, `-1` on disk), keeping the
/// trajectory format behavior-policy-only.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTuple {
    pub s0: Option<usize>,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    pub u: Vec<f64>,
}

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub mode: DatasetMode,
    pub seed: u64,
    pub n: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_constraints: usize,
    pub gamma: f64,
}

/// What the sampler was pointed at; not recoverable from a file.
#[derive(Debug, Clone)]
pub enum DatasetReference {
    SyncMu(Vec<f64>),
    AsyncPolicy(Policy),
}

#[derive(Debug, Clone)]
pub struct OfflineDataset {
    pub header: DatasetHeader,
    pub tuples: Vec<SampleTuple>,
    pub reference: Option<DatasetReference>,
}

/// Streaming supply of sample tuples. Generators are unbounded; cursors over
/// materialized datasets run dry with [`Error::StreamExhausted`].
pub trait SampleSource {
    fn next_tuple(&mut self) -> Result<SampleTuple>;
    /// Tuples handed out so far.
    fn consumed(&self) -> usize;
    /// Tuples left, when the source is finite.
    fn remaining(&self) -> Option<usize>;
}

/// I.i.d. generator: per tuple draws `s0 ~ rho0`, `(s,a) ~ mu`,
/// `s' ~ P(.|s,a)`, in that order.
pub struct SyncSampler<'m> {
    model: &'m CmdpModel,
    mu: Vec<f64>,
    rng: ChaCha8Rng,
    consumed: usize,
}

impl<'m> SyncSampler<'m> {
    pub fn new(model: &'m CmdpModel, mu: &[f64], seed: u64) -> Result<Self> {
        validate_reference(mu, model.dims().num_pairs())?;
        Ok(SyncSampler {
            model,
            mu: mu.to_vec(),
            rng: stream(seed, StreamId::Dataset),
            consumed: 0,
        })
    }
}

impl SampleSource for SyncSampler<'_> {
    fn next_tuple(&mut self) -> Result<SampleTuple> {
        let na = self.model.num_actions();
        let s0 = sample_index(&mut self.rng, self.model.rho0());
        let pair = sample_index(&mut self.rng, &self.mu);
        let (s, a) = (pair / na, pair % na);
        let s_next = sample_index(&mut self.rng, self.model.p_row(s, a));
        self.consumed += 1;
        Ok(SampleTuple {
            s0: Some(s0),
            s,
            a,
            s_next,
            r: self.model.r(s, a),
            u: (0..self.model.num_constraints())
                .map(|i| self.model.u(i, s, a))
                .collect(),
        })
    }

    fn consumed(&self) -> usize {
        self.consumed
    }

    fn remaining(&self) -> Option<usize> {
        None
    }
}

/// Single-trajectory generator under a behavior policy. The start state is
/// drawn from `rho0`, then `burn_in` transitions are discarded before the
/// first tuple is emitted; consecutive tuples chain.
pub struct AsyncSampler<'m> {
    model: &'m CmdpModel,
    pi_b: Policy,
    rng: ChaCha8Rng,
    current: usize,
    consumed: usize,
}

impl<'m> AsyncSampler<'m> {
    pub fn new(model: &'m CmdpModel, pi_b: &Policy, seed: u64, burn_in: usize) -> Result<Self> {
        if pi_b.num_states() != model.num_states() || pi_b.num_actions() != model.num_actions() {
            return Err(Error::Dimension("behavior policy does not match model".into()));
        }
        ensure_ergodic(model, pi_b)?;
        let mut rng = stream(seed, StreamId::Dataset);
        let mut current = sample_index(&mut rng, model.rho0());
        let mut sampler = AsyncSampler {
            model,
            pi_b: pi_b.clone(),
            rng,
            current: 0,
            consumed: 0,
        };
        for _ in 0..burn_in {
            let (_, _, s_next) = sampler.step(current);
            current = s_next;
        }
        sampler.current = current;
        Ok(sampler)
    }

    fn step(&mut self, s: usize) -> (usize, usize, usize) {
        let a = sample_index(&mut self.rng, self.pi_b.row(s));
        let s_next = sample_index(&mut self.rng, self.model.p_row(s, a));
        (s, a, s_next)
    }
}

impl SampleSource for AsyncSampler<'_> {
    fn next_tuple(&mut self) -> Result<SampleTuple> {
        let (s, a, s_next) = self.step(self.current);
        self.current = s_next;
        self.consumed += 1;
        Ok(SampleTuple {
            s0: None,
            s,
            a,
            s_next,
            r: self.model.r(s, a),
            u: (0..self.model.num_constraints())
                .map(|i| self.model.u(i, s, a))
                .collect(),
        })
    }

    fn consumed(&self) -> usize {
        self.consumed
    }

    fn remaining(&self) -> Option<usize> {
        None
    }
}

/// Cursor over a materialized dataset; hands out tuples in order exactly
/// once.
pub struct DatasetCursor<'d> {
    data: &'d OfflineDataset,
    pos: usize,
}

impl SampleSource for DatasetCursor<'_> {
    fn next_tuple(&mut self) -> Result<SampleTuple> {
        let tuple = self
            .data
            .tuples
            .get(self.pos)
            .cloned()
            .ok_or(Error::StreamExhausted { consumed: self.pos })?;
        self.pos += 1;
        Ok(tuple)
    }

    fn consumed(&self) -> usize {
        self.pos
    }

    fn remaining(&self) -> Option<usize> {
        Some(self.data.tuples.len() - self.pos)
    }
}

/// Draw `n` i.i.d. tuples with `(s,a) ~ mu`.
pub fn sample_sync(model: &CmdpModel, mu: &[f64], n: usize, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let mut sampler = SyncSampler::new(model, mu, seed)?;
    let tuples: Vec<SampleTuple> = (0..n)
        .map(|_| sampler.next_tuple())
        .collect::<Result<_>>()?;
    Ok(OfflineDataset {
        header: header_for(model, DatasetMode::Synchronous, seed, n),
        tuples,
        reference: Some(DatasetReference::SyncMu(mu.to_vec())),
    })
}

/// Record `n` steps of a single trajectory under `pi_b` after discarding
/// `burn_in` transitions.
pub fn sample_async(
    model: &CmdpModel,
    pi_b: &Policy,
    n: usize,
    seed: u64,
    burn_in: usize,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let mut sampler = AsyncSampler::new(model, pi_b, seed, burn_in)?;
    let tuples: Vec<SampleTuple> = (0..n)
        .map(|_| sampler.next_tuple())
        .collect::<Result<_>>()?;
    Ok(OfflineDataset {
        header: header_for(model, DatasetMode::Asynchronous, seed, n),
        tuples,
        reference: Some(DatasetReference::AsyncPolicy(pi_b.clone())),
    })
}

fn header_for(model: &CmdpModel, mode: DatasetMode, seed: u64, n: usize) -> DatasetHeader {
    DatasetHeader {
        mode,
        seed,
        n,
        num_states: model.num_states(),
        num_actions: model.num_actions(),
        num_constraints: model.num_constraints(),
        gamma: model.discount(),
    }
}

fn validate_reference(mu: &[f64], n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::Dimension(format!(
            "reference distribution has {} entries, expected {n}",
            mu.len()
        )));
    }
    if mu.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidArgument(
            "reference distribution entries must lie in [0, 1]".into(),
        ));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "reference distribution sums to {sum}"
        )));
    }
    Ok(())
}

impl OfflineDataset {
    pub fn cursor(&self) -> DatasetCursor<'_> {
        DatasetCursor { data: self, pos: 0 }
    }

    /// Structural audit: index ranges, constraint arity, per-mode `s0`
    /// discipline, and trajectory chaining for asynchronous data.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if self.tuples.len() != h.n {
            return Err(Error::InvalidArgument(format!(
                "header says {} tuples, found {}",
                h.n,
                self.tuples.len()
            )));
        }
        for (t, tuple) in self.tuples.iter().enumerate() {
            if tuple.s >= h.num_states
                || tuple.s_next >= h.num_states
                || tuple.a >= h.num_actions
                || tuple.s0.is_some_and(|s0| s0 >= h.num_states)
            {
                return Err(Error::InvalidArgument(format!("tuple {t} indexes out of range")));
            }
            if tuple.u.len() != h.num_constraints {
                return Err(Error::InvalidArgument(format!(
                    "tuple {t} has {} utility entries, expected {}",
                    tuple.u.len(),
                    h.num_constraints
                )));
            }
            match h.mode {
                DatasetMode::Synchronous if tuple.s0.is_none() => {
                    return Err(Error::InvalidArgument(format!(
                        "synchronous tuple {t} is missing its initial-state draw"
                    )));
                }
                DatasetMode::Asynchronous if tuple.s0.is_some() => {
                    return Err(Error::InvalidArgument(format!(
                        "asynchronous tuple {t} carries an initial-state draw"
                    )));
                }
                _ => {}
            }
        }
        if h.mode == DatasetMode::Asynchronous {
            for (t, w) in self.tuples.windows(2).enumerate() {
                if w[0].s_next != w[1].s {
                    return Err(Error::InvalidArgument(format!(
                        "trajectory breaks between tuples {t} and {}",
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialize as one JSON header line followed by CSV rows
    /// `s0,s,a,s_next,r,u_1..u_I`; `s0` is `-1` in asynchronous files.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        let mut csv = csv::Writer::from_writer(w);
        let mut cols = vec![
            "s0".to_string(),
            "s".to_string(),
            "a".to_string(),
            "s_next".to_string(),
            "r".to_string(),
        ];
        cols.extend((1..=self.header.num_constraints).map(|i| format!("u_{i}")));
        csv.write_record(&cols)?;
        let mut record = Vec::with_capacity(cols.len());
        for tuple in &self.tuples {
            record.clear();
            record.push(tuple.s0.map_or(-1i64, |s| s as i64).to_string());
            record.push(tuple.s.to_string());
            record.push(tuple.a.to_string());
            record.push(tuple.s_next.to_string());
            record.push(format!("{}", tuple.r));
            record.extend(tuple.u.iter().map(|v| format!("{v}")));
            csv.write_record(&record)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(BufWriter::new(file))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let header: DatasetHeader = serde_json::from_str(first.trim_end())?;

        let mut csv = csv::Reader::from_reader(reader);
        let mut tuples = Vec::with_capacity(header.n);
        for row in csv.records() {
            let row = row?;
            let expect = 5 + header.num_constraints;
            if row.len() != expect {
                return Err(Error::InvalidArgument(format!(
                    "dataset row has {} fields, expected {expect}",
                    row.len()
                )));
            }
            let s0_raw: i64 = parse_field(&row, 0)?;
            let s0 = if s0_raw < 0 { None } else { Some(s0_raw as usize) };
            tuples.push(SampleTuple {
                s0,
                s: parse_field(&row, 1)?,
                a: parse_field(&row, 2)?,
                s_next: parse_field(&row, 3)?,
                r: parse_field(&row, 4)?,
                u: (0..header.num_constraints)
                    .map(|i| parse_field(&row, 5 + i))
                    .collect::<Result<_>>()?,
            });
        }
        let data = OfflineDataset {
            header,
            tuples,
            reference: None,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize) -> Result<T> {
    row[idx]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("unparseable field {:?} at column {idx}", &row[idx])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tol::NumericConfig;

    const TOL: &NumericConfig = &NumericConfig::DEFAULT;

    fn fixture() -> CmdpModel {
        let transition = vec![
            0.8, 0.2, // (s0, a0)
            0.2, 0.8, // (s0, a1)
            0.5, 0.5, // (s1, a0)
            1.0, 0.0, // (s1, a1)
        ];
        CmdpModel::new(
            2,
            2,
            0.5,
            transition,
            vec![1.0, 0.25, -0.5, 0.0],
            vec![0.1, -0.2, 0.3, 0.0],
            vec![0.75, 0.25],
            TOL,
        )
        .unwrap()
    }

    #[test]
    fn point_mass_reference_pins_every_pair() {
        let model = fixture();
        let mu = vec![0.0, 1.0, 0.0, 0.0];
        let data = sample_sync(&model, &mu, 200, 7).unwrap();
        for tuple in &data.tuples {
            assert_eq!((tuple.s, tuple.a), (0, 1));
            assert_eq!(tuple.r, 0.25);
            assert_eq!(tuple.u, vec![-0.2]);
            assert!(tuple.s0.is_some());
        }
        data.validate().unwrap();
    }

    #[test]
    fn sync_frequencies_concentrate_around_reference() {
        let model = fixture();
        let mu = vec![0.25; 4];
        let n = 100_000;
        let data = sample_sync(&model, &mu, n, 11).unwrap();
        let mut counts = [0usize; 4];
        for tuple in &data.tuples {
            counts[tuple.s * 2 + tuple.a] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            let sigma = (mu[i] * (1.0 - mu[i]) / n as f64).sqrt();
            assert!(
                (freq - mu[i]).abs() <= 4.0 * sigma,
                "pair {i}: freq {freq} vs {} (4 sigma = {})",
                mu[i],
                4.0 * sigma
            );
        }
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let model = fixture();
        let mu = vec![0.1, 0.2, 0.3, 0.4];
        let mut bytes = Vec::new();
        sample_sync(&model, &mu, 500, 42)
            .unwrap()
            .write_to(&mut bytes)
            .unwrap();
        let mut again = Vec::new();
        sample_sync(&model, &mu, 500, 42)
            .unwrap()
            .write_to(&mut again)
            .unwrap();
        assert_eq!(bytes, again);
        let mut other = Vec::new();
        sample_sync(&model, &mu, 500, 43)
            .unwrap()
            .write_to(&mut other)
            .unwrap();
        assert_ne!(bytes, other);
    }

    #[test]
    fn invalid_reference_is_rejected() {
        let model = fixture();
        assert!(sample_sync(&model, &[0.5, 0.5], 10, 1).is_err());
        assert!(sample_sync(&model, &[0.5, 0.5, 0.5, 0.5], 10, 1).is_err());
        assert!(sample_sync(&model, &[0.25; 4], 0, 1).is_err());
    }

    #[test]
    fn async_trajectory_chains_and_hides_s0() {
        let model = fixture();
        let pi = Policy::uniform(2, 2);
        let data = sample_async(&model, &pi, 1_000, 3, 50).unwrap();
        data.validate().unwrap();
        for w in data.tuples.windows(2) {
            assert_eq!(w[0].s_next, w[1].s);
        }
        assert!(data.tuples.iter().all(|t| t.s0.is_none()));
    }

    #[test]
    fn async_zero_burn_in_starts_at_initial_state() {
        let transition = vec![0.5, 0.5, 0.5, 0.5];
        let model = CmdpModel::new(
            2,
            1,
            0.5,
            transition,
            vec![0.0; 2],
            vec![],
            vec![0.0, 1.0],
            TOL,
        )
        .unwrap();
        let pi = Policy::uniform(2, 1);
        for seed in 0..5 {
            let data = sample_async(&model, &pi, 3, seed, 0).unwrap();
            assert_eq!(data.tuples[0].s, 1, "rho0 is a point mass on state 1");
        }
    }

    #[test]
    fn async_state_frequencies_reach_stationary() {
        let transition = vec![0.5, 0.5, 0.5, 0.5];
        let model = CmdpModel::new(
            2,
            1,
            0.5,
            transition,
            vec![0.0; 2],
            vec![],
            vec![1.0, 0.0],
            TOL,
        )
        .unwrap();
        let pi = Policy::uniform(2, 1);
        let n = 40_000;
        let data = sample_async(&model, &pi, n, 9, 100).unwrap();
        let ones = data.tuples.iter().filter(|t| t.s == 1).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 4.0 / (n as f64).sqrt(), "freq = {freq}");
    }

    #[test]
    fn async_rejects_non_ergodic_chain() {
        let transition = vec![1.0, 0.0, 0.0, 1.0];
        let model = CmdpModel::new(
            2,
            1,
            0.5,
            transition,
            vec![0.0; 2],
            vec![],
            vec![0.5, 0.5],
            TOL,
        )
        .unwrap();
        let pi = Policy::uniform(2, 1);
        match sample_async(&model, &pi, 10, 1, 0) {
            Err(Error::ChainNotErgodic(_)) => {}
            other => panic!("expected ChainNotErgodic, got {other:?}"),
        }
    }

    #[test]
    fn file_round_trip_sync_and_async() {
        let model = fixture();
        let sync = sample_sync(&model, &[0.1, 0.2, 0.3, 0.4], 64, 5).unwrap();
        let mut buf = Vec::new();
        sync.write_to(&mut buf).unwrap();
        let back = OfflineDataset::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.header, sync.header);
        assert_eq!(back.tuples, sync.tuples);

        let pi = Policy::uniform(2, 2);
        let asyn = sample_async(&model, &pi, 64, 5, 10).unwrap();
        let mut buf = Vec::new();
        asyn.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        lines.next().unwrap();
        assert_eq!(lines.next().unwrap(), "s0,s,a,s_next,r,u_1");
        assert!(lines.next().unwrap().starts_with("-1,"));
        let back = OfflineDataset::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.tuples, asyn.tuples);
    }

    #[test]
    fn cursor_walks_once_then_exhausts() {
        let model = fixture();
        let data = sample_sync(&model, &[0.25; 4], 5, 2).unwrap();
        let mut cursor = data.cursor();
        assert_eq!(cursor.remaining(), Some(5));
        for t in 0..5 {
            let tuple = cursor.next_tuple().unwrap();
            assert_eq!(tuple, data.tuples[t]);
        }
        assert_eq!(cursor.consumed(), 5);
        match cursor.next_tuple() {
            Err(Error::StreamExhausted { consumed }) => assert_eq!(consumed, 5),
            other => panic!("expected StreamExhausted, got {other:?}"),
        }
    }

    #[test]
    fn streaming_sampler_matches_materialized_prefix() {
        let model = fixture();
        let mu = vec![0.4, 0.1, 0.3, 0.2];
        let data = sample_sync(&model, &mu, 20, 77).unwrap();
        let mut sampler = SyncSampler::new(&model, &mu, 77).unwrap();
        for t in 0..10 {
            assert_eq!(sampler.next_tuple().unwrap(), data.tuples[t]);
        }
        assert_eq!(sampler.consumed(), 10);
        assert_eq!(sampler.remaining(), None);
    }
}
