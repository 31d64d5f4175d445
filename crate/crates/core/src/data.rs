//! Survival data for several populations sharing one predictor set.

use nalgebra::DMatrix;

use crate::error::{LrCoxError, Result};

/// Subjects sharing one observed time, as a slice of the descending-time order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TimeGroup {
    pub time: f64,
    pub start: usize,
    pub end: usize,
    pub events: usize,
}

/// One population's right-censored observations.
///
/// Subjects keep their input order; the descending-time order and the grouping
/// of tied times are computed once here and reused by every likelihood pass.
#[derive(Debug, Clone)]
pub struct Population {
    name: String,
    time: Vec<f64>,
    status: Vec<bool>,
    x: DMatrix<f64>,
    order: Vec<usize>,
    groups: Vec<TimeGroup>,
}

impl Population {
    pub fn new(
        name: impl Into<String>,
        time: Vec<f64>,
        status: Vec<bool>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let n = time.len();
        if status.len() != n || x.nrows() != n {
            return Err(LrCoxError::DimensionMismatch(format!(
                "population `{name}`: {n} times, {} statuses, {} covariate rows",
                status.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(LrCoxError::DimensionMismatch(format!(
                "population `{name}` has no predictors"
            )));
        }
        if let Some(t) = time.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(LrCoxError::Data(format!(
                "population `{name}`: times must be finite and nonnegative, found {t}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LrCoxError::Data(format!(
                "population `{name}`: covariates must be finite"
            )));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        while start < n {
            let t = time[order[start]];
            let mut end = start;
            let mut events = 0;
            while end < n && time[order[end]] == t {
                events += usize::from(status[order[end]]);
                end += 1;
            }
            groups.push(TimeGroup {
                time: t,
                start,
                end,
                events,
            });
            start = end;
        }

        Ok(Self {
            name,
            time,
            status,
            x,
            order,
            groups,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn events(&self) -> usize {
        self.status.iter().filter(|&&d| d).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        1.0 - self.events() as f64 / self.n() as f64
    }

    /// Subject indices sorted by descending time (ties by input index).
    pub fn descending_order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn groups(&self) -> &[TimeGroup] {
        &self.groups
    }

    /// `d_i`: number of observed failures sharing subject i's time.
    pub fn tie_counts(&self) -> Vec<usize> {
        let mut d = vec![0; self.n()];
        for g in &self.groups {
            for &k in &self.order[g.start..g.end] {
                d[k] = g.events;
            }
        }
        d
    }

    /// Subjects at risk at subject `i`'s time: `{k : y_k >= y_i}`.
    pub fn risk_set(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&k| self.time[k] >= self.time[i]).collect()
    }

    /// New population restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let time = indices.iter().map(|&i| self.time[i]).collect();
        let status = indices.iter().map(|&i| self.status[i]).collect();
        let x = self.x.select_rows(indices.iter());
        Population::new(self.name.clone(), time, status, x)
    }

    /// Same outcomes with a different covariate matrix (same row count).
    pub fn with_covariates(&self, x: DMatrix<f64>) -> Result<Self> {
        Population::new(self.name.clone(), self.time.clone(), self.status.clone(), x)
    }
}

/// Populations observed on a shared, ordered set of predictors.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    populations: Vec<Population>,
    predictor_names: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(populations: Vec<Population>, predictor_names: Vec<String>) -> Result<Self> {
        if populations.is_empty() {
            return Err(LrCoxError::Data("dataset has no populations".into()));
        }
        let p = predictor_names.len();
        for pop in &populations {
            if pop.p() != p {
                return Err(LrCoxError::DimensionMismatch(format!(
                    "population `{}` has {} predictors, expected {p}",
                    pop.name(),
                    pop.p()
                )));
            }
        }
        Ok(Self {
            populations,
            predictor_names,
        })
    }

    /// Predictors named `x1..xp`.
    pub fn with_default_names(populations: Vec<Population>) -> Result<Self> {
        let p = populations.first().map(|pop| pop.p()).unwrap_or(0);
        Self::new(populations, default_predictor_names(p))
    }

    pub fn populations(&self) -> &[Population] {
        &self.populations
    }

    pub fn population(&self, j: usize) -> &Population {
        &self.populations[j]
    }

    pub fn num_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn p(&self) -> usize {
        self.predictor_names.len()
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.populations.iter().map(Population::n).collect()
    }

    /// Per-population subsets (`indices[j]` applies to population j).
    pub fn subset(&self, indices: &[Vec<usize>]) -> Result<Self> {
        if indices.len() != self.populations.len() {
            return Err(LrCoxError::DimensionMismatch(
                "one index list per population is required".into(),
            ));
        }
        let pops = self
            .populations
            .iter()
            .zip(indices)
            .map(|(pop, idx)| pop.subset(idx))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pops, self.predictor_names.clone())
    }
}

pub fn default_predictor_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("x{k}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Population {
        let x = DMatrix::from_row_slice(5, 1, &[0.1, 0.2, 0.3, 0.4, 0.5]);
        Population::new(
            "toy",
            vec![2.0, 1.0, 2.0, 3.0, 2.0],
            vec![true, true, false, false, true],
            x,
        )
        .unwrap()
    }

    #[test]
    fn groups_and_ties() {
        let pop = toy();
        assert_eq!(pop.descending_order(), &[3, 0, 2, 4, 1]);
        assert_eq!(pop.groups().len(), 3);
        assert_eq!(pop.tie_counts(), vec![2, 1, 2, 0, 2]);
        assert_eq!(pop.events(), 3);
    }

    #[test]
    fn risk_sets_are_nested_suffixes() {
        let pop = toy();
        for i in 0..pop.n() {
            let rs = pop.risk_set(i);
            assert!(rs.contains(&i));
            let pos = pop.descending_order().iter().position(|&k| k == i).unwrap();
            let group = pop
                .groups()
                .iter()
                .find(|g| g.start <= pos && pos < g.end)
                .unwrap();
            let mut prefix: Vec<usize> = pop.descending_order()[..group.end].to_vec();
            prefix.sort_unstable();
            assert_eq!(rs, prefix);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::zeros(2, 1);
        assert!(Population::new("a", vec![1.0, -1.0], vec![true, true], x.clone()).is_err());
        assert!(Population::new("a", vec![1.0], vec![true, true], x.clone()).is_err());
        assert!(Population::new("a", vec![1.0, f64::NAN], vec![true, true], x).is_err());
        let pop = toy();
        let other = Population::new("b", vec![1.0], vec![true], DMatrix::zeros(1, 2)).unwrap();
        assert!(SurvivalDataset::with_default_names(vec![pop, other]).is_err());
    }

    #[test]
    fn zero_time_censored_subjects_are_allowed() {
        let pop = Population::new(
            "z",
            vec![0.0, 1.0],
            vec![false, true],
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert_eq!(pop.risk_set(0), vec![0, 1]);
    }
}
